#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mfbsde/drivers.hpp"
#include "mfbsde/measures.hpp"

namespace mfbsde {

// Measure argument of a generator: laws enter only through finite summaries.
struct MeasureSummary {
  double mean = 0.0;
  double second_moment = 0.0;
};

// Generator f(t, y, z c, Gamma(U), mu) with its four Lipschitz coefficient
// functions r, theta_cont, theta_jump, theta_star. The linear family
//   f = a0 + ay y + az z + au u + amean mean(mu)
// carries r = ay^2, theta_cont = az^2, theta_jump = au^2, theta_star = amean^2
// by construction (|E[Y] - E[Y']| <= W2 gives the mean coefficient).
struct GeneratorSpec {
  enum class Family { Linear, Custom };
  Family family = Family::Linear;

  double a0 = 0, ay = 0, az = 0, au = 0, amean = 0;

  using Fn = std::function<double(double t, double y, double z, double u,
                                  const MeasureSummary& mu)>;
  using Coeff = std::function<double(double t)>;
  Fn custom_f;
  Coeff lip_r, lip_theta_cont, lip_theta_jump, lip_theta_star;

  static GeneratorSpec linear(double a0, double ay, double az, double au,
                              double amean);
  static GeneratorSpec zero() { return linear(0, 0, 0, 0, 0); }
  static GeneratorSpec custom(Fn f, Coeff r, Coeff theta_cont, Coeff theta_jump,
                              Coeff theta_star);

  double eval(double t, double y, double z, double u,
              const MeasureSummary& mu) const;
  double r(double t) const;
  double theta_cont(double t) const;
  double theta_jump(double t) const;
  double theta_star(double t) const;
  bool is_zero() const;
};

// alpha^2 = max{sqrt(r), theta_cont, theta_jump, sqrt(theta_star)},
// A = int alpha^2 dC, Phi = max step of A.
struct WeightProcess {
  std::vector<double> alpha_sq;  // per step, evaluated at the right endpoint
  std::vector<double> A;         // cumulative on the grid, A[0] = 0
  double phi = 0.0;
  double a_inf = 0.0;
};

WeightProcess weight_process(const GeneratorSpec& g, const Characteristics& ch);

// E(beta A)_{t_j} = prod_{m<=j} (1 + beta dA_m) for a pure-step A given
// cumulatively on the grid. Output aligned with the input grid.
std::vector<double> stochastic_exponential(const std::vector<double>& A,
                                           double beta);
// Left limit convention: E(beta A)_{t_0-} = 1.
inline double exp_weight_left(const std::vector<double>& exp_w, int j) {
  return j <= 0 ? 1.0 : exp_w[static_cast<std::size_t>(j) - 1];
}

// Closed form of the contraction constant M~^Phi(beta) and the equivalent
// minimization over gamma in (0, beta) used to cross-check it.
double contraction_constant(double beta, double phi);
double contraction_constant_minform(double beta, double phi);

// Deterministic test function Theta with |Theta(t,x)| <= |x| + 1_{x=0}.
struct ThetaSpec {
  std::function<double(double t, double x)> theta = [](double, double x) {
    return x;
  };
  void validate_on(const Characteristics& ch) const;
};

// u_vals holds U on the kernel atoms of step j (1-based grid step).
double u_hat(const std::vector<double>& u_vals, const Characteristics& ch,
             int step_j);
double tnorm_sq(const std::vector<double>& u_vals, const Characteristics& ch,
                int step_j);
double gamma_fn(const std::vector<double>& u_vals, const ThetaSpec& theta,
                const Characteristics& ch, int step_j);

// Terminal conditions: xi^i = g(Xc_T, Xj_T) of the player's own driver and
// xi^{i,N} = xi^i + coupling_scale N^{-gamma} h(mean over other players of
// their terminal driver values).
struct TerminalSpec {
  std::function<double(double xc, double xj)> g = [](double xc, double) {
    return xc;
  };
  std::function<double(double)> h = [](double m) { return m; };
  double coupling_scale = 0.0;
  double coupling_gamma = 1.0;

  static TerminalSpec zero();
  static TerminalSpec constant(double c);
  static TerminalSpec terminal_cont();

  double xi(double xc_t, double xj_t) const { return g(xc_t, xj_t); }
  double xi_n(double xc_t, double xj_t, double others_mean, int n_players) const;
};

// One D^k bundle. Characteristics, weights and the exponential weight are
// derived once at construction.
struct StandardData {
  DriverSpec driver;
  Characteristics chars;
  TerminalSpec terminal;
  ThetaSpec theta;
  GeneratorSpec generator;
  WeightProcess weights;
  double beta_hat = 240.0;
  std::vector<double> exp_weight;  // E(beta_hat A) on the grid

  static StandardData make(DriverSpec driver, TerminalSpec terminal,
                           ThetaSpec theta, GeneratorSpec generator,
                           double beta_hat);
  int steps() const { return driver.grid.steps; }
  double time(int j) const { return driver.grid.time(j); }
};

struct ValidationEntry {
  std::string assumption;
  std::string status;  // pass | fail | sampled-pass | structural
  std::string witness;
  bool ok = true;
};

struct ValidationReport {
  std::vector<ValidationEntry> entries;
  bool all_pass() const;
  std::string to_json() const;
  const ValidationEntry* find(const std::string& assumption) const;
};

// Checks B1-B7 plus the checkable S-side conditions (S7 witness, S9.ii,
// and the closed-form vs min-form cross-check of B7). Failures are report
// entries, never exceptions.
ValidationReport validate_standard_data(const StandardData& sd,
                                        int sample_particles = 4096,
                                        std::uint64_t sample_seed = 0x5eedULL);

}  // namespace mfbsde
