#include <algorithm>
#include <cmath>

#include "mfbsde/engine.hpp"
#include "mfbsde/linalg.hpp"

namespace mfbsde {

namespace {

// Regression features at a grid point: polynomials of the particle's own
// driver state, plus optionally the cross-sectional mean of the previous
// iterate's Y (the mean-field coupling enters only through law summaries).
struct Basis {
  int degree = 2;
  bool has_jump = false;
  bool mean_feature = false;

  std::size_t nf() const {
    return 1 + static_cast<std::size_t>(degree) +
           (has_jump ? static_cast<std::size_t>(degree) : 0) +
           (mean_feature ? 1 : 0);
  }
  void fill(double xc, double xj, double ymean, double* row) const {
    std::size_t c = 0;
    row[c++] = 1.0;
    double p = 1.0;
    for (int d = 0; d < degree; ++d) {
      p *= xc;
      row[c++] = p;
    }
    if (has_jump) {
      p = 1.0;
      for (int d = 0; d < degree; ++d) {
        p *= xj;
        row[c++] = p;
      }
    }
    if (mean_feature) row[c++] = ymean;
  }
};

bool driver_has_jumps(const DriverSpec& d) {
  for (const auto& l : d.jump_law)
    if (!l.empty()) return true;
  return false;
}

SolutionProcesses zero_solution_for_paths(const ParticleEnsemble& e,
                                          const Characteristics& ch) {
  int k = e.grid.steps;
  std::size_t n = static_cast<std::size_t>(e.n);
  SolutionProcesses s;
  s.steps = k;
  s.y.assign(static_cast<std::size_t>(k) + 1, std::vector<double>(n, 0.0));
  s.z.assign(static_cast<std::size_t>(k), std::vector<double>(n, 0.0));
  s.uh.assign(static_cast<std::size_t>(k), std::vector<double>(n, 0.0));
  s.dm.assign(static_cast<std::size_t>(k), std::vector<double>(n, 0.0));
  s.u.resize(static_cast<std::size_t>(k));
  for (int j = 1; j <= k; ++j)
    s.u[static_cast<std::size_t>(j) - 1].assign(
        n, std::vector<double>(ch.steps[static_cast<std::size_t>(j) - 1].kernel.size(), 0.0));
  s.law_y.assign(static_cast<std::size_t>(k) + 1, MeasureSummary{});
  return s;
}

void fill_law_ensemble(SolutionProcesses& s, int n) {
  for (std::size_t j = 0; j < s.y.size(); ++j) {
    double m = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
      double v = s.y[j][static_cast<std::size_t>(i)];
      m += v;
      m2 += v * v;
    }
    s.law_y[j] = {m / n, m2 / n};
  }
}

// Design matrix for one grid point, reused across the targets of that step.
struct StepRegression {
  std::size_t n = 0, p = 0;
  std::vector<double> X;

  void build(const Basis& basis, const ParticleEnsemble& e, int grid_j,
             const std::vector<double>& rep_mean, int group) {
    n = static_cast<std::size_t>(e.n);
    p = basis.nf();
    X.assign(n * p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double ym = rep_mean.empty() ? 0.0 : rep_mean[i / static_cast<std::size_t>(group)];
      basis.fill(e.xc[static_cast<std::size_t>(grid_j)][i],
                 e.xj[static_cast<std::size_t>(grid_j)][i], ym, &X[i * p]);
    }
  }
  std::vector<double> fit(const std::vector<double>& target) const {
    std::vector<double> beta = linalg::lstsq(X, target, n, p);
    std::vector<double> fitted(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < p; ++c) s += X[i * p + c] * beta[c];
      fitted[i] = s;
    }
    return fitted;
  }
};

struct EnsembleContext {
  const StandardData* sd = nullptr;
  const ParticleEnsemble* paths = nullptr;
  Basis basis;
  int players = 1;       // 1 = McKean-Vlasov; else reps * players layout
  int reps = 1;
  int feature_group = 1;  // block size for the mean feature
};

// One explicit backward pass; generator arguments come from the previous
// iterate, conditional expectations are least-squares regressions.
void picard_pass_ensemble(const EnsembleContext& cx, const SolutionProcesses& prev,
                          SolutionProcesses& next, int threads) {
  const StandardData& sd = *cx.sd;
  const ParticleEnsemble& e = *cx.paths;
  const Characteristics& ch = sd.chars;
  int k = e.grid.steps;
  std::size_t n = static_cast<std::size_t>(e.n);
  int np = cx.players;
  bool mf = np > 1;

  // Terminal condition per particle.
  for (std::size_t i = 0; i < n; ++i) {
    double own_c = e.xc[static_cast<std::size_t>(k)][i];
    double own_j = e.xj[static_cast<std::size_t>(k)][i];
    if (!mf) {
      next.y[static_cast<std::size_t>(k)][i] = sd.terminal.xi(own_c, own_j);
    } else {
      std::size_t r = i / static_cast<std::size_t>(np);
      double others = 0;
      for (int l = 0; l < np; ++l) {
        std::size_t pi = r * static_cast<std::size_t>(np) + static_cast<std::size_t>(l);
        if (pi == i) continue;
        others += e.xc[static_cast<std::size_t>(k)][pi] + e.xj[static_cast<std::size_t>(k)][pi];
      }
      if (np > 1) others /= static_cast<double>(np - 1);
      next.y[static_cast<std::size_t>(k)][i] = sd.terminal.xi_n(own_c, own_j, others, np);
    }
  }

  std::vector<double> H(n), dN(n), target(n), rep_mean, gamma_prev(n);
  StepRegression reg;
  for (int j = k; j >= 1; --j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double t = sd.time(j);
    double cj = ch.c_scalar(j);
    double dc = st.delta_c;

    // Cross-sectional mean of the previous iterate at the regression time.
    rep_mean.clear();
    if (cx.basis.mean_feature) {
      std::size_t fg = static_cast<std::size_t>(cx.feature_group);
      rep_mean.assign(n / fg, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        rep_mean[i / fg] += prev.y[static_cast<std::size_t>(j) - 1][i];
      for (auto& v : rep_mean) v /= static_cast<double>(fg);
    }

    parallel_for(n, threads, [&](std::size_t i) {
      gamma_prev[i] = gamma_fn(prev.u[static_cast<std::size_t>(j) - 1][i], sd.theta, ch, j);
    });
    for (std::size_t i = 0; i < n; ++i) {
      MeasureSummary mu;
      if (!mf) {
        mu = prev.law_y[static_cast<std::size_t>(j)];
      } else {
        std::size_t r = i / static_cast<std::size_t>(np);
        double s1 = 0, s2 = 0;
        for (int l = 0; l < np; ++l) {
          double v = prev.y[static_cast<std::size_t>(j)][r * static_cast<std::size_t>(np) + static_cast<std::size_t>(l)];
          s1 += v;
          s2 += v * v;
        }
        mu = {s1 / np, s2 / np};
      }
      double f = sd.generator.eval(t, prev.y[static_cast<std::size_t>(j)][i],
                                   prev.z[static_cast<std::size_t>(j) - 1][i] * cj,
                                   gamma_prev[i], mu);
      H[i] = next.y[static_cast<std::size_t>(j)][i] + f * dc;
    }

    reg.build(cx.basis, e, j - 1, rep_mean, cx.feature_group);
    next.y[static_cast<std::size_t>(j) - 1] = reg.fit(H);
    for (std::size_t i = 0; i < n; ++i) dN[i] = H[i] - next.y[static_cast<std::size_t>(j) - 1][i];

    // Z against dXc: E[dN dXc | state] / E[dXc^2].
    if (st.cont_var > 0.0) {
      for (std::size_t i = 0; i < n; ++i)
        target[i] = dN[i] * e.dxc[static_cast<std::size_t>(j) - 1][i] / st.cont_var;
      next.z[static_cast<std::size_t>(j) - 1] = reg.fit(target);
    } else {
      std::fill(next.z[static_cast<std::size_t>(j) - 1].begin(),
                next.z[static_cast<std::size_t>(j) - 1].end(), 0.0);
    }

    // U per mark: conditional regression coefficient per atom, shifted by the
    // compensator hat when zeta < 1.
    std::size_t natoms = st.kernel.size();
    std::vector<std::vector<double>> cond(natoms);
    for (std::size_t a = 0; a < natoms; ++a) {
      double pa = st.kernel[a].weight * dc;
      double xa = st.kernel[a].mark[0];
      for (std::size_t i = 0; i < n; ++i)
        target[i] = (e.mark[static_cast<std::size_t>(j) - 1][i] == xa) ? dN[i] / pa : 0.0;
      cond[a] = reg.fit(target);
    }
    std::vector<double> uhat(n, 0.0);
    if (natoms > 0 && st.zeta < 1.0) {
      for (std::size_t i = 0; i < n; ++i)
        target[i] = (e.mark[static_cast<std::size_t>(j) - 1][i] != 0.0)
                        ? dN[i] / (1.0 - st.zeta)
                        : 0.0;
      uhat = reg.fit(target);
    }
    for (std::size_t i = 0; i < n; ++i) {
      next.uh[static_cast<std::size_t>(j) - 1][i] = uhat[i];
      for (std::size_t a = 0; a < natoms; ++a)
        next.u[static_cast<std::size_t>(j) - 1][i][a] = cond[a][i] + uhat[i];
      double mk = e.mark[static_cast<std::size_t>(j) - 1][i];
      double dj = -uhat[i];
      if (mk != 0.0) {
        for (std::size_t a = 0; a < natoms; ++a)
          if (mk == st.kernel[a].mark[0]) {
            dj = next.u[static_cast<std::size_t>(j) - 1][i][a] - uhat[i];
            break;
          }
      }
      next.dm[static_cast<std::size_t>(j) - 1][i] =
          dN[i] - next.z[static_cast<std::size_t>(j) - 1][i] * e.dxc[static_cast<std::size_t>(j) - 1][i] - dj;
    }
  }
  fill_law_ensemble(next, e.n);
}

double ensemble_residual(const EnsembleContext& cx, const SolutionProcesses& s) {
  const StandardData& sd = *cx.sd;
  const ParticleEnsemble& e = *cx.paths;
  const Characteristics& ch = sd.chars;
  int k = e.grid.steps;
  std::size_t n = static_cast<std::size_t>(e.n);
  int np = cx.players;
  double worst = 0;
  for (int j = 1; j <= k; ++j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double t = sd.time(j);
    double cj = ch.c_scalar(j);
    for (std::size_t i = 0; i < n; ++i) {
      MeasureSummary mu;
      if (np == 1) {
        mu = s.law_y[static_cast<std::size_t>(j)];
      } else {
        std::size_t r = i / static_cast<std::size_t>(np);
        double s1 = 0, s2 = 0;
        for (int l = 0; l < np; ++l) {
          double v = s.y[static_cast<std::size_t>(j)][r * static_cast<std::size_t>(np) + static_cast<std::size_t>(l)];
          s1 += v;
          s2 += v * v;
        }
        mu = {s1 / np, s2 / np};
      }
      double g = gamma_fn(s.u[static_cast<std::size_t>(j) - 1][i], sd.theta, ch, j);
      double f = sd.generator.eval(t, s.y[static_cast<std::size_t>(j)][i],
                                   s.z[static_cast<std::size_t>(j) - 1][i] * cj, g, mu);
      double mk = e.mark[static_cast<std::size_t>(j) - 1][i];
      double dj = -s.uh[static_cast<std::size_t>(j) - 1][i];
      if (mk != 0.0) {
        for (std::size_t a = 0; a < st.kernel.size(); ++a)
          if (mk == st.kernel[a].mark[0]) {
            dj = s.u[static_cast<std::size_t>(j) - 1][i][a] - s.uh[static_cast<std::size_t>(j) - 1][i];
            break;
          }
      }
      double defect = s.y[static_cast<std::size_t>(j) - 1][i] -
                      (s.y[static_cast<std::size_t>(j)][i] + f * st.delta_c -
                       s.z[static_cast<std::size_t>(j) - 1][i] * e.dxc[static_cast<std::size_t>(j) - 1][i] -
                       dj - s.dm[static_cast<std::size_t>(j) - 1][i]);
      worst = std::max(worst, std::abs(defect));
    }
  }
  return worst;
}

struct EnsembleIteration {
  PicardState state;
  int stall = 0;
  bool push(double delta, double tol) {
    state.delta_seq.push_back(delta);
    ++state.q;
    std::size_t m = state.delta_seq.size();
    if (m >= 2 && state.b7_ok) {
      stall = (state.delta_seq[m - 1] > state.delta_seq[m - 2]) ? stall + 1 : 0;
      if (stall >= 3)
        throw std::runtime_error("picard: non-contraction detected with B7 passing");
    }
    return delta < tol;
  }
};

}  // namespace

MvEnsembleResult solve_mckean_vlasov_ensemble(const StandardData& sd,
                                              const ParticleEnsemble& paths,
                                              const SolveOptions& opt) {
  EnsembleContext cx;
  cx.sd = &sd;
  cx.paths = &paths;
  cx.basis.degree = opt.basis_degree;
  cx.basis.has_jump = driver_has_jumps(sd.driver);
  cx.basis.mean_feature = opt.feature_group > 1;
  cx.players = 1;
  cx.reps = paths.n;
  cx.feature_group = std::max(1, opt.feature_group);
  require(paths.n % cx.feature_group == 0,
          "solve_mckean_vlasov_ensemble: feature_group must divide n");

  MvEnsembleResult out;
  out.state.rate_bound = 2.0 * contraction_constant(sd.beta_hat, sd.weights.phi);
  out.state.b7_ok = 3.0 * contraction_constant(sd.beta_hat, sd.weights.phi) < 1.0;
  SolutionProcesses prev = zero_solution_for_paths(paths, sd.chars);
  SolutionProcesses next = prev;
  EnsembleIteration it;
  it.state = out.state;
  for (int q = 1; q <= opt.q_max; ++q) {
    picard_pass_ensemble(cx, prev, next, opt.threads);
    SolutionProcesses d = solution_diff(next, prev);
    double delta = star_norm_ensemble(d, paths.n, sd.weights, sd.chars, sd.beta_hat).total();
    std::swap(prev, next);
    if (it.push(delta, opt.tol)) {
      it.state.converged = true;
      break;
    }
  }
  out.state = it.state;
  out.sol = std::move(prev);
  out.state.residual = ensemble_residual(cx, out.sol);
  return out;
}

MfEnsembleResult solve_mean_field_ensemble(const StandardData& sd, int players,
                                           const ParticleEnsemble& paths,
                                           const SolveOptions& opt) {
  require(players >= 1, "solve_mean_field_ensemble: players must be >= 1");
  require(paths.n % players == 0,
          "solve_mean_field_ensemble: one particle block per player required");
  EnsembleContext cx;
  cx.sd = &sd;
  cx.paths = &paths;
  cx.basis.degree = opt.basis_degree;
  cx.basis.has_jump = driver_has_jumps(sd.driver);
  int fg = opt.feature_group > 0 ? opt.feature_group : players;
  cx.basis.mean_feature = fg > 1;
  cx.players = players;
  cx.reps = paths.n / players;
  cx.feature_group = std::max(1, fg);
  require(paths.n % cx.feature_group == 0,
          "solve_mean_field_ensemble: feature_group must divide n");

  MfEnsembleResult out;
  out.players = players;
  out.reps = cx.reps;
  out.state.rate_bound = 2.0 * contraction_constant(sd.beta_hat, sd.weights.phi);
  out.state.b7_ok = 3.0 * contraction_constant(sd.beta_hat, sd.weights.phi) < 1.0;
  SolutionProcesses prev = zero_solution_for_paths(paths, sd.chars);
  SolutionProcesses next = prev;
  EnsembleIteration it;
  it.state = out.state;
  for (int q = 1; q <= opt.q_max; ++q) {
    picard_pass_ensemble(cx, prev, next, opt.threads);
    SolutionProcesses d = solution_diff(next, prev);
    double delta = star_norm_ensemble(d, paths.n, sd.weights, sd.chars, sd.beta_hat).total();
    std::swap(prev, next);
    if (it.push(delta, opt.tol)) {
      it.state.converged = true;
      break;
    }
  }
  out.state = it.state;
  out.sol = std::move(prev);
  out.state.residual = ensemble_residual(cx, out.sol);
  return out;
}

double residual_check_ensemble(const SolutionProcesses& sol,
                               const StandardData& sd,
                               const ParticleEnsemble& paths) {
  EnsembleContext cx;
  cx.sd = &sd;
  cx.paths = &paths;
  cx.players = 1;
  return ensemble_residual(cx, sol);
}

}  // namespace mfbsde
