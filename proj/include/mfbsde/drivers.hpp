#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfbsde/common.hpp"
#include "mfbsde/linalg.hpp"

namespace mfbsde {

// Uniform time grid t_j = j * horizon / steps, j = 0..steps.
struct GridSpec {
  int steps = 1;
  double horizon = 1.0;

  double time(int j) const { return horizon * static_cast<double>(j) / steps; }
  double dt() const { return horizon / steps; }
};

GridSpec make_grid(int steps, double horizon);

// Finite-support law of one increment. Probabilities sum to 1 and the mark
// mean is zero (martingale increments).
struct IncrementLaw {
  int dim = 1;
  struct Atom {
    std::vector<double> mark;
    double prob = 0.0;
  };
  std::vector<Atom> atoms;

  bool empty() const { return atoms.empty(); }
  double second_moment() const;  // E|mark|^2
  void validate() const;
};

IncrementLaw two_point_law(double mark, int dim = 1);  // +-mark each w.p. 1/2

enum class DriverMode { Rademacher, GaussianCoupled, Jump, Combined, Custom };

// A pair (X_cont, X_jump) of discrete-time martingales with independent
// increments and finite-support laws, one law pair per grid step. The two
// families are independent across components and steps.
//
// In GaussianCoupled mode, cont_law holds the matched-variance two-point
// quantization used for the deterministic characteristics; sampled paths
// instead aggregate N(0, horizon/skeleton_steps) increments of a shared fine
// skeleton, so all grids built on the same skeleton are pathwise coupled.
struct DriverSpec {
  GridSpec grid;
  int cont_dim = 1;
  int jump_dim = 1;
  std::vector<IncrementLaw> cont_law;  // per step, may be empty law
  std::vector<IncrementLaw> jump_law;  // per step, marks are jump heights
  DriverMode mode = DriverMode::Custom;
  int skeleton_steps = 0;  // >0 only in GaussianCoupled mode

  void validate() const;
};

// Deterministic characteristics of a driver: the bracket clock C, the
// kernel K disintegrating the compensator, the density root c, and the
// per-step compensator mass zeta.
struct Characteristics {
  GridSpec grid;
  struct KernelAtom {
    std::vector<double> mark;
    double weight = 0.0;  // density w.r.t. dC
  };
  struct Step {
    double delta_c = 0.0;
    double cum_c = 0.0;  // C_{t_j}
    double zeta = 0.0;   // nu({t_j} x R^n)
    SymMat c;            // (d<Xc>/dC)^(1/2)
    double cont_var = 0.0;  // E|dXc|^2 (trace)
    std::vector<KernelAtom> kernel;  // empty when delta_c = 0
  };
  std::vector<Step> steps;  // index j-1 holds the step ending at t_j

  double c_scalar(int j) const { return steps[static_cast<std::size_t>(j)].c.scalar_value(); }
  double terminal_c() const { return steps.empty() ? 0.0 : steps.back().cum_c; }
};

DriverSpec make_donsker_driver(int k, double horizon, DriverMode mode,
                               int skeleton_steps = 0);
DriverSpec make_jump_driver(int k, double horizon, double mark_scale);
// Independent rademacher + jump parts, each carrying half the step variance.
DriverSpec make_combined_driver(int k, double horizon);

Characteristics characteristics(const DriverSpec& d);

// Exact joint tree over the independent drivers of all players.
// Node (depth j, index m) has parent (j-1, m / branching) and took joint
// outcome m % branching. Depth-0 is the root.
struct ScenarioTree {
  GridSpec grid;
  int players = 1;
  struct Outcome {
    std::vector<double> dxc;   // per player
    std::vector<double> mark;  // per player, 0 = no jump
    double prob = 0.0;
  };
  std::vector<std::vector<Outcome>> steps;       // [k][branching]
  std::vector<std::size_t> nodes_at;             // nodes per depth, 0..k
  std::vector<std::vector<double>> node_prob;    // [depth][node]
  std::vector<std::vector<double>> state_xc;     // [depth][node*players+i]
  std::vector<std::vector<double>> state_xj;

  std::size_t branching(int j) const { return steps[static_cast<std::size_t>(j - 1)].size(); }
};

ScenarioTree build_tree(const DriverSpec& d, int players,
                        std::uint64_t max_nodes);

// Seeded i.i.d. particle paths on the driver grid. Output is a pure function
// of (driver, n, seed); particle streams are keyed (seed, stream_of(particle)).
struct ParticleEnsemble {
  GridSpec grid;
  int n = 0;
  std::uint64_t seed = 0;
  // Stable stream ids: by default stream_of(i) = i. Mean-field sweeps key
  // streams by (rep, player) so paths agree across different N.
  std::vector<std::uint64_t> stream_ids;
  std::vector<std::vector<double>> dxc;   // [step 1..k -> idx j-1][particle]
  std::vector<std::vector<double>> mark;  // 0 = no jump
  std::vector<std::vector<double>> xc;    // [0..k][particle] running values
  std::vector<std::vector<double>> xj;
};

ParticleEnsemble sample_ensemble(const DriverSpec& d, int n, std::uint64_t seed,
                                 int threads = 1);
ParticleEnsemble sample_ensemble_streams(const DriverSpec& d,
                                         const std::vector<std::uint64_t>& streams,
                                         std::uint64_t seed, int threads = 1);

}  // namespace mfbsde
