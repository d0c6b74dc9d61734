#pragma once

#include <string>
#include <vector>

#include "mfbsde/calculus.hpp"
#include "mfbsde/drivers.hpp"

namespace mfbsde {

// Solution quadruple (Y, Z, U, M) attached to one backend.
// Indexing: y[j] holds Y_{t_j} per node (tree, depth j) or per particle.
// z[j-1], u[j-1], uh[j-1] are the predictable step-j objects, indexed by the
// node at depth j-1 (tree) or by particle (ensemble). dm[j-1] holds the
// orthogonal increment over step j, indexed by depth-j node or particle.
struct SolutionProcesses {
  int steps = 0;
  std::vector<std::vector<double>> y;
  std::vector<std::vector<double>> z;
  std::vector<std::vector<std::vector<double>>> u;
  std::vector<std::vector<double>> uh;
  std::vector<std::vector<double>> dm;
  std::vector<MeasureSummary> law_y;  // law trajectory of Y

  static SolutionProcesses zeros_like(const SolutionProcesses& shape);
};

SolutionProcesses solution_diff(const SolutionProcesses& a,
                                const SolutionProcesses& b);

struct PicardState {
  int q = 0;
  std::vector<double> delta_seq;  // delta_q = |S^(q) - S^(q-1)|_star^2
  double rate_bound = 0.0;        // 2 M~^Phi(beta_hat)
  bool b7_ok = true;
  bool converged = false;
  double residual = 0.0;
  std::string diagnostic;
};

struct SolveOptions {
  double tol = 1e-10;  // ensemble solves typically use 1e-4
  int q_max = 60;
  int threads = 1;
  bool keep_iterates = false;
  int basis_degree = 2;  // ensemble regression in the driver state
  // Cross-sectional mean of the previous iterate's Y over blocks of this
  // size as an extra regression feature; 0/1 disables it. Mean-field solves
  // default to the player count. Using the same block size when solving the
  // McKean-Vlasov reference on the same paths keeps the two regressions on
  // a common basis, so their fitting noise cancels in error differences.
  int feature_group = 0;
};

// One-step orthogonal decomposition at a tree node: least-squares projection
// of the centered payoff onto span{dXc} + span{jump-mark integrands}.
struct NodeBranch {
  std::vector<double> prob;  // children probabilities, sum 1
  std::vector<double> dxc;   // player's continuous increment per child
  std::vector<double> mark;  // player's jump mark per child, 0 = no jump
};

struct DecomposeResult {
  double z = 0.0;
  std::vector<double> u;  // per kernel atom
  double uhat = 0.0;
  std::vector<double> dm;  // residual per child
  bool degenerate_z = false;
};

DecomposeResult martingale_decompose(
    const std::vector<double>& payoff, const NodeBranch& branch,
    const std::vector<Characteristics::KernelAtom>& kernel, double delta_c,
    double zeta);

// Weighted star-norm components of a solution (eq. (4.5) plus the bracket
// norms of Z, U, M).
struct NormReport {
  double y_sup = 0.0;
  double y_alpha = 0.0;
  double z_sq = 0.0;
  double u_sq = 0.0;
  double m_sq = 0.0;
  double total() const { return y_sup + y_alpha + z_sq + u_sq + m_sq; }
};

NormReport star_norm_tree(const SolutionProcesses& sol, const ScenarioTree& tree,
                          const WeightProcess& w, const Characteristics& ch,
                          double beta);
NormReport star_norm_ensemble(const SolutionProcesses& sol, int n,
                              const WeightProcess& w, const Characteristics& ch,
                              double beta);

// |Z . Xc + U * mu~|^2 in the weighted martingale norm; on trees this equals
// z_sq + u_sq exactly by orthogonality.
double mart_norm_tree(const SolutionProcesses& sol, const ScenarioTree& tree,
                      const WeightProcess& w, const Characteristics& ch,
                      double beta);

struct MvTreeResult {
  SolutionProcesses sol;
  PicardState state;
  std::vector<SolutionProcesses> iterates;  // filled when keep_iterates
};

struct MfTreeResult {
  std::vector<SolutionProcesses> sols;  // one per player
  PicardState state;
};

MvTreeResult solve_mckean_vlasov_tree(const StandardData& sd,
                                      const ScenarioTree& tree,
                                      const SolveOptions& opt);
MfTreeResult solve_mean_field_tree(const StandardData& sd, int players,
                                   const ScenarioTree& tree,
                                   const SolveOptions& opt);

// Ensemble (regression Monte Carlo) backends. For the mean-field system the
// ensemble holds reps * players paths laid out player-major within each rep.
struct MvEnsembleResult {
  SolutionProcesses sol;
  PicardState state;
};

struct MfEnsembleResult {
  SolutionProcesses sol;  // flat over particles (r, i)
  PicardState state;
  int players = 1;
  int reps = 1;
};

MvEnsembleResult solve_mckean_vlasov_ensemble(const StandardData& sd,
                                              const ParticleEnsemble& paths,
                                              const SolveOptions& opt);
MfEnsembleResult solve_mean_field_ensemble(const StandardData& sd, int players,
                                           const ParticleEnsemble& paths,
                                           const SolveOptions& opt);

// Max pathwise defect of the backward identity
//   Y_{t_{j-1}} = Y_{t_j} + f dC - Z dXc - dJ - dM
// with the generator evaluated along the solution itself.
double residual_check_tree(const SolutionProcesses& sol, const StandardData& sd,
                           const ScenarioTree& tree);
double residual_check_tree_mf(const std::vector<SolutionProcesses>& sols,
                              const StandardData& sd, const ScenarioTree& tree);
double residual_check_ensemble(const SolutionProcesses& sol,
                               const StandardData& sd,
                               const ParticleEnsemble& paths);

// Exact law of Y_{t_j} as an atomic measure (tree) or the empirical law
// over particles (ensemble).
EmpiricalMeasure law_at_tree(const SolutionProcesses& sol,
                             const ScenarioTree& tree, int j);
EmpiricalMeasure law_at_ensemble(const SolutionProcesses& sol, int j);

}  // namespace mfbsde
