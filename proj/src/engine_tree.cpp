#include <algorithm>
#include <cmath>

#include "mfbsde/engine.hpp"

namespace mfbsde {

namespace {

SolutionProcesses zero_solution_for_tree(const ScenarioTree& tree,
                                         const Characteristics& ch) {
  int k = tree.grid.steps;
  SolutionProcesses s;
  s.steps = k;
  s.y.resize(static_cast<std::size_t>(k) + 1);
  for (int j = 0; j <= k; ++j)
    s.y[static_cast<std::size_t>(j)].assign(tree.nodes_at[static_cast<std::size_t>(j)], 0.0);
  s.z.resize(static_cast<std::size_t>(k));
  s.u.resize(static_cast<std::size_t>(k));
  s.uh.resize(static_cast<std::size_t>(k));
  s.dm.resize(static_cast<std::size_t>(k));
  for (int j = 1; j <= k; ++j) {
    std::size_t np = tree.nodes_at[static_cast<std::size_t>(j) - 1];
    s.z[static_cast<std::size_t>(j) - 1].assign(np, 0.0);
    s.uh[static_cast<std::size_t>(j) - 1].assign(np, 0.0);
    s.u[static_cast<std::size_t>(j) - 1].assign(
        np, std::vector<double>(ch.steps[static_cast<std::size_t>(j) - 1].kernel.size(), 0.0));
    s.dm[static_cast<std::size_t>(j) - 1].assign(tree.nodes_at[static_cast<std::size_t>(j)], 0.0);
  }
  s.law_y.assign(static_cast<std::size_t>(k) + 1, MeasureSummary{});
  return s;
}

void fill_law_tree(SolutionProcesses& s, const ScenarioTree& tree) {
  int k = s.steps;
  for (int j = 0; j <= k; ++j) {
    const auto& p = tree.node_prob[static_cast<std::size_t>(j)];
    double m = 0, m2 = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      double yv = s.y[static_cast<std::size_t>(j)][i];
      m += p[i] * yv;
      m2 += p[i] * yv * yv;
    }
    s.law_y[static_cast<std::size_t>(j)] = {m, m2};
  }
}

// View of one player's increments across a node's children.
NodeBranch branch_for_player(const ScenarioTree& tree, int j, int player) {
  const auto& outs = tree.steps[static_cast<std::size_t>(j) - 1];
  NodeBranch br;
  br.prob.resize(outs.size());
  br.dxc.resize(outs.size());
  br.mark.resize(outs.size());
  for (std::size_t a = 0; a < outs.size(); ++a) {
    br.prob[a] = outs[a].prob;
    br.dxc[a] = outs[a].dxc[static_cast<std::size_t>(player)];
    br.mark[a] = outs[a].mark[static_cast<std::size_t>(player)];
  }
  return br;
}

// One explicit backward Picard pass for all players simultaneously.
// players = 1 with mv_law = true is the McKean-Vlasov case.
void picard_pass_tree(const StandardData& sd, const ScenarioTree& tree,
                      const std::vector<SolutionProcesses>& prev,
                      std::vector<SolutionProcesses>& next, bool mv_law,
                      int threads) {
  int k = tree.grid.steps;
  int np = static_cast<int>(prev.size());
  const Characteristics& ch = sd.chars;

  // Terminal conditions.
  for (int i = 0; i < np; ++i) {
    auto& yk = next[static_cast<std::size_t>(i)].y[static_cast<std::size_t>(k)];
    const auto& xc = tree.state_xc[static_cast<std::size_t>(k)];
    const auto& xj = tree.state_xj[static_cast<std::size_t>(k)];
    for (std::size_t m = 0; m < yk.size(); ++m) {
      double own_c = xc[m * static_cast<std::size_t>(np) + static_cast<std::size_t>(i)];
      double own_j = xj[m * static_cast<std::size_t>(np) + static_cast<std::size_t>(i)];
      if (mv_law) {
        yk[m] = sd.terminal.xi(own_c, own_j);
      } else {
        double others = 0;
        for (int l = 0; l < np; ++l) {
          if (l == i) continue;
          others += xc[m * static_cast<std::size_t>(np) + static_cast<std::size_t>(l)] +
                    xj[m * static_cast<std::size_t>(np) + static_cast<std::size_t>(l)];
        }
        if (np > 1) others /= static_cast<double>(np - 1);
        yk[m] = sd.terminal.xi_n(own_c, own_j, others, np);
      }
    }
  }

  std::vector<NodeBranch> branches(static_cast<std::size_t>(np));
  for (int j = k; j >= 1; --j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double t = sd.time(j);
    double cj = ch.c_scalar(j);
    double dc = st.delta_c;
    std::size_t b = tree.branching(j);
    std::size_t parents = tree.nodes_at[static_cast<std::size_t>(j) - 1];
    for (int i = 0; i < np; ++i) branches[static_cast<std::size_t>(i)] = branch_for_player(tree, j, i);

    parallel_for(parents, threads, [&](std::size_t m) {
      std::vector<double> payoff(b);
      for (int i = 0; i < np; ++i) {
        const auto& pv = prev[static_cast<std::size_t>(i)];
        auto& nx = next[static_cast<std::size_t>(i)];
        double zprev = pv.z[static_cast<std::size_t>(j) - 1][m] * cj;
        double gprev = gamma_fn(pv.u[static_cast<std::size_t>(j) - 1][m], sd.theta, ch, j);
        for (std::size_t a = 0; a < b; ++a) {
          std::size_t child = m * b + a;
          MeasureSummary mu;
          if (mv_law) {
            mu = pv.law_y[static_cast<std::size_t>(j)];
          } else {
            // Empirical measure over the players' previous values at this node.
            double s1 = 0, s2 = 0;
            for (int l = 0; l < np; ++l) {
              double v = prev[static_cast<std::size_t>(l)].y[static_cast<std::size_t>(j)][child];
              s1 += v;
              s2 += v * v;
            }
            mu = {s1 / np, s2 / np};
          }
          double f = sd.generator.eval(
              t, pv.y[static_cast<std::size_t>(j)][child], zprev, gprev, mu);
          payoff[a] = nx.y[static_cast<std::size_t>(j)][child] + f * dc;
        }
        DecomposeResult dec = martingale_decompose(
            payoff, branches[static_cast<std::size_t>(i)], st.kernel, dc, st.zeta);
        double mean = 0;
        for (std::size_t a = 0; a < b; ++a)
          mean += branches[static_cast<std::size_t>(i)].prob[a] * payoff[a];
        nx.y[static_cast<std::size_t>(j) - 1][m] = mean;
        nx.z[static_cast<std::size_t>(j) - 1][m] = dec.z;
        nx.u[static_cast<std::size_t>(j) - 1][m] = dec.u;
        nx.uh[static_cast<std::size_t>(j) - 1][m] = dec.uhat;
        for (std::size_t a = 0; a < b; ++a)
          nx.dm[static_cast<std::size_t>(j) - 1][m * b + a] = dec.dm[a];
      }
    });
  }
  for (int i = 0; i < np; ++i) fill_law_tree(next[static_cast<std::size_t>(i)], tree);
}

struct IterationDriver {
  PicardState state;
  int stall = 0;

  bool step_converged(double delta, double tol) {
    state.delta_seq.push_back(delta);
    ++state.q;
    std::size_t n = state.delta_seq.size();
    if (n >= 2 && state.b7_ok) {
      stall = (state.delta_seq[n - 1] > state.delta_seq[n - 2]) ? stall + 1 : 0;
      if (stall >= 3)
        throw std::runtime_error(
            "picard: non-contraction detected with B7 passing");
    }
    return delta < tol;
  }
};

}  // namespace

MvTreeResult solve_mckean_vlasov_tree(const StandardData& sd,
                                      const ScenarioTree& tree,
                                      const SolveOptions& opt) {
  require(tree.players == 1, "solve_mckean_vlasov_tree: single-player tree expected");
  MvTreeResult out;
  out.state.rate_bound = 2.0 * contraction_constant(sd.beta_hat, sd.weights.phi);
  out.state.b7_ok = 3.0 * contraction_constant(sd.beta_hat, sd.weights.phi) < 1.0;
  if (!out.state.b7_ok) out.state.diagnostic = "B7 fails for this data; iterating anyway";

  std::vector<SolutionProcesses> prev{zero_solution_for_tree(tree, sd.chars)};
  std::vector<SolutionProcesses> next{zero_solution_for_tree(tree, sd.chars)};
  IterationDriver it;
  it.state = out.state;
  for (int q = 1; q <= opt.q_max; ++q) {
    picard_pass_tree(sd, tree, prev, next, true, opt.threads);
    SolutionProcesses d = solution_diff(next[0], prev[0]);
    double delta = star_norm_tree(d, tree, sd.weights, sd.chars, sd.beta_hat).total();
    std::swap(prev, next);
    if (opt.keep_iterates) out.iterates.push_back(prev[0]);
    if (it.step_converged(delta, opt.tol)) {
      it.state.converged = true;
      break;
    }
  }
  out.state = it.state;
  out.sol = std::move(prev[0]);
  out.state.residual = residual_check_tree(out.sol, sd, tree);
  return out;
}

MfTreeResult solve_mean_field_tree(const StandardData& sd, int players,
                                   const ScenarioTree& tree,
                                   const SolveOptions& opt) {
  require(players == tree.players, "solve_mean_field_tree: player count mismatch");
  MfTreeResult out;
  out.state.rate_bound = 2.0 * contraction_constant(sd.beta_hat, sd.weights.phi);
  out.state.b7_ok = 3.0 * contraction_constant(sd.beta_hat, sd.weights.phi) < 1.0;

  std::vector<SolutionProcesses> prev, next;
  for (int i = 0; i < players; ++i) {
    prev.push_back(zero_solution_for_tree(tree, sd.chars));
    next.push_back(zero_solution_for_tree(tree, sd.chars));
  }
  IterationDriver it;
  it.state = out.state;
  for (int q = 1; q <= opt.q_max; ++q) {
    picard_pass_tree(sd, tree, prev, next, false, opt.threads);
    double delta = 0;
    for (int i = 0; i < players; ++i) {
      SolutionProcesses d = solution_diff(next[static_cast<std::size_t>(i)], prev[static_cast<std::size_t>(i)]);
      delta += star_norm_tree(d, tree, sd.weights, sd.chars, sd.beta_hat).total();
    }
    std::swap(prev, next);
    if (it.step_converged(delta, opt.tol)) {
      it.state.converged = true;
      break;
    }
  }
  out.state = it.state;
  out.sols = std::move(prev);
  out.state.residual = residual_check_tree_mf(out.sols, sd, tree);
  return out;
}

namespace {

double residual_tree_impl(const std::vector<SolutionProcesses>& sols,
                          const StandardData& sd, const ScenarioTree& tree,
                          bool mv_law) {
  int k = tree.grid.steps;
  int np = static_cast<int>(sols.size());
  const Characteristics& ch = sd.chars;
  double worst = 0;
  for (int j = 1; j <= k; ++j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double t = sd.time(j);
    double cj = ch.c_scalar(j);
    std::size_t b = tree.branching(j);
    const auto& outs = tree.steps[static_cast<std::size_t>(j) - 1];
    for (int i = 0; i < np; ++i) {
      const auto& s = sols[static_cast<std::size_t>(i)];
      for (std::size_t m = 0; m < tree.nodes_at[static_cast<std::size_t>(j) - 1]; ++m) {
        double g = gamma_fn(s.u[static_cast<std::size_t>(j) - 1][m], sd.theta, ch, j);
        double zc = s.z[static_cast<std::size_t>(j) - 1][m] * cj;
        for (std::size_t a = 0; a < b; ++a) {
          std::size_t child = m * b + a;
          MeasureSummary mu;
          if (mv_law) {
            mu = s.law_y[static_cast<std::size_t>(j)];
          } else {
            double s1 = 0, s2 = 0;
            for (int l = 0; l < np; ++l) {
              double v = sols[static_cast<std::size_t>(l)].y[static_cast<std::size_t>(j)][child];
              s1 += v;
              s2 += v * v;
            }
            mu = {s1 / np, s2 / np};
          }
          double f = sd.generator.eval(t, s.y[static_cast<std::size_t>(j)][child], zc, g, mu);
          double mark = outs[a].mark[static_cast<std::size_t>(i)];
          double dj = -s.uh[static_cast<std::size_t>(j) - 1][m];
          if (mark != 0.0) {
            for (std::size_t at = 0; at < st.kernel.size(); ++at)
              if (mark == st.kernel[at].mark[0]) {
                dj = s.u[static_cast<std::size_t>(j) - 1][m][at] -
                     s.uh[static_cast<std::size_t>(j) - 1][m];
                break;
              }
          }
          double defect = s.y[static_cast<std::size_t>(j) - 1][m] -
                          (s.y[static_cast<std::size_t>(j)][child] + f * st.delta_c -
                           s.z[static_cast<std::size_t>(j) - 1][m] * outs[a].dxc[static_cast<std::size_t>(i)] -
                           dj - s.dm[static_cast<std::size_t>(j) - 1][child]);
          worst = std::max(worst, std::abs(defect));
        }
      }
    }
  }
  return worst;
}

}  // namespace

double residual_check_tree(const SolutionProcesses& sol, const StandardData& sd,
                           const ScenarioTree& tree) {
  std::vector<SolutionProcesses> v{sol};
  double r = residual_tree_impl(v, sd, tree, true);
  return r;
}

double residual_check_tree_mf(const std::vector<SolutionProcesses>& sols,
                              const StandardData& sd, const ScenarioTree& tree) {
  return residual_tree_impl(sols, sd, tree, false);
}

}  // namespace mfbsde
