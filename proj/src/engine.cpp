#include "mfbsde/engine.hpp"

#include <algorithm>
#include <cmath>

namespace mfbsde {

SolutionProcesses SolutionProcesses::zeros_like(const SolutionProcesses& s) {
  SolutionProcesses z;
  z.steps = s.steps;
  z.y.resize(s.y.size());
  for (std::size_t j = 0; j < s.y.size(); ++j) z.y[j].assign(s.y[j].size(), 0.0);
  z.z.resize(s.z.size());
  for (std::size_t j = 0; j < s.z.size(); ++j) z.z[j].assign(s.z[j].size(), 0.0);
  z.u.resize(s.u.size());
  for (std::size_t j = 0; j < s.u.size(); ++j) {
    z.u[j].resize(s.u[j].size());
    for (std::size_t m = 0; m < s.u[j].size(); ++m)
      z.u[j][m].assign(s.u[j][m].size(), 0.0);
  }
  z.uh.resize(s.uh.size());
  for (std::size_t j = 0; j < s.uh.size(); ++j) z.uh[j].assign(s.uh[j].size(), 0.0);
  z.dm.resize(s.dm.size());
  for (std::size_t j = 0; j < s.dm.size(); ++j) z.dm[j].assign(s.dm[j].size(), 0.0);
  z.law_y.assign(s.law_y.size(), MeasureSummary{});
  return z;
}

SolutionProcesses solution_diff(const SolutionProcesses& a,
                                const SolutionProcesses& b) {
  require(a.steps == b.steps, "solution_diff: grid mismatch");
  SolutionProcesses d = a;
  for (std::size_t j = 0; j < d.y.size(); ++j)
    for (std::size_t m = 0; m < d.y[j].size(); ++m) d.y[j][m] -= b.y[j][m];
  for (std::size_t j = 0; j < d.z.size(); ++j)
    for (std::size_t m = 0; m < d.z[j].size(); ++m) d.z[j][m] -= b.z[j][m];
  for (std::size_t j = 0; j < d.u.size(); ++j)
    for (std::size_t m = 0; m < d.u[j].size(); ++m)
      for (std::size_t a2 = 0; a2 < d.u[j][m].size(); ++a2)
        d.u[j][m][a2] -= b.u[j][m][a2];
  for (std::size_t j = 0; j < d.uh.size(); ++j)
    for (std::size_t m = 0; m < d.uh[j].size(); ++m) d.uh[j][m] -= b.uh[j][m];
  for (std::size_t j = 0; j < d.dm.size(); ++j)
    for (std::size_t m = 0; m < d.dm[j].size(); ++m) d.dm[j][m] -= b.dm[j][m];
  for (std::size_t j = 0; j < d.law_y.size(); ++j) {
    d.law_y[j].mean -= b.law_y[j].mean;
    d.law_y[j].second_moment = 0.0;
  }
  return d;
}

DecomposeResult martingale_decompose(
    const std::vector<double>& payoff, const NodeBranch& branch,
    const std::vector<Characteristics::KernelAtom>& kernel, double delta_c,
    double zeta) {
  std::size_t nc = payoff.size();
  require(nc == branch.prob.size() && nc == branch.dxc.size() &&
              nc == branch.mark.size(),
          "martingale_decompose: branch size mismatch");
  DecomposeResult out;

  // Center the payoff first.
  double mean = 0;
  for (std::size_t c = 0; c < nc; ++c) mean += branch.prob[c] * payoff[c];
  std::vector<double> h(nc);
  for (std::size_t c = 0; c < nc; ++c) h[c] = payoff[c] - mean;

  // Z: normal equations against dXc.
  double num = 0, den = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    num += branch.prob[c] * h[c] * branch.dxc[c];
    den += branch.prob[c] * branch.dxc[c] * branch.dxc[c];
  }
  if (den > 0.0) {
    out.z = num / den;
  } else {
    out.z = 0.0;
    out.degenerate_z = true;
  }

  // U per jump mark: conditional mean of the payoff given the mark, shifted
  // so that M_mu[dM | mark] = 0 for every atom.
  out.u.assign(kernel.size(), 0.0);
  std::vector<double> cond(kernel.size(), 0.0), pmark(kernel.size(), 0.0);
  double jump_mean = 0;
  for (std::size_t c = 0; c < nc; ++c) {
    if (branch.mark[c] == 0.0) continue;
    // match the child's mark to a kernel atom (marks come from the same law)
    std::size_t best = kernel.size();
    for (std::size_t a = 0; a < kernel.size(); ++a) {
      if (branch.mark[c] == kernel[a].mark[0]) {
        best = a;
        break;
      }
    }
    require(best < kernel.size(), "martingale_decompose: payoff mark missing from kernel");
    cond[best] += branch.prob[c] * h[c];
    pmark[best] += branch.prob[c];
    jump_mean += branch.prob[c] * h[c];
  }
  for (std::size_t a = 0; a < kernel.size(); ++a)
    if (pmark[a] > 0.0) cond[a] /= pmark[a];
  if (zeta < 1.0) {
    out.uhat = jump_mean / (1.0 - zeta);
  } else {
    out.uhat = 0.0;
  }
  for (std::size_t a = 0; a < kernel.size(); ++a) out.u[a] = cond[a] + out.uhat;

  // Residual.
  out.dm.assign(nc, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    double dj = -out.uhat;
    if (branch.mark[c] != 0.0) {
      for (std::size_t a = 0; a < kernel.size(); ++a) {
        if (branch.mark[c] == kernel[a].mark[0]) {
          dj = out.u[a] - out.uhat;
          break;
        }
      }
    }
    out.dm[c] = h[c] - out.z * branch.dxc[c] - dj;
  }
  (void)delta_c;
  return out;
}

namespace {

// Per-path running maximum of E(beta A)_{t-} |Y_t|^2. The left-limit weight
// pairs E_{t_j} with both endpoint values of the surrounding cells.
struct SupTracker {
  double best;
  explicit SupTracker(double y0) : best(y0 * y0) {}
  void push(double e_prev_at, double y_prev, double y_next) {
    best = std::max(best, e_prev_at * std::max(y_prev * y_prev, y_next * y_next));
  }
};

}  // namespace

NormReport star_norm_tree(const SolutionProcesses& sol, const ScenarioTree& tree,
                          const WeightProcess& w, const Characteristics& ch,
                          double beta) {
  require(sol.steps == tree.grid.steps, "star_norm: grid mismatch");
  int k = sol.steps;
  std::vector<double> ew = stochastic_exponential(w.A, beta);
  NormReport rep;

  // E[sup E_{t-} |Y|^2]: propagate the per-path maximum down the tree.
  std::vector<double> mx = {sol.y[0][0] * sol.y[0][0]};
  for (int j = 1; j <= k; ++j) {
    std::size_t b = tree.branching(j);
    std::size_t n = tree.nodes_at[static_cast<std::size_t>(j)];
    std::vector<double> nxt(n);
    double e_at = ew[static_cast<std::size_t>(j) - 1];  // E at t_{j-1}, weight for (t_{j-1}, t_j]
    for (std::size_t m = 0; m < n; ++m) {
      std::size_t parent = m / b;
      double yp = sol.y[static_cast<std::size_t>(j) - 1][parent];
      double yc = sol.y[static_cast<std::size_t>(j)][m];
      double v = std::max(mx[parent], e_at * std::max(yp * yp, yc * yc));
      nxt[m] = v;
    }
    mx.swap(nxt);
  }
  for (std::size_t m = 0; m < mx.size(); ++m)
    rep.y_sup += tree.node_prob[static_cast<std::size_t>(k)][m] * mx[m];

  for (int j = 1; j <= k; ++j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double el = exp_weight_left(ew, j);
    double a2 = w.alpha_sq[static_cast<std::size_t>(j) - 1];
    double cj = ch.c_scalar(j);
    double ya = 0, zs = 0, us = 0, ms = 0;
    const auto& pj = tree.node_prob[static_cast<std::size_t>(j)];
    const auto& pjm1 = tree.node_prob[static_cast<std::size_t>(j) - 1];
    for (std::size_t m = 0; m < pj.size(); ++m) {
      double yv = sol.y[static_cast<std::size_t>(j)][m];
      ya += pj[m] * yv * yv;
      ms += pj[m] * sol.dm[static_cast<std::size_t>(j) - 1][m] *
            sol.dm[static_cast<std::size_t>(j) - 1][m];
    }
    for (std::size_t m = 0; m < pjm1.size(); ++m) {
      double zc = sol.z[static_cast<std::size_t>(j) - 1][m] * cj;
      zs += pjm1[m] * zc * zc;
      us += pjm1[m] * tnorm_sq(sol.u[static_cast<std::size_t>(j) - 1][m], ch, j);
    }
    rep.y_alpha += el * a2 * ya * st.delta_c;
    rep.z_sq += el * zs * st.delta_c;
    rep.u_sq += el * us * st.delta_c;
    rep.m_sq += el * ms;
  }
  return rep;
}

NormReport star_norm_ensemble(const SolutionProcesses& sol, int n,
                              const WeightProcess& w, const Characteristics& ch,
                              double beta) {
  int k = sol.steps;
  std::vector<double> ew = stochastic_exponential(w.A, beta);
  NormReport rep;
  double inv_n = 1.0 / static_cast<double>(n);
  for (int i = 0; i < n; ++i) {
    SupTracker sup(sol.y[0][static_cast<std::size_t>(i)]);
    for (int j = 1; j <= k; ++j)
      sup.push(ew[static_cast<std::size_t>(j) - 1],
               sol.y[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)],
               sol.y[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)]);
    rep.y_sup += inv_n * sup.best;
  }
  for (int j = 1; j <= k; ++j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double el = exp_weight_left(ew, j);
    double a2 = w.alpha_sq[static_cast<std::size_t>(j) - 1];
    double cj = ch.c_scalar(j);
    double ya = 0, zs = 0, us = 0, ms = 0;
    for (int i = 0; i < n; ++i) {
      double yv = sol.y[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
      double zc = sol.z[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)] * cj;
      ya += yv * yv;
      zs += zc * zc;
      us += tnorm_sq(sol.u[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)], ch, j);
      ms += sol.dm[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)] *
            sol.dm[static_cast<std::size_t>(j) - 1][static_cast<std::size_t>(i)];
    }
    rep.y_alpha += el * a2 * ya * inv_n * st.delta_c;
    rep.z_sq += el * zs * inv_n * st.delta_c;
    rep.u_sq += el * us * inv_n * st.delta_c;
    rep.m_sq += el * ms * inv_n;
  }
  return rep;
}

double mart_norm_tree(const SolutionProcesses& sol, const ScenarioTree& tree,
                      const WeightProcess& w, const Characteristics& ch,
                      double beta) {
  int k = sol.steps;
  std::vector<double> ew = stochastic_exponential(w.A, beta);
  double total = 0;
  for (int j = 1; j <= k; ++j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double el = exp_weight_left(ew, j);
    std::size_t b = tree.branching(j);
    const auto& pj = tree.node_prob[static_cast<std::size_t>(j)];
    double acc = 0;
    for (std::size_t m = 0; m < pj.size(); ++m) {
      std::size_t parent = m / b;
      std::size_t a = m % b;
      const auto& o = tree.steps[static_cast<std::size_t>(j) - 1][a];
      double dj = -sol.uh[static_cast<std::size_t>(j) - 1][parent];
      if (o.mark[0] != 0.0) {
        for (std::size_t at = 0; at < st.kernel.size(); ++at)
          if (o.mark[0] == st.kernel[at].mark[0]) {
            dj = sol.u[static_cast<std::size_t>(j) - 1][parent][at] -
                 sol.uh[static_cast<std::size_t>(j) - 1][parent];
            break;
          }
      }
      double inc = sol.z[static_cast<std::size_t>(j) - 1][parent] * o.dxc[0] + dj;
      acc += pj[m] * inc * inc;
    }
    total += el * acc;
  }
  return total;
}

EmpiricalMeasure law_at_tree(const SolutionProcesses& sol,
                             const ScenarioTree& tree, int j) {
  EmpiricalMeasure m;
  m.dim = 1;
  const auto& p = tree.node_prob[static_cast<std::size_t>(j)];
  for (std::size_t i = 0; i < p.size(); ++i)
    m.atoms.push_back({{sol.y[static_cast<std::size_t>(j)][i]}, p[i]});
  return m;
}

EmpiricalMeasure law_at_ensemble(const SolutionProcesses& sol, int j) {
  return EmpiricalMeasure::from_samples(sol.y[static_cast<std::size_t>(j)]);
}

}  // namespace mfbsde
