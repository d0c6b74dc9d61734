#include "mfbsde/stability.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "mfbsde/measures.hpp"

namespace mfbsde {

namespace {

// Stable particle stream ids: paths for (rep, player) coincide across sweeps
// with different player counts, which couples the cells of a matrix.
constexpr std::uint64_t kRepStride = 1ULL << 24;

std::vector<std::uint64_t> block_streams(int reps, int players) {
  std::vector<std::uint64_t> s;
  s.reserve(static_cast<std::size_t>(reps) * static_cast<std::size_t>(players));
  for (int r = 0; r < reps; ++r)
    for (int i = 0; i < players; ++i)
      s.push_back(static_cast<std::uint64_t>(r) * kRepStride + static_cast<std::uint64_t>(i));
  return s;
}

double jump_increment(const SolutionProcesses& sol, const Characteristics& ch,
                      int j, std::size_t idx, double mark) {
  const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
  double uh = sol.uh[static_cast<std::size_t>(j) - 1][idx];
  if (mark == 0.0) return -uh;
  for (std::size_t a = 0; a < st.kernel.size(); ++a)
    if (mark == st.kernel[a].mark[0])
      return sol.u[static_cast<std::size_t>(j) - 1][idx][a] - uh;
  return -uh;
}

// Terminal value of the martingale part Z . Xc + U * mu~ along one particle.
double mart_terminal(const SolutionProcesses& sol, const ParticleEnsemble& e,
                     const Characteristics& ch, std::size_t i) {
  double acc = 0;
  for (int j = 1; j <= sol.steps; ++j) {
    acc += sol.z[static_cast<std::size_t>(j) - 1][i] * e.dxc[static_cast<std::size_t>(j) - 1][i] +
           jump_increment(sol, ch, j, i, e.mark[static_cast<std::size_t>(j) - 1][i]);
  }
  return acc;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

std::vector<StandardData> build_data_sequence(const DataSequenceSpec& spec) {
  require(!spec.ks.empty(), "build_data_sequence: empty k list");
  int max_k = *std::max_element(spec.ks.begin(), spec.ks.end());
  int skeleton = spec.skeleton_steps > 0 ? spec.skeleton_steps : max_k;
  std::vector<StandardData> out;
  for (int k : spec.ks) {
    DriverSpec d;
    if (spec.coupling == DataSequenceSpec::Coupling::GaussianCoupled) {
      require(skeleton % k == 0,
              "build_data_sequence: every k must divide the skeleton");
      d = make_donsker_driver(k, spec.horizon, DriverMode::GaussianCoupled, skeleton);
    } else if (spec.independent_mode == DriverMode::Jump) {
      d = make_jump_driver(k, spec.horizon, spec.jump_mark_scale);
    } else if (spec.independent_mode == DriverMode::Combined) {
      d = make_combined_driver(k, spec.horizon);
    } else {
      d = make_donsker_driver(k, spec.horizon, DriverMode::Rademacher);
    }
    StandardData sd = StandardData::make(d, spec.terminal, spec.theta,
                                         spec.generator, spec.beta_hat);
    ValidationReport rep = validate_standard_data(sd);
    for (const auto& e : rep.entries) {
      if (!e.ok)
        throw std::runtime_error("build_data_sequence: assumption " + e.assumption +
                                 " fails at k=" + std::to_string(k) + " (" +
                                 e.witness + ")");
    }
    out.push_back(std::move(sd));
  }
  return out;
}

std::string ConvergenceMatrix::csv_header() {
  return "k,N,rep,seed,err_star_sq,err_y_sup_sq,err_mart_L2,norm_M_sq,"
         "w2_terminal_sq,var_diag,picard_q,runtime_ms";
}

std::string ConvergenceMatrix::csv() const {
  std::ostringstream os;
  os << csv_header() << "\n";
  for (const auto& r : rows) {
    os << r.k << "," << r.n_players << "," << r.rep << "," << r.seed << ","
       << fmt_double(r.err_star_sq) << "," << fmt_double(r.err_y_sup_sq) << ","
       << fmt_double(r.err_mart_l2) << "," << fmt_double(r.norm_m_sq) << ","
       << fmt_double(r.w2_terminal_sq) << "," << fmt_double(r.var_diag) << ","
       << r.picard_q << "," << r.runtime_ms << "\n";
  }
  return os.str();
}

double variation_diagnostic(const SolutionProcesses& sol_mf,
                            const SolutionProcesses& sol_mv, int players,
                            const StandardData& sd,
                            const ParticleEnsemble& paths) {
  const Characteristics& ch = sd.chars;
  std::size_t n = static_cast<std::size_t>(paths.n);
  int k = sol_mf.steps;
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double var = 0;
    std::size_t r = i / static_cast<std::size_t>(players);
    for (int j = 1; j <= k; ++j) {
      const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
      if (st.delta_c == 0.0) continue;
      double t = sd.time(j);
      double cj = ch.c_scalar(j);
      MeasureSummary mu_n;
      {
        double s1 = 0, s2 = 0;
        for (int l = 0; l < players; ++l) {
          double v = sol_mf.y[static_cast<std::size_t>(j)][r * static_cast<std::size_t>(players) + static_cast<std::size_t>(l)];
          s1 += v;
          s2 += v * v;
        }
        mu_n = {s1 / players, s2 / players};
      }
      double g_mf = gamma_fn(sol_mf.u[static_cast<std::size_t>(j) - 1][i], sd.theta, ch, j);
      double g_mv = gamma_fn(sol_mv.u[static_cast<std::size_t>(j) - 1][i], sd.theta, ch, j);
      double f_mf = sd.generator.eval(t, sol_mf.y[static_cast<std::size_t>(j)][i],
                                      sol_mf.z[static_cast<std::size_t>(j) - 1][i] * cj, g_mf, mu_n);
      double f_mv = sd.generator.eval(t, sol_mv.y[static_cast<std::size_t>(j)][i],
                                      sol_mv.z[static_cast<std::size_t>(j) - 1][i] * cj, g_mv,
                                      sol_mv.law_y[static_cast<std::size_t>(j)]);
      var += std::abs(f_mf - f_mv) * st.delta_c;
    }
    acc += var * var;
  }
  return acc / static_cast<double>(n);
}

namespace {

// Star-norm components of the (MF - MV) difference for one particle, with
// the beta_hat weights of the common data.
struct ParticleStarError {
  double total = 0.0;
  double m_part = 0.0;
};

ParticleStarError particle_star_error(const SolutionProcesses& a,
                                      const SolutionProcesses& b,
                                      const StandardData& sd, std::size_t i,
                                      const std::vector<double>& ew) {
  const Characteristics& ch = sd.chars;
  int k = a.steps;
  double y0 = a.y[0][i] - b.y[0][i];
  double sup = y0 * y0;
  double acc = 0, m_acc = 0;
  for (int j = 1; j <= k; ++j) {
    const auto& st = ch.steps[static_cast<std::size_t>(j) - 1];
    double el = exp_weight_left(ew, j);
    double ej = ew[static_cast<std::size_t>(j) - 1];
    double yp = a.y[static_cast<std::size_t>(j) - 1][i] - b.y[static_cast<std::size_t>(j) - 1][i];
    double yc = a.y[static_cast<std::size_t>(j)][i] - b.y[static_cast<std::size_t>(j)][i];
    sup = std::max(sup, ej * std::max(yp * yp, yc * yc));
    double a2 = sd.weights.alpha_sq[static_cast<std::size_t>(j) - 1];
    double cj = ch.c_scalar(j);
    double dz = (a.z[static_cast<std::size_t>(j) - 1][i] - b.z[static_cast<std::size_t>(j) - 1][i]) * cj;
    std::vector<double> du(a.u[static_cast<std::size_t>(j) - 1][i].size());
    for (std::size_t at = 0; at < du.size(); ++at)
      du[at] = a.u[static_cast<std::size_t>(j) - 1][i][at] - b.u[static_cast<std::size_t>(j) - 1][i][at];
    double dm = a.dm[static_cast<std::size_t>(j) - 1][i] - b.dm[static_cast<std::size_t>(j) - 1][i];
    acc += el * (a2 * yc * yc + dz * dz + tnorm_sq(du, ch, j)) * st.delta_c;
    m_acc += el * dm * dm;
  }
  ParticleStarError out;
  out.m_part = m_acc;
  out.total = sup + acc + m_acc;
  return out;
}

double particle_m_norm(const SolutionProcesses& s, const StandardData& sd,
                       std::size_t i, const std::vector<double>& ew) {
  double acc = 0;
  for (int j = 1; j <= s.steps; ++j) {
    double dm = s.dm[static_cast<std::size_t>(j) - 1][i];
    acc += exp_weight_left(ew, j) * dm * dm;
  }
  return acc;
}

}  // namespace

ConvergenceMatrix chaos_sweep(const StandardData& sd, const std::vector<int>& ns,
                              int reps, std::uint64_t seed,
                              const SweepOptions& opt) {
  require(!ns.empty() && reps >= 1, "chaos_sweep: bad arguments");
  ConvergenceMatrix out;
  std::vector<std::vector<SweepRow>> cell_rows(ns.size());
  std::vector<double> ew = stochastic_exponential(sd.weights.A, sd.beta_hat);

  parallel_for(ns.size(), opt.threads, [&](std::size_t cell) {
    int n_players = ns[cell];
    auto t0 = std::chrono::steady_clock::now();
    auto streams = block_streams(reps, n_players);
    ParticleEnsemble paths = sample_ensemble_streams(sd.driver, streams, seed);
    SolveOptions so;
    so.tol = opt.tol;
    so.q_max = opt.q_max;
    so.threads = 1;
    so.basis_degree = opt.basis_degree;
    so.feature_group = n_players;
    MfEnsembleResult mf = solve_mean_field_ensemble(sd, n_players, paths, so);
    MvEnsembleResult mv = solve_mckean_vlasov_ensemble(sd, paths, so);

    EmpiricalMeasure mv_terminal = law_at_ensemble(mv.sol, sd.steps());
    int k_ref = sd.steps();
    std::vector<SweepRow> rows(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
      SweepRow row;
      row.k = sd.steps();
      row.n_players = n_players;
      row.rep = r;
      row.seed = seed;
      row.picard_q = std::max(mf.state.q, mv.state.q);
      double star = 0, mart = 0, mnorm = 0;
      std::vector<double> y_mf_t(static_cast<std::size_t>(n_players));
      std::vector<double> terminal_mf(static_cast<std::size_t>(n_players));
      // sup over grid times of the cross-sectional mean square distance
      double ysup = 0;
      for (int j = 0; j <= k_ref; ++j) {
        double ms = 0;
        for (int i = 0; i < n_players; ++i) {
          std::size_t pi = static_cast<std::size_t>(r) * static_cast<std::size_t>(n_players) + static_cast<std::size_t>(i);
          double d = mf.sol.y[static_cast<std::size_t>(j)][pi] - mv.sol.y[static_cast<std::size_t>(j)][pi];
          ms += d * d;
        }
        ysup = std::max(ysup, ms / n_players);
      }
      for (int i = 0; i < n_players; ++i) {
        std::size_t pi = static_cast<std::size_t>(r) * static_cast<std::size_t>(n_players) + static_cast<std::size_t>(i);
        star += particle_star_error(mf.sol, mv.sol, sd, pi, ew).total;
        double dmart = mart_terminal(mf.sol, paths, sd.chars, pi) -
                       mart_terminal(mv.sol, paths, sd.chars, pi);
        mart += dmart * dmart;
        mnorm += particle_m_norm(mf.sol, sd, pi, ew);
        y_mf_t[static_cast<std::size_t>(i)] = mf.sol.y[static_cast<std::size_t>(k_ref)][pi];
        terminal_mf[static_cast<std::size_t>(i)] = y_mf_t[static_cast<std::size_t>(i)];
      }
      row.err_star_sq = star / n_players;
      row.err_y_sup_sq = ysup;
      row.err_mart_l2 = mart / n_players;
      row.norm_m_sq = mnorm / n_players;
      double w2 = w2_exact(EmpiricalMeasure::from_samples(terminal_mf), mv_terminal);
      row.w2_terminal_sq = w2 * w2;
      rows[static_cast<std::size_t>(r)] = row;
    }
    // variation diagnostic per rep
    {
      std::size_t n = static_cast<std::size_t>(paths.n);
      std::vector<double> per_rep(static_cast<std::size_t>(reps), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = i / static_cast<std::size_t>(n_players);
        double var = 0;
        for (int j = 1; j <= sd.steps(); ++j) {
          const auto& st = sd.chars.steps[static_cast<std::size_t>(j) - 1];
          double t = sd.time(j);
          double cj = sd.chars.c_scalar(j);
          double s1 = 0, s2 = 0;
          for (int l = 0; l < n_players; ++l) {
            double v = mf.sol.y[static_cast<std::size_t>(j)][(i / static_cast<std::size_t>(n_players)) * static_cast<std::size_t>(n_players) + static_cast<std::size_t>(l)];
            s1 += v;
            s2 += v * v;
          }
          double g_mf = gamma_fn(mf.sol.u[static_cast<std::size_t>(j) - 1][i], sd.theta, sd.chars, j);
          double g_mv = gamma_fn(mv.sol.u[static_cast<std::size_t>(j) - 1][i], sd.theta, sd.chars, j);
          double f_mf = sd.generator.eval(t, mf.sol.y[static_cast<std::size_t>(j)][i],
                                          mf.sol.z[static_cast<std::size_t>(j) - 1][i] * cj, g_mf,
                                          {s1 / n_players, s2 / n_players});
          double f_mv = sd.generator.eval(t, mv.sol.y[static_cast<std::size_t>(j)][i],
                                          mv.sol.z[static_cast<std::size_t>(j) - 1][i] * cj, g_mv,
                                          mv.sol.law_y[static_cast<std::size_t>(j)]);
          var += std::abs(f_mf - f_mv) * st.delta_c;
        }
        per_rep[r] += var * var / n_players;
      }
      for (int r = 0; r < reps; ++r) rows[static_cast<std::size_t>(r)].var_diag = per_rep[static_cast<std::size_t>(r)];
    }
    auto t1 = std::chrono::steady_clock::now();
    std::fprintf(stderr, "[chaos-sweep] N=%d solved in %lld ms\n", n_players,
                 static_cast<long long>(std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()));
    cell_rows[cell] = std::move(rows);
  });

  for (auto& rows : cell_rows)
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  return out;
}

namespace {

// Y value of a coarse-grid solution at a fine grid index.
inline double coarse_y_at_fine(const SolutionProcesses& sol, int k, int k_ref,
                               int fine_j, std::size_t i) {
  int cj = static_cast<int>((static_cast<long long>(fine_j) * k) / k_ref);
  return sol.y[static_cast<std::size_t>(cj)][i];
}

}  // namespace

ConvergenceMatrix stability_sweep(const std::vector<StandardData>& seq,
                                  int reference_k, std::uint64_t seed,
                                  const SweepOptions& opt) {
  require(!seq.empty(), "stability_sweep: empty sequence");
  const StandardData* ref = nullptr;
  for (const auto& sd : seq)
    if (sd.steps() == reference_k) ref = &sd;
  require(ref != nullptr, "stability_sweep: reference_k not in the sequence");
  for (const auto& sd : seq)
    require(sd.driver.mode == DriverMode::GaussianCoupled,
            "stability_sweep: gaussian_coupled mode required for pathwise comparability");

  SolveOptions so;
  so.tol = opt.tol;
  so.q_max = opt.q_max;
  so.threads = opt.threads;
  so.basis_degree = opt.basis_degree;

  ParticleEnsemble ref_paths = sample_ensemble(ref->driver, opt.particles, seed, opt.threads);
  MvEnsembleResult ref_sol = solve_mckean_vlasov_ensemble(*ref, ref_paths, so);
  std::vector<double> ref_mart(static_cast<std::size_t>(opt.particles));
  for (int i = 0; i < opt.particles; ++i)
    ref_mart[static_cast<std::size_t>(i)] = mart_terminal(ref_sol.sol, ref_paths, ref->chars, static_cast<std::size_t>(i));

  ConvergenceMatrix out;
  std::vector<SweepRow> rows(seq.size());
  parallel_for(seq.size(), opt.threads, [&](std::size_t idx) {
    const StandardData& sd = seq[idx];
    auto t0 = std::chrono::steady_clock::now();
    int k = sd.steps();
    int k_ref = ref->steps();
    SolveOptions cell_so = so;
    cell_so.threads = 1;
    ParticleEnsemble paths = sample_ensemble(sd.driver, opt.particles, seed);
    MvEnsembleResult res = (k == k_ref) ? MvEnsembleResult{}
                                        : solve_mckean_vlasov_ensemble(sd, paths, cell_so);
    const SolutionProcesses& sol = (k == k_ref) ? ref_sol.sol : res.sol;
    const PicardState& st = (k == k_ref) ? ref_sol.state : res.state;

    SweepRow row;
    row.k = k;
    row.n_players = 1;
    row.rep = 0;
    row.seed = seed;
    row.picard_q = st.q;
    std::size_t n = static_cast<std::size_t>(opt.particles);
    std::vector<double> ew = stochastic_exponential(sd.weights.A, sd.beta_hat);

    // sup over the refinement grid of the mean square Y distance
    double ysup = 0;
    for (int fj = 0; fj <= k_ref; ++fj) {
      double ms = 0;
      for (std::size_t i = 0; i < n; ++i) {
        double d = coarse_y_at_fine(sol, k, k_ref, fj, i) - ref_sol.sol.y[static_cast<std::size_t>(fj)][i];
        ms += d * d;
      }
      ysup = std::max(ysup, ms / static_cast<double>(n));
    }
    row.err_y_sup_sq = ysup;

    double mart = 0, mnorm = 0, proxy = 0;
    std::vector<double> terminal(n);
    for (std::size_t i = 0; i < n; ++i) {
      double dmart = mart_terminal(sol, paths, sd.chars, i) - ref_mart[i];
      mart += dmart * dmart;
      mnorm += particle_m_norm(sol, sd, i, ew);
      terminal[i] = sol.y[static_cast<std::size_t>(k)][i];
      // capped-sup path distance of the solution triple (Y, mart, M)
      double sup = 0, mart_k = 0, mart_r = 0, m_k = 0, m_r = 0;
      int cj_prev = -1;
      for (int fj = 0; fj <= k_ref; ++fj) {
        int cj = static_cast<int>((static_cast<long long>(fj) * k) / k_ref);
        if (fj > 0) {
          mart_r += ref_sol.sol.z[static_cast<std::size_t>(fj) - 1][i] * ref_paths.dxc[static_cast<std::size_t>(fj) - 1][i] +
                    jump_increment(ref_sol.sol, ref->chars, fj, i, ref_paths.mark[static_cast<std::size_t>(fj) - 1][i]);
          m_r += ref_sol.sol.dm[static_cast<std::size_t>(fj) - 1][i];
        }
        if (cj != cj_prev && cj > 0) {
          mart_k += sol.z[static_cast<std::size_t>(cj) - 1][i] * paths.dxc[static_cast<std::size_t>(cj) - 1][i] +
                    jump_increment(sol, sd.chars, cj, i, paths.mark[static_cast<std::size_t>(cj) - 1][i]);
          m_k += sol.dm[static_cast<std::size_t>(cj) - 1][i];
        }
        cj_prev = cj;
        double dy = coarse_y_at_fine(sol, k, k_ref, fj, i) - ref_sol.sol.y[static_cast<std::size_t>(fj)][i];
        double dmart_t = mart_k - mart_r;
        double dm_t = m_k - m_r;
        sup = std::max(sup, std::sqrt(dy * dy + dmart_t * dmart_t + dm_t * dm_t));
      }
      double capped = std::min(sup, 1.0);
      proxy += capped * capped;
    }
    row.err_mart_l2 = mart / static_cast<double>(n);
    row.norm_m_sq = mnorm / static_cast<double>(n);
    row.err_star_sq = row.err_y_sup_sq + row.err_mart_l2 + row.norm_m_sq;
    row.path_w2_proxy = proxy / static_cast<double>(n);
    double w2 = w2_exact(EmpiricalMeasure::from_samples(terminal),
                         law_at_ensemble(ref_sol.sol, k_ref));
    row.w2_terminal_sq = w2 * w2;

    // Bracket-path distances: [Y] per particle (averaged sup distance) and
    // the cross-sectional compensator path for <Y>.
    {
      double qv_acc = 0;
      std::vector<double> pb_k(static_cast<std::size_t>(k) + 1, 0.0);
      std::vector<double> pb_r(static_cast<std::size_t>(k_ref) + 1, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        double qk = 0, qr = 0, sup = 0;
        int cj_prev2 = 0;
        for (int fj = 1; fj <= k_ref; ++fj) {
          int cj = static_cast<int>((static_cast<long long>(fj) * k) / k_ref);
          double dyr = ref_sol.sol.y[static_cast<std::size_t>(fj)][i] - ref_sol.sol.y[static_cast<std::size_t>(fj) - 1][i];
          qr += dyr * dyr;
          if (cj != cj_prev2) {
            double dyk = sol.y[static_cast<std::size_t>(cj)][i] - sol.y[static_cast<std::size_t>(cj) - 1][i];
            qk += dyk * dyk;
            cj_prev2 = cj;
          }
          sup = std::max(sup, std::abs(qk - qr));
        }
        qv_acc += sup;
      }
      row.qv_path_dist = qv_acc / static_cast<double>(n);
      for (int j = 1; j <= k; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
          double dy = sol.y[static_cast<std::size_t>(j)][i] - sol.y[static_cast<std::size_t>(j) - 1][i];
          s += dy * dy;
        }
        pb_k[static_cast<std::size_t>(j)] = pb_k[static_cast<std::size_t>(j) - 1] + s / static_cast<double>(n);
      }
      for (int j = 1; j <= k_ref; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
          double dy = ref_sol.sol.y[static_cast<std::size_t>(j)][i] - ref_sol.sol.y[static_cast<std::size_t>(j) - 1][i];
          s += dy * dy;
        }
        pb_r[static_cast<std::size_t>(j)] = pb_r[static_cast<std::size_t>(j) - 1] + s / static_cast<double>(n);
      }
      double sup = 0;
      for (int fj = 0; fj <= k_ref; ++fj) {
        int cj = static_cast<int>((static_cast<long long>(fj) * k) / k_ref);
        sup = std::max(sup, std::abs(pb_k[static_cast<std::size_t>(cj)] - pb_r[static_cast<std::size_t>(fj)]));
      }
      row.pb_path_dist = sup;
    }
    auto t1 = std::chrono::steady_clock::now();
    std::fprintf(stderr, "[stability-sweep] k=%d solved in %lld ms\n", k,
                 static_cast<long long>(std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()));
    rows[idx] = row;
  });
  out.rows = rows;
  return out;
}

ConvergenceMatrix double_sweep(const std::vector<StandardData>& seq,
                               const std::vector<int>& ns, int reps,
                               std::uint64_t seed, const SweepOptions& opt) {
  require(!seq.empty() && !ns.empty() && reps >= 1, "double_sweep: bad arguments");
  int k_ref = 0;
  const StandardData* ref = nullptr;
  for (const auto& sd : seq)
    if (sd.steps() > k_ref) {
      k_ref = sd.steps();
      ref = &sd;
    }
  for (const auto& sd : seq)
    require(sd.driver.mode == DriverMode::GaussianCoupled,
            "double_sweep: gaussian_coupled mode required");
  int n_max = *std::max_element(ns.begin(), ns.end());

  // Reference MV solution on the full stream set; cells address the subset
  // of particles they share with it.
  auto full_streams = block_streams(reps, n_max);
  ParticleEnsemble ref_paths = sample_ensemble_streams(ref->driver, full_streams, seed, opt.threads);
  SolveOptions so;
  so.tol = opt.tol;
  so.q_max = opt.q_max;
  so.threads = opt.threads;
  so.basis_degree = opt.basis_degree;
  MvEnsembleResult ref_sol = solve_mckean_vlasov_ensemble(*ref, ref_paths, so);
  EmpiricalMeasure ref_terminal = law_at_ensemble(ref_sol.sol, k_ref);

  // Per-k MV solutions on the full stream set, for the variation diagnostic.
  std::vector<MvEnsembleResult> mv_k(seq.size());
  std::vector<ParticleEnsemble> mv_paths(seq.size());
  parallel_for(seq.size(), opt.threads, [&](std::size_t s) {
    SolveOptions cell_so = so;
    cell_so.threads = 1;
    mv_paths[s] = sample_ensemble_streams(seq[s].driver, full_streams, seed);
    mv_k[s] = solve_mckean_vlasov_ensemble(seq[s], mv_paths[s], cell_so);
  });

  struct Cell {
    std::size_t k_idx;
    int n_players;
  };
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < seq.size(); ++s)
    for (int n_players : ns) cells.push_back({s, n_players});

  std::vector<std::vector<SweepRow>> cell_rows(cells.size());
  parallel_for(cells.size(), opt.threads, [&](std::size_t ci) {
    const StandardData& sd = seq[cells[ci].k_idx];
    int n_players = cells[ci].n_players;
    int k = sd.steps();
    auto t0 = std::chrono::steady_clock::now();
    auto streams = block_streams(reps, n_players);
    ParticleEnsemble paths = sample_ensemble_streams(sd.driver, streams, seed);
    SolveOptions cell_so = so;
    cell_so.threads = 1;
    cell_so.feature_group = n_players;
    MfEnsembleResult mf = solve_mean_field_ensemble(sd, n_players, paths, cell_so);
    std::vector<double> ew = stochastic_exponential(sd.weights.A, sd.beta_hat);

    std::vector<SweepRow> rows(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
      SweepRow row;
      row.k = k;
      row.n_players = n_players;
      row.rep = r;
      row.seed = seed;
      row.picard_q = std::max(mf.state.q, ref_sol.state.q);
      double ysup = 0;
      for (int fj = 0; fj <= k_ref; ++fj) {
        double ms = 0;
        for (int i = 0; i < n_players; ++i) {
          std::size_t pi = static_cast<std::size_t>(r) * static_cast<std::size_t>(n_players) + static_cast<std::size_t>(i);
          std::size_t ref_pi = static_cast<std::size_t>(r) * static_cast<std::size_t>(n_max) + static_cast<std::size_t>(i);
          double d = coarse_y_at_fine(mf.sol, k, k_ref, fj, pi) -
                     ref_sol.sol.y[static_cast<std::size_t>(fj)][ref_pi];
          ms += d * d;
        }
        ysup = std::max(ysup, ms / n_players);
      }
      row.err_y_sup_sq = ysup;

      double mart = 0, mnorm = 0, proxy = 0, vd = 0;
      std::vector<double> terminal(static_cast<std::size_t>(n_players));
      for (int i = 0; i < n_players; ++i) {
        std::size_t pi = static_cast<std::size_t>(r) * static_cast<std::size_t>(n_players) + static_cast<std::size_t>(i);
        std::size_t ref_pi = static_cast<std::size_t>(r) * static_cast<std::size_t>(n_max) + static_cast<std::size_t>(i);
        double dmart = mart_terminal(mf.sol, paths, sd.chars, pi) -
                       mart_terminal(ref_sol.sol, ref_paths, ref->chars, ref_pi);
        mart += dmart * dmart;
        mnorm += particle_m_norm(mf.sol, sd, pi, ew);
        terminal[static_cast<std::size_t>(i)] = mf.sol.y[static_cast<std::size_t>(k)][pi];

        // capped-sup distance of the (Y, mart, M) triple on the refinement
        double sup = 0, mk = 0, mr = 0, mmk = 0, mmr = 0;
        int cj_prev = 0;
        for (int fj = 0; fj <= k_ref; ++fj) {
          int cj = static_cast<int>((static_cast<long long>(fj) * k) / k_ref);
          if (fj > 0) {
            mr += ref_sol.sol.z[static_cast<std::size_t>(fj) - 1][ref_pi] * ref_paths.dxc[static_cast<std::size_t>(fj) - 1][ref_pi] +
                  jump_increment(ref_sol.sol, ref->chars, fj, ref_pi, ref_paths.mark[static_cast<std::size_t>(fj) - 1][ref_pi]);
            mmr += ref_sol.sol.dm[static_cast<std::size_t>(fj) - 1][ref_pi];
          }
          if (cj != cj_prev) {
            mk += mf.sol.z[static_cast<std::size_t>(cj) - 1][pi] * paths.dxc[static_cast<std::size_t>(cj) - 1][pi] +
                  jump_increment(mf.sol, sd.chars, cj, pi, paths.mark[static_cast<std::size_t>(cj) - 1][pi]);
            mmk += mf.sol.dm[static_cast<std::size_t>(cj) - 1][pi];
            cj_prev = cj;
          }
          double dy = coarse_y_at_fine(mf.sol, k, k_ref, fj, pi) - ref_sol.sol.y[static_cast<std::size_t>(fj)][ref_pi];
          double dmrt = mk - mr, dmm = mmk - mmr;
          sup = std::max(sup, std::sqrt(dy * dy + dmrt * dmrt + dmm * dmm));
        }
        double capped = std::min(sup, 1.0);
        proxy += capped * capped;

        // Corollary 5.7 quantity against the same-k MV solution.
        const SolutionProcesses& mvk = mv_k[cells[ci].k_idx].sol;
        double var = 0;
        for (int j = 1; j <= k; ++j) {
          const auto& st = sd.chars.steps[static_cast<std::size_t>(j) - 1];
          double t = sd.time(j);
          double cjv = sd.chars.c_scalar(j);
          double s1 = 0, s2 = 0;
          for (int l = 0; l < n_players; ++l) {
            double v = mf.sol.y[static_cast<std::size_t>(j)][static_cast<std::size_t>(r) * static_cast<std::size_t>(n_players) + static_cast<std::size_t>(l)];
            s1 += v;
            s2 += v * v;
          }
          double g_mf = gamma_fn(mf.sol.u[static_cast<std::size_t>(j) - 1][pi], sd.theta, sd.chars, j);
          double g_mv = gamma_fn(mvk.u[static_cast<std::size_t>(j) - 1][ref_pi], sd.theta, sd.chars, j);
          double f_mf = sd.generator.eval(t, mf.sol.y[static_cast<std::size_t>(j)][pi],
                                          mf.sol.z[static_cast<std::size_t>(j) - 1][pi] * cjv, g_mf,
                                          {s1 / n_players, s2 / n_players});
          double f_mv = sd.generator.eval(t, mvk.y[static_cast<std::size_t>(j)][ref_pi],
                                          mvk.z[static_cast<std::size_t>(j) - 1][ref_pi] * cjv, g_mv,
                                          mvk.law_y[static_cast<std::size_t>(j)]);
          var += std::abs(f_mf - f_mv) * st.delta_c;
        }
        vd += var * var;
      }
      row.err_mart_l2 = mart / n_players;
      row.norm_m_sq = mnorm / n_players;
      row.err_star_sq = row.err_y_sup_sq + row.err_mart_l2 + row.norm_m_sq;
      row.path_w2_proxy = proxy / n_players;
      row.var_diag = vd / n_players;
      double w2 = w2_exact(EmpiricalMeasure::from_samples(terminal), ref_terminal);
      row.w2_terminal_sq = w2 * w2;
      rows[static_cast<std::size_t>(r)] = row;
    }
    auto t1 = std::chrono::steady_clock::now();
    std::fprintf(stderr, "[double-sweep] k=%d N=%d solved in %lld ms\n", k, n_players,
                 static_cast<long long>(std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count()));
    cell_rows[ci] = std::move(rows);
  });

  ConvergenceMatrix out;
  for (auto& rows : cell_rows)
    out.rows.insert(out.rows.end(), rows.begin(), rows.end());
  return out;
}

SlopeFit fit_loglog_slope(const std::vector<double>& x,
                          const std::vector<double>& y) {
  require(x.size() == y.size(), "slope: size mismatch");
  require(x.size() >= 3, "slope: need at least 3 points");
  std::size_t n = x.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    require(x[i] > 0.0 && y[i] > 0.0, "slope: values must be positive");
    lx[i] = std::log(x[i]);
    ly[i] = std::log(y[i]);
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += lx[i];
    my += ly[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  require(sxx > 0.0, "slope: x values must not be constant");
  SlopeFit fit;
  fit.slope = sxy / sxx;
  double rss = 0;
  double b0 = my - fit.slope * mx;
  for (std::size_t i = 0; i < n; ++i) {
    double e = ly[i] - (b0 + fit.slope * lx[i]);
    rss += e * e;
  }
  fit.stderr_ = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  return fit;
}

}  // namespace mfbsde
