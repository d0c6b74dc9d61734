#include "mfbsde/drivers.hpp"

#include <algorithm>
#include <cmath>

#include "mfbsde/rng.hpp"

namespace mfbsde {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool is_zero_mark(const std::vector<double>& m) {
  for (double v : m)
    if (v != 0.0) return false;
  return true;
}

}  // namespace

GridSpec make_grid(int steps, double horizon) {
  require(steps >= 1, "grid: steps must be >= 1");
  require(horizon > 0.0, "grid: horizon must be positive");
  return GridSpec{steps, horizon};
}

double IncrementLaw::second_moment() const {
  double s = 0;
  for (const auto& a : atoms) s += a.prob * dot(a.mark, a.mark);
  return s;
}

void IncrementLaw::validate() const {
  double psum = 0;
  std::vector<double> mean(static_cast<std::size_t>(dim), 0.0);
  for (const auto& a : atoms) {
    require(static_cast<int>(a.mark.size()) == dim, "law: mark dimension mismatch");
    require(a.prob > 0.0 && a.prob <= 1.0, "law: probability outside (0,1]");
    psum += a.prob;
    for (int i = 0; i < dim; ++i) mean[static_cast<std::size_t>(i)] += a.prob * a.mark[static_cast<std::size_t>(i)];
  }
  if (!atoms.empty()) {
    require(std::abs(psum - 1.0) <= 1e-12, "law: probabilities must sum to 1");
    for (double m : mean) require(std::abs(m) <= 1e-12, "law: increments must have zero mean");
  }
}

IncrementLaw two_point_law(double mark, int dim) {
  IncrementLaw law;
  law.dim = dim;
  std::vector<double> up(static_cast<std::size_t>(dim), 0.0), dn(static_cast<std::size_t>(dim), 0.0);
  up[0] = mark;
  dn[0] = -mark;
  law.atoms.push_back({up, 0.5});
  law.atoms.push_back({dn, 0.5});
  return law;
}

void DriverSpec::validate() const {
  require(grid.steps >= 1 && grid.horizon > 0.0, "driver: bad grid");
  require(cont_law.size() == static_cast<std::size_t>(grid.steps), "driver: cont_law per step");
  require(jump_law.size() == static_cast<std::size_t>(grid.steps), "driver: jump_law per step");
  double total_var = 0;
  for (int j = 0; j < grid.steps; ++j) {
    cont_law[static_cast<std::size_t>(j)].validate();
    jump_law[static_cast<std::size_t>(j)].validate();
    total_var += cont_law[static_cast<std::size_t>(j)].second_moment() +
                 jump_law[static_cast<std::size_t>(j)].second_moment();
  }
  require(total_var > 0.0, "driver: degenerate zero driver");
}

DriverSpec make_donsker_driver(int k, double horizon, DriverMode mode,
                               int skeleton_steps) {
  require(k >= 1, "make_donsker_driver: k must be >= 1");
  require(horizon > 0.0, "make_donsker_driver: horizon must be positive");
  require(mode == DriverMode::Rademacher || mode == DriverMode::GaussianCoupled,
          "make_donsker_driver: mode must be rademacher or gaussian_coupled");
  DriverSpec d;
  d.grid = make_grid(k, horizon);
  d.mode = mode;
  double step_sd = std::sqrt(horizon / k);
  IncrementLaw cont = two_point_law(step_sd);
  IncrementLaw none;
  for (int j = 0; j < k; ++j) {
    d.cont_law.push_back(cont);
    d.jump_law.push_back(none);
  }
  if (mode == DriverMode::GaussianCoupled) {
    if (skeleton_steps <= 0) skeleton_steps = k;
    require(skeleton_steps % k == 0,
            "make_donsker_driver: skeleton_steps must be a multiple of k");
    d.skeleton_steps = skeleton_steps;
  }
  d.validate();
  return d;
}

DriverSpec make_jump_driver(int k, double horizon, double mark_scale) {
  require(k >= 1, "make_jump_driver: k must be >= 1");
  require(horizon > 0.0, "make_jump_driver: horizon must be positive");
  require(mark_scale > 0.0, "make_jump_driver: mark_scale must be positive");
  DriverSpec d;
  d.grid = make_grid(k, horizon);
  d.mode = DriverMode::Jump;
  IncrementLaw none;
  IncrementLaw jump = two_point_law(mark_scale / std::sqrt(static_cast<double>(k)));
  for (int j = 0; j < k; ++j) {
    d.cont_law.push_back(none);
    d.jump_law.push_back(jump);
  }
  d.validate();
  return d;
}

DriverSpec make_combined_driver(int k, double horizon) {
  require(k >= 1, "make_combined_driver: k must be >= 1");
  require(horizon > 0.0, "make_combined_driver: horizon must be positive");
  DriverSpec d;
  d.grid = make_grid(k, horizon);
  d.mode = DriverMode::Combined;
  double half_var = horizon / (2.0 * k);
  IncrementLaw cont = two_point_law(std::sqrt(half_var));
  IncrementLaw jump = two_point_law(std::sqrt(half_var));
  for (int j = 0; j < k; ++j) {
    d.cont_law.push_back(cont);
    d.jump_law.push_back(jump);
  }
  d.validate();
  return d;
}

Characteristics characteristics(const DriverSpec& d) {
  d.validate();
  Characteristics ch;
  ch.grid = d.grid;
  double cum = 0;
  for (int j = 0; j < d.grid.steps; ++j) {
    const IncrementLaw& cl = d.cont_law[static_cast<std::size_t>(j)];
    const IncrementLaw& jl = d.jump_law[static_cast<std::size_t>(j)];
    Characteristics::Step st;
    st.cont_var = cl.second_moment();
    double jump_var = jl.second_moment();
    st.delta_c = st.cont_var + jump_var;  // dC = Tr<Xc> + |x|^2 * nu
    cum += st.delta_c;
    st.cum_c = cum;
    if (st.delta_c > 0.0) {
      // zeta_{t_j} = nu({t_j} x R^n): mass of nonzero jump marks.
      double zeta = 0;
      for (const auto& a : jl.atoms)
        if (!is_zero_mark(a.mark)) zeta += a.prob;
      st.zeta = zeta;
      // nu({t_j}, dx) = K_{t_j}(dx) dC, so K weights are prob / dC.
      for (const auto& a : jl.atoms) {
        if (is_zero_mark(a.mark)) continue;
        st.kernel.push_back({a.mark, a.prob / st.delta_c});
      }
      // c^2 dC = d<Xc>; scalar when cont_dim = 1.
      if (d.cont_dim == 1) {
        st.c = SymMat::scalar(std::sqrt(st.cont_var / st.delta_c));
      } else {
        SymMat csq = SymMat::zero(d.cont_dim);
        for (const auto& a : cl.atoms)
          for (int r = 0; r < d.cont_dim; ++r)
            for (int s = 0; s < d.cont_dim; ++s)
              csq.at(r, s) += a.prob * a.mark[static_cast<std::size_t>(r)] * a.mark[static_cast<std::size_t>(s)] / st.delta_c;
        st.c = linalg::sym_sqrt(csq);
      }
    } else {
      st.c = SymMat::scalar(0.0);
    }
    ch.steps.push_back(std::move(st));
  }
  return ch;
}

ScenarioTree build_tree(const DriverSpec& d, int players,
                        std::uint64_t max_nodes) {
  d.validate();
  require(players >= 1, "build_tree: players must be >= 1");
  require(max_nodes >= 1, "build_tree: max_nodes must be >= 1");

  // Per-player outcomes per step: product of cont and jump atoms.
  struct PlayerOutcome {
    double dxc, mark, prob;
  };
  std::vector<std::vector<PlayerOutcome>> per_player(static_cast<std::size_t>(d.grid.steps));
  for (int j = 0; j < d.grid.steps; ++j) {
    const auto& cl = d.cont_law[static_cast<std::size_t>(j)];
    const auto& jl = d.jump_law[static_cast<std::size_t>(j)];
    require(d.cont_dim == 1 && d.jump_dim == 1, "build_tree: tree backend is scalar");
    std::vector<PlayerOutcome> outs;
    auto cont_atoms = cl.atoms;
    auto jump_atoms = jl.atoms;
    if (cont_atoms.empty()) cont_atoms.push_back({{0.0}, 1.0});
    if (jump_atoms.empty()) jump_atoms.push_back({{0.0}, 1.0});
    for (const auto& ca : cont_atoms)
      for (const auto& ja : jump_atoms)
        outs.push_back({ca.mark[0], ja.mark[0], ca.prob * ja.prob});
    per_player[static_cast<std::size_t>(j)] = std::move(outs);
  }

  // Budget check before allocating anything.
  long double leaves = 1.0L;
  for (int j = 0; j < d.grid.steps; ++j) {
    long double b = 1.0L;
    for (int i = 0; i < players; ++i) b *= static_cast<long double>(per_player[static_cast<std::size_t>(j)].size());
    leaves *= b;
    if (leaves > static_cast<long double>(max_nodes)) {
      std::uint64_t need =
          leaves > 1e18L ? UINT64_MAX : static_cast<std::uint64_t>(leaves);
      throw CapacityError("build_tree: node budget exceeded, requires at least " +
                              std::to_string(need) + " leaf nodes",
                          need);
    }
  }

  ScenarioTree tree;
  tree.grid = d.grid;
  tree.players = players;
  tree.steps.resize(static_cast<std::size_t>(d.grid.steps));
  for (int j = 0; j < d.grid.steps; ++j) {
    const auto& outs = per_player[static_cast<std::size_t>(j)];
    std::size_t b = outs.size();
    std::size_t joint = 1;
    for (int i = 0; i < players; ++i) joint *= b;
    auto& step = tree.steps[static_cast<std::size_t>(j)];
    step.resize(joint);
    for (std::size_t m = 0; m < joint; ++m) {
      ScenarioTree::Outcome o;
      o.dxc.resize(static_cast<std::size_t>(players));
      o.mark.resize(static_cast<std::size_t>(players));
      o.prob = 1.0;
      std::size_t rem = m;
      for (int i = 0; i < players; ++i) {
        std::size_t a = rem % b;
        rem /= b;
        o.dxc[static_cast<std::size_t>(i)] = outs[a].dxc;
        o.mark[static_cast<std::size_t>(i)] = outs[a].mark;
        o.prob *= outs[a].prob;
      }
      step[m] = std::move(o);
    }
  }

  // Node probabilities and running driver states per depth.
  tree.nodes_at.assign(static_cast<std::size_t>(d.grid.steps) + 1, 1);
  tree.node_prob.resize(static_cast<std::size_t>(d.grid.steps) + 1);
  tree.state_xc.resize(static_cast<std::size_t>(d.grid.steps) + 1);
  tree.state_xj.resize(static_cast<std::size_t>(d.grid.steps) + 1);
  tree.node_prob[0] = {1.0};
  tree.state_xc[0].assign(static_cast<std::size_t>(players), 0.0);
  tree.state_xj[0].assign(static_cast<std::size_t>(players), 0.0);
  for (int j = 1; j <= d.grid.steps; ++j) {
    const auto& step = tree.steps[static_cast<std::size_t>(j - 1)];
    std::size_t b = step.size();
    std::size_t n = tree.nodes_at[static_cast<std::size_t>(j - 1)] * b;
    tree.nodes_at[static_cast<std::size_t>(j)] = n;
    tree.node_prob[static_cast<std::size_t>(j)].resize(n);
    tree.state_xc[static_cast<std::size_t>(j)].resize(n * static_cast<std::size_t>(players));
    tree.state_xj[static_cast<std::size_t>(j)].resize(n * static_cast<std::size_t>(players));
    for (std::size_t m = 0; m < n; ++m) {
      std::size_t parent = m / b, a = m % b;
      tree.node_prob[static_cast<std::size_t>(j)][m] =
          tree.node_prob[static_cast<std::size_t>(j - 1)][parent] * step[a].prob;
      for (int i = 0; i < players; ++i) {
        tree.state_xc[static_cast<std::size_t>(j)][m * static_cast<std::size_t>(players) + static_cast<std::size_t>(i)] =
            tree.state_xc[static_cast<std::size_t>(j - 1)][parent * static_cast<std::size_t>(players) + static_cast<std::size_t>(i)] +
            step[a].dxc[static_cast<std::size_t>(i)];
        tree.state_xj[static_cast<std::size_t>(j)][m * static_cast<std::size_t>(players) + static_cast<std::size_t>(i)] =
            tree.state_xj[static_cast<std::size_t>(j - 1)][parent * static_cast<std::size_t>(players) + static_cast<std::size_t>(i)] +
            step[a].mark[static_cast<std::size_t>(i)];
      }
    }
  }
  return tree;
}

namespace {

// Inverse-CDF draw from a finite law; atom order is part of the contract.
double draw_component(const IncrementLaw& law, double u) {
  double acc = 0;
  for (const auto& a : law.atoms) {
    acc += a.prob;
    if (u <= acc) return a.mark[0];
  }
  return law.atoms.back().mark[0];
}

}  // namespace

ParticleEnsemble sample_ensemble_streams(const DriverSpec& d,
                                         const std::vector<std::uint64_t>& streams,
                                         std::uint64_t seed, int threads) {
  d.validate();
  require(!streams.empty(), "sample_ensemble: n must be >= 1");
  require(d.cont_dim == 1 && d.jump_dim == 1, "sample_ensemble: scalar drivers only");
  int k = d.grid.steps;
  int n = static_cast<int>(streams.size());
  ParticleEnsemble e;
  e.grid = d.grid;
  e.n = n;
  e.seed = seed;
  e.stream_ids = streams;
  e.dxc.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  e.mark.assign(static_cast<std::size_t>(k), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  e.xc.assign(static_cast<std::size_t>(k) + 1, std::vector<double>(static_cast<std::size_t>(n), 0.0));
  e.xj.assign(static_cast<std::size_t>(k) + 1, std::vector<double>(static_cast<std::size_t>(n), 0.0));

  bool coupled = d.mode == DriverMode::GaussianCoupled && d.skeleton_steps > 0;
  int fine_per_step = coupled ? d.skeleton_steps / k : 0;
  double fine_sd = coupled ? std::sqrt(d.grid.horizon / d.skeleton_steps) : 0.0;

  parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t p) {
    std::uint64_t sid = streams[p];
    double cx = 0, jx = 0;
    for (int j = 0; j < k; ++j) {
      double dc = 0, dm = 0;
      if (coupled) {
        // Aggregate the shared fine skeleton over this coarse cell: the same
        // (seed, stream, fine index) normals back every grid in a sweep.
        for (int f = 0; f < fine_per_step; ++f) {
          std::uint64_t fine_idx = static_cast<std::uint64_t>(j) * static_cast<std::uint64_t>(fine_per_step) + static_cast<std::uint64_t>(f);
          dc += fine_sd * rng::normal(seed, sid, fine_idx, 0);
        }
      } else if (!d.cont_law[static_cast<std::size_t>(j)].empty()) {
        dc = draw_component(d.cont_law[static_cast<std::size_t>(j)],
                            rng::uniform(seed, sid, static_cast<std::uint64_t>(j), 1));
      }
      if (!d.jump_law[static_cast<std::size_t>(j)].empty()) {
        dm = draw_component(d.jump_law[static_cast<std::size_t>(j)],
                            rng::uniform(seed, sid, static_cast<std::uint64_t>(j), 2));
      }
      cx += dc;
      jx += dm;
      e.dxc[static_cast<std::size_t>(j)][p] = dc;
      e.mark[static_cast<std::size_t>(j)][p] = dm;
      e.xc[static_cast<std::size_t>(j) + 1][p] = cx;
      e.xj[static_cast<std::size_t>(j) + 1][p] = jx;
    }
  });
  return e;
}

ParticleEnsemble sample_ensemble(const DriverSpec& d, int n, std::uint64_t seed,
                                 int threads) {
  require(n >= 1, "sample_ensemble: n must be >= 1");
  std::vector<std::uint64_t> streams(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) streams[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i);
  return sample_ensemble_streams(d, streams, seed, threads);
}

}  // namespace mfbsde
