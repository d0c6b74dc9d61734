#include "mfbsde/measures.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace mfbsde {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Jonker-Volgenant shortest augmenting path assignment on a square cost
// matrix; returns the optimal total cost. O(n^3).
double solve_assignment(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, n), way(n + 1, n);
  for (std::size_t i = 0; i < n; ++i) {
    p[n] = i;
    std::size_t j0 = n;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      std::size_t i0 = p[j0], j1 = n;
      double delta = inf;
      for (std::size_t j = 0; j < n; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 * n + j] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != n);
    do {
      std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != n);
  }
  double total = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (p[j] != n) total += cost[p[j] * n + j];
  return total;
}

}  // namespace

void EmpiricalMeasure::validate() const {
  require(!atoms.empty(), "measure: no atoms");
  double s = 0;
  for (const auto& a : atoms) {
    require(static_cast<int>(a.point.size()) == dim, "measure: point dimension mismatch");
    require(a.weight > 0.0, "measure: weights must be positive");
    s += a.weight;
  }
  require(std::abs(s - 1.0) <= 1e-12, "measure: weights must sum to 1");
}

double EmpiricalMeasure::mean_coord(int coord) const {
  double s = 0;
  for (const auto& a : atoms) s += a.weight * a.point[static_cast<std::size_t>(coord)];
  return s;
}

double EmpiricalMeasure::second_moment() const {
  double s = 0;
  for (const auto& a : atoms) s += a.weight * sq_dist(a.point, std::vector<double>(a.point.size(), 0.0));
  return s;
}

EmpiricalMeasure EmpiricalMeasure::from_samples(const std::vector<double>& xs) {
  require(!xs.empty(), "measure: no samples");
  EmpiricalMeasure m;
  m.dim = 1;
  double w = 1.0 / static_cast<double>(xs.size());
  for (double x : xs) m.atoms.push_back({{x}, w});
  // Pin the exact sum-to-1 invariant against accumulated rounding.
  double s = w * static_cast<double>(xs.size());
  m.atoms.back().weight += 1.0 - s;
  return m;
}

EmpiricalMeasure EmpiricalMeasure::dirac(double x) {
  EmpiricalMeasure m;
  m.dim = 1;
  m.atoms.push_back({{x}, 1.0});
  return m;
}

double w2_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  a.validate();
  b.validate();
  require(a.dim == b.dim, "w2_exact: dimension mismatch");
  if (a.dim == 1) {
    // Quantile coupling: walk both sorted weight sequences.
    auto sorted = [](const EmpiricalMeasure& m) {
      std::vector<std::pair<double, double>> v;
      for (const auto& at : m.atoms) v.push_back({at.point[0], at.weight});
      std::sort(v.begin(), v.end());
      return v;
    };
    auto xs = sorted(a), ys = sorted(b);
    std::size_t i = 0, j = 0;
    double wa = xs[0].second, wb = ys[0].second, z = 0;
    while (i < xs.size() && j < ys.size()) {
      double d = xs[i].first - ys[j].first;
      double f = std::min(wa, wb);
      z += f * d * d;
      wa -= f;
      wb -= f;
      if (wa <= 1e-15) {
        ++i;
        if (i < xs.size()) wa = xs[i].second;
      }
      if (wb <= 1e-15) {
        ++j;
        if (j < ys.size()) wb = ys[j].second;
      }
    }
    return std::sqrt(std::max(0.0, z));
  }
  // d > 1: exact assignment over equal-size uniform samples.
  std::size_t n = a.atoms.size();
  require(n == b.atoms.size(), "w2_exact: d>1 needs equal-size samples");
  require(n <= 512, "w2_exact: d>1 assignment limited to n <= 512");
  double w = 1.0 / static_cast<double>(n);
  for (const auto& at : a.atoms) require(std::abs(at.weight - w) <= 1e-12, "w2_exact: d>1 needs uniform weights");
  for (const auto& at : b.atoms) require(std::abs(at.weight - w) <= 1e-12, "w2_exact: d>1 needs uniform weights");
  std::vector<double> cost(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      cost[i * n + j] = sq_dist(a.atoms[i].point, b.atoms[j].point);
  return std::sqrt(std::max(0.0, solve_assignment(cost, n) * w));
}

double coupling_bound(const std::vector<double>& xs,
                      const std::vector<double>& ys) {
  require(xs.size() == ys.size(), "coupling_bound: length mismatch");
  require(!xs.empty(), "coupling_bound: empty input");
  double s = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double d = xs[i] - ys[i];
    s += d * d;
  }
  return s / static_cast<double>(xs.size());
}

double coupling_bound_points(const std::vector<std::vector<double>>& xs,
                             const std::vector<std::vector<double>>& ys) {
  require(xs.size() == ys.size(), "coupling_bound: length mismatch");
  require(!xs.empty(), "coupling_bound: empty input");
  double s = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += sq_dist(xs[i], ys[i]);
  return s / static_cast<double>(xs.size());
}

namespace {

// Annulus index of a point: smallest m with x in (-2^m, 2^m]^d.
// The boxes are half-open, so membership is checked coordinatewise.
int box_index(const std::vector<double>& x) {
  for (int m = 0; m <= 1024; ++m) {
    double half = std::ldexp(1.0, m);  // 2^m
    bool inside = true;
    for (double c : x)
      if (!(c > -half && c <= half)) inside = false;
    if (inside) return m;
  }
  return 1025;
}

}  // namespace

MomentTable fg_moments(const EmpiricalMeasure& law, int m_max) {
  law.validate();
  require(m_max >= 0, "fg_moments: m_max must be >= 0");
  MomentTable t;
  t.dim = law.dim;
  t.m2.assign(static_cast<std::size_t>(m_max) + 1, 0.0);
  t.mass.assign(static_cast<std::size_t>(m_max) + 1, 0.0);
  for (const auto& a : law.atoms) {
    int m = box_index(a.point);
    double r2 = sq_dist(a.point, std::vector<double>(a.point.size(), 0.0));
    if (m <= m_max) {
      t.m2[static_cast<std::size_t>(m)] += a.weight * r2;
      t.mass[static_cast<std::size_t>(m)] += a.weight;
    } else {
      t.tail_m2 += a.weight * r2;
      t.tail_mass += a.weight;
    }
  }
  return t;
}

FgReport fg_sample_size(double eps, double c_d, double r0,
                        const MomentTable& moments) {
  require(eps > 0.0, "fg_sample_size: eps must be positive");
  require(c_d > 0.0, "fg_sample_size: c_d must be positive");
  require(r0 > 0.0, "fg_sample_size: r0 must be positive");
  FgReport rep;
  rep.eps = eps;
  rep.c_d = c_d;
  rep.r0 = r0;
  rep.dim = moments.dim;
  rep.eps1 = eps / (33.0 * c_d);

  // ell1: smallest natural with sum_{m > ell1} M2(m) < eps1.
  int m_max = static_cast<int>(moments.m2.size()) - 1;
  std::vector<double> suffix(static_cast<std::size_t>(m_max) + 2, moments.tail_m2);
  for (int m = m_max; m >= 0; --m)
    suffix[static_cast<std::size_t>(m)] = suffix[static_cast<std::size_t>(m) + 1] + moments.m2[static_cast<std::size_t>(m)];
  int ell1 = -1;
  for (int l = 1; l <= m_max; ++l) {
    if (suffix[static_cast<std::size_t>(l) + 1] < rep.eps1) {
      ell1 = l;
      break;
    }
  }
  if (ell1 < 0) {
    if (moments.tail_m2 < rep.eps1 && m_max >= 1) {
      ell1 = m_max;
    } else {
      throw InsufficientMomentsError(
          "fg_sample_size: moment tail never drops below eps1 at available depth");
    }
  }
  rep.ell1 = ell1;

  rep.eps2 = eps / ((6.0 + 24.0 * static_cast<double>(ell1) * r0) * c_d);
  // ell2: smallest natural with sum_{l > ell2} 2^{-2l} = 4^{-ell2}/3 < eps2.
  int ell2 = 1;
  while (std::ldexp(1.0, -2 * ell2) / 3.0 >= rep.eps2) {
    ++ell2;
    require(ell2 <= 2000, "fg_sample_size: ell2 overflow");
  }
  rep.ell2 = ell2;

  double n_real =
      9.0 * c_d * c_d * std::ldexp(1.0, moments.dim * ell2 + 2) *
      std::pow(std::ldexp(1.0, ell1 + 1) * static_cast<double>(ell1) * std::sqrt(r0) + 1.0, 2.0) /
      (eps * eps);
  require(n_real < 1e18, "fg_sample_size: N(eps) overflows 64 bits");
  rep.n_eps = static_cast<std::uint64_t>(std::floor(n_real)) + 1;
  return rep;
}

FgBound fg_bound(const EmpiricalMeasure& law, std::uint64_t n, double c_d,
                 int m_max, int l_max) {
  require(n >= 1, "fg_bound: n must be >= 1");
  require(c_d > 0.0, "fg_bound: c_d must be positive");
  MomentTable t = fg_moments(law, m_max);
  int d = law.dim;
  double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  FgBound out;
  for (int m = 0; m <= m_max; ++m) {
    double pm = t.mass[static_cast<std::size_t>(m)];
    if (pm <= 0.0) continue;
    double outer = std::ldexp(1.0, 2 * m);
    double inner = 0;
    for (int l = 0; l <= l_max; ++l) {
      double lvl = std::exp2(0.5 * d * l) * std::sqrt(pm) * inv_sqrt_n;
      inner += std::ldexp(1.0, -2 * l) * std::min(2.0 * pm, lvl);
    }
    out.value += c_d * outer * inner;
    // l-tail: min <= 2 p_m and sum_{l>l_max} 2^{-2l} = 4^{-l_max}/3.
    out.remainder += c_d * outer * 2.0 * pm * std::ldexp(1.0, -2 * l_max) / 3.0;
  }
  // m-tail: 2^{2m} p_m <= 4 M2(m) for m >= 1, and sum_l 2^{-2l} min{...} <= (4/3) 2 p_m.
  out.remainder += c_d * (8.0 / 3.0) * 4.0 * t.tail_m2;
  return out;
}

PathDistance path_distance(const GridPath& a, const GridPath& b) {
  require(!a.times.empty() && a.times.size() == a.values.size(), "path_distance: bad path a");
  require(!b.times.empty() && b.times.size() == b.values.size(), "path_distance: bad path b");
  require(std::abs(a.times.back() - b.times.back()) <= 1e-9 * std::max(1.0, a.times.back()),
          "path_distance: incompatible horizons");
  std::size_t i = 0, j = 0;
  double sup = 0;
  while (i < a.times.size() || j < b.times.size()) {
    sup = std::max(sup, std::abs(a.values[std::min(i, a.values.size() - 1)] -
                                 b.values[std::min(j, b.values.size() - 1)]));
    // advance to the next refinement point
    double ta = (i + 1 < a.times.size()) ? a.times[i + 1] : std::numeric_limits<double>::infinity();
    double tb = (j + 1 < b.times.size()) ? b.times[j + 1] : std::numeric_limits<double>::infinity();
    if (!std::isfinite(ta) && !std::isfinite(tb)) break;
    if (ta <= tb) ++i;
    if (tb <= ta) ++j;
  }
  return {sup, std::min(sup, 1.0)};
}

}  // namespace mfbsde
