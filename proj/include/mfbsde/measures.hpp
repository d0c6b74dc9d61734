#pragma once

#include <cstddef>
#include <vector>

#include "mfbsde/common.hpp"

namespace mfbsde {

// Finite atomic probability measure on R^d.
struct EmpiricalMeasure {
  int dim = 1;
  struct Atom {
    std::vector<double> point;
    double weight = 0.0;
  };
  std::vector<Atom> atoms;

  void validate() const;
  double mean_coord(int coord = 0) const;
  double second_moment() const;  // E|x|^2

  static EmpiricalMeasure from_samples(const std::vector<double>& xs);
  static EmpiricalMeasure dirac(double x);
};

// Exact Wasserstein-2 distance. d = 1: weighted quantile coupling.
// d > 1: equal-size uniform samples via exact assignment (n <= 512).
double w2_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

// (1/N) sum |x_i - y_i|^2; an upper bound for W2^2 of the empirical laws.
double coupling_bound(const std::vector<double>& xs,
                      const std::vector<double>& ys);
double coupling_bound_points(const std::vector<std::vector<double>>& xs,
                             const std::vector<std::vector<double>>& ys);

// Second moments over dyadic annuli B_0 = (-1,1]^d,
// B_m = (-2^m,2^m]^d \ (-2^{m-1},2^{m-1}]^d.
struct MomentTable {
  int dim = 1;
  std::vector<double> m2;    // M2(m), m = 0..m_max
  double tail_m2 = 0.0;      // residual second moment beyond the largest box
  std::vector<double> mass;  // law(B_m), same indexing
  double tail_mass = 0.0;
};

MomentTable fg_moments(const EmpiricalMeasure& law, int m_max);

// The explicit sample-size construction: eps1, ell1 from the moment tail,
// eps2, ell2 from the geometric series tail, and N(eps).
struct FgReport {
  double eps = 0.0;
  double c_d = 1.0;
  double r0 = 0.0;
  int dim = 1;
  double eps1 = 0.0;
  double eps2 = 0.0;
  int ell1 = 0;
  int ell2 = 0;
  std::uint64_t n_eps = 0;
};

FgReport fg_sample_size(double eps, double c_d, double r0,
                        const MomentTable& moments);

// Truncated dyadic-annulus bound on E[W2^2(empirical_N, law)] plus an
// explicit remainder for the truncated portions of both series.
struct FgBound {
  double value = 0.0;
  double remainder = 0.0;
  double total() const { return value + remainder; }
};

FgBound fg_bound(const EmpiricalMeasure& law, std::uint64_t n, double c_d,
                 int m_max = 48, int l_max = 48);

// Right-continuous step path on its own grid.
struct GridPath {
  std::vector<double> times;   // strictly increasing, starts at 0
  std::vector<double> values;  // values[i] on [times[i], times[i+1])
};

struct PathDistance {
  double sup_dist = 0.0;
  double j1_upper = 0.0;  // min(sup_dist, 1)
};

PathDistance path_distance(const GridPath& a, const GridPath& b);

}  // namespace mfbsde
