#pragma once

#include <cmath>
#include <cstdint>

namespace mfbsde {

// Counter-based random streams: every draw is a pure function of
// (seed, stream, step, draw). Sampling parallelizes over particles without
// any shared state, and the output is identical at any thread count.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t stream,
                                  std::uint64_t step, std::uint64_t draw) {
  std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
  h = splitmix64(h ^ stream);
  h = splitmix64(h ^ (step * 0x9e3779b97f4a7c15ULL));
  h = splitmix64(h ^ (draw * 0xd1342543de82ef95ULL));
  return h;
}

// Uniform on (0,1), never returning the endpoints.
inline double uniform(std::uint64_t seed, std::uint64_t stream,
                      std::uint64_t step, std::uint64_t draw) {
  std::uint64_t h = counter_hash(seed, stream, step, draw);
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

// Acklam's rational approximation of the inverse normal CDF, refined by one
// Halley step. Absolute error below 1e-15 on (0,1); single-draw, stateless.
inline double inverse_normal_cdf(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement against erfc.
  double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

inline double normal(std::uint64_t seed, std::uint64_t stream,
                     std::uint64_t step, std::uint64_t draw) {
  return inverse_normal_cdf(uniform(seed, stream, step, draw));
}

}  // namespace rng
}  // namespace mfbsde
