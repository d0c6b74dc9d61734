#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mfbsde {

// Thrown when a scenario tree would exceed its node budget. Carries the
// budget that would have been required.
class CapacityError : public std::runtime_error {
 public:
  CapacityError(const std::string& what, std::uint64_t required)
      : std::runtime_error(what), required_nodes(required) {}
  std::uint64_t required_nodes;
};

// Thrown by fg_sample_size when the supplied moment table is too shallow
// to bring the annulus tail below epsilon_1.
class InsufficientMomentsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Static-partition parallel map over [0, n). Work item i writes only its own
// slots, so the result does not depend on the schedule. threads <= 1 runs inline.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    pool.emplace_back([&, t]() {
      for (std::size_t i = t; i < n; i += nt) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mfbsde
