#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfbsde {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat key=value experiment configuration with [sections]. Unknown keys and
// duplicates are errors; serialize() -> parse_config() round-trips exactly.
struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 1;
  int threads = 1;
  int reps = 20;
  double tol = 1e-9;
  int particles = 4096;
  int q_max = 60;
  std::uint64_t max_nodes = 1ULL << 20;
  std::string backend = "ensemble";  // ensemble | tree
  std::string out_csv;
  std::string out_json;

  // [driver]
  std::string driver_mode = "rademacher";  // rademacher | gaussian_coupled | jump | combined
  int k = 16;
  std::vector<int> k_list;
  double horizon = 1.0;
  double mark_scale = 1.0;
  int skeleton_steps = 0;
  int reference_k = 0;

  // [generator]
  std::string family = "linear";
  double a0 = 0.0;
  double a_y = 0.0;
  double a_z = 0.0;
  double a_u = 0.0;
  double a_mean = 0.0;

  // [terminal]
  std::string terminal_kind = "terminal_cont";  // terminal_cont | zero | constant
  double terminal_constant = 0.0;
  double coupling_scale = 0.0;
  double coupling_gamma = 1.0;

  // [weights]
  double beta_hat = 240.0;

  // [sweep]
  std::vector<int> n_list;

  bool operator==(const ExperimentConfig&) const = default;
  std::string serialize() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace mfbsde
