#include "mfbsde/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace mfbsde {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::uint64_t parse_u64(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    std::uint64_t r = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config line " + std::to_string(line) + ": bad integer '" + v + "'");
  }
}

int parse_int(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    int r = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config line " + std::to_string(line) + ": bad integer '" + v + "'");
  }
}

double parse_double(const std::string& v, int line) {
  try {
    std::size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return r;
  } catch (...) {
    throw ConfigError("config line " + std::to_string(line) + ": bad number '" + v + "'");
  }
}

std::vector<int> parse_int_list(const std::string& v, int line) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty())
      throw ConfigError("config line " + std::to_string(line) + ": empty list entry");
    out.push_back(parse_int(item, line));
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_int_list(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, int)>;

const std::map<std::string, Setter>& key_table() {
  static const std::map<std::string, Setter> table = {
      {"experiment.seed", [](ExperimentConfig& c, const std::string& v, int l) { c.seed = parse_u64(v, l); }},
      {"experiment.threads", [](ExperimentConfig& c, const std::string& v, int l) { c.threads = parse_int(v, l); }},
      {"experiment.reps", [](ExperimentConfig& c, const std::string& v, int l) { c.reps = parse_int(v, l); }},
      {"experiment.tol", [](ExperimentConfig& c, const std::string& v, int l) { c.tol = parse_double(v, l); }},
      {"experiment.particles", [](ExperimentConfig& c, const std::string& v, int l) { c.particles = parse_int(v, l); }},
      {"experiment.q_max", [](ExperimentConfig& c, const std::string& v, int l) { c.q_max = parse_int(v, l); }},
      {"experiment.max_nodes", [](ExperimentConfig& c, const std::string& v, int l) { c.max_nodes = parse_u64(v, l); }},
      {"experiment.backend", [](ExperimentConfig& c, const std::string& v, int) { c.backend = v; }},
      {"experiment.out_csv", [](ExperimentConfig& c, const std::string& v, int) { c.out_csv = v; }},
      {"experiment.out_json", [](ExperimentConfig& c, const std::string& v, int) { c.out_json = v; }},
      {"driver.mode", [](ExperimentConfig& c, const std::string& v, int) { c.driver_mode = v; }},
      {"driver.k", [](ExperimentConfig& c, const std::string& v, int l) { c.k = parse_int(v, l); }},
      {"driver.k_list", [](ExperimentConfig& c, const std::string& v, int l) { c.k_list = parse_int_list(v, l); }},
      {"driver.horizon", [](ExperimentConfig& c, const std::string& v, int l) { c.horizon = parse_double(v, l); }},
      {"driver.mark_scale", [](ExperimentConfig& c, const std::string& v, int l) { c.mark_scale = parse_double(v, l); }},
      {"driver.skeleton_steps", [](ExperimentConfig& c, const std::string& v, int l) { c.skeleton_steps = parse_int(v, l); }},
      {"driver.reference_k", [](ExperimentConfig& c, const std::string& v, int l) { c.reference_k = parse_int(v, l); }},
      {"generator.family", [](ExperimentConfig& c, const std::string& v, int) { c.family = v; }},
      {"generator.a0", [](ExperimentConfig& c, const std::string& v, int l) { c.a0 = parse_double(v, l); }},
      {"generator.a_y", [](ExperimentConfig& c, const std::string& v, int l) { c.a_y = parse_double(v, l); }},
      {"generator.a_z", [](ExperimentConfig& c, const std::string& v, int l) { c.a_z = parse_double(v, l); }},
      {"generator.a_u", [](ExperimentConfig& c, const std::string& v, int l) { c.a_u = parse_double(v, l); }},
      {"generator.a_mean", [](ExperimentConfig& c, const std::string& v, int l) { c.a_mean = parse_double(v, l); }},
      {"terminal.kind", [](ExperimentConfig& c, const std::string& v, int) { c.terminal_kind = v; }},
      {"terminal.constant", [](ExperimentConfig& c, const std::string& v, int l) { c.terminal_constant = parse_double(v, l); }},
      {"terminal.coupling_scale", [](ExperimentConfig& c, const std::string& v, int l) { c.coupling_scale = parse_double(v, l); }},
      {"terminal.coupling_gamma", [](ExperimentConfig& c, const std::string& v, int l) { c.coupling_gamma = parse_double(v, l); }},
      {"weights.beta_hat", [](ExperimentConfig& c, const std::string& v, int l) { c.beta_hat = parse_double(v, l); }},
      {"sweep.n_list", [](ExperimentConfig& c, const std::string& v, int l) { c.n_list = parse_int_list(v, l); }},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  int line = 0;
  while (std::getline(is, raw)) {
    ++line;
    std::string s = trim(raw);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("config line " + std::to_string(line) + ": malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      if (section.empty())
        throw ConfigError("config line " + std::to_string(line) + ": empty section name");
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line) + ": expected key = value");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(line) + ": empty key");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line) + ": key outside any section");
    std::string full = section + "." + key;
    auto it = key_table().find(full);
    if (it == key_table().end())
      throw ConfigError("config line " + std::to_string(line) + ": unknown key '" + full + "'");
    if (!seen.insert(full).second)
      throw ConfigError("config line " + std::to_string(line) + ": duplicate key '" + full + "'");
    it->second(cfg, value, line);
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return parse_config(os.str());
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << "[experiment]\n";
  os << "seed = " << seed << "\n";
  os << "threads = " << threads << "\n";
  os << "reps = " << reps << "\n";
  os << "tol = " << fmt_double(tol) << "\n";
  os << "particles = " << particles << "\n";
  os << "q_max = " << q_max << "\n";
  os << "max_nodes = " << max_nodes << "\n";
  os << "backend = " << backend << "\n";
  if (!out_csv.empty()) os << "out_csv = " << out_csv << "\n";
  if (!out_json.empty()) os << "out_json = " << out_json << "\n";
  os << "[driver]\n";
  os << "mode = " << driver_mode << "\n";
  os << "k = " << k << "\n";
  if (!k_list.empty()) os << "k_list = " << fmt_int_list(k_list) << "\n";
  os << "horizon = " << fmt_double(horizon) << "\n";
  os << "mark_scale = " << fmt_double(mark_scale) << "\n";
  os << "skeleton_steps = " << skeleton_steps << "\n";
  os << "reference_k = " << reference_k << "\n";
  os << "[generator]\n";
  os << "family = " << family << "\n";
  os << "a0 = " << fmt_double(a0) << "\n";
  os << "a_y = " << fmt_double(a_y) << "\n";
  os << "a_z = " << fmt_double(a_z) << "\n";
  os << "a_u = " << fmt_double(a_u) << "\n";
  os << "a_mean = " << fmt_double(a_mean) << "\n";
  os << "[terminal]\n";
  os << "kind = " << terminal_kind << "\n";
  os << "constant = " << fmt_double(terminal_constant) << "\n";
  os << "coupling_scale = " << fmt_double(coupling_scale) << "\n";
  os << "coupling_gamma = " << fmt_double(coupling_gamma) << "\n";
  os << "[weights]\n";
  os << "beta_hat = " << fmt_double(beta_hat) << "\n";
  os << "[sweep]\n";
  if (!n_list.empty()) os << "n_list = " << fmt_int_list(n_list) << "\n";
  return os.str();
}

}  // namespace mfbsde
