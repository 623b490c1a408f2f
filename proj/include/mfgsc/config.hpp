#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/grid.hpp"
#include "mfgsc/mfg.hpp"
#include "mfgsc/model.hpp"
#include "mfgsc/nplayer.hpp"

namespace mfgsc {

/// Parse failure that knows where it happened.
class ConfigError : public Error {
 public:
  ConfigError(std::size_t line, std::string key, const std::string& what)
      : Error(ErrorKind::Parse, what), line_(line), key_(std::move(key)) {}
  std::size_t line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  std::size_t line_;
  std::string key_;
};

struct GridConfig {
  double x_min = -4.0;
  double x_max = 4.0;
  std::size_t nx = 161;
  std::size_t nt = 61;
};

struct ExperimentConfig {
  std::vector<double> thetas{1, 2, 4, 8, 16, 32};
  std::size_t sweep_nt = 0;  // 0: smallest nt the largest theta allows
  std::vector<std::size_t> n_values{64, 128, 256, 512, 1024, 2048, 4096};
  std::size_t replications = 200;
  std::uint64_t seed = 20240601;
  std::string deviations = "shift(0.1), shift(-0.1), shift(0.2), shift(-0.2), zero, full_up, full_down";
  std::string fv_deviations =
      "shift(0.1), shift(-0.1), zero, full_up, full_down, burst(theta_max)";
  std::vector<double> fv_thetas{4, 8, 16};
  std::vector<std::size_t> fv_n_values{64, 256, 1024};
  double scheme_dt = 0.0;
  std::size_t mesh_nodes = 257;
  std::size_t block_size = 8;
  std::size_t reference_particles = std::size_t{1} << 18;
  ReferenceKind reference = ReferenceKind::Particle;
  std::size_t check_samples = 2000;
};

struct RunConfig {
  ModelParams model;
  GridConfig grid;
  MfgOptions solver;
  InitFlow init = InitFlow::Transported;
  ExperimentConfig experiment;
  std::string text;  // verbatim source, echoed into the manifest

  ModelSpec make_model() const { return mfgsc::make_model(model); }
  SpaceTimeGrid make_grid() const {
    return SpaceTimeGrid(grid.x_min, grid.x_max, grid.nx, model.start_time_s, model.horizon_T,
                         grid.nt);
  }
};

namespace config_detail {

inline std::string strip(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

struct Cursor {
  std::size_t line;
  std::string key;
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError(line, key, "config line " + std::to_string(line) + ", key '" + key +
                                     "': " + msg);
  }
};

inline double to_double(const Cursor& c, const std::string& s) {
  const std::string t = strip(s);
  if (t == "inf") return kInf;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    c.fail("expected a number, got '" + t + "'");
  }
  if (used != t.size()) c.fail("expected a number, got '" + t + "'");
  return v;
}

inline std::uint64_t to_uint(const Cursor& c, const std::string& s) {
  const std::string t = strip(s);
  if (t.empty() || !std::all_of(t.begin(), t.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); })) {
    c.fail("expected a non-negative integer, got '" + t + "'");
  }
  try {
    return std::stoull(t);
  } catch (const std::exception&) {
    c.fail("integer out of range: '" + t + "'");
  }
}

inline std::vector<std::string> list_items(const std::string& s) {
  std::string t = strip(s);
  if (t.size() >= 2 && t.front() == '[' && t.back() == ']') t = t.substr(1, t.size() - 2);
  std::vector<std::string> out;
  std::stringstream in(t);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> to_doubles(const Cursor& c, const std::string& s) {
  std::vector<double> out;
  for (const auto& it : list_items(s)) out.push_back(to_double(c, it));
  if (out.empty()) c.fail("empty list");
  return out;
}

inline std::vector<std::size_t> to_sizes(const Cursor& c, const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& it : list_items(s)) out.push_back(static_cast<std::size_t>(to_uint(c, it)));
  if (out.empty()) c.fail("empty list");
  return out;
}

// gaussian(m, s) | uniform(a, b) | atoms((x1, w1), (x2, w2), ...)
inline InitialLaw to_law(const Cursor& c, const std::string& s) {
  const std::string t = strip(s);
  const auto open = t.find('(');
  if (open == std::string::npos || t.back() != ')') c.fail("bad initial_law '" + t + "'");
  const std::string kind = strip(t.substr(0, open));
  const std::string body = t.substr(open + 1, t.size() - open - 2);
  if (kind == "gaussian" || kind == "uniform") {
    const auto v = to_doubles(c, body);
    if (v.size() != 2) c.fail(kind + " takes two arguments");
    try {
      return kind == "gaussian" ? InitialLaw::gaussian(v[0], v[1]) : InitialLaw::uniform(v[0], v[1]);
    } catch (const Error& e) {
      c.fail(e.what());
    }
  }
  if (kind == "atoms") {
    std::string flat;
    for (char ch : body) flat += (ch == '(' || ch == ')') ? ' ' : ch;
    const auto v = to_doubles(c, flat);
    if (v.size() % 2 != 0) c.fail("atoms need (x, w) pairs");
    std::vector<std::pair<double, double>> atoms;
    for (std::size_t i = 0; i < v.size(); i += 2) atoms.emplace_back(v[i], v[i + 1]);
    try {
      return InitialLaw::discrete(std::move(atoms));
    } catch (const Error& e) {
      c.fail(e.what());
    }
  }
  c.fail("unknown initial_law kind '" + kind + "'");
}

}  // namespace config_detail

/// `[section]` headers and `key = value` lines; `#` starts a comment.
inline RunConfig parse_config(const std::string& text) {
  using namespace config_detail;
  RunConfig cfg;
  cfg.text = text;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') Cursor{lineno, line}.fail("unterminated section header");
      section = strip(line.substr(1, line.size() - 2));
      if (section != "model" && section != "grid" && section != "solver" &&
          section != "experiment") {
        Cursor{lineno, section}.fail("unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) Cursor{lineno, line}.fail("expected key = value");
    const std::string key = strip(line.substr(0, eq));
    const std::string val = strip(line.substr(eq + 1));
    const Cursor c{lineno, key};
    if (section.empty()) c.fail("key outside any section");
    if (val.empty()) c.fail("empty value");
    const std::string full = section + "." + key;
    if (seen.count(full)) {
      c.fail("duplicate key (first set on line " + std::to_string(seen[full]) + ")");
    }
    seen[full] = lineno;

    auto& m = cfg.model;
    auto& g = cfg.grid;
    auto& e = cfg.experiment;
    if (section == "model") {
      if (key == "preset") m.preset = val;
      else if (key == "beta") m.beta = to_double(c, val);
      else if (key == "kappa") m.kappa = to_double(c, val);
      else if (key == "sigma") m.sigma = to_double(c, val);
      else if (key == "gamma1") m.gamma1 = to_double(c, val);
      else if (key == "gamma2") m.gamma2 = to_double(c, val);
      else if (key == "theta") {
        if (val == "none" || val == "inf") m.theta.reset();
        else m.theta = to_double(c, val);
      } else if (key == "T") m.horizon_T = to_double(c, val);
      else if (key == "s") m.start_time_s = to_double(c, val);
      else if (key == "initial_law") m.initial_law = to_law(c, val);
      else c.fail("unknown key in [model]");
    } else if (section == "grid") {
      if (key == "x_min") g.x_min = to_double(c, val);
      else if (key == "x_max") g.x_max = to_double(c, val);
      else if (key == "nx") g.nx = to_uint(c, val);
      else if (key == "nt") g.nt = to_uint(c, val);
      else c.fail("unknown key in [grid]");
    } else if (section == "solver") {
      if (key == "damping") cfg.solver.damping = to_double(c, val);
      else if (key == "tol") cfg.solver.tol = to_double(c, val);
      else if (key == "max_iter") cfg.solver.max_iter = to_uint(c, val);
      else if (key == "init") {
        try {
          cfg.init = parse_init_flow(val);
        } catch (const Error& ex) {
          c.fail(ex.what());
        }
      } else c.fail("unknown key in [solver]");
    } else {
      if (key == "thetas") e.thetas = to_doubles(c, val);
      else if (key == "sweep_nt") e.sweep_nt = to_uint(c, val);
      else if (key == "n_values") e.n_values = to_sizes(c, val);
      else if (key == "replications") e.replications = to_uint(c, val);
      else if (key == "seed") e.seed = to_uint(c, val);
      else if (key == "deviations" || key == "fv_deviations") {
        try {
          parse_deviations(val);
        } catch (const Error& ex) {
          c.fail(ex.what());
        }
        (key == "deviations" ? e.deviations : e.fv_deviations) = val;
      } else if (key == "fv_thetas") e.fv_thetas = to_doubles(c, val);
      else if (key == "fv_n_values") e.fv_n_values = to_sizes(c, val);
      else if (key == "scheme_dt") e.scheme_dt = to_double(c, val);
      else if (key == "mesh_nodes") e.mesh_nodes = to_uint(c, val);
      else if (key == "block_size") e.block_size = to_uint(c, val);
      else if (key == "reference_particles") e.reference_particles = to_uint(c, val);
      else if (key == "reference") {
        if (val == "particle") e.reference = ReferenceKind::Particle;
        else if (val == "pde") e.reference = ReferenceKind::Pde;
        else c.fail("reference must be particle or pde");
      } else if (key == "check_samples") e.check_samples = to_uint(c, val);
      else c.fail("unknown key in [experiment]");
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot read config " + path, ErrorKind::Io);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline SimulationConfig simulation_config(const RunConfig& cfg, std::size_t threads) {
  SimulationConfig s;
  const auto& e = cfg.experiment;
  s.n_replications = e.replications;
  s.seed = e.seed;
  s.scheme_dt = e.scheme_dt;
  s.mesh_nodes = e.mesh_nodes;
  s.threads = threads;
  s.block_size = e.block_size;
  s.reference_particles = e.reference_particles;
  s.reference = e.reference;
  return s;
}

}  // namespace mfgsc
