#pragma once

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mfgsc/assumptions.hpp"
#include "mfgsc/config.hpp"
#include "mfgsc/io.hpp"
#include "mfgsc/mfg.hpp"
#include "mfgsc/nplayer.hpp"

namespace mfgsc {

inline constexpr const char* kVersion = "mfgsc 1.0.0";

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot hash " + path.string(), ErrorKind::Io);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  require(ctx != nullptr, "sha256: context allocation failed", ErrorKind::Io);
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof(two), "%02x", md[i]);
    hex += two;
  }
  return hex;
}

struct RunOptions {
  std::string command;
  std::filesystem::path out_dir;
  std::size_t threads = 1;
  bool verbose = false;
};

/// Tracks emitted files and stage timings for the manifest.
class RunContext {
 public:
  RunContext(const RunConfig& cfg, RunOptions opt) : cfg_(cfg), opt_(std::move(opt)) {
    std::filesystem::create_directories(opt_.out_dir);
  }

  const RunConfig& config() const { return cfg_; }
  const RunOptions& options() const { return opt_; }

  std::filesystem::path file(const std::string& rel) {
    files_.push_back(rel);
    return opt_.out_dir / rel;
  }

  template <class F>
  auto stage(const std::string& name, F&& fn) {
    log("stage " + name + " ...");
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&] {
      const double s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      timings_.emplace_back(name, s);
      log("stage " + name + " done in " + std::to_string(s) + " s");
    };
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      finish();
    } else {
      auto r = fn();
      finish();
      return r;
    }
  }

  void log(const std::string& msg) const {
    if (opt_.verbose) std::cerr << "[mfgsc] " << msg << '\n';
  }

  /// Hashes every emitted file; the manifest itself is not hashed.
  void write_manifest() const {
    nlohmann::ordered_json j;
    j["version"] = kVersion;
    j["command"] = opt_.command;
    j["master_seed"] = cfg_.experiment.seed;
    j["threads"] = opt_.threads;
    j["config"] = cfg_.text;
    auto& files = j["files"];
    files = nlohmann::ordered_json::object();
    for (const auto& f : files_) files[f] = sha256_file(opt_.out_dir / f);
    auto& t = j["timings_seconds"];
    t = nlohmann::ordered_json::object();
    for (const auto& [name, s] : timings_) t[name] = s;
    std::ofstream out(opt_.out_dir / "manifest.json", std::ios::binary);
    require(out.good(), "cannot write manifest", ErrorKind::Io);
    out << j.dump(2) << '\n';
  }

 private:
  RunConfig cfg_;
  RunOptions opt_;
  std::vector<std::string> files_;
  std::vector<std::pair<std::string, double>> timings_;
};

/// Recomputes hashes and returns the files whose content changed.
inline std::vector<std::string> verify_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  require(in.good(), "cannot read manifest in " + dir.string(), ErrorKind::Io);
  const auto j = nlohmann::json::parse(in);
  std::vector<std::string> bad;
  for (const auto& [name, hash] : j.at("files").items()) {
    if (!std::filesystem::exists(dir / name) || sha256_file(dir / name) != hash.get<std::string>()) {
      bad.push_back(name);
    }
  }
  return bad;
}

/// Raised when the fixed point iteration stops without meeting tol.
class NonConvergence : public Error {
 public:
  explicit NonConvergence(const std::string& what) : Error(ErrorKind::NonConvergence, what) {}
};

namespace run_detail {

inline void write_residuals(const std::filesystem::path& path, const EquilibriumResult& eq) {
  auto out = io::open_out(path);
  out << "iteration,residual\n";
  for (std::size_t i = 0; i < eq.residual_history.size(); ++i) {
    out << i + 1 << ',' << io::num(eq.residual_history[i]) << '\n';
  }
}

inline void write_meta(const std::filesystem::path& path, const ModelSpec& model,
                       const EquilibriumResult& eq) {
  nlohmann::ordered_json j;
  j["preset"] = model.name();
  j["theta"] = model.theta();
  j["converged"] = eq.converged;
  j["iterations"] = eq.iterations;
  j["final_residual"] = eq.residual_history.empty() ? 0.0 : eq.residual_history.back();
  j["residual_history"] = eq.residual_history;
  j["nx"] = eq.mu_star.grid.nx();
  j["nt"] = eq.mu_star.grid.nt;
  j["x_min"] = eq.mu_star.grid.space.x_min;
  j["x_max"] = eq.mu_star.grid.space.x_max;
  j["convexity_margin"] = convexity_margin(eq.value);
  j["interior_convexity_margin"] = interior_convexity_margin(eq.value);
  j["aggregate_value"] = aggregate_value(eq.value, eq.mu_star[0]);
  j["dvdx_violation"] = eq.policy.dvdx_violation;
  auto out = io::open_out(path);
  out << j.dump(2) << '\n';
}

inline EquilibriumResult equilibrium(RunContext& ctx, const ModelSpec& model,
                                     const SpaceTimeGrid& grid, bool write) {
  const auto& cfg = ctx.config();
  auto eq = ctx.stage("solve_mfg", [&] { return solve_mfg(model, grid, cfg.solver, cfg.init); });
  ctx.log("fixed point: " + std::to_string(eq.iterations) + " iterations, residual " +
          io::num(eq.residual_history.back()));
  if (write) {
    io::write_flow_csv(ctx.file("mu_star.csv"), eq.mu_star);
    io::write_value_csv(ctx.file("value.csv"), eq.value);
    io::write_policy_csv(ctx.file("policy.csv"), eq.policy);
    write_residuals(ctx.file("residuals.csv"), eq);
    write_meta(ctx.file("meta.json"), model, eq);
  }
  if (!eq.converged) {
    throw NonConvergence("solve_mfg did not converge: residual " +
                         io::num(eq.residual_history.back()) + " after " +
                         std::to_string(eq.iterations) + " iterations (tol " +
                         io::num(cfg.solver.tol) + ")");
  }
  return eq;
}

inline SpaceTimeGrid sweep_grid(const RunConfig& cfg, const ModelSpec& model, double theta_max) {
  auto grid = cfg.make_grid();
  grid.nt = cfg.experiment.sweep_nt;
  if (grid.nt == 0) grid.nt = std::max(cfg.grid.nt, min_nt_for_cfl(grid, model.c1() + theta_max));
  return grid;
}

inline ThetaSweepResult sweep(RunContext& ctx, const ModelSpec& model,
                              const std::vector<double>& thetas) {
  const auto grid = sweep_grid(ctx.config(), model, thetas.back());
  ctx.log("theta sweep grid nt = " + std::to_string(grid.nt));
  return ctx.stage("theta_sweep", [&] {
    return theta_sweep(model, thetas, grid, default_probes(model), ctx.config().solver,
                       ctx.config().init);
  });
}

inline std::vector<NamedPolicy> library_for(const std::string& text, const ThresholdPolicy& eq) {
  return build_library(parse_deviations(text), eq, {{eq.theta, &eq}});
}

}  // namespace run_detail

inline void run_solve(RunContext& ctx) {
  const auto model = ctx.config().make_model();
  const auto eq = run_detail::equilibrium(ctx, model, ctx.config().make_grid(), true);
  auto out = io::open_out(ctx.file("summary.txt"));
  out << "command solve-mfg\npreset " << model.name() << "\niterations " << eq.iterations
      << "\nresidual " << io::num(eq.residual_history.back()) << "\naggregate_value "
      << io::num(aggregate_value(eq.value, eq.mu_star[0])) << '\n';
}

inline void run_sweep_theta(RunContext& ctx) {
  const auto model = ctx.config().make_model();
  const auto sw = run_detail::sweep(ctx, model, ctx.config().experiment.thetas);
  io::write_sweep_csv(ctx.options().out_dir, sw);
  ctx.file("theta_sweep.csv");
  ctx.file("values_at_probe.csv");
  run_detail::write_residuals(ctx.file("residuals.csv"), sw.reference);
  auto out = io::open_out(ctx.file("summary.txt"));
  out << "command sweep-theta\npreset " << model.name() << "\nsweep_nt "
      << sw.reference.mu_star.grid.nt << "\nreference_iterations " << sw.reference.iterations
      << "\nreference_residual " << io::num(sw.reference.residual_history.back())
      << "\n\ntheta,epsilon_theta\n";
  for (std::size_t i = 0; i < sw.thetas.size(); ++i) {
    out << io::num(sw.thetas[i]) << ',' << io::num(sw.epsilon_theta[i]) << '\n';
  }
  if (!sw.reference.converged) throw NonConvergence("theta sweep reference did not converge");
}

inline void run_sweep_n(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto model = cfg.make_model();
  const auto eq = run_detail::equilibrium(ctx, model, cfg.make_grid(), true);
  const auto lib = run_detail::library_for(cfg.experiment.deviations, eq.policy);
  const auto sim = simulation_config(cfg, ctx.options().threads);
  const auto rep = ctx.stage("nplayer", [&] {
    return nplayer_experiment(model, eq, cfg.experiment.n_values, lib, sim, true, true);
  });
  io::write_gap_report_csv(ctx.file("gap_report.csv"), rep);
  io::write_envelope_csv(ctx.file("gap_envelope.csv"), rep);
  io::write_deviations_csv(ctx.file("deviations.csv"), rep);
  auto out = io::open_out(ctx.file("summary.txt"));
  out << "command sweep-n\npreset " << model.name() << "\nreplications " << sim.n_replications
      << "\nfixed_point_residual " << io::num(eq.residual_history.back())
      << "\nslope_coupling " << io::num(rep.slope_coupling) << "\nslope_gap_envelope "
      << io::num(rep.slope_gap_envelope) << "\nenvelope_C " << io::num(rep.envelope_c)
      << "\n\nN,coupling_err_sq,gap,gap_se,envelope,epsilon_N_bound\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << io::num(r.coupling_err_sq) << ',' << io::num(r.gap) << ','
        << io::num(r.gap_se) << ',' << io::num(r.envelope) << ','
        << io::num(rep.envelope_c / std::sqrt(static_cast<double>(r.n))) << '\n';
  }
}

inline void run_fv_gap(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto model = cfg.make_model();
  const auto sim = simulation_config(cfg, ctx.options().threads);
  // C comes from the bounded-velocity game at the configured theta.
  const auto eq = run_detail::equilibrium(ctx, model, cfg.make_grid(), false);
  const auto lib = run_detail::library_for(cfg.experiment.deviations, eq.policy);
  const auto calib = ctx.stage("calibrate_C", [&] {
    return ne_gap(model, eq, cfg.experiment.fv_n_values, lib, sim);
  });
  auto thetas = cfg.experiment.thetas;
  for (double th : cfg.experiment.fv_thetas) {
    if (std::find(thetas.begin(), thetas.end(), th) == thetas.end()) thetas.push_back(th);
  }
  std::sort(thetas.begin(), thetas.end());
  const auto sw = run_detail::sweep(ctx, model, thetas);
  const auto rep = ctx.stage("fv_gap", [&] {
    return fv_gap(model, sw, cfg.experiment.fv_thetas, cfg.experiment.fv_n_values,
                  parse_deviations(cfg.experiment.fv_deviations), sim, calib.envelope_c);
  });
  io::write_fv_csv(ctx.file("fv_gap.csv"), rep);
  io::write_deviations_csv(ctx.file("fv_deviations.csv"), rep);
  io::write_sweep_csv(ctx.options().out_dir, sw);
  ctx.file("theta_sweep.csv");
  ctx.file("values_at_probe.csv");
  auto out = io::open_out(ctx.file("summary.txt"));
  out << "command fv-gap\npreset " << model.name() << "\nenvelope_C "
      << io::num(calib.envelope_c) << "\n\nN,theta,gap,gap_se,budget,within_budget\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << io::num(r.theta) << ',' << io::num(r.gap) << ',' << io::num(r.gap_se)
        << ',' << io::num(r.budget) << ',' << (r.gap <= r.budget + 3.0 * r.gap_se ? 1 : 0)
        << '\n';
  }
}

inline void run_check_assumptions(RunContext& ctx) {
  const auto& cfg = ctx.config();
  const auto model = cfg.make_model();
  const auto rep = ctx.stage("check_assumptions", [&] {
    return check_assumptions(model, cfg.grid.x_min, cfg.grid.x_max, cfg.experiment.check_samples,
                             cfg.experiment.seed);
  });
  nlohmann::ordered_json j;
  const auto& l = rep.lipschitz_estimates;
  j["preset"] = model.name();
  j["lipschitz"] = {{"b0", l.b0}, {"f0", l.f0}, {"b", l.b}, {"f", l.f}, {"sup_b0", l.sup_b0},
                    {"domain_lo", l.domain_lo}, {"domain_hi", l.domain_hi}};
  j["convexity_ok"] = rep.convexity_ok;
  j["convexity_margin"] = rep.convexity_margin;
  j["monotone"] = rep.monotone;
  j["monotonicity_min"] = rep.monotonicity_min;
  j["monotonicity_samples"] = rep.monotonicity_samples.size();
  j["rationality_note"] = rep.a6_note;
  j["hamiltonian_note"] = rep.a5_hamiltonian_note;
  auto out = io::open_out(ctx.file("assumptions.json"));
  out << j.dump(2) << '\n';
}

inline const std::vector<std::string>& run_commands() {
  static const std::vector<std::string> c{"solve-mfg", "sweep-theta", "sweep-n", "fv-gap",
                                          "check-assumptions"};
  return c;
}

/// Runs one command into opt.out_dir and writes its manifest.
inline void run(const RunConfig& cfg, const RunOptions& opt) {
  const std::map<std::string, std::function<void(RunContext&)>> table{
      {"solve-mfg", run_solve},
      {"sweep-theta", run_sweep_theta},
      {"sweep-n", run_sweep_n},
      {"fv-gap", run_fv_gap},
      {"check-assumptions", run_check_assumptions},
  };
  if (opt.command == "reproduce-all") {
    for (const auto& c : run_commands()) {
      RunOptions sub = opt;
      sub.command = c;
      sub.out_dir = opt.out_dir / c;
      run(cfg, sub);
    }
    return;
  }
  const auto it = table.find(opt.command);
  require(it != table.end(), "unknown command '" + opt.command + "'");
  RunContext ctx(cfg, opt);
  try {
    it->second(ctx);
  } catch (...) {
    ctx.write_manifest();
    throw;
  }
  ctx.write_manifest();
}

}  // namespace mfgsc
