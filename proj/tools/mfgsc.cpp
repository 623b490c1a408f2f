#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mfgsc/run.hpp"

namespace {

int exit_code(mfgsc::ErrorKind kind) {
  switch (kind) {
    case mfgsc::ErrorKind::Parse: return 2;
    case mfgsc::ErrorKind::NonConvergence: return 3;
    case mfgsc::ErrorKind::Cfl: return 4;
    default: return 1;
  }
}

int report(const std::string& kind, int code, const std::string& message,
           const nlohmann::ordered_json& extra = {}) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["exit_code"] = code;
  j["message"] = message;
  if (extra.is_object()) {
    for (const auto& [k, v] : extra.items()) j[k] = v;
  }
  std::cerr << j.dump() << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean field games with bounded-velocity singular controls"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "out";
  std::size_t threads = 1;
  long long seed = -1;
  bool verbose = false;
  for (const auto& name : {"solve-mfg", "sweep-theta", "sweep-n", "fv-gap", "check-assumptions",
                           "reproduce-all"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "master seed override")->check(CLI::NonNegativeNumber);
    sub->add_flag("--verbose", verbose, "progress on stderr");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report("usage", 2, e.what());
  }

  try {
    mfgsc::RunConfig cfg;
    if (!config_path.empty()) cfg = mfgsc::load_config(config_path);
    if (seed >= 0) cfg.experiment.seed = static_cast<std::uint64_t>(seed);
    mfgsc::RunOptions opt;
    opt.command = app.get_subcommands().front()->get_name();
    opt.out_dir = out_dir;
    opt.threads = threads;
    opt.verbose = verbose;
    mfgsc::run(cfg, opt);
  } catch (const mfgsc::ConfigError& e) {
    return report("parse", 2, e.what(), {{"line", e.line()}, {"key", e.key()}});
  } catch (const mfgsc::Error& e) {
    return report(mfgsc::to_string(e.kind()), exit_code(e.kind()), e.what());
  } catch (const std::exception& e) {
    return report("internal", 1, e.what());
  }
  return 0;
}
