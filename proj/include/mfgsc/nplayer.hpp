#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/grid.hpp"
#include "mfgsc/hjb.hpp"
#include "mfgsc/measure.hpp"
#include "mfgsc/mfg.hpp"
#include "mfgsc/model.hpp"
#include "mfgsc/stats.hpp"

namespace mfgsc {

enum class ReferenceKind { Particle, Pde };

struct SimulationConfig {
  std::size_t n_players = 64;
  std::size_t n_replications = 200;
  std::uint64_t seed = 20240601;
  double scheme_dt = 0.0;          // 0 means half the grid step
  std::size_t mesh_nodes = 257;    // 0 means exact pairwise sums
  std::size_t threads = 1;
  std::size_t block_size = 8;      // replications per accumulation block
  std::size_t reference_particles = std::size_t{1} << 18;
  ReferenceKind reference = ReferenceKind::Particle;
};

/// Number of Euler-Maruyama steps per grid step.
inline std::size_t scheme_substeps(const SimulationConfig& cfg, const SpaceTimeGrid& grid) {
  if (cfg.scheme_dt <= 0.0) return 2;
  const double r = grid.dt() / cfg.scheme_dt;
  const double n = std::round(r);
  require(n >= 1.0 && std::abs(r - n) <= 1e-9 * n,
          "simulation: scheme_dt must divide the grid dt exactly", ErrorKind::Cfl);
  return static_cast<std::size_t>(n);
}

/// Reflection at the domain ends; counts every reflected move.
inline double reflect_into(double x, double lo, double hi, std::uint64_t& events) {
  if (x < lo) {
    ++events;
    x = 2.0 * lo - x;
    if (x > hi) x = hi;
  } else if (x > hi) {
    ++events;
    x = 2.0 * hi - x;
    if (x < lo) x = lo;
  }
  return x;
}

/// Kernels b0(z_k, z_m) and f0(z_k, z_m) on a uniform interaction mesh.
struct MeshKernel {
  SpatialAxis axis;
  std::vector<double> kb;
  std::vector<double> kf;

  MeshKernel(const ModelSpec& model, const SpatialAxis& domain, std::size_t nodes)
      : axis{domain.x_min, domain.x_max, nodes} {
    require(nodes >= 3, "interaction mesh needs at least 3 nodes");
    kb.resize(nodes * nodes);
    kf.resize(nodes * nodes);
    for (std::size_t k = 0; k < nodes; ++k) {
      for (std::size_t m = 0; m < nodes; ++m) {
        kb[k * nodes + m] = model.b0(axis.x(k), axis.x(m));
        kf[k * nodes + m] = model.f0(axis.x(k), axis.x(m));
      }
    }
  }

  std::pair<std::size_t, double> locate(double x) const {
    return ValueField::bracket(x, axis.x_min, axis.dx(), axis.nx);
  }
};

/// b(x, m^N) and f(x, m^N) for the empirical measure m^N of a particle set.
///
/// Mesh mode bins particles linearly onto the mesh with integer weights
/// (so the density does not depend on particle order), applies the kernel
/// on the occupied range and interpolates linearly. Exact mode sums over
/// the particles in sorted order.
class Interaction {
 public:
  Interaction(const ModelSpec& model, std::shared_ptr<const MeshKernel> kernel)
      : model_(&model), kernel_(std::move(kernel)) {
    if (kernel_) {
      const std::size_t m = kernel_->axis.nx;
      counts_.assign(m, 0);
      rho_.assign(m, 0.0);
      drift_.assign(m, 0.0);
      ready_.assign(m, 0);
    }
  }

  void prepare(std::span<const double> xs) {
    n_ = xs.size();
    require(n_ >= 1, "interaction: empty particle set");
    if (!kernel_) {
      sorted_.assign(xs.begin(), xs.end());
      std::sort(sorted_.begin(), sorted_.end());
      return;
    }
    std::fill(counts_.begin(), counts_.end(), 0);
    std::size_t lo = kernel_->axis.nx;
    std::size_t hi = 0;
    for (double x : xs) {
      const auto [j, lam] = kernel_->locate(x);
      const auto q = static_cast<std::int64_t>(std::llround(lam * kScale));
      counts_[j] += static_cast<std::int64_t>(kScale) - q;
      counts_[j + 1] += q;
      lo = std::min(lo, j);
      hi = std::max(hi, j + 1);
    }
    lo_ = lo;
    hi_ = hi;
    const double inv = 1.0 / (static_cast<double>(n_) * kScale);
    for (std::size_t m = lo_; m <= hi_; ++m) rho_[m] = static_cast<double>(counts_[m]) * inv;
    std::fill(ready_.begin(), ready_.end(), 0);
  }

  double drift(double x) {
    if (!model_->b0_depends_on_y()) return model_->b0(x, x);
    if (!kernel_) return exact_sum(x, true);
    const auto [j, lam] = kernel_->locate(x);
    return (1.0 - lam) * node_drift(j) + lam * node_drift(j + 1);
  }

  double cost(double x) {
    if (!model_->f0_depends_on_y()) return model_->f0(x, x);
    if (!kernel_) return exact_sum(x, false);
    const auto [j, lam] = kernel_->locate(x);
    return (1.0 - lam) * node_apply(kernel_->kf, j) + lam * node_apply(kernel_->kf, j + 1);
  }

  /// Full mesh tables of b and f for the current particle set.
  void tables(std::vector<double>& b, std::vector<double>& f) {
    require(kernel_ != nullptr, "interaction: tables need a mesh");
    const std::size_t m = kernel_->axis.nx;
    b.resize(m);
    f.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
      b[k] = model_->b0_depends_on_y() ? node_drift(k) : model_->b0(kernel_->axis.x(k),
                                                                    kernel_->axis.x(k));
      f[k] = model_->f0_depends_on_y() ? node_apply(kernel_->kf, k)
                                       : model_->f0(kernel_->axis.x(k), kernel_->axis.x(k));
    }
  }

 private:
  static constexpr double kScale = 4294967296.0;  // 2^32

  double node_apply(const std::vector<double>& kernel, std::size_t k) const {
    const std::size_t m = kernel_->axis.nx;
    const double* row = &kernel[k * m];
    double s = 0.0;
    for (std::size_t i = lo_; i <= hi_; ++i) s += row[i] * rho_[i];
    return s;
  }

  double node_drift(std::size_t k) {
    if (!ready_[k]) {
      drift_[k] = node_apply(kernel_->kb, k);
      ready_[k] = 1;
    }
    return drift_[k];
  }

  double exact_sum(double x, bool drift) const {
    double s = 0.0;
    for (double y : sorted_) s += drift ? model_->b0(x, y) : model_->f0(x, y);
    return s / static_cast<double>(n_);
  }

  const ModelSpec* model_;
  std::shared_ptr<const MeshKernel> kernel_;
  std::size_t n_ = 0;
  std::size_t lo_ = 0;
  std::size_t hi_ = 0;
  std::vector<std::int64_t> counts_;
  std::vector<double> rho_;
  std::vector<double> drift_;
  std::vector<char> ready_;
  std::vector<double> sorted_;
};

/// b(x, mu_t) and f(x, mu_t) of the limiting flow, tabulated at every
/// scheme time node on some axis and interpolated linearly in x.
struct MeanFieldReference {
  SpatialAxis axis;
  std::vector<std::vector<double>> drift;
  std::vector<std::vector<double>> cost;

  double interp(const std::vector<double>& row, double x) const {
    const auto [j, lam] = ValueField::bracket(x, axis.x_min, axis.dx(), axis.nx);
    return (1.0 - lam) * row[j] + lam * row[j + 1];
  }
};

/// Reference built from the solved flow on the grid: coefficients at grid
/// nodes, linear in time between them.
inline MeanFieldReference pde_reference(const ModelSpec& model, const GridMeasureFlow& flow,
                                        std::size_t substeps) {
  const auto coeffs = flow_coefficients(model, flow);
  const auto& grid = flow.grid;
  MeanFieldReference ref{grid.space, {}, {}};
  const std::size_t steps = (grid.nt - 1) * substeps;
  for (std::size_t n = 0; n <= steps; ++n) {
    const std::size_t k = std::min(n / substeps, grid.nt - 2);
    const double lam = static_cast<double>(n - k * substeps) / static_cast<double>(substeps);
    std::vector<double> b(grid.nx()), f(grid.nx());
    for (std::size_t j = 0; j < grid.nx(); ++j) {
      b[j] = (1.0 - lam) * coeffs.drift[k][j] + lam * coeffs.drift[k + 1][j];
      f[j] = (1.0 - lam) * coeffs.cost[k][j] + lam * coeffs.cost[k + 1][j];
    }
    ref.drift.push_back(std::move(b));
    ref.cost.push_back(std::move(f));
  }
  return ref;
}

/// Reference from a large particle population under the policy, using the
/// same interaction mesh as the N-player runs.
inline MeanFieldReference particle_reference(const ModelSpec& model,
                                             const ThresholdPolicy& policy,
                                             const SimulationConfig& cfg,
                                             std::shared_ptr<const MeshKernel> kernel) {
  require(kernel != nullptr, "particle reference needs an interaction mesh");
  const auto& grid = policy.grid;
  const std::size_t sub = scheme_substeps(cfg, grid);
  const std::size_t steps = (grid.nt - 1) * sub;
  const double h = grid.dt() / static_cast<double>(sub);
  const double sq = model.sigma() * std::sqrt(h);
  const std::size_t n = cfg.reference_particles;
  constexpr std::size_t kChunk = 4096;
  const std::uint64_t tag = stream_tag("reference");

  std::vector<double> x(n);
  std::vector<std::mt19937_64> engines;
  std::uint64_t events = 0;
  for (std::size_t c = 0; c * kChunk < n; ++c) {
    engines.emplace_back(substream_seed(cfg.seed, tag, c, 0));
    for (std::size_t i = c * kChunk; i < std::min(n, (c + 1) * kChunk); ++i) {
      x[i] = reflect_into(model.initial_law().sample(engines[c], grid.space),
                          grid.space.x_min, grid.space.x_max, events);
    }
  }
  Interaction inter(model, kernel);
  MeanFieldReference ref{kernel->axis, {}, {}};
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t s = 0; s <= steps; ++s) {
    inter.prepare(x);
    std::vector<double> b, f;
    inter.tables(b, f);
    if (s == steps) {
      ref.drift.push_back(std::move(b));
      ref.cost.push_back(std::move(f));
      break;
    }
    const double t = grid.t_start + static_cast<double>(s) * h;
    const auto [a_t, b_t] = policy.boundaries(t);
    for (std::size_t i = 0; i < n; ++i) {
      auto& eng = engines[i / kChunk];
      const double drift = ref.interp(b, x[i]) +
                           ThresholdPolicy::threshold_control(x[i], a_t, b_t, policy.theta);
      x[i] = reflect_into(x[i] + drift * h + sq * normal(eng), grid.space.x_min,
                          grid.space.x_max, events);
    }
    ref.drift.push_back(std::move(b));
    ref.cost.push_back(std::move(f));
  }
  return ref;
}

/// Brownian and initial-position substream of one player in one replication.
struct PlayerStream {
  std::mt19937_64 engine;
  std::normal_distribution<double> normal{0.0, 1.0};
  explicit PlayerStream(std::uint64_t seed) : engine(seed) {}
};

inline std::uint64_t brownian_seed(std::uint64_t master, std::size_t rep, std::size_t player) {
  return substream_seed(master, stream_tag("brownian"), rep, player);
}

namespace detail {

/// One particle system advanced in lockstep with others that share noise.
struct ParticleSystem {
  bool interacting = true;
  std::vector<const ThresholdPolicy*> policies;  // distinct policies
  std::vector<std::uint32_t> policy_of;          // per particle
  std::vector<double> x;
  std::optional<Interaction> inter;
  double cost = 0.0;  // running trapezoid of player 0
  std::vector<std::pair<double, double>> bounds;

  void begin_step(double t) {
    bounds.resize(policies.size());
    for (std::size_t p = 0; p < policies.size(); ++p) bounds[p] = policies[p]->boundaries(t);
    if (interacting) inter->prepare(x);
  }

  double control(std::size_t i) const {
    const auto& [a, b] = bounds[policy_of[i]];
    return ThresholdPolicy::threshold_control(x[i], a, b, policies[policy_of[i]]->theta);
  }
};

}  // namespace detail

/// Everything needed to run one replication of a lockstep experiment.
struct LockstepPlan {
  const ModelSpec* model = nullptr;
  SpaceTimeGrid grid;
  std::size_t n_players = 2;
  std::size_t substeps = 2;
  std::uint64_t seed = 0;
  const ThresholdPolicy* population = nullptr;
  std::vector<const ThresholdPolicy*> deviations;
  bool coupling = false;   // also run the whole population under mean-field drift
  bool mf_costs = false;   // player 0 alone under mean-field drift, each policy
  const MeanFieldReference* reference = nullptr;
  std::shared_ptr<const MeshKernel> kernel;
};

struct ReplicationOutcome {
  double coupling_sq = 0.0;  // mean over players of sup_t |x_mf - x_N|^2
  double j_eq = 0.0;
  std::vector<double> j_dev;
  double jmf_eq = 0.0;
  std::vector<double> jmf_dev;
  std::uint64_t reflections = 0;
};

inline ReplicationOutcome run_replication(const LockstepPlan& plan, std::size_t rep) {
  const ModelSpec& model = *plan.model;
  const auto& grid = plan.grid;
  const std::size_t n = plan.n_players;
  const std::size_t steps = (grid.nt - 1) * plan.substeps;
  const double h = grid.dt() / static_cast<double>(plan.substeps);
  const double sq = model.sigma() * std::sqrt(h);
  const double lo = grid.space.x_min;
  const double hi = grid.space.x_max;
  const double g1 = model.gamma1();
  const double g2 = model.gamma2();
  ReplicationOutcome out;

  std::vector<PlayerStream> streams;
  streams.reserve(n);
  std::vector<double> x0(n);
  for (std::size_t i = 0; i < n; ++i) {
    streams.emplace_back(brownian_seed(plan.seed, rep, i));
    x0[i] = reflect_into(model.initial_law().sample(streams[i].engine, grid.space), lo, hi,
                         out.reflections);
  }

  auto make = [&](bool interacting, std::size_t count, const ThresholdPolicy* first) {
    detail::ParticleSystem s;
    s.interacting = interacting;
    s.policies = {plan.population};
    s.policy_of.assign(count, 0);
    if (first != plan.population) {
      s.policies.push_back(first);
      s.policy_of[0] = 1;
    }
    s.x.assign(x0.begin(), x0.begin() + static_cast<std::ptrdiff_t>(count));
    if (interacting) s.inter.emplace(model, plan.kernel);
    return s;
  };

  std::vector<detail::ParticleSystem> sys;
  sys.push_back(make(true, n, plan.population));
  for (const auto* d : plan.deviations) sys.push_back(make(true, n, d));
  const std::size_t mf_begin = sys.size();
  if (plan.coupling || plan.mf_costs) {
    require(plan.reference != nullptr, "lockstep: mean-field systems need a reference");
    sys.push_back(make(false, plan.coupling ? n : 1, plan.population));
    if (plan.mf_costs) {
      for (const auto* d : plan.deviations) sys.push_back(make(false, 1, d));
    }
  }
  std::vector<double> sup_sq(plan.coupling ? n : 0, 0.0);
  std::vector<double> z(n);

  auto mf_drift = [&](std::size_t step, double x) {
    return model.b0_depends_on_y() ? plan.reference->interp(plan.reference->drift[step], x)
                                   : model.b0(x, x);
  };
  auto mf_cost = [&](std::size_t step, double x) {
    return model.f0_depends_on_y() ? plan.reference->interp(plan.reference->cost[step], x)
                                   : model.f0(x, x);
  };

  for (std::size_t s = 0; s <= steps; ++s) {
    const double t = grid.t_start + static_cast<double>(s) * h;
    const double w = (s == 0 || s == steps) ? 0.5 * h : h;
    for (auto& y : sys) {
      y.begin_step(t);
      const double u0 = y.control(0);
      const double f = y.interacting ? y.inter->cost(y.x[0]) : mf_cost(s, y.x[0]);
      y.cost += w * (f + control_cost(u0, g1, g2));
    }
    if (s == steps) break;
    for (std::size_t i = 0; i < n; ++i) z[i] = streams[i].normal(streams[i].engine);
    for (auto& y : sys) {
      for (std::size_t i = 0; i < y.x.size(); ++i) {
        const double b = y.interacting ? y.inter->drift(y.x[i]) : mf_drift(s, y.x[i]);
        const double next = y.x[i] + (b + y.control(i)) * h + sq * z[i];
        y.x[i] = reflect_into(next, lo, hi, out.reflections);
      }
    }
    if (plan.coupling) {
      const auto& a = sys[0].x;
      const auto& b = sys[mf_begin].x;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        sup_sq[i] = std::max(sup_sq[i], d * d);
      }
    }
  }

  out.j_eq = sys[0].cost;
  for (std::size_t d = 0; d < plan.deviations.size(); ++d) out.j_dev.push_back(sys[1 + d].cost);
  if (plan.coupling || plan.mf_costs) {
    out.jmf_eq = sys[mf_begin].cost;
    if (plan.mf_costs) {
      for (std::size_t d = 0; d < plan.deviations.size(); ++d) {
        out.jmf_dev.push_back(sys[mf_begin + 1 + d].cost);
      }
    }
  }
  if (plan.coupling) {
    double s = 0.0;
    for (double v : sup_sq) s += v;
    out.coupling_sq = s / static_cast<double>(n);
  }
  return out;
}

/// Runs fn(block, begin, end) over fixed blocks of [0, count) on a pool of
/// threads. Results must be stored by block index by the caller.
template <class Fn>
void for_each_block(std::size_t count, std::size_t block, std::size_t threads, Fn&& fn) {
  require(block >= 1, "block size must be >= 1");
  const std::size_t n_blocks = (count + block - 1) / block;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      fn(b, b * block, std::min(count, (b + 1) * block));
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(threads, n_blocks));
  if (n_threads == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (std::size_t i = 0; i < n_threads; ++i) {
    pool.emplace_back([&] {
      try {
        worker();
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
        next = n_blocks;
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct NamedPolicy {
  std::string name;
  ThresholdPolicy policy;
};

struct DeviationStats {
  std::string name;
  RunningStats diff;   // J_eq - J_dev
  RunningStats delta;  // diff minus its mean-field counterpart
  RunningStats j_dev;
  RunningStats jmf_dev;
};

struct LockstepStats {
  RunningStats coupling;
  RunningStats j_eq;
  RunningStats jmf_eq;
  std::vector<DeviationStats> devs;
  std::uint64_t reflections = 0;

  void add(const ReplicationOutcome& r, bool with_coupling, bool mf) {
    if (with_coupling) coupling.add(r.coupling_sq);
    j_eq.add(r.j_eq);
    if (with_coupling || mf) jmf_eq.add(r.jmf_eq);
    for (std::size_t d = 0; d < devs.size(); ++d) {
      devs[d].diff.add(r.j_eq - r.j_dev[d]);
      devs[d].j_dev.add(r.j_dev[d]);
      if (mf) {
        devs[d].jmf_dev.add(r.jmf_dev[d]);
        devs[d].delta.add((r.j_eq - r.j_dev[d]) - (r.jmf_eq - r.jmf_dev[d]));
      }
    }
    reflections += r.reflections;
  }

  void merge(const LockstepStats& o) {
    coupling.merge(o.coupling);
    j_eq.merge(o.j_eq);
    jmf_eq.merge(o.jmf_eq);
    for (std::size_t d = 0; d < devs.size(); ++d) {
      devs[d].diff.merge(o.devs[d].diff);
      devs[d].delta.merge(o.devs[d].delta);
      devs[d].j_dev.merge(o.devs[d].j_dev);
      devs[d].jmf_dev.merge(o.devs[d].jmf_dev);
    }
    reflections += o.reflections;
  }
};

/// All replications of one plan, accumulated per block and merged in block
/// order so the result does not depend on the thread count.
inline LockstepStats run_lockstep(const LockstepPlan& plan,
                                  const std::vector<std::string>& names,
                                  const SimulationConfig& cfg) {
  require(cfg.n_replications >= 1, "simulation: replications must be >= 1");
  LockstepStats proto;
  for (const auto& nm : names) proto.devs.push_back({nm, {}, {}, {}, {}});
  const std::size_t n_blocks = (cfg.n_replications + cfg.block_size - 1) / cfg.block_size;
  std::vector<LockstepStats> blocks(n_blocks, proto);
  for_each_block(cfg.n_replications, cfg.block_size, cfg.threads,
                 [&](std::size_t b, std::size_t begin, std::size_t end) {
                   for (std::size_t r = begin; r < end; ++r) {
                     blocks[b].add(run_replication(plan, r), plan.coupling, plan.mf_costs);
                   }
                 });
  LockstepStats total = proto;
  for (const auto& b : blocks) total.merge(b);
  return total;
}

// ---------------------------------------------------------------------------
// Deviation library

struct DeviationSpec {
  enum class Kind { Shift, Zero, FullUp, FullDown, Burst, Equilibrium };
  Kind kind = Kind::Zero;
  double value = 0.0;         // shift amount or burst theta
  bool burst_at_max = false;  // burst(theta_max)
  std::string text;
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (trim(s.substr(used)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::Parse, what + ": not a number: '" + s + "'");
}

/// Parses "shift(0.1), zero, full_up, full_down, burst(theta_max), eq".
inline std::vector<DeviationSpec> parse_deviations(const std::string& text) {
  std::vector<DeviationSpec> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = pos;
    int depth = 0;
    while (end < text.size() && !(depth == 0 && text[end] == ',')) {
      if (text[end] == '(') ++depth;
      if (text[end] == ')') --depth;
      ++end;
    }
    const std::string item = trim(text.substr(pos, end - pos));
    pos = end + 1;
    if (item.empty()) continue;
    DeviationSpec d;
    d.text = item;
    auto arg = [&](const std::string& head) -> std::optional<std::string> {
      if (item.rfind(head + "(", 0) != 0 || item.back() != ')') return std::nullopt;
      return trim(item.substr(head.size() + 1, item.size() - head.size() - 2));
    };
    if (auto a = arg("shift")) {
      d.kind = DeviationSpec::Kind::Shift;
      d.value = parse_number(*a, "deviation shift");
    } else if (auto a = arg("burst")) {
      d.kind = DeviationSpec::Kind::Burst;
      if (*a == "theta_max") {
        d.burst_at_max = true;
      } else {
        d.value = parse_number(*a, "deviation burst");
      }
    } else if (item == "zero") {
      d.kind = DeviationSpec::Kind::Zero;
    } else if (item == "full_up") {
      d.kind = DeviationSpec::Kind::FullUp;
    } else if (item == "full_down") {
      d.kind = DeviationSpec::Kind::FullDown;
    } else if (item == "eq") {
      d.kind = DeviationSpec::Kind::Equilibrium;
    } else {
      throw Error(ErrorKind::Parse, "unknown deviation '" + item + "'");
    }
    out.push_back(d);
  }
  require(!out.empty(), "deviation library is empty", ErrorKind::Parse);
  return out;
}

inline std::vector<DeviationSpec> default_deviations() {
  return parse_deviations("shift(0.1), shift(-0.1), shift(0.2), shift(-0.2), zero, full_up, "
                          "full_down");
}

/// Burst candidates are looked up by theta; burst(theta_max) takes the last.
inline std::vector<NamedPolicy> build_library(
    const std::vector<DeviationSpec>& specs, const ThresholdPolicy& base,
    const std::vector<std::pair<double, const ThresholdPolicy*>>& bursts = {}) {
  std::vector<NamedPolicy> out;
  for (const auto& d : specs) {
    switch (d.kind) {
      case DeviationSpec::Kind::Shift:
        out.push_back({d.text, policies::shifted(base, d.value)});
        break;
      case DeviationSpec::Kind::Zero:
        out.push_back({d.text, policies::zero(base.grid, base.theta)});
        break;
      case DeviationSpec::Kind::FullUp:
        out.push_back({d.text, policies::full_up(base.grid, base.theta)});
        break;
      case DeviationSpec::Kind::FullDown:
        out.push_back({d.text, policies::full_down(base.grid, base.theta)});
        break;
      case DeviationSpec::Kind::Equilibrium:
        out.push_back({d.text, base});
        break;
      case DeviationSpec::Kind::Burst: {
        const ThresholdPolicy* found = nullptr;
        if (d.burst_at_max && !bursts.empty()) found = bursts.back().second;
        for (const auto& [th, p] : bursts) {
          if (!d.burst_at_max && th == d.value) found = p;
        }
        require(found != nullptr, "deviation '" + d.text + "' needs a theta sweep");
        require(found->grid == base.grid, "burst policy on a different grid",
                ErrorKind::GridMismatch);
        out.push_back({d.text, *found});
        break;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct GapRow {
  std::size_t n = 0;
  double theta = 0.0;
  double coupling_err_sq = 0.0;
  double coupling_se = 0.0;
  double gap = 0.0;
  double gap_se = 0.0;
  std::string gap_argmax;
  double envelope = 0.0;
  double envelope_se = 0.0;
  std::string envelope_argmax;
  double budget = 0.0;
  double j_eq = 0.0;
  double j_eq_se = 0.0;
  double jmf_eq = 0.0;
  double jmf_eq_se = 0.0;
  std::uint64_t reflections = 0;
  std::vector<DeviationStats> deviations;
};

struct GapReport {
  std::vector<std::size_t> n_values;
  std::vector<GapRow> rows;
  bool has_coupling = false;
  bool has_gap = false;
  bool has_budget = false;
  LineFit coupling_fit;
  LineFit envelope_fit;
  double slope_coupling = 0.0;
  double slope_gap_envelope = 0.0;
  double envelope_c = 0.0;  // C in C / sqrt(N), calibrated on the smallest N
  std::size_t calibration_points = 2;
  double reference_shift = 0.0;
};

namespace detail {

inline std::shared_ptr<const MeshKernel> make_kernel(const ModelSpec& model,
                                                     const SpatialAxis& axis,
                                                     const SimulationConfig& cfg) {
  if (cfg.mesh_nodes == 0) return nullptr;
  return std::make_shared<const MeshKernel>(model, axis, cfg.mesh_nodes);
}

inline void require_ascending(const std::vector<std::size_t>& n_values) {
  require(!n_values.empty(), "n_values is empty");
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    require(n_values[i] >= 2, "n_values entries must be >= 2");
    require(i == 0 || n_values[i] > n_values[i - 1], "n_values must be ascending");
  }
}

inline void fill_gap(GapRow& row, const LockstepStats& st, bool mf) {
  row.j_eq = st.j_eq.mean();
  row.j_eq_se = st.j_eq.std_error();
  row.jmf_eq = st.jmf_eq.mean();
  row.jmf_eq_se = st.jmf_eq.std_error();
  row.reflections = st.reflections;
  row.deviations = st.devs;
  row.gap = -kInf;
  row.envelope = 0.0;
  for (const auto& d : st.devs) {
    if (d.diff.mean() > row.gap) {
      row.gap = d.diff.mean();
      row.gap_se = d.diff.std_error();
      row.gap_argmax = d.name;
    }
    if (mf && std::abs(d.delta.mean()) >= row.envelope) {
      row.envelope = std::abs(d.delta.mean());
      row.envelope_se = d.delta.std_error();
      row.envelope_argmax = d.name;
    }
  }
}

}  // namespace detail

/// Calibrates C = max over the first `points` rows of envelope * sqrt(N) and
/// fits the log-log slope of the envelope.
inline void fit_envelope(GapReport& rep) {
  std::vector<double> n, e;
  double c = 0.0;
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    const auto& r = rep.rows[i];
    if (i < rep.calibration_points) {
      c = std::max(c, r.envelope * std::sqrt(static_cast<double>(r.n)));
    }
    if (r.envelope > 0.0) {
      n.push_back(static_cast<double>(r.n));
      e.push_back(r.envelope);
    }
  }
  rep.envelope_c = c;
  if (n.size() >= 2) {
    rep.envelope_fit = loglog_fit(n, e);
    rep.slope_gap_envelope = rep.envelope_fit.slope;
  }
}

inline void fit_coupling(GapReport& rep) {
  std::vector<double> n, e;
  for (const auto& r : rep.rows) {
    if (r.coupling_err_sq > 0.0) {
      n.push_back(static_cast<double>(r.n));
      e.push_back(r.coupling_err_sq);
    }
  }
  if (n.size() >= 2) {
    rep.coupling_fit = loglog_fit(n, e);
    rep.slope_coupling = rep.coupling_fit.slope;
  }
}

inline MeanFieldReference make_reference(const ModelSpec& model, const EquilibriumResult& eq,
                                         const SimulationConfig& cfg,
                                         std::shared_ptr<const MeshKernel> kernel) {
  if (cfg.reference == ReferenceKind::Pde || !kernel) {
    return pde_reference(model, eq.mu_star, scheme_substeps(cfg, eq.policy.grid));
  }
  return particle_reference(model, eq.policy, cfg, std::move(kernel));
}

/// Coupling error and/or deviation gaps of the equilibrium policy for each
/// N, all systems of one replication driven by the same noise.
inline GapReport nplayer_experiment(const ModelSpec& model, const EquilibriumResult& eq,
                                    const std::vector<std::size_t>& n_values,
                                    const std::vector<NamedPolicy>& library,
                                    const SimulationConfig& cfg, bool coupling, bool gaps) {
  detail::require_ascending(n_values);
  require(coupling || gaps, "nothing to run");
  require(!gaps || !library.empty(), "deviation library is empty");
  const auto& grid = eq.policy.grid;
  require_model_grid(model, grid);
  const auto kernel = detail::make_kernel(model, grid.space, cfg);
  const auto reference = make_reference(model, eq, cfg, kernel);

  GapReport rep;
  rep.n_values = n_values;
  rep.has_coupling = coupling;
  rep.has_gap = gaps;
  std::vector<std::string> names;
  LockstepPlan plan;
  plan.model = &model;
  plan.grid = grid;
  plan.substeps = scheme_substeps(cfg, grid);
  plan.seed = cfg.seed;
  plan.population = &eq.policy;
  plan.coupling = coupling;
  plan.mf_costs = gaps;
  plan.reference = &reference;
  plan.kernel = kernel;
  if (gaps) {
    for (const auto& d : library) {
      plan.deviations.push_back(&d.policy);
      names.push_back(d.name);
    }
  }
  for (std::size_t n : n_values) {
    plan.n_players = n;
    const auto st = run_lockstep(plan, names, cfg);
    GapRow row;
    row.n = n;
    row.theta = eq.policy.theta;
    if (coupling) {
      row.coupling_err_sq = st.coupling.mean();
      row.coupling_se = st.coupling.std_error();
    }
    detail::fill_gap(row, st, gaps);
    if (!gaps) row.gap = row.gap_se = 0.0;
    rep.rows.push_back(std::move(row));
  }
  if (coupling) fit_coupling(rep);
  if (gaps) fit_envelope(rep);
  return rep;
}

inline GapReport coupling_error(const ModelSpec& model, const EquilibriumResult& eq,
                                const std::vector<std::size_t>& n_values,
                                const SimulationConfig& cfg) {
  require(eq.converged, "coupling_error: equilibrium did not converge");
  return nplayer_experiment(model, eq, n_values, {}, cfg, true, false);
}

/// Player 0 switches to each deviation while the others keep eq.policy.
inline GapReport ne_gap(const ModelSpec& model, const EquilibriumResult& eq,
                        const std::vector<std::size_t>& n_values,
                        const std::vector<NamedPolicy>& library,
                        const SimulationConfig& cfg) {
  return nplayer_experiment(model, eq, n_values, library, cfg, false, true);
}

/// Gaps when the population plays the theta-bounded sweep policy and the
/// deviator may also use the burst (largest theta) policy; budget is
/// C / sqrt(N) + epsilon_theta.
inline GapReport fv_gap(const ModelSpec& model, const ThetaSweepResult& sweep,
                        const std::vector<double>& thetas,
                        const std::vector<std::size_t>& n_values,
                        const std::vector<DeviationSpec>& library, const SimulationConfig& cfg,
                        double envelope_c) {
  detail::require_ascending(n_values);
  require(!thetas.empty(), "fv_gap: no thetas");
  std::vector<std::pair<double, const ThresholdPolicy*>> bursts;
  for (std::size_t i = 0; i < sweep.thetas.size(); ++i) {
    bursts.emplace_back(sweep.thetas[i], &sweep.policies[i]);
  }
  const auto& grid = sweep.policies.back().grid;
  const auto kernel = detail::make_kernel(model, grid.space, cfg);

  GapReport rep;
  rep.n_values = n_values;
  rep.has_gap = true;
  rep.has_budget = true;
  rep.envelope_c = envelope_c;
  for (double th : thetas) {
    std::size_t idx = sweep.thetas.size();
    for (std::size_t i = 0; i < sweep.thetas.size(); ++i) {
      if (sweep.thetas[i] == th) idx = i;
    }
    require(idx < sweep.thetas.size(), "fv_gap: theta not in the sweep");
    const auto& pop = sweep.policies[idx];
    const auto lib = build_library(library, pop, bursts);
    const auto m = model.with_theta(th);
    LockstepPlan plan;
    plan.model = &m;
    plan.grid = grid;
    plan.substeps = scheme_substeps(cfg, grid);
    plan.seed = cfg.seed;
    plan.population = &pop;
    plan.kernel = kernel;
    std::vector<std::string> names;
    for (const auto& d : lib) {
      plan.deviations.push_back(&d.policy);
      names.push_back(d.name);
    }
    for (std::size_t n : n_values) {
      plan.n_players = n;
      const auto st = run_lockstep(plan, names, cfg);
      GapRow row;
      row.n = n;
      row.theta = th;
      detail::fill_gap(row, st, false);
      row.budget = envelope_c / std::sqrt(static_cast<double>(n)) + sweep.epsilon_theta[idx];
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Stored paths for small runs

struct PathBundle {
  SpaceTimeGrid grid;
  std::size_t n_players = 0;
  std::size_t substeps = 1;
  std::size_t mesh_nodes = 0;
  std::vector<double> times;  // scheme nodes
  // [replication][scheme node][player]
  std::vector<std::vector<std::vector<double>>> states;
  std::vector<std::vector<std::vector<double>>> controls_applied;
  std::vector<std::vector<std::uint64_t>> brownian_seed_map;  // [replication][player]
  std::uint64_t reflections = 0;
};

/// Euler-Maruyama for the coupled system with one policy per player. Keeps
/// every path, so meant for small N and few replications. Player i draws
/// from the noise stream of stream_labels[i] (default: i).
inline PathBundle simulate_nplayer(const ModelSpec& model,
                                   const std::vector<ThresholdPolicy>& policy_per_player,
                                   const SimulationConfig& cfg,
                                   const std::vector<std::size_t>& stream_labels = {}) {
  const std::size_t n = policy_per_player.size();
  require(n >= 1, "simulate_nplayer: no players");
  require(stream_labels.empty() || stream_labels.size() == n,
          "simulate_nplayer: one stream label per player");
  require(cfg.n_replications >= 1, "simulation: replications must be >= 1");
  const auto& grid = policy_per_player[0].grid;
  for (const auto& p : policy_per_player) {
    require(p.grid == grid, "simulate_nplayer: policies on different grids",
            ErrorKind::GridMismatch);
  }
  require_model_grid(model, grid);
  PathBundle bundle;
  bundle.grid = grid;
  bundle.n_players = n;
  bundle.substeps = scheme_substeps(cfg, grid);
  bundle.mesh_nodes = cfg.mesh_nodes;
  const std::size_t steps = (grid.nt - 1) * bundle.substeps;
  const double h = grid.dt() / static_cast<double>(bundle.substeps);
  const double sq = model.sigma() * std::sqrt(h);
  const double lo = grid.space.x_min;
  const double hi = grid.space.x_max;
  for (std::size_t s = 0; s <= steps; ++s) {
    bundle.times.push_back(grid.t_start + static_cast<double>(s) * h);
  }
  const auto kernel = detail::make_kernel(model, grid.space, cfg);

  for (std::size_t r = 0; r < cfg.n_replications; ++r) {
    std::vector<std::uint64_t> seeds(n);
    std::vector<PlayerStream> streams;
    streams.reserve(n);
    detail::ParticleSystem sys;
    sys.interacting = true;
    sys.inter.emplace(model, kernel);
    sys.x.resize(n);
    sys.policy_of.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      seeds[i] = brownian_seed(cfg.seed, r, stream_labels.empty() ? i : stream_labels[i]);
      streams.emplace_back(seeds[i]);
      sys.x[i] = reflect_into(model.initial_law().sample(streams[i].engine, grid.space), lo,
                              hi, bundle.reflections);
      sys.policies.push_back(&policy_per_player[i]);
      sys.policy_of[i] = static_cast<std::uint32_t>(i);
    }
    std::vector<std::vector<double>> xs, us;
    for (std::size_t s = 0; s <= steps; ++s) {
      sys.begin_step(bundle.times[s]);
      std::vector<double> u(n);
      for (std::size_t i = 0; i < n; ++i) u[i] = sys.control(i);
      xs.push_back(sys.x);
      us.push_back(u);
      if (s == steps) break;
      std::vector<double> next(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double z = streams[i].normal(streams[i].engine);
        next[i] = reflect_into(sys.x[i] + (sys.inter->drift(sys.x[i]) + u[i]) * h + sq * z, lo,
                               hi, bundle.reflections);
      }
      sys.x = std::move(next);
    }
    bundle.states.push_back(std::move(xs));
    bundle.controls_applied.push_back(std::move(us));
    bundle.brownian_seed_map.push_back(std::move(seeds));
  }
  return bundle;
}

struct CostEstimate {
  double mean_cost = 0.0;
  double std_error = 0.0;
};

/// Trapezoidal time integral of f(x^i, m^N) + gamma1 u+ + gamma2 u- per
/// replication; mean and standard error over replications.
inline CostEstimate evaluate_cost(const ModelSpec& model, const PathBundle& bundle,
                                  std::size_t player) {
  require(player < bundle.n_players, "evaluate_cost: player index out of range");
  SimulationConfig c;
  c.mesh_nodes = bundle.mesh_nodes;
  Interaction inter(model, detail::make_kernel(model, bundle.grid.space, c));
  RunningStats st;
  const std::size_t steps = bundle.times.size() - 1;
  const double h = bundle.times[1] - bundle.times[0];
  for (std::size_t r = 0; r < bundle.states.size(); ++r) {
    double j = 0.0;
    for (std::size_t s = 0; s <= steps; ++s) {
      const double w = (s == 0 || s == steps) ? 0.5 * h : h;
      const auto& xs = bundle.states[r][s];
      inter.prepare(xs);
      const double u = bundle.controls_applied[r][s][player];
      j += w * (inter.cost(xs[player]) + control_cost(u, model.gamma1(), model.gamma2()));
    }
    st.add(j);
  }
  return {st.mean(), st.std_error()};
}

/// Cost of one player alone under the limiting drift and cost of eq.mu_star
/// (PDE reference), for consistency checks against aggregate_value.
inline CostEstimate mean_field_cost_estimate(const ModelSpec& model, const EquilibriumResult& eq,
                                             const ThresholdPolicy& policy,
                                             const SimulationConfig& cfg) {
  SimulationConfig c = cfg;
  c.reference = ReferenceKind::Pde;
  const auto& grid = eq.policy.grid;
  const auto reference = make_reference(model, eq, c, nullptr);
  LockstepPlan plan;
  plan.model = &model;
  plan.grid = grid;
  plan.n_players = 1;
  plan.substeps = scheme_substeps(cfg, grid);
  plan.seed = cfg.seed;
  plan.population = &policy;
  plan.mf_costs = true;
  plan.reference = &reference;
  RunningStats st;
  for (std::size_t r = 0; r < cfg.n_replications; ++r) {
    const auto o = run_replication(plan, r);
    st.add(o.jmf_eq);
  }
  return {st.mean(), st.std_error()};
}

}  // namespace mfgsc
