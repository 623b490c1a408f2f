#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mfgsc/errors.hpp"
#include "mfgsc/hjb.hpp"
#include "mfgsc/measure.hpp"
#include "mfgsc/mfg.hpp"
#include "mfgsc/nplayer.hpp"

namespace mfgsc::io {

/// Shortest text that reads back to the same double; infinities as inf/-inf.
inline std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "inf" || s == "+inf") return kInf;
  if (s == "-inf") return -kInf;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw Error(ErrorKind::Parse, "csv: not a number: '" + s + "'");
  }
  require(used == s.size(), "csv: trailing characters in '" + s + "'", ErrorKind::Parse);
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(line);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "cannot write " + path.string(), ErrorKind::Io);
  return out;
}

inline std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "cannot read " + path.string(), ErrorKind::Io);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) break;  // a blank line ends the table
    rows.push_back(split(line));
  }
  return rows;
}

// Header t,x_0,...,x_{nx-1}; one row per time node.
inline void write_grid_table(const std::filesystem::path& path, const SpaceTimeGrid& grid,
                             const std::vector<std::vector<double>>& rows) {
  auto out = open_out(path);
  out << "t";
  for (std::size_t j = 0; j < grid.nx(); ++j) out << ',' << num(grid.x(j));
  out << '\n';
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out << num(grid.t(k));
    for (double v : rows[k]) out << ',' << num(v);
    out << '\n';
  }
}

inline std::pair<SpaceTimeGrid, std::vector<std::vector<double>>> read_grid_table(
    const std::filesystem::path& path) {
  const auto rows = read_rows(path);
  require(rows.size() >= 3, path.string() + ": need a header and >= 2 rows", ErrorKind::Parse);
  const auto& head = rows[0];
  require(head.size() >= 4 && head[0] == "t", path.string() + ": bad header", ErrorKind::Parse);
  const std::size_t nx = head.size() - 1;
  const std::size_t nt = rows.size() - 1;
  SpaceTimeGrid grid(parse_double(head[1]), parse_double(head.back()), nx,
                     parse_double(rows[1][0]), parse_double(rows.back()[0]), nt);
  std::vector<std::vector<double>> values;
  for (std::size_t k = 1; k < rows.size(); ++k) {
    require(rows[k].size() == nx + 1, path.string() + ": ragged row " + std::to_string(k + 1),
            ErrorKind::Parse);
    std::vector<double> r(nx);
    for (std::size_t j = 0; j < nx; ++j) r[j] = parse_double(rows[k][j + 1]);
    values.push_back(std::move(r));
  }
  return {grid, std::move(values)};
}

inline void write_flow_csv(const std::filesystem::path& path, const GridMeasureFlow& flow) {
  std::vector<std::vector<double>> rows;
  for (const auto& mu : flow.measures) rows.push_back(mu.density());
  write_grid_table(path, flow.grid, rows);
}

inline GridMeasureFlow read_flow_csv(const std::filesystem::path& path) {
  auto [grid, rows] = read_grid_table(path);
  std::vector<GridMeasure> m;
  for (auto& r : rows) m.emplace_back(grid.space, std::move(r));
  return GridMeasureFlow(grid, std::move(m));
}

inline void write_value_csv(const std::filesystem::path& path, const ValueField& vf) {
  write_grid_table(path, vf.grid, vf.v);
}

inline ValueField read_value_csv(const std::filesystem::path& path) {
  auto [grid, rows] = read_grid_table(path);
  return ValueField(grid, std::move(rows));
}

inline void write_policy_csv(const std::filesystem::path& path, const ThresholdPolicy& p) {
  auto out = open_out(path);
  out << "t,a,b,theta\n";
  for (std::size_t k = 0; k < p.grid.nt; ++k) {
    out << num(p.grid.t(k)) << ',' << num(p.lower_boundary[k]) << ','
        << num(p.upper_boundary[k]) << ',' << num(p.theta) << '\n';
  }
}

/// The spatial axis is not stored in the policy file and must be supplied.
inline ThresholdPolicy read_policy_csv(const std::filesystem::path& path,
                                       const SpatialAxis& axis) {
  const auto rows = read_rows(path);
  require(rows.size() >= 3 && rows[0].size() == 4 && rows[0][0] == "t",
          path.string() + ": bad policy file", ErrorKind::Parse);
  ThresholdPolicy p;
  const std::size_t nt = rows.size() - 1;
  p.grid = SpaceTimeGrid(axis.x_min, axis.x_max, axis.nx, parse_double(rows[1][0]),
                         parse_double(rows.back()[0]), nt);
  for (std::size_t k = 1; k < rows.size(); ++k) {
    require(rows[k].size() == 4, path.string() + ": ragged row", ErrorKind::Parse);
    p.lower_boundary.push_back(parse_double(rows[k][1]));
    p.upper_boundary.push_back(parse_double(rows[k][2]));
    p.theta = parse_double(rows[k][3]);
  }
  return p;
}

/// Main table, blank line, then a two-column summary block.
inline void write_gap_report_csv(const std::filesystem::path& path, const GapReport& rep) {
  auto out = open_out(path);
  out << "N,coupling_err_sq,coupling_se,gap,gap_se\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << num(r.coupling_err_sq) << ',' << num(r.coupling_se) << ','
        << num(r.gap) << ',' << num(r.gap_se) << '\n';
  }
  out << "\nsummary,value\n";
  if (rep.has_coupling) {
    out << "slope_coupling," << num(rep.slope_coupling) << '\n';
    out << "coupling_fit_intercept," << num(rep.coupling_fit.intercept) << '\n';
    out << "coupling_fit_r2," << num(rep.coupling_fit.r_squared) << '\n';
  }
  if (rep.has_gap) {
    out << "slope_gap_envelope," << num(rep.slope_gap_envelope) << '\n';
    out << "envelope_fit_intercept," << num(rep.envelope_fit.intercept) << '\n';
    out << "envelope_fit_r2," << num(rep.envelope_fit.r_squared) << '\n';
    out << "envelope_C," << num(rep.envelope_c) << '\n';
    out << "envelope_calibration_points," << rep.calibration_points << '\n';
  }
}

inline void write_envelope_csv(const std::filesystem::path& path, const GapReport& rep) {
  auto out = open_out(path);
  out << "N,envelope,envelope_se,envelope_argmax,c_over_sqrt_n,gap_argmax\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << num(r.envelope) << ',' << num(r.envelope_se) << ','
        << r.envelope_argmax << ','
        << num(rep.envelope_c / std::sqrt(static_cast<double>(r.n))) << ',' << r.gap_argmax
        << '\n';
  }
}

inline void write_deviations_csv(const std::filesystem::path& path, const GapReport& rep) {
  auto out = open_out(path);
  out << "N,theta,deviation,diff,diff_se,delta,delta_se,j_dev,j_dev_se\n";
  for (const auto& r : rep.rows) {
    for (const auto& d : r.deviations) {
      out << r.n << ',' << num(r.theta) << ',' << d.name << ',' << num(d.diff.mean()) << ','
          << num(d.diff.std_error()) << ',' << num(d.delta.mean()) << ','
          << num(d.delta.std_error()) << ',' << num(d.j_dev.mean()) << ','
          << num(d.j_dev.std_error()) << '\n';
    }
  }
}

inline void write_fv_csv(const std::filesystem::path& path, const GapReport& rep) {
  auto out = open_out(path);
  out << "N,theta,gap,gap_se,budget\n";
  for (const auto& r : rep.rows) {
    out << r.n << ',' << num(r.theta) << ',' << num(r.gap) << ',' << num(r.gap_se) << ','
        << num(r.budget) << '\n';
  }
  out << "\nsummary,value\nenvelope_C," << num(rep.envelope_c) << '\n';
}

inline void write_sweep_csv(const std::filesystem::path& dir, const ThetaSweepResult& sw) {
  {
    auto out = open_out(dir / "theta_sweep.csv");
    out << "theta,epsilon_theta\n";
    for (std::size_t i = 0; i < sw.thetas.size(); ++i) {
      out << num(sw.thetas[i]) << ',' << num(sw.epsilon_theta[i]) << '\n';
    }
  }
  auto out = open_out(dir / "values_at_probe.csv");
  out << "theta,s,x,value\n";
  for (std::size_t i = 0; i < sw.thetas.size(); ++i) {
    for (std::size_t p = 0; p < sw.probes.size(); ++p) {
      out << num(sw.thetas[i]) << ',' << num(sw.probes[p].first) << ','
          << num(sw.probes[p].second) << ',' << num(sw.values_at_probe[i][p]) << '\n';
    }
  }
}

}  // namespace mfgsc::io
