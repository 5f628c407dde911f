#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace omgd {

// One recorded checkpoint of a run.  The three decomposition columns are
// present only when the run tracked the error-term split.
struct TracePoint {
  std::int64_t t = 0;
  double theta_err_sq = 0.0;
  double grad_norm_sq = 0.0;
  double subopt = 0.0;
  double decay_sq = 0.0;
  double reshuffle_sq = 0.0;
  double compress_sq = 0.0;
};

struct RunTrace {
  std::string estimator;
  std::uint64_t seed = 0;
  bool decomposition = false;
  bool partial_final_cycle = false;
  // Largest reconstruction residual ratio seen at any checkpoint:
  // ||decay + reshuffle + compress - (theta_t - theta_star)|| /
  // (1 + ||theta_t - theta_star||).  Zero when decomposition is off.
  double max_reconstruction_ratio = 0.0;
  std::vector<TracePoint> points;
};

// Default checkpoint grid: `count` geometrically spaced integers between
// lo (clamped to the horizon) and T, deduplicated, always ending at T.
inline std::vector<std::int64_t> geometric_checkpoints(int count, std::int64_t horizon,
                                                       std::int64_t lo = 100) {
  if (horizon < 1) throw std::invalid_argument("geometric_checkpoints: horizon must be >= 1");
  if (count < 1) throw std::invalid_argument("geometric_checkpoints: count must be >= 1");
  if (lo < 1) lo = 1;
  if (lo > horizon) lo = horizon;
  std::vector<std::int64_t> pts;
  pts.reserve(static_cast<std::size_t>(count));
  const double log_lo = std::log(static_cast<double>(lo));
  const double log_hi = std::log(static_cast<double>(horizon));
  for (int k = 0; k < count; ++k) {
    const double frac = count == 1 ? 1.0 : static_cast<double>(k) / (count - 1);
    const double v = std::exp(log_lo + frac * (log_hi - log_lo));
    std::int64_t t = static_cast<std::int64_t>(std::llround(v));
    t = std::clamp<std::int64_t>(t, lo, horizon);
    pts.push_back(t);
  }
  pts.back() = horizon;
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  return pts;
}

namespace detail {

inline void append_g17(std::string& out, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace detail

// CSV with a fixed header; floating-point cells carry 17 significant digits,
// '.' decimal separator, '\n' line endings.  The decomposition columns are
// left blank when the split was not tracked.  A single leading comment line
// records run identity flags; readers skip '#' lines.
inline std::string trace_to_csv(const RunTrace& trace) {
  std::string out;
  out += "# omgd-trace estimator=" + trace.estimator +
         " seed=" + std::to_string(trace.seed) +
         " decomposition=" + (trace.decomposition ? "1" : "0") +
         " partial_final_cycle=" + (trace.partial_final_cycle ? "1" : "0");
  if (trace.decomposition) {
    out += " max_reconstruction_ratio=";
    detail::append_g17(out, trace.max_reconstruction_ratio);
  }
  out += "\n";
  out += "t,theta_err_sq,grad_norm_sq,subopt,decay_sq,reshuffle_sq,compress_sq\n";
  for (const TracePoint& p : trace.points) {
    out += std::to_string(p.t);
    out += ',';
    detail::append_g17(out, p.theta_err_sq);
    out += ',';
    detail::append_g17(out, p.grad_norm_sq);
    out += ',';
    detail::append_g17(out, p.subopt);
    out += ',';
    if (trace.decomposition) {
      detail::append_g17(out, p.decay_sq);
      out += ',';
      detail::append_g17(out, p.reshuffle_sq);
      out += ',';
      detail::append_g17(out, p.compress_sq);
    } else {
      out += ",,";
    }
    out += '\n';
  }
  return out;
}

inline void write_trace_csv(const RunTrace& trace, std::ostream& os) {
  os << trace_to_csv(trace);
}

inline RunTrace trace_from_csv(std::istream& is) {
  RunTrace trace;
  std::string line;
  bool saw_header = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string field;
      while (hs >> field) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "estimator") trace.estimator = val;
        if (key == "seed") trace.seed = std::stoull(val);
        if (key == "decomposition") trace.decomposition = (val == "1");
        if (key == "partial_final_cycle") trace.partial_final_cycle = (val == "1");
        if (key == "max_reconstruction_ratio") trace.max_reconstruction_ratio = std::stod(val);
      }
      continue;
    }
    if (!saw_header) {
      if (line != "t,theta_err_sq,grad_norm_sq,subopt,decay_sq,reshuffle_sq,compress_sq") {
        throw std::runtime_error("trace_from_csv: unexpected header: " + line);
      }
      saw_header = true;
      continue;
    }
    std::istringstream ls(line);
    std::string cell;
    TracePoint p;
    auto next_cell = [&]() {
      if (!std::getline(ls, cell, ',')) {
        throw std::runtime_error("trace_from_csv: short row: " + line);
      }
    };
    next_cell();
    p.t = std::stoll(cell);
    next_cell();
    p.theta_err_sq = std::stod(cell);
    next_cell();
    p.grad_norm_sq = std::stod(cell);
    next_cell();
    p.subopt = std::stod(cell);
    next_cell();
    p.decay_sq = cell.empty() ? 0.0 : std::stod(cell);
    next_cell();
    p.reshuffle_sq = cell.empty() ? 0.0 : std::stod(cell);
    // last cell: getline without delimiter consumption
    if (!std::getline(ls, cell)) cell.clear();
    p.compress_sq = cell.empty() ? 0.0 : std::stod(cell);
    trace.points.push_back(p);
  }
  if (!saw_header) throw std::runtime_error("trace_from_csv: missing header");
  return trace;
}

}  // namespace omgd
