#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "omgd/decomposition.hpp"
#include "omgd/masks.hpp"
#include "omgd/objectives.hpp"
#include "omgd/rng.hpp"
#include "omgd/schedules.hpp"
#include "omgd/trace.hpp"

namespace omgd {

// A pre-generated stream of (mask, sample) assignments spanning whole cycles:
// cycle k draws a fresh disjoint mask set and a fresh traversal of the
// (mask, sample) grid, exactly as a compressed reshuffled run does.
struct MaskSampleStream {
  int d = 0;
  int mask_count = 0;
  int sample_count = 0;
  std::vector<MaskSet> mask_sets;
  std::vector<TraversalSchedule> traversals;

  std::int64_t cycle_length() const {
    return static_cast<std::int64_t>(mask_count) * static_cast<std::int64_t>(sample_count);
  }
  std::int64_t total_steps() const {
    return cycle_length() * static_cast<std::int64_t>(traversals.size());
  }
  const Eigen::VectorXd& mask_at(std::int64_t t) const {
    const std::int64_t cl = cycle_length();
    const auto& trav = traversals[static_cast<std::size_t>(t / cl)];
    const int j = trav.order[static_cast<std::size_t>(t % cl)].first;
    return mask_sets[static_cast<std::size_t>(t / cl)].masks[static_cast<std::size_t>(j)].values;
  }
  int sample_at(std::int64_t t) const {
    const std::int64_t cl = cycle_length();
    return traversals[static_cast<std::size_t>(t / cl)].order[static_cast<std::size_t>(t % cl)].second;
  }
};

inline MaskSampleStream make_mask_sample_stream(int d, int mask_count, int sample_count,
                                                const std::vector<int>& pinned,
                                                int cycles, Rng& rng) {
  if (cycles < 1) throw std::invalid_argument("make_mask_sample_stream: cycles must be >= 1");
  MaskSampleStream s;
  s.d = d;
  s.mask_count = mask_count;
  s.sample_count = sample_count;
  Rng mask_rng = rng.split(stream::mask);
  Rng order_rng = rng.split(stream::data_order);
  for (int k = 0; k < cycles; ++k) {
    s.mask_sets.push_back(generate_disjoint_masks(d, mask_count, pinned, mask_rng));
    s.traversals.push_back(generate_traversal(mask_count, sample_count, order_rng));
  }
  return s;
}

// --- cycle cancellation ------------------------------------------------------

struct CancellationResult {
  double residual = 0.0;             // || sum over the cycle of masked deviation ||
  double max_sample_grad_norm = 0.0; // max_t || grad f(theta_ref; z_t) ||
  double tolerance = 0.0;            // 1e-9 * M * N * max_sample_grad_norm

  bool holds() const { return residual <= tolerance; }
};

// Sums S_t (.) grad f(theta_ref; z_t) - grad_mean over one full cycle of the
// given mask set and traversal.  The sum vanishes identically because every
// mask-sample pair appears exactly once and the mask values on each
// coordinate sum to M; floating-point roundoff is all that remains.
inline CancellationResult cycle_cancellation_residual(const SampleSet& samples,
                                                      const MaskSet& set,
                                                      const TraversalSchedule& traversal,
                                                      const Eigen::VectorXd& theta_ref) {
  if (set.d != samples.d()) {
    throw std::invalid_argument("cycle_cancellation_residual: dimension mismatch");
  }
  if (traversal.sample_count != samples.n() || traversal.mask_count != set.mask_count) {
    throw std::invalid_argument("cycle_cancellation_residual: traversal shape mismatch");
  }
  const Eigen::VectorXd grad_mean = samples.mean_gradient(theta_ref);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(samples.d());
  Eigen::VectorXd grad(samples.d());
  double max_norm = 0.0;
  for (const auto& [j, i] : traversal.order) {
    samples.sample_gradient(theta_ref, i, grad);
    max_norm = std::max(max_norm, grad.norm());
    acc += set.masks[static_cast<std::size_t>(j)].values.cwiseProduct(grad) - grad_mean;
  }
  CancellationResult res;
  res.residual = acc.norm();
  res.max_sample_grad_norm = max_norm;
  res.tolerance = 1e-9 * static_cast<double>(traversal.order.size()) * max_norm;
  return res;
}

// --- accumulated-deviation window bound --------------------------------------

struct WindowBoundResult {
  double lhs = 0.0;  // || sum_{t=tau}^{tau+m-1} eta_t (S_t (.) grad f - grad F) ||^2
  double rhs = 0.0;  // eta_tau^2 (C^2 + Phi^2 ||grad F(theta_tau)||^2)

  bool holds() const { return lhs <= rhs; }
};

// Evaluates both sides of the window bound at a frozen reference point: the
// step-weighted accumulated deviation over any window of length m starting at
// tau is controlled by eta_tau^2 (C^2 + Phi^2 ||grad F||^2), provided the
// step sizes are non-increasing and (C, Phi) come from window_constants with
// per-sample deviation constants valid at theta_ref.
inline WindowBoundResult accumulated_deviation_bound(const SampleSet& samples,
                                                     const MaskSampleStream& stream,
                                                     const StepSchedule& schedule,
                                                     std::int64_t tau, std::int64_t m,
                                                     const Eigen::VectorXd& theta_ref,
                                                     const WindowConstants& wc) {
  if (tau < 0 || m < 1) {
    throw std::invalid_argument("accumulated_deviation_bound: need tau >= 0, m >= 1");
  }
  if (tau + m > stream.total_steps()) {
    throw std::invalid_argument("accumulated_deviation_bound: stream too short for window");
  }
  const Eigen::VectorXd grad_mean = samples.mean_gradient(theta_ref);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(samples.d());
  Eigen::VectorXd grad(samples.d());
  double prev_eta = std::numeric_limits<double>::infinity();
  for (std::int64_t t = tau; t < tau + m; ++t) {
    const double eta = schedule.eta_at(t);
    if (eta > prev_eta) {
      throw std::invalid_argument(
          "accumulated_deviation_bound: step sizes must be non-increasing");
    }
    prev_eta = eta;
    samples.sample_gradient(theta_ref, stream.sample_at(t), grad);
    acc += eta * (stream.mask_at(t).cwiseProduct(grad) - grad_mean);
  }
  WindowBoundResult res;
  res.lhs = acc.squaredNorm();
  const double eta_tau = schedule.eta_at(tau);
  res.rhs = eta_tau * eta_tau *
            (wc.C * wc.C + wc.Phi * wc.Phi * grad_mean.squaredNorm());
  return res;
}

// --- independent-mask variance floor ------------------------------------------

struct VarianceFloorResult {
  double lhs_hat = 0.0;         // Monte-Carlo estimate of the expected squared sum
  double rhs = 0.0;             // (sum eta_t^2) ((1-r)/r) ||grad F(theta_ref)||^2
  double standard_error = 0.0;  // of lhs_hat
  int trials = 0;

  // One-sided check with a 3-sigma Monte-Carlo allowance.
  bool holds() const { return lhs_hat >= rhs - 3.0 * standard_error; }
};

// Estimates E || sum_{t=tau}^{tau+m-1} eta_t (S_t (.) grad f(theta_ref; z_t)
// - grad F(theta_ref)) ||^2 for reshuffled sampling with a fresh unbiased
// sparsification mask per step, with tau at an epoch boundary, and compares
// it against the variance floor that independent masks cannot beat.
inline VarianceFloorResult independent_mask_variance_floor(
    const SampleSet& samples, double keep_ratio, const StepSchedule& schedule,
    std::int64_t tau, std::int64_t m, int trials, const Eigen::VectorXd& theta_ref,
    Rng& rng) {
  const int n = samples.n();
  const int d = samples.d();
  if (m < 1) throw std::invalid_argument("independent_mask_variance_floor: m must be >= 1");
  if (trials < 100) {
    throw std::invalid_argument("independent_mask_variance_floor: need at least 100 trials");
  }
  if (tau < 0 || tau % n != 0) {
    throw std::invalid_argument(
        "independent_mask_variance_floor: tau must sit at an epoch boundary");
  }
  const int k = detail::rank_from_keep_ratio(d, keep_ratio);
  const Eigen::VectorXd grad_mean = samples.mean_gradient(theta_ref);

  Rng order_rng = rng.split(stream::data_order);
  Rng mask_rng = rng.split(stream::mask);
  std::vector<int> epoch(static_cast<std::size_t>(n));
  std::vector<int> coords;
  Eigen::VectorXd mask_values(d);
  Eigen::VectorXd grad(d), acc(d);

  double sum = 0.0, sum_sq = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    acc.setZero();
    std::size_t pos = static_cast<std::size_t>(n);
    for (std::int64_t s = 0; s < m; ++s) {
      if (pos >= epoch.size()) {
        for (int i = 0; i < n; ++i) epoch[static_cast<std::size_t>(i)] = i;
        order_rng.shuffle(epoch);
        pos = 0;
      }
      const int i = epoch[pos++];
      detail::sample_iid_mask_into(d, keep_ratio, k, mask_rng, coords, mask_values);
      samples.sample_gradient(theta_ref, i, grad);
      acc += schedule.eta_at(tau + s) * (mask_values.cwiseProduct(grad) - grad_mean);
    }
    const double v = acc.squaredNorm();
    sum += v;
    sum_sq += v * v;
  }

  VarianceFloorResult res;
  res.trials = trials;
  res.lhs_hat = sum / trials;
  const double var = std::max(0.0, sum_sq / trials - res.lhs_hat * res.lhs_hat);
  res.standard_error = std::sqrt(var / trials);
  double eta_sq = 0.0;
  for (std::int64_t s = 0; s < m; ++s) {
    const double eta = schedule.eta_at(tau + s);
    eta_sq += eta * eta;
  }
  res.rhs = eta_sq * ((1.0 - keep_ratio) / keep_ratio) * grad_mean.squaredNorm();
  return res;
}

// --- per-sample deviation constants -------------------------------------------

struct DeviationConstants {
  double c1 = 0.0;
  double c2 = 0.0;

  double frontier_value() const { return c1 * c1 + c2 * c2; }
};

// Fits (C1, C2) such that ||grad f(theta; z) - grad F(theta)||^2
// <= C1^2 + C2^2 ||grad F(theta)||^2 holds at every probe point for every
// sample: for each candidate C2 on a grid, the smallest feasible C1^2 is the
// positive part of max_p (maxdev_p - C2^2 gradsq_p); the reported pair
// minimizes C1^2 + C2^2.  Conservative by construction on the probed points
// only; a superset of probes can only grow the frontier value.
inline DeviationConstants estimate_deviation_constants(
    const SampleSet& samples, const std::vector<Eigen::VectorXd>& probes) {
  if (probes.empty()) {
    throw std::invalid_argument("estimate_deviation_constants: need at least one probe");
  }
  const int d = samples.d();
  std::vector<double> maxdev, gradsq;
  maxdev.reserve(probes.size());
  gradsq.reserve(probes.size());
  Eigen::VectorXd grad(d);
  for (const Eigen::VectorXd& theta : probes) {
    if (theta.size() != d) {
      throw std::invalid_argument("estimate_deviation_constants: probe dimension mismatch");
    }
    const Eigen::VectorXd grad_mean = samples.mean_gradient(theta);
    double dev = 0.0;
    for (int i = 0; i < samples.n(); ++i) {
      samples.sample_gradient(theta, i, grad);
      dev = std::max(dev, (grad - grad_mean).squaredNorm());
    }
    maxdev.push_back(dev);
    gradsq.push_back(grad_mean.squaredNorm());
  }

  // Largest candidate C2^2 that any single probe could need.
  double c2sq_max = 0.0;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    if (gradsq[p] > 1e-12) c2sq_max = std::max(c2sq_max, maxdev[p] / gradsq[p]);
  }

  const int grid = 256;
  double best_c1sq = 0.0, best_c2sq = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (int gidx = 0; gidx <= grid; ++gidx) {
    const double c2sq = c2sq_max * static_cast<double>(gidx) / grid;
    double c1sq = 0.0;
    for (std::size_t p = 0; p < probes.size(); ++p) {
      c1sq = std::max(c1sq, maxdev[p] - c2sq * gradsq[p]);
    }
    if (c1sq < 0.0) c1sq = 0.0;
    const double value = c1sq + c2sq;
    if (value < best) {
      best = value;
      best_c1sq = c1sq;
      best_c2sq = c2sq;
    }
  }
  return {std::sqrt(best_c1sq), std::sqrt(best_c2sq)};
}

// Convenience sampler: probe_count points theta_star + radius * u * frac with
// u uniform on the sphere and frac uniform in (0, 1]; theta_star itself is
// always included so zero-gradient behaviour is pinned down.
inline DeviationConstants estimate_deviation_constants(const LeastSquaresProblem& problem,
                                                       int probe_count, double probe_radius,
                                                       Rng& rng) {
  if (probe_count < 1) {
    throw std::invalid_argument("estimate_deviation_constants: probe_count must be >= 1");
  }
  if (probe_radius < 0.0) {
    throw std::invalid_argument("estimate_deviation_constants: probe_radius must be >= 0");
  }
  Rng probe_rng = rng.split(stream::probe);
  std::vector<Eigen::VectorXd> probes;
  probes.reserve(static_cast<std::size_t>(probe_count) + 1);
  probes.push_back(problem.theta_star);
  const int d = problem.d();
  for (int p = 0; p < probe_count; ++p) {
    Eigen::VectorXd u(d);
    for (int c = 0; c < d; ++c) u[c] = probe_rng.normal();
    const double norm = u.norm();
    if (norm > 0.0) u /= norm;
    const double frac = 1.0 - probe_rng.uniform();  // (0, 1]
    probes.push_back(problem.theta_star + (probe_radius * frac) * u);
  }
  return estimate_deviation_constants(problem.samples, probes);
}

// --- trajectory decomposition -------------------------------------------------

// One recorded update of a finished run, sufficient to replay the error split.
struct StepRecord {
  int sample = 0;
  double eta = 0.0;
  Eigen::VectorXd g;  // the compressed gradient actually applied
};

struct RunReplay {
  Eigen::VectorXd theta0;
  std::vector<StepRecord> steps;
  std::vector<std::int64_t> checkpoints;  // sorted, within [0, steps.size()]
};

struct DecompositionPoint {
  std::int64_t t = 0;
  Eigen::VectorXd decay;
  Eigen::VectorXd reshuffle;
  Eigen::VectorXd compression;
  double reconstruction_ratio = 0.0;
};

// Replays a recorded run through the three error recurrences and verifies at
// every checkpoint that they reconstruct theta_t - theta_star within
// tol * (1 + ||theta_t - theta_star||).
inline std::vector<DecompositionPoint> decompose_trajectory(
    const LeastSquaresProblem& problem, const RunReplay& replay, double tol = 1e-8) {
  const int d = problem.d();
  if (replay.theta0.size() != d) {
    throw std::invalid_argument("decompose_trajectory: theta0 dimension mismatch");
  }
  std::int64_t prev = -1;
  for (std::int64_t t : replay.checkpoints) {
    if (t < 0 || t > static_cast<std::int64_t>(replay.steps.size()) || t <= prev) {
      throw std::invalid_argument("decompose_trajectory: bad checkpoint list");
    }
    prev = t;
  }

  Eigen::VectorXd theta = replay.theta0;
  DecompositionState state;
  state.init(theta - problem.theta_star);
  Eigen::VectorXd grad_full(d), grad_sample(d);

  std::vector<DecompositionPoint> out;
  out.reserve(replay.checkpoints.size());
  std::size_t next_ckpt = 0;
  const auto emit = [&](std::int64_t t) {
    DecompositionPoint pt;
    pt.t = t;
    pt.decay = state.decay;
    pt.reshuffle = state.reshuffle;
    pt.compression = state.compression;
    pt.reconstruction_ratio = state.reconstruction_ratio(theta - problem.theta_star);
    if (!(pt.reconstruction_ratio <= tol)) {
      throw std::runtime_error(
          "decompose_trajectory: reconstruction residual " +
          std::to_string(pt.reconstruction_ratio) + " exceeds tolerance " +
          std::to_string(tol) + " at t=" + std::to_string(t));
    }
    out.push_back(std::move(pt));
  };

  for (std::size_t s = 0; s < replay.steps.size(); ++s) {
    if (next_ckpt < replay.checkpoints.size() &&
        replay.checkpoints[next_ckpt] == static_cast<std::int64_t>(s)) {
      emit(static_cast<std::int64_t>(s));
      ++next_ckpt;
    }
    const StepRecord& rec = replay.steps[s];
    if (rec.g.size() != d) {
      throw std::invalid_argument("decompose_trajectory: step gradient dimension mismatch");
    }
    problem.full_gradient(theta, grad_full);
    problem.samples.sample_gradient(theta, rec.sample, grad_sample);
    state.step(problem.A, rec.eta, grad_full, grad_sample, rec.g);
    theta -= rec.eta * rec.g;
  }
  if (next_ckpt < replay.checkpoints.size() &&
      replay.checkpoints[next_ckpt] == static_cast<std::int64_t>(replay.steps.size())) {
    emit(static_cast<std::int64_t>(replay.steps.size()));
  }
  return out;
}

// --- asymptotic rate fitting ----------------------------------------------------

struct RateReport {
  double slope = 0.0;           // OLS slope of log mean value vs log t
  double intercept = 0.0;       // OLS intercept (log-log)
  double standard_error = 0.0;  // spread of per-seed slopes / sqrt(#seeds)
  std::int64_t window_lo = 0;
  std::int64_t window_hi = 0;
  int seed_count = 0;
  int point_count = 0;
  std::vector<double> per_seed_slopes;
};

namespace detail {

struct OlsFit {
  double slope = 0.0;
  double intercept = 0.0;
};

inline OlsFit ols(const std::vector<double>& xs, const std::vector<double>& ys) {
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx <= 0.0) throw std::runtime_error("rate fit: degenerate abscissae");
  OlsFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  return fit;
}

}  // namespace detail

// Extracts (t, column) pairs from a trace.
enum class TraceColumn { ThetaErrSq, GradNormSq, Subopt, DecaySq, ReshuffleSq, CompressSq };

inline double trace_column(const TracePoint& p, TraceColumn col) {
  switch (col) {
    case TraceColumn::ThetaErrSq:
      return p.theta_err_sq;
    case TraceColumn::GradNormSq:
      return p.grad_norm_sq;
    case TraceColumn::Subopt:
      return p.subopt;
    case TraceColumn::DecaySq:
      return p.decay_sq;
    case TraceColumn::ReshuffleSq:
      return p.reshuffle_sq;
    case TraceColumn::CompressSq:
      return p.compress_sq;
  }
  throw std::logic_error("trace_column: unreachable");
}

// Fits the asymptotic power-law exponent of a trace column: averages the
// column across seeds per checkpoint, restricts to checkpoints in
// [window_lo, window_hi] with positive t and positive mean, and runs OLS on
// (log t, log mean).  All traces must share one checkpoint grid; fewer than
// four usable points in the window is an error.
inline RateReport fit_rate(const std::vector<RunTrace>& traces, TraceColumn column,
                           std::int64_t window_lo, std::int64_t window_hi) {
  if (traces.empty()) throw std::invalid_argument("fit_rate: no traces");
  if (window_lo < 1 || window_hi < window_lo) {
    throw std::invalid_argument("fit_rate: bad window");
  }
  const std::size_t npts = traces[0].points.size();
  for (const RunTrace& tr : traces) {
    if (tr.points.size() != npts) {
      throw std::invalid_argument("fit_rate: traces have mismatched checkpoint grids");
    }
    for (std::size_t i = 0; i < npts; ++i) {
      if (tr.points[i].t != traces[0].points[i].t) {
        throw std::invalid_argument("fit_rate: traces have mismatched checkpoint grids");
      }
    }
  }

  std::vector<double> log_t, log_mean;
  std::vector<std::size_t> used;
  for (std::size_t i = 0; i < npts; ++i) {
    const std::int64_t t = traces[0].points[i].t;
    if (t < window_lo || t > window_hi || t <= 0) continue;
    double mean = 0.0;
    for (const RunTrace& tr : traces) mean += trace_column(tr.points[i], column);
    mean /= static_cast<double>(traces.size());
    if (!(mean > 0.0)) continue;
    log_t.push_back(std::log(static_cast<double>(t)));
    log_mean.push_back(std::log(mean));
    used.push_back(i);
  }
  if (log_t.size() < 4) {
    throw std::runtime_error("fit_rate: fewer than 4 usable checkpoints in window [" +
                             std::to_string(window_lo) + ", " + std::to_string(window_hi) +
                             "]");
  }

  RateReport report;
  const detail::OlsFit fit = detail::ols(log_t, log_mean);
  report.slope = fit.slope;
  report.intercept = fit.intercept;
  report.window_lo = window_lo;
  report.window_hi = window_hi;
  report.seed_count = static_cast<int>(traces.size());
  report.point_count = static_cast<int>(log_t.size());

  for (const RunTrace& tr : traces) {
    std::vector<double> xs, ys;
    for (std::size_t i : used) {
      const double v = trace_column(tr.points[i], column);
      if (!(v > 0.0)) continue;
      xs.push_back(std::log(static_cast<double>(tr.points[i].t)));
      ys.push_back(std::log(v));
    }
    if (xs.size() >= 2) report.per_seed_slopes.push_back(detail::ols(xs, ys).slope);
  }
  if (report.per_seed_slopes.size() > 1) {
    double mean = 0.0;
    for (double s : report.per_seed_slopes) mean += s;
    mean /= static_cast<double>(report.per_seed_slopes.size());
    double var = 0.0;
    for (double s : report.per_seed_slopes) var += (s - mean) * (s - mean);
    var /= static_cast<double>(report.per_seed_slopes.size() - 1);
    report.standard_error =
        std::sqrt(var / static_cast<double>(report.per_seed_slopes.size()));
  }
  return report;
}

}  // namespace omgd
