#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "omgd/decomposition.hpp"
#include "omgd/masks.hpp"
#include "omgd/objectives.hpp"
#include "omgd/rng.hpp"
#include "omgd/schedules.hpp"
#include "omgd/trace.hpp"

namespace omgd {

// The stochastic-gradient estimators under comparison.  Sampling is either
// independent uniform draws (iid) or per-epoch random reshuffling (rr);
// compression is either none, an independent unbiased sparsification mask
// per step, disjoint-support mask cycles (masks and the (mask, sample) pair
// grid both exhausted without replacement per cycle), or a fresh random
// rank-k projection per step.
struct EstimatorKind {
  enum class Sampling { Iid, Reshuffle };
  enum class Compression { None, MaskIid, MaskWor, Projector };

  Sampling sampling = Sampling::Reshuffle;
  Compression compression = Compression::None;
  double keep_ratio = 1.0;
  int mask_count = 0;  // masks per cycle; 0 means derive ceil(1 / keep_ratio)

  static EstimatorKind iid() { return {Sampling::Iid, Compression::None, 1.0, 0}; }
  static EstimatorKind rr() { return {Sampling::Reshuffle, Compression::None, 1.0, 0}; }
  static EstimatorKind iid_mask_iid(double r) {
    return {Sampling::Iid, Compression::MaskIid, r, 0};
  }
  static EstimatorKind rr_mask_iid(double r) {
    return {Sampling::Reshuffle, Compression::MaskIid, r, 0};
  }
  static EstimatorKind rr_mask_wor(double r, int m = 0) {
    return {Sampling::Reshuffle, Compression::MaskWor, r, m};
  }
  static EstimatorKind rr_proj(double r) {
    return {Sampling::Reshuffle, Compression::Projector, r, 0};
  }

  int effective_mask_count() const {
    if (compression != Compression::MaskWor) return 0;
    if (mask_count > 0) return mask_count;
    return static_cast<int>(std::ceil(1.0 / keep_ratio));
  }

  std::string name() const {
    switch (compression) {
      case Compression::None:
        return sampling == Sampling::Iid ? "iid" : "rr";
      case Compression::MaskIid:
        return sampling == Sampling::Iid ? "iid_mask_iid" : "rr_mask_iid";
      case Compression::MaskWor:
        return "rr_mask_wor";
      case Compression::Projector:
        return "rr_proj";
    }
    return "unknown";
  }

  static EstimatorKind parse(const std::string& name, double keep_ratio, int mask_count) {
    if (name == "iid") return iid();
    if (name == "rr") return rr();
    if (name == "iid_mask_iid") return iid_mask_iid(keep_ratio);
    if (name == "rr_mask_iid") return rr_mask_iid(keep_ratio);
    if (name == "rr_mask_wor") return rr_mask_wor(keep_ratio, mask_count);
    if (name == "rr_proj") return rr_proj(keep_ratio);
    throw std::invalid_argument("unknown estimator: " + name);
  }
};

struct RunConfig {
  EstimatorKind estimator;
  StepSchedule schedule = StepSchedule::constant(1e-3);
  std::int64_t horizon = 0;  // T, number of update steps
  std::uint64_t seed = 0;
  Eigen::VectorXd theta0;                 // empty means zeros(d)
  std::vector<std::int64_t> checkpoints;  // empty means 64 geometric points up to T
  bool decomposition = false;
  std::vector<int> pinned;  // coordinates active in every cycle mask
  double reconstruction_tol = 1e-8;
};

// Per-step payload for observers (tests, replay capture).  References are
// valid only during the callback.
struct StepInfo {
  std::int64_t t = 0;
  double eta = 0.0;
  int sample = 0;
  bool warmup = false;
  const Eigen::VectorXd* mask = nullptr;  // null when no mask applies
  const Eigen::VectorXd& grad_sample;
  const Eigen::VectorXd& g;
  const Eigen::VectorXd& theta_before;
};

using StepObserver = std::function<void(const StepInfo&)>;

// Raised when a run must stop mid-flight (non-finite iterates, failed
// reconstruction self-check).  Carries whatever checkpoints were recorded.
class RunAbort : public std::runtime_error {
 public:
  RunAbort(const std::string& what, RunTrace partial)
      : std::runtime_error(what), partial_trace(std::move(partial)) {}

  RunTrace partial_trace;
};

namespace detail {

inline void validate_checkpoints(const std::vector<std::int64_t>& pts,
                                 std::int64_t horizon) {
  std::int64_t prev = -1;
  for (std::int64_t t : pts) {
    if (t < 0 || t > horizon) {
      throw std::invalid_argument("run: checkpoint outside [0, T]: " + std::to_string(t));
    }
    if (t <= prev) {
      throw std::invalid_argument("run: checkpoints must be strictly increasing");
    }
    prev = t;
  }
}

}  // namespace detail

// Runs one estimator on the quadratic problem for cfg.horizon steps and
// records the configured checkpoints.  Deterministic: the data-order and
// mask/projector draws come from two independent child streams of cfg.seed,
// so estimators that share a data order (e.g. plain rr vs rr with an
// all-pass mask) see bit-identical sample sequences.
//
// Warm-up: the first schedule.warmup_steps iterations sample in plain
// reshuffled order with no compression for every estimator; the estimator's
// own sampling state starts fresh when warm-up ends (epoch and cycle counting
// begin there).  A final truncated mask cycle is flagged in the trace.
inline RunTrace run_estimator(const LeastSquaresProblem& problem, const RunConfig& cfg,
                              const StepObserver* observer = nullptr) {
  const int d = problem.d();
  const int n = problem.n();
  const std::int64_t horizon = cfg.horizon;
  if (horizon < 0) throw std::invalid_argument("run: horizon must be >= 0");
  if (cfg.schedule.step_limit() >= 0 && horizon > cfg.schedule.step_limit()) {
    throw std::invalid_argument("run: horizon " + std::to_string(horizon) +
                                " exceeds staged schedule budget " +
                                std::to_string(cfg.schedule.step_limit()));
  }

  const EstimatorKind& est = cfg.estimator;
  const bool uses_keep_ratio = est.compression != EstimatorKind::Compression::None;
  int keep_rank = 0;
  if (uses_keep_ratio) keep_rank = detail::rank_from_keep_ratio(d, est.keep_ratio);
  const int mask_count = est.effective_mask_count();
  if (est.compression == EstimatorKind::Compression::MaskWor && mask_count < 1) {
    throw std::invalid_argument("run: mask count must be >= 1");
  }

  Eigen::VectorXd theta;
  if (cfg.theta0.size() == 0) {
    theta = Eigen::VectorXd::Zero(d);
  } else if (cfg.theta0.size() == d) {
    theta = cfg.theta0;
  } else {
    throw std::invalid_argument("run: theta0 dimension mismatch");
  }

  std::vector<std::int64_t> checkpoints = cfg.checkpoints;
  if (checkpoints.empty()) {
    checkpoints = horizon == 0 ? std::vector<std::int64_t>{0}
                               : geometric_checkpoints(64, horizon);
  }
  detail::validate_checkpoints(checkpoints, horizon);

  RunTrace trace;
  trace.estimator = est.name();
  trace.seed = cfg.seed;
  trace.decomposition = cfg.decomposition;
  trace.points.reserve(checkpoints.size());

  const Rng root(cfg.seed);
  Rng order_rng = root.split(stream::data_order);
  Rng mask_rng = root.split(stream::mask);

  const std::int64_t warmup = std::min<std::int64_t>(cfg.schedule.warmup_steps(), horizon);

  // Sampling state.
  std::vector<int> epoch(static_cast<std::size_t>(n));
  std::size_t epoch_pos = static_cast<std::size_t>(n);  // forces an initial shuffle
  auto next_rr_index = [&]() {
    if (epoch_pos >= epoch.size()) {
      for (int i = 0; i < n; ++i) epoch[static_cast<std::size_t>(i)] = i;
      order_rng.shuffle(epoch);
      epoch_pos = 0;
    }
    return epoch[epoch_pos++];
  };

  // Cycle state (disjoint-mask compression).
  MaskSet mask_set;
  TraversalSchedule traversal;
  std::size_t cycle_pos = 0;
  bool cycle_open = false;

  // Per-step compression workspaces.
  Eigen::VectorXd iid_mask_values;
  std::vector<int> iid_mask_coords;
  Eigen::MatrixXd proj(d, std::max(keep_rank, 1));
  Eigen::VectorXd proj_coeff(std::max(keep_rank, 1));
  StiefelSampler stiefel =
      est.compression == EstimatorKind::Compression::Projector
          ? StiefelSampler(d, est.keep_ratio)
          : StiefelSampler(1, 1.0);

  DecompositionState decomp;
  if (cfg.decomposition) decomp.init(theta - problem.theta_star);

  Eigen::VectorXd grad_sample(d), g(d), grad_full(d), delta(d);

  std::size_t next_ckpt = 0;
  const auto record_point = [&](std::int64_t t) {
    TracePoint pt;
    pt.t = t;
    delta = theta - problem.theta_star;
    pt.theta_err_sq = delta.squaredNorm();
    problem.full_gradient(theta, grad_full);
    pt.grad_norm_sq = grad_full.squaredNorm();
    pt.subopt = 0.5 * delta.dot(problem.A * delta);
    if (cfg.decomposition) {
      pt.decay_sq = decomp.decay.squaredNorm();
      pt.reshuffle_sq = decomp.reshuffle.squaredNorm();
      pt.compress_sq = decomp.compression.squaredNorm();
      const double ratio = decomp.reconstruction_ratio(delta);
      trace.max_reconstruction_ratio = std::max(trace.max_reconstruction_ratio, ratio);
      if (!(ratio <= cfg.reconstruction_tol)) {
        trace.points.push_back(pt);
        throw RunAbort("run aborted: decomposition reconstruction residual " +
                           std::to_string(ratio) + " exceeds tolerance at t=" +
                           std::to_string(t) + " (estimator=" + trace.estimator +
                           ", seed=" + std::to_string(cfg.seed) + ")",
                       trace);
      }
    }
    trace.points.push_back(pt);
  };

  for (std::int64_t t = 0; t < horizon; ++t) {
    if (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] == t) {
      record_point(t);
      ++next_ckpt;
    }

    const bool in_warmup = t < warmup;
    if (t == warmup) {
      // Estimator-specific phase starts fresh here.
      epoch_pos = static_cast<std::size_t>(n);
      cycle_open = false;
    }

    // --- pick sample and mask ---
    int sample = 0;
    const Eigen::VectorXd* mask_values = nullptr;
    bool use_projector = false;
    if (in_warmup) {
      sample = next_rr_index();
    } else {
      switch (est.compression) {
        case EstimatorKind::Compression::MaskWor: {
          if (!cycle_open || cycle_pos >= traversal.order.size()) {
            mask_set = generate_disjoint_masks(d, mask_count, cfg.pinned, mask_rng);
            traversal = generate_traversal(mask_count, n, order_rng);
            cycle_pos = 0;
            cycle_open = true;
          }
          const auto& [j, i] = traversal.order[cycle_pos++];
          sample = i;
          mask_values = &mask_set.masks[static_cast<std::size_t>(j)].values;
          break;
        }
        case EstimatorKind::Compression::MaskIid: {
          sample = est.sampling == EstimatorKind::Sampling::Iid
                       ? static_cast<int>(order_rng.below(static_cast<std::uint64_t>(n)))
                       : next_rr_index();
          detail::sample_iid_mask_into(d, est.keep_ratio, keep_rank, mask_rng,
                                       iid_mask_coords, iid_mask_values);
          mask_values = &iid_mask_values;
          break;
        }
        case EstimatorKind::Compression::Projector: {
          sample = next_rr_index();
          stiefel.sample_into(proj, mask_rng);
          use_projector = true;
          break;
        }
        case EstimatorKind::Compression::None: {
          sample = est.sampling == EstimatorKind::Sampling::Iid
                       ? static_cast<int>(order_rng.below(static_cast<std::uint64_t>(n)))
                       : next_rr_index();
          break;
        }
      }
    }

    // --- gradients ---
    problem.samples.sample_gradient(theta, sample, grad_sample);
    if (mask_values != nullptr) {
      g = mask_values->cwiseProduct(grad_sample);
    } else if (use_projector) {
      proj_coeff.noalias() = proj.transpose() * grad_sample;
      g.noalias() = proj * proj_coeff;
      g /= est.keep_ratio;
    } else {
      g = grad_sample;
    }

    const double eta = cfg.schedule.eta_at(t);

    if (cfg.decomposition) {
      problem.full_gradient(theta, grad_full);
      decomp.step(problem.A, eta, grad_full, grad_sample, g);
    }

    if (observer != nullptr) {
      StepInfo info{t, eta, sample, in_warmup, mask_values, grad_sample, g, theta};
      (*observer)(info);
    }

    theta -= eta * g;

    if ((t & 1023) == 0 && !theta.allFinite()) {
      throw RunAbort("run aborted: non-finite parameter detected at t=" +
                         std::to_string(t) + " (estimator=" + trace.estimator +
                         ", seed=" + std::to_string(cfg.seed) + ")",
                     trace);
    }
  }

  if (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] == horizon) {
    record_point(horizon);
  }
  if (!theta.allFinite()) {
    throw RunAbort("run aborted: non-finite parameter at end of run (estimator=" +
                       trace.estimator + ", seed=" + std::to_string(cfg.seed) + ")",
                   trace);
  }

  if (est.compression == EstimatorKind::Compression::MaskWor && horizon > warmup) {
    const std::int64_t cycle_len =
        static_cast<std::int64_t>(mask_count) * static_cast<std::int64_t>(n);
    trace.partial_final_cycle = ((horizon - warmup) % cycle_len) != 0;
  }

  return trace;
}

}  // namespace omgd
