#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "omgd/layered_model.hpp"
#include "omgd/objectives.hpp"
#include "omgd/rng.hpp"
#include "omgd/schedules.hpp"
#include "omgd/trace.hpp"

namespace omgd {

// Without-replacement layer activation pool: each period activates gamma
// middle layers drawn from the not-yet-selected pool; once fewer than gamma
// remain, the pool resets to all middle layers and any leftover layers are
// discarded (they return to the pool like everything else).  Embedding and
// head blocks are always active with scale 1; active middle layers are
// rescaled by n_middle / gamma so the masked gradient stays unbiased.
struct LayerPoolState {
  int n_middle = 0;
  int gamma = 0;
  std::vector<int> unselected;  // middle-layer indices 0..n_middle-1 not yet used
  std::vector<int> active;      // currently active middle layers (sorted)
  int periods = 0;              // periods advanced so far
  int last_leftover = 0;        // pool size discarded at the most recent reset
  int resets = 0;
};

inline LayerPoolState make_layer_pool(int n_middle, int gamma) {
  if (n_middle < 1) throw std::invalid_argument("make_layer_pool: n_middle must be >= 1");
  if (gamma < 1 || gamma > n_middle) {
    throw std::invalid_argument("make_layer_pool: gamma must lie in [1, n_middle]");
  }
  LayerPoolState st;
  st.n_middle = n_middle;
  st.gamma = gamma;
  st.unselected.resize(static_cast<std::size_t>(n_middle));
  std::iota(st.unselected.begin(), st.unselected.end(), 0);
  return st;
}

// Starts the next period: resets the pool first if it cannot supply gamma
// layers, then moves a uniform without-replacement sample of gamma layers
// from the pool to the active set.
inline void advance_period(LayerPoolState& st, Rng& rng) {
  if (static_cast<int>(st.unselected.size()) < st.gamma) {
    st.last_leftover = static_cast<int>(st.unselected.size());
    ++st.resets;
    st.unselected.resize(static_cast<std::size_t>(st.n_middle));
    std::iota(st.unselected.begin(), st.unselected.end(), 0);
  }
  rng.sample_prefix(st.unselected, static_cast<std::size_t>(st.gamma));
  st.active.assign(st.unselected.begin(), st.unselected.begin() + st.gamma);
  std::sort(st.active.begin(), st.active.end());
  st.unselected.erase(st.unselected.begin(), st.unselected.begin() + st.gamma);
  ++st.periods;
}

// The flat per-coordinate multiplier the current period applies: 1 on
// embedding and head blocks, n_middle / gamma on active middle blocks, 0 on
// frozen middle blocks.
inline Eigen::VectorXd scheduler_flat_mask(const LayerPoolState& st,
                                           const LayeredModel& model) {
  if (model.n_middle() != st.n_middle) {
    throw std::invalid_argument("scheduler_flat_mask: model/pool middle-layer mismatch");
  }
  Eigen::VectorXd mask = Eigen::VectorXd::Zero(model.n_params());
  mask.segment(model.block_offset(0), model.block_size(0)).setOnes();
  const int head = model.head_block();
  mask.segment(model.block_offset(head), model.block_size(head)).setOnes();
  const double scale = static_cast<double>(st.n_middle) / static_cast<double>(st.gamma);
  for (int layer : st.active) {
    const int b = 1 + layer;
    mask.segment(model.block_offset(b), model.block_size(b)).setConstant(scale);
  }
  return mask;
}

// Per-sample model gradient with the current period's freeze/rescale applied
// in place: frozen middle blocks are zeroed, active middle blocks are scaled
// by n_middle / gamma, embedding and head pass through untouched.
inline void masked_model_gradient(const LayerPoolState& st, const LayeredModel& model,
                                  const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                                  double y, Eigen::VectorXd& grad) {
  if (model.n_middle() != st.n_middle) {
    throw std::invalid_argument("masked_model_gradient: model/pool middle-layer mismatch");
  }
  model.gradient(theta, x, y, grad);
  const double scale = static_cast<double>(st.n_middle) / static_cast<double>(st.gamma);
  std::size_t a = 0;
  for (int layer = 0; layer < st.n_middle; ++layer) {
    const int b = 1 + layer;
    auto seg = grad.segment(model.block_offset(b), model.block_size(b));
    if (a < st.active.size() && st.active[a] == layer) {
      seg *= scale;
      ++a;
    } else {
      seg.setZero();
    }
  }
}

struct PeriodLogEntry {
  int period = 0;
  std::int64_t start_step = 0;
  std::vector<int> active;
  int leftover_discarded = -1;  // pool size discarded if this period reset it
};

enum class PeriodSampling {
  WithoutReplacement,  // pool semantics above
  Independent,         // fresh uniform gamma-subset every period
};

struct LisaConfig {
  int gamma = 1;
  std::int64_t period_length = 1;  // in units below
  bool period_in_epochs = true;    // period_length counts epochs (else steps)
  std::int64_t horizon = 0;        // total steps T
  StepSchedule schedule = StepSchedule::constant(1e-2);
  std::uint64_t seed = 0;
  std::vector<std::int64_t> checkpoints;  // empty: 64 geometric points
  PeriodSampling sampling = PeriodSampling::WithoutReplacement;
};

// Layer-wise training loop: reshuffled SGD over the dataset where each
// period's active middle layers come from the without-replacement pool.
// Records mean loss (subopt column) and full-gradient norm at checkpoints.
inline RunTrace lisa_wor_train(const LayeredModel& model, const Eigen::VectorXd& theta0,
                               const SampleSet& data, const LisaConfig& cfg,
                               std::vector<PeriodLogEntry>* period_log = nullptr,
                               Eigen::VectorXd* theta_out = nullptr) {
  if (model.input_dim() != data.d()) {
    throw std::invalid_argument("lisa_wor_train: model/data input dimension mismatch");
  }
  if (theta0.size() != model.n_params()) {
    throw std::invalid_argument("lisa_wor_train: theta0 dimension mismatch");
  }
  if (cfg.horizon < 0) throw std::invalid_argument("lisa_wor_train: horizon must be >= 0");
  if (cfg.period_length < 1) {
    throw std::invalid_argument("lisa_wor_train: period_length must be >= 1");
  }
  if (cfg.schedule.step_limit() >= 0 && cfg.horizon > cfg.schedule.step_limit()) {
    throw std::invalid_argument("lisa_wor_train: horizon exceeds staged schedule budget");
  }
  const int n = data.n();
  const std::int64_t period_steps =
      cfg.period_in_epochs ? cfg.period_length * static_cast<std::int64_t>(n)
                           : cfg.period_length;

  std::vector<std::int64_t> checkpoints = cfg.checkpoints;
  if (checkpoints.empty()) {
    checkpoints = cfg.horizon == 0 ? std::vector<std::int64_t>{0}
                                   : geometric_checkpoints(64, cfg.horizon);
  }
  std::int64_t prev = -1;
  for (std::int64_t t : checkpoints) {
    if (t < 0 || t > cfg.horizon || t <= prev) {
      throw std::invalid_argument("lisa_wor_train: bad checkpoint list");
    }
    prev = t;
  }

  const Rng root(cfg.seed);
  Rng order_rng = root.split(stream::data_order);
  Rng layer_rng = root.split(stream::layers);

  LayerPoolState pool = make_layer_pool(model.n_middle(), cfg.gamma);
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd grad(model.n_params());

  std::vector<int> epoch(static_cast<std::size_t>(n));
  std::size_t epoch_pos = static_cast<std::size_t>(n);

  RunTrace trace;
  trace.estimator = "lisa_wor";
  trace.seed = cfg.seed;
  trace.points.reserve(checkpoints.size());

  const auto record_point = [&](std::int64_t t) {
    TracePoint pt;
    pt.t = t;
    pt.subopt = model.mean_loss(theta, data);
    pt.grad_norm_sq = model.mean_gradient(theta, data).squaredNorm();
    trace.points.push_back(pt);
  };

  std::size_t next_ckpt = 0;
  for (std::int64_t t = 0; t < cfg.horizon; ++t) {
    if (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] == t) {
      record_point(t);
      ++next_ckpt;
    }
    if (t % period_steps == 0) {
      const int before_resets = pool.resets;
      if (cfg.sampling == PeriodSampling::WithoutReplacement) {
        advance_period(pool, layer_rng);
      } else {
        // Independent periods: fresh pool every time, so each period is a
        // uniform gamma-subset regardless of history.
        LayerPoolState fresh = make_layer_pool(model.n_middle(), cfg.gamma);
        advance_period(fresh, layer_rng);
        fresh.periods = pool.periods + 1;
        fresh.resets = pool.resets;
        pool = std::move(fresh);
      }
      if (period_log != nullptr) {
        PeriodLogEntry entry;
        entry.period = pool.periods;
        entry.start_step = t;
        entry.active = pool.active;
        if (cfg.sampling == PeriodSampling::WithoutReplacement &&
            pool.resets > before_resets) {
          entry.leftover_discarded = pool.last_leftover;
        }
        period_log->push_back(entry);
      }
    }

    if (epoch_pos >= epoch.size()) {
      for (int i = 0; i < n; ++i) epoch[static_cast<std::size_t>(i)] = i;
      order_rng.shuffle(epoch);
      epoch_pos = 0;
    }
    const int i = epoch[epoch_pos++];

    masked_model_gradient(pool, model, theta, data.xs.col(i), data.ys[i], grad);
    theta -= cfg.schedule.eta_at(t) * grad;

    if ((t & 255) == 0 && !theta.allFinite()) {
      throw std::runtime_error("lisa_wor_train: non-finite parameter at t=" +
                               std::to_string(t));
    }
  }
  if (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] == cfg.horizon) {
    record_point(cfg.horizon);
  }
  if (theta_out != nullptr) *theta_out = theta;
  return trace;
}

// Plain full-parameter reshuffled SGD with the same data-order discipline;
// lisa_wor_train with gamma == n_middle reproduces it bit for bit.
inline RunTrace sgd_train(const LayeredModel& model, const Eigen::VectorXd& theta0,
                          const SampleSet& data, const StepSchedule& schedule,
                          std::int64_t horizon, std::uint64_t seed,
                          const std::vector<std::int64_t>& checkpoints_in = {},
                          Eigen::VectorXd* theta_out = nullptr) {
  if (theta0.size() != model.n_params()) {
    throw std::invalid_argument("sgd_train: theta0 dimension mismatch");
  }
  const int n = data.n();
  std::vector<std::int64_t> checkpoints = checkpoints_in;
  if (checkpoints.empty()) {
    checkpoints = horizon == 0 ? std::vector<std::int64_t>{0}
                               : geometric_checkpoints(64, horizon);
  }
  const Rng root(seed);
  Rng order_rng = root.split(stream::data_order);
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd grad(model.n_params());
  std::vector<int> epoch(static_cast<std::size_t>(n));
  std::size_t epoch_pos = static_cast<std::size_t>(n);

  RunTrace trace;
  trace.estimator = "sgd";
  trace.seed = seed;

  const auto record_point = [&](std::int64_t t) {
    TracePoint pt;
    pt.t = t;
    pt.subopt = model.mean_loss(theta, data);
    pt.grad_norm_sq = model.mean_gradient(theta, data).squaredNorm();
    trace.points.push_back(pt);
  };

  std::size_t next_ckpt = 0;
  for (std::int64_t t = 0; t < horizon; ++t) {
    if (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] == t) {
      record_point(t);
      ++next_ckpt;
    }
    if (epoch_pos >= epoch.size()) {
      for (int i = 0; i < n; ++i) epoch[static_cast<std::size_t>(i)] = i;
      order_rng.shuffle(epoch);
      epoch_pos = 0;
    }
    const int i = epoch[epoch_pos++];
    model.gradient(theta, data.xs.col(i), data.ys[i], grad);
    theta -= schedule.eta_at(t) * grad;
  }
  if (next_ckpt < checkpoints.size() && checkpoints[next_ckpt] == horizon) {
    record_point(horizon);
  }
  if (theta_out != nullptr) *theta_out = theta;
  return trace;
}

// Period log CSV: one row per period with the active layers and, when the
// period triggered a pool reset, the number of leftover layers discarded.
inline std::string period_log_to_csv(const std::vector<PeriodLogEntry>& log) {
  std::string out = "period,start_step,active_layers,leftover_discarded\n";
  for (const PeriodLogEntry& e : log) {
    out += std::to_string(e.period);
    out += ',';
    out += std::to_string(e.start_step);
    out += ',';
    for (std::size_t i = 0; i < e.active.size(); ++i) {
      if (i > 0) out += ';';
      out += std::to_string(e.active[i]);
    }
    out += ',';
    if (e.leftover_discarded >= 0) out += std::to_string(e.leftover_discarded);
    out += '\n';
  }
  return out;
}

}  // namespace omgd
