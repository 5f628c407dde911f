#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace omgd {

// Accumulation constants used by the window bounds and step-size recipes:
// given per-sample deviation constants (C1, C2) with
//   ||grad f(theta; z) - grad F(theta)||^2 <= C1^2 + C2^2 ||grad F(theta)||^2,
// the cycle-window constants are
//   C   = 2 M^{3/2} N C1,
//   Phi = 2 M^{3/2} N sqrt(C2^2 + 1).
struct WindowConstants {
  double C = 0.0;
  double Phi = 0.0;
};

inline WindowConstants window_constants(double c1, double c2, int mask_count,
                                        int sample_count) {
  if (c1 < 0.0 || c2 < 0.0) {
    throw std::invalid_argument("window_constants: C1 and C2 must be non-negative");
  }
  if (mask_count < 1 || sample_count < 1) {
    throw std::invalid_argument("window_constants: M and N must be >= 1");
  }
  const double m = static_cast<double>(mask_count);
  const double n = static_cast<double>(sample_count);
  const double scale = 2.0 * m * std::sqrt(m) * n;
  return {scale * c1, scale * std::sqrt(c2 * c2 + 1.0)};
}

// One constant-step stage of a staged schedule.
struct Stage {
  double eta = 0.0;
  std::int64_t duration = 0;
};

// Step-size schedule.  Kinds:
//   Constant:    eta_t = eta
//   Diminishing: eta_t = c0 / (t + t_offset); c1 records the matching upper
//                envelope constant (eta_t <= c1 / t for t >= 1)
//   Staged:      piecewise-constant stages with non-increasing step sizes
// warmup_steps is carried with the schedule: for the first warmup_steps
// iterations a run samples in plain reshuffled order and applies no
// compression; the step-size law above applies throughout.
class StepSchedule {
 public:
  enum class Kind { Constant, Diminishing, Staged };

  static StepSchedule constant(double eta, std::int64_t warmup = 0) {
    if (!(eta > 0.0)) throw std::invalid_argument("StepSchedule: eta must be positive");
    StepSchedule s;
    s.kind_ = Kind::Constant;
    s.eta_ = eta;
    s.set_warmup(warmup);
    return s;
  }

  static StepSchedule diminishing(double c0, std::int64_t t_offset,
                                  std::int64_t warmup = 0) {
    if (!(c0 > 0.0)) throw std::invalid_argument("StepSchedule: c0 must be positive");
    if (t_offset < 1) {
      throw std::invalid_argument("StepSchedule: t_offset must be >= 1");
    }
    StepSchedule s;
    s.kind_ = Kind::Diminishing;
    s.c0_ = c0;
    s.c1_ = c0;  // c0/(t+t_offset) <= c0/t for all t >= 1
    s.t_offset_ = t_offset;
    s.set_warmup(warmup);
    return s;
  }

  static StepSchedule staged(std::vector<Stage> stages, std::int64_t warmup = 0) {
    if (stages.empty()) throw std::invalid_argument("StepSchedule: no stages");
    double prev = std::numeric_limits<double>::infinity();
    std::int64_t total = 0;
    for (const Stage& st : stages) {
      if (!(st.eta > 0.0)) {
        throw std::invalid_argument("StepSchedule: stage eta must be positive");
      }
      if (st.duration <= 0) {
        throw std::invalid_argument("StepSchedule: stage duration must be positive");
      }
      if (st.eta > prev) {
        throw std::invalid_argument("StepSchedule: stage steps must be non-increasing");
      }
      prev = st.eta;
      if (total > std::numeric_limits<std::int64_t>::max() - st.duration) {
        throw std::overflow_error("StepSchedule: staged total overflows");
      }
      total += st.duration;
    }
    StepSchedule s;
    s.kind_ = Kind::Staged;
    s.stages_ = std::move(stages);
    s.staged_total_ = total;
    s.set_warmup(warmup);
    return s;
  }

  Kind kind() const { return kind_; }
  std::int64_t warmup_steps() const { return warmup_; }
  double constant_eta() const { return eta_; }
  double c0() const { return c0_; }
  double c1() const { return c1_; }
  std::int64_t t_offset() const { return t_offset_; }
  const std::vector<Stage>& stages() const { return stages_; }

  // Total step budget of a staged schedule; unlimited kinds return -1.
  std::int64_t step_limit() const {
    return kind_ == Kind::Staged ? staged_total_ : -1;
  }

  // eta_t for t >= 0.  Staged schedules exhaust: asking beyond their total
  // duration is an error surfaced to the caller (runs must not outlive them).
  double eta_at(std::int64_t t) const {
    if (t < 0) throw std::invalid_argument("StepSchedule::eta_at: negative t");
    switch (kind_) {
      case Kind::Constant:
        return eta_;
      case Kind::Diminishing:
        return c0_ / static_cast<double>(t + t_offset_);
      case Kind::Staged: {
        std::int64_t pos = t;
        for (const Stage& st : stages_) {
          if (pos < st.duration) return st.eta;
          pos -= st.duration;
        }
        throw std::out_of_range("StepSchedule::eta_at: staged schedule exhausted at t=" +
                                std::to_string(t));
      }
    }
    throw std::logic_error("StepSchedule::eta_at: unreachable");
  }

 private:
  void set_warmup(std::int64_t warmup) {
    if (warmup < 0) throw std::invalid_argument("StepSchedule: warmup must be >= 0");
    warmup_ = warmup;
  }

  Kind kind_ = Kind::Constant;
  double eta_ = 0.0;
  double c0_ = 0.0;
  double c1_ = 0.0;
  std::int64_t t_offset_ = 1;
  std::vector<Stage> stages_;
  std::int64_t staged_total_ = 0;
  std::int64_t warmup_ = 0;
};

// Constant-step recipe for smooth non-convex objectives: with smoothness L,
// masks-per-cycle M, window constants (C, Phi), target accuracy eps and
// initial gap Delta,
//   eta = 1 / (6 L M (ceil(4C/eps) + ceil(3 Phi))),
//   T   = ceil(48 Delta L M / eps^2) * (ceil(4C/eps) + ceil(3 Phi)),
// so T = O(eps^-3).  When both ceilings vanish the term count is clamped to 1
// to keep eta finite.
struct StepPlan {
  double eta = 0.0;
  double steps = 0.0;  // exact integer value while it fits a double
};

namespace detail {

inline double checked_ceil(double x, const char* what) {
  if (!(x >= 0.0) || !std::isfinite(x)) {
    throw std::invalid_argument(std::string("step plan: ") + what +
                                " must be finite and non-negative");
  }
  return std::ceil(x);
}

}  // namespace detail

inline StepPlan nonconvex_step_plan(double smoothness, int mask_count, double c,
                                    double phi, double eps, double delta) {
  if (!(smoothness > 0.0)) throw std::invalid_argument("step plan: L must be positive");
  if (mask_count < 1) throw std::invalid_argument("step plan: M must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("step plan: eps must be positive");
  if (delta < 0.0) throw std::invalid_argument("step plan: Delta must be non-negative");
  const double lm = smoothness * static_cast<double>(mask_count);
  double terms = detail::checked_ceil(4.0 * c / eps, "4C/eps") +
                 detail::checked_ceil(3.0 * phi, "3Phi");
  if (terms < 1.0) terms = 1.0;
  StepPlan plan;
  plan.eta = 1.0 / (6.0 * lm * terms);
  plan.steps = detail::checked_ceil(48.0 * delta * lm / (eps * eps), "48 Delta L M / eps^2") *
               terms;
  return plan;
}

// Constant-step recipe under a mu-PL inequality:
//   eta = 1 / (6 L M (ceil(sqrt(8 C^2 / (mu eps^2))) + ceil(3 Phi))),
//   T   = (ceil(sqrt(8 C^2 / (mu eps^2))) + ceil(3 Phi))
//         * ceil((12 L M / mu) log(2 Delta / eps^2)),
// giving T = O~(eps^-1).
inline StepPlan pl_step_plan(double smoothness, int mask_count, double c, double phi,
                             double eps, double delta, double mu) {
  if (!(smoothness > 0.0)) throw std::invalid_argument("step plan: L must be positive");
  if (mask_count < 1) throw std::invalid_argument("step plan: M must be >= 1");
  if (!(eps > 0.0)) throw std::invalid_argument("step plan: eps must be positive");
  if (!(mu > 0.0)) throw std::invalid_argument("step plan: mu must be positive");
  if (delta < 0.0) throw std::invalid_argument("step plan: Delta must be non-negative");
  const double lm = smoothness * static_cast<double>(mask_count);
  double terms = detail::checked_ceil(std::sqrt(8.0 * c * c / (mu * eps * eps)),
                                      "sqrt(8C^2/(mu eps^2))") +
                 detail::checked_ceil(3.0 * phi, "3Phi");
  if (terms < 1.0) terms = 1.0;
  const double log_arg = 2.0 * delta / (eps * eps);
  const double rounds =
      detail::checked_ceil((12.0 * lm / mu) * std::log(std::max(log_arg, 1.0)),
                           "(12LM/mu) log(2 Delta/eps^2)");
  StepPlan plan;
  plan.eta = 1.0 / (6.0 * lm * terms);
  plan.steps = terms * std::max(rounds, 1.0);
  return plan;
}

// Staged diminishing schedule for the non-convex regime: stage l = 0..J-1
// runs K_l = 4^l windows of length m_l = ceil(3 Phi) 2^l at step size
// eta_l = 1 / (6 L M m_l); the total budget is ceil(3 Phi) (8^J - 1) / 7.
inline StepSchedule staged_schedule_nonconvex(double phi, int num_stages,
                                              double smoothness, int mask_count,
                                              std::int64_t warmup = 0) {
  if (num_stages < 1) {
    throw std::invalid_argument("staged_schedule_nonconvex: need at least one stage");
  }
  if (!(smoothness > 0.0) || mask_count < 1) {
    throw std::invalid_argument("staged_schedule_nonconvex: bad L or M");
  }
  const double base_d = detail::checked_ceil(3.0 * phi, "3Phi");
  const std::int64_t base = base_d < 1.0 ? 1 : static_cast<std::int64_t>(base_d);
  std::vector<Stage> stages;
  stages.reserve(static_cast<std::size_t>(num_stages));
  for (int l = 0; l < num_stages; ++l) {
    if (l >= 60) throw std::overflow_error("staged_schedule_nonconvex: 8^J overflows");
    const std::int64_t window = base << l;        // m_l
    const std::int64_t repeats = std::int64_t{1} << (2 * l);  // K_l = 4^l
    if (window > std::numeric_limits<std::int64_t>::max() / repeats) {
      throw std::overflow_error("staged_schedule_nonconvex: stage duration overflows");
    }
    Stage st;
    st.duration = window * repeats;  // m_l K_l = base * 8^l
    st.eta = 1.0 / (6.0 * smoothness * static_cast<double>(mask_count) *
                    static_cast<double>(window));
    stages.push_back(st);
  }
  return StepSchedule::staged(std::move(stages), warmup);
}

// Staged schedule for the mu-PL regime: stage l uses window length
// m_l = ceil(3 Phi e^{l/2}), step size 1 / (6 L M m_l), and a fixed number of
// windows per stage K = ceil(12 L M / mu) (one window per linear-decay round).
inline StepSchedule staged_schedule_pl(double phi, int num_stages, double smoothness,
                                       int mask_count, double mu,
                                       std::int64_t warmup = 0) {
  if (num_stages < 1) {
    throw std::invalid_argument("staged_schedule_pl: need at least one stage");
  }
  if (!(smoothness > 0.0) || mask_count < 1 || !(mu > 0.0)) {
    throw std::invalid_argument("staged_schedule_pl: bad L, M, or mu");
  }
  const double lm = smoothness * static_cast<double>(mask_count);
  const double repeats_d = detail::checked_ceil(12.0 * lm / mu, "12LM/mu");
  const std::int64_t repeats = repeats_d < 1.0 ? 1 : static_cast<std::int64_t>(repeats_d);
  std::vector<Stage> stages;
  stages.reserve(static_cast<std::size_t>(num_stages));
  for (int l = 0; l < num_stages; ++l) {
    const double window_d =
        detail::checked_ceil(3.0 * phi * std::exp(0.5 * l), "3Phi e^{l/2}");
    if (window_d > 9e15) throw std::overflow_error("staged_schedule_pl: window overflows");
    const std::int64_t window = window_d < 1.0 ? 1 : static_cast<std::int64_t>(window_d);
    if (window > std::numeric_limits<std::int64_t>::max() / repeats) {
      throw std::overflow_error("staged_schedule_pl: stage duration overflows");
    }
    Stage st;
    st.duration = window * repeats;
    st.eta = 1.0 / (6.0 * lm * static_cast<double>(window));
    stages.push_back(st);
  }
  return StepSchedule::staged(std::move(stages), warmup);
}

}  // namespace omgd
