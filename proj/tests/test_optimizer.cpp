#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "omgd/optimizer.hpp"
#include "omgd/trace.hpp"

using namespace omgd;

namespace {

LeastSquaresProblem toy_problem(int n, int d, std::uint64_t seed, double noise = 0.5) {
  return synth_regression({n, d, noise, seed});
}

// Orthonormal two-sample problem with A = I: every quantity is computable by
// hand.  x0 = e0, x1 = e1, y = (2, -1), so theta_star = (2, -1).
LeastSquaresProblem axis_problem() {
  SampleSet s;
  s.xs = Eigen::MatrixXd::Identity(2, 2);
  s.ys.resize(2);
  s.ys << 2.0, -1.0;
  return build_problem(std::move(s));
}

struct StepCapture {
  std::int64_t t = 0;
  double eta = 0.0;
  int sample = 0;
  bool warmup = false;
  bool has_mask = false;
  Eigen::VectorXd mask;
  Eigen::VectorXd grad_sample;
  Eigen::VectorXd g;
  Eigen::VectorXd theta_before;
};

std::vector<StepCapture> capture_run(const LeastSquaresProblem& p, const RunConfig& cfg,
                                     RunTrace* trace_out = nullptr) {
  std::vector<StepCapture> steps;
  StepObserver obs = [&](const StepInfo& info) {
    StepCapture c;
    c.t = info.t;
    c.eta = info.eta;
    c.sample = info.sample;
    c.warmup = info.warmup;
    if (info.mask != nullptr) {
      c.has_mask = true;
      c.mask = *info.mask;
    }
    c.grad_sample = info.grad_sample;
    c.g = info.g;
    c.theta_before = info.theta_before;
    steps.push_back(std::move(c));
  };
  RunTrace trace = run_estimator(p, cfg, &obs);
  if (trace_out != nullptr) *trace_out = std::move(trace);
  return steps;
}

bool points_identical(const RunTrace& a, const RunTrace& b) {
  if (a.points.size() != b.points.size()) return false;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    const TracePoint& x = a.points[i];
    const TracePoint& y = b.points[i];
    if (x.t != y.t || x.theta_err_sq != y.theta_err_sq ||
        x.grad_norm_sq != y.grad_norm_sq || x.subopt != y.subopt) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("estimator names and parsing round-trip") {
  for (const char* name :
       {"iid", "rr", "iid_mask_iid", "rr_mask_iid", "rr_mask_wor", "rr_proj"}) {
    CHECK(EstimatorKind::parse(name, 0.5, 2).name() == name);
  }
  CHECK_THROWS_AS(EstimatorKind::parse("sgd", 0.5, 0), std::invalid_argument);
  CHECK(EstimatorKind::rr_mask_wor(0.5).effective_mask_count() == 2);
  CHECK(EstimatorKind::rr_mask_wor(0.25).effective_mask_count() == 4);
  CHECK(EstimatorKind::rr_mask_wor(0.3).effective_mask_count() == 4);  // ceil(1/0.3)
  CHECK(EstimatorKind::rr_mask_wor(0.5, 5).effective_mask_count() == 5);
  CHECK(EstimatorKind::rr().effective_mask_count() == 0);
}

TEST_CASE("single-mask cycles reproduce plain reshuffling bit for bit") {
  const LeastSquaresProblem p = toy_problem(8, 3, 11);
  RunConfig base;
  base.schedule = StepSchedule::diminishing(0.5, 20);
  base.horizon = 53;  // deliberately not a multiple of the epoch length
  base.seed = 77;
  base.checkpoints = {0, 1, 7, 8, 16, 31, 53};

  RunConfig rr = base;
  rr.estimator = EstimatorKind::rr();
  RunConfig wor = base;
  wor.estimator = EstimatorKind::rr_mask_wor(1.0, 1);

  const RunTrace a = run_estimator(p, rr);
  const RunTrace b = run_estimator(p, wor);
  CHECK(points_identical(a, b));
  CHECK(b.partial_final_cycle == true);  // 53 % 8 != 0

  // the same holds across a warm-up boundary
  rr.schedule = StepSchedule::diminishing(0.5, 20, 13);
  wor.schedule = rr.schedule;
  CHECK(points_identical(run_estimator(p, rr), run_estimator(p, wor)));
}

TEST_CASE("full keep-ratio iid masks reproduce the uncompressed run bit for bit") {
  const LeastSquaresProblem p = toy_problem(6, 4, 21);
  RunConfig base;
  base.schedule = StepSchedule::constant(0.02, 5);
  base.horizon = 40;
  base.seed = 3;
  base.checkpoints = {0, 10, 20, 40};

  SECTION("reshuffled sampling") {
    RunConfig plain = base, masked = base;
    plain.estimator = EstimatorKind::rr();
    masked.estimator = EstimatorKind::rr_mask_iid(1.0);
    CHECK(points_identical(run_estimator(p, plain), run_estimator(p, masked)));
  }
  SECTION("independent sampling") {
    RunConfig plain = base, masked = base;
    plain.estimator = EstimatorKind::iid();
    masked.estimator = EstimatorKind::iid_mask_iid(1.0);
    CHECK(points_identical(run_estimator(p, plain), run_estimator(p, masked)));
  }
}

TEST_CASE("masked cycle run matches an independent replica of its draw chain") {
  const LeastSquaresProblem p = axis_problem();
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  cfg.schedule = StepSchedule::constant(0.1);
  cfg.horizon = 8;  // two full cycles of M*N = 4 steps
  cfg.seed = 99;
  cfg.checkpoints = {0, 4, 8};

  RunTrace trace;
  const auto steps = capture_run(p, cfg, &trace);
  REQUIRE(steps.size() == 8);

  // Replica: same seed, same stream discipline, same draw functions.
  const Rng root(99);
  Rng order_rng = root.split(stream::data_order);
  Rng mask_rng = root.split(stream::mask);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(2);
  std::size_t k = 0;
  for (int cycle = 0; cycle < 2; ++cycle) {
    const MaskSet set = generate_disjoint_masks(2, 2, {}, mask_rng);
    const TraversalSchedule trav = generate_traversal(2, 2, order_rng);
    for (const auto& [j, i] : trav.order) {
      const StepCapture& c = steps[k++];
      CHECK(c.sample == i);
      REQUIRE(c.has_mask);
      CHECK(c.mask == set.masks[j].values);
      CHECK(c.theta_before == theta);
      const Eigen::VectorXd grad = p.samples.sample_gradient(theta, i);
      CHECK(c.grad_sample == grad);
      const Eigen::VectorXd g = set.masks[j].values.cwiseProduct(grad);
      CHECK(c.g == g);
      theta -= 0.1 * g;
    }
  }
  // the recorded final checkpoint agrees with the replica's end state
  CHECK(trace.points.back().theta_err_sq == (theta - p.theta_star).squaredNorm());
}

TEST_CASE("masked step arithmetic matches scalar hand computation") {
  const LeastSquaresProblem p = axis_problem();
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  cfg.schedule = StepSchedule::constant(0.25);
  cfg.horizon = 4;
  cfg.seed = 5;
  cfg.checkpoints = {4};

  const auto steps = capture_run(p, cfg);
  for (const StepCapture& c : steps) {
    REQUIRE(c.has_mask);
    const int i = c.sample;
    // gradient of (x_i^T theta - y_i)^2 at e_i is 2 (theta_i - y_i) e_i
    const double resid = c.theta_before[i] - p.samples.ys[i];
    for (int coord = 0; coord < 2; ++coord) {
      const double grad_c = coord == i ? 2.0 * resid : 0.0;
      CHECK(c.grad_sample[coord] == Catch::Approx(grad_c).margin(1e-15));
      CHECK(c.g[coord] == Catch::Approx(c.mask[coord] * grad_c).margin(1e-15));
      if (c.mask[coord] == 0.0) CHECK(c.g[coord] == 0.0);
    }
  }
}

TEST_CASE("every cycle touches each pair of the mask-sample grid once") {
  const LeastSquaresProblem p = toy_problem(3, 2, 31);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  cfg.schedule = StepSchedule::constant(0.01, 2);  // warmup 2
  cfg.horizon = 2 + 2 * (2 * 3);                   // warmup + two cycles
  cfg.seed = 8;
  cfg.checkpoints = {cfg.horizon};

  RunTrace trace;
  const auto steps = capture_run(p, cfg, &trace);
  REQUIRE(steps.size() == static_cast<std::size_t>(cfg.horizon));

  CHECK(steps[0].warmup);
  CHECK(steps[1].warmup);
  CHECK_FALSE(steps[0].has_mask);
  CHECK_FALSE(steps[1].has_mask);

  for (int cycle = 0; cycle < 2; ++cycle) {
    std::map<int, int> sample_counts;
    std::set<std::pair<std::string, int>> pairs;  // (mask bytes, sample)
    for (int s = 0; s < 6; ++s) {
      const StepCapture& c = steps[2 + cycle * 6 + s];
      CHECK_FALSE(c.warmup);
      REQUIRE(c.has_mask);
      ++sample_counts[c.sample];
      std::ostringstream key;
      key << c.mask.transpose();
      pairs.insert({key.str(), c.sample});
    }
    // each sample appears M = 2 times, each (mask, sample) pair once
    REQUIRE(sample_counts.size() == 3);
    for (const auto& [sample, count] : sample_counts) CHECK(count == 2);
    CHECK(pairs.size() == 6);
  }
  CHECK_FALSE(trace.partial_final_cycle);

  // truncating the run mid-cycle sets the flag
  cfg.horizon = 2 + 7;
  cfg.checkpoints = {cfg.horizon};
  RunTrace partial;
  capture_run(p, cfg, &partial);
  CHECK(partial.partial_final_cycle);
}

TEST_CASE("reshuffled sampling visits every sample exactly once per epoch") {
  const LeastSquaresProblem p = toy_problem(5, 3, 41);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr();
  cfg.schedule = StepSchedule::constant(0.01);
  cfg.horizon = 20;  // 4 epochs
  cfg.seed = 12;
  cfg.checkpoints = {20};

  const auto steps = capture_run(p, cfg);
  for (int epoch = 0; epoch < 4; ++epoch) {
    std::set<int> seen;
    for (int s = 0; s < 5; ++s) seen.insert(steps[epoch * 5 + s].sample);
    CHECK(seen.size() == 5);
  }
}

TEST_CASE("independent sampling is uniform") {
  const LeastSquaresProblem p = toy_problem(5, 3, 43);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::iid();
  cfg.schedule = StepSchedule::constant(1e-4);
  cfg.horizon = 20000;
  cfg.seed = 13;
  cfg.checkpoints = {cfg.horizon};

  const auto steps = capture_run(p, cfg);
  std::map<int, int> counts;
  for (const auto& c : steps) ++counts[c.sample];
  REQUIRE(counts.size() == 5);
  // mean 4000, sd = sqrt(20000 * 0.2 * 0.8) ~ 56.6; allow 5 sd
  for (const auto& [sample, count] : counts) CHECK(std::abs(count - 4000) < 283);
}

TEST_CASE("constant-step run contracts the error to its noise floor") {
  const LeastSquaresProblem p = toy_problem(20, 4, 51);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  // stable for every per-sample step: eta * M * L_max < 1
  const double eta = 0.5 / (2.0 * p.max_sample_smoothness());
  cfg.schedule = StepSchedule::constant(eta);
  cfg.horizon = 4000;
  cfg.seed = 17;
  Eigen::VectorXd far = p.theta_star;
  far.array() += 10.0;
  cfg.theta0 = far;
  cfg.checkpoints = {0, 500, 1000, 2000, 4000};

  const RunTrace trace = run_estimator(p, cfg);
  const double first = trace.points.front().theta_err_sq;
  const double last = trace.points.back().theta_err_sq;
  CHECK(first == Catch::Approx(400.0));  // 4 coordinates shifted by 10
  CHECK(last < first * 1e-3);
  // after the initial decay the error never rebounds above its floor scale
  for (std::size_t i = 2; i < trace.points.size(); ++i) {
    CHECK(trace.points[i].theta_err_sq < first * 0.05);
  }
}

TEST_CASE("diminishing-step error trend decays like the step envelope") {
  const LeastSquaresProblem p = toy_problem(50, 5, 61);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr();
  const double c0 = 4.0 / p.lambda_min;
  const auto t_offset =
      static_cast<std::int64_t>(std::ceil(c0 * p.max_sample_smoothness()));
  cfg.schedule = StepSchedule::diminishing(c0, t_offset);
  cfg.horizon = 200000;
  cfg.seed = 19;
  cfg.checkpoints = {1000, 10000, 100000, 200000};

  const RunTrace trace = run_estimator(p, cfg);
  // between t=1e4 and t=2e5 the squared error should fall by far more than
  // the 1/t baseline (reshuffling gives ~1/t^2)
  const double early = trace.points[1].theta_err_sq;
  const double late = trace.points.back().theta_err_sq;
  CHECK(late < early / 100.0);
}

TEST_CASE("decomposition of an uncompressed run has exactly zero compression part") {
  const LeastSquaresProblem p = toy_problem(10, 4, 71);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr();
  cfg.schedule = StepSchedule::constant(0.005);
  cfg.horizon = 300;
  cfg.seed = 23;
  cfg.decomposition = true;
  cfg.checkpoints = {0, 100, 200, 300};

  const RunTrace trace = run_estimator(p, cfg);
  for (const TracePoint& pt : trace.points) {
    CHECK(pt.compress_sq == 0.0);  // g == grad_sample bitwise, injection is zero
  }
  CHECK(trace.max_reconstruction_ratio < 1e-10);
  CHECK(trace.decomposition);

  // masked runs reconstruct too, with nonzero compression residual
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  cfg.schedule = StepSchedule::constant(0.5 / (2.0 * p.max_sample_smoothness()));
  const RunTrace masked = run_estimator(p, cfg);
  CHECK(masked.max_reconstruction_ratio < 1e-10);
  CHECK(masked.points.back().compress_sq > 0.0);
}

TEST_CASE("horizon zero records the initial point only") {
  const LeastSquaresProblem p = toy_problem(6, 2, 81);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr();
  cfg.horizon = 0;
  cfg.seed = 1;
  const RunTrace trace = run_estimator(p, cfg);
  REQUIRE(trace.points.size() == 1);
  CHECK(trace.points[0].t == 0);
  CHECK(trace.points[0].theta_err_sq ==
        Catch::Approx(p.theta_star.squaredNorm()).epsilon(1e-14));
}

TEST_CASE("run validation rejects inconsistent configurations") {
  const LeastSquaresProblem p = toy_problem(6, 4, 91);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr();
  cfg.schedule = StepSchedule::constant(0.01);
  cfg.horizon = 10;
  cfg.seed = 1;

  SECTION("negative horizon") {
    cfg.horizon = -1;
    CHECK_THROWS_AS(run_estimator(p, cfg), std::invalid_argument);
  }
  SECTION("theta0 dimension mismatch") {
    cfg.theta0 = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(run_estimator(p, cfg), std::invalid_argument);
  }
  SECTION("checkpoints out of range") {
    cfg.checkpoints = {0, 11};
    CHECK_THROWS_AS(run_estimator(p, cfg), std::invalid_argument);
  }
  SECTION("checkpoints not increasing") {
    cfg.checkpoints = {5, 5};
    CHECK_THROWS_AS(run_estimator(p, cfg), std::invalid_argument);
  }
  SECTION("keep ratio does not split the dimension") {
    cfg.estimator = EstimatorKind::rr_mask_iid(0.3);  // 0.3 * 4 = 1.2
    CHECK_THROWS_AS(run_estimator(p, cfg), std::invalid_argument);
  }
  SECTION("horizon beyond a staged budget") {
    cfg.schedule = StepSchedule::staged({{0.01, 6}});
    cfg.horizon = 7;
    CHECK_THROWS_AS(run_estimator(p, cfg), std::invalid_argument);
    cfg.horizon = 6;
    CHECK_NOTHROW(run_estimator(p, cfg));
  }
}

TEST_CASE("diverging runs abort with a partial trace") {
  const LeastSquaresProblem p = toy_problem(10, 3, 95);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr();
  cfg.schedule = StepSchedule::constant(1e6);  // wildly unstable
  cfg.horizon = 100000;
  cfg.seed = 2;
  cfg.checkpoints = {0, 1, 2, 50000, 100000};

  try {
    run_estimator(p, cfg);
    FAIL("expected RunAbort");
  } catch (const RunAbort& abort) {
    CHECK(std::string(abort.what()).find("non-finite") != std::string::npos);
    CHECK(abort.partial_trace.points.size() >= 1);
    CHECK(abort.partial_trace.points.size() < 5);
  }
}

TEST_CASE("runs are reproducible and seeds matter") {
  const LeastSquaresProblem p = toy_problem(12, 4, 97);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  cfg.schedule = StepSchedule::diminishing(1.0, 50);
  cfg.horizon = 500;
  cfg.seed = 41;
  cfg.checkpoints = {0, 100, 500};

  const RunTrace a = run_estimator(p, cfg);
  const RunTrace b = run_estimator(p, cfg);
  CHECK(points_identical(a, b));
  CHECK(trace_to_csv(a) == trace_to_csv(b));  // byte-identical serialization

  cfg.seed = 42;
  const RunTrace c = run_estimator(p, cfg);
  CHECK_FALSE(points_identical(a, c));
}

TEST_CASE("trace CSV round-trips through the parser") {
  const LeastSquaresProblem p = toy_problem(9, 4, 101);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_mask_wor(0.5, 2);
  cfg.schedule = StepSchedule::constant(0.01);
  cfg.horizon = 100;
  cfg.seed = 7;
  cfg.decomposition = true;
  cfg.checkpoints = {0, 50, 100};

  const RunTrace trace = run_estimator(p, cfg);
  const std::string text = trace_to_csv(trace);
  std::istringstream is(text);
  const RunTrace back = trace_from_csv(is);

  CHECK(back.estimator == trace.estimator);
  CHECK(back.seed == trace.seed);
  CHECK(back.decomposition == trace.decomposition);
  CHECK(back.partial_final_cycle == trace.partial_final_cycle);
  REQUIRE(back.points.size() == trace.points.size());
  for (std::size_t i = 0; i < trace.points.size(); ++i) {
    CHECK(back.points[i].t == trace.points[i].t);
    CHECK(back.points[i].theta_err_sq == trace.points[i].theta_err_sq);
    CHECK(back.points[i].grad_norm_sq == trace.points[i].grad_norm_sq);
    CHECK(back.points[i].subopt == trace.points[i].subopt);
    CHECK(back.points[i].decay_sq == trace.points[i].decay_sq);
    CHECK(back.points[i].reshuffle_sq == trace.points[i].reshuffle_sq);
    CHECK(back.points[i].compress_sq == trace.points[i].compress_sq);
  }

  // decomposition off leaves the split columns empty but parseable
  cfg.decomposition = false;
  const RunTrace plain = run_estimator(p, cfg);
  const std::string plain_text = trace_to_csv(plain);
  std::istringstream is2(plain_text);
  const RunTrace back2 = trace_from_csv(is2);
  CHECK_FALSE(back2.decomposition);
  CHECK(back2.points.back().decay_sq == 0.0);
}

TEST_CASE("projector estimator stays unbiased and converges") {
  const LeastSquaresProblem p = toy_problem(30, 6, 103);
  RunConfig cfg;
  cfg.estimator = EstimatorKind::rr_proj(0.5);
  const double c0 = 4.0 / p.lambda_min;
  cfg.schedule = StepSchedule::diminishing(
      c0, static_cast<std::int64_t>(std::ceil(c0 * 2.0 * p.max_sample_smoothness())));
  cfg.horizon = 50000;
  cfg.seed = 29;
  cfg.checkpoints = {100, 50000};

  const RunTrace trace = run_estimator(p, cfg);
  CHECK(trace.points.back().theta_err_sq < trace.points.front().theta_err_sq / 50.0);
}
