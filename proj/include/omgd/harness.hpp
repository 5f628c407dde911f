#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "omgd/analysis.hpp"
#include "omgd/config.hpp"
#include "omgd/lisa.hpp"
#include "omgd/optimizer.hpp"
#include "omgd/trace.hpp"
#include "omgd/version.hpp"

namespace omgd {

// --- worker pool -----------------------------------------------------------------

// Runs body(0..jobs-1) on up to `threads` workers (0: hardware concurrency).
// Jobs must write only to their own output slots; the first exception wins,
// remaining jobs are skipped, and the exception is rethrown on the caller.
inline void parallel_for(int jobs, int threads, const std::function<void(int)>& body) {
  if (jobs <= 0) return;
  int workers = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  if (workers < 1) workers = 1;
  workers = std::min(workers, jobs);
  if (workers == 1) {
    for (int i = 0; i < jobs; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto loop = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const int i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= jobs) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int k = 0; k < workers; ++k) pool.emplace_back(loop);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// --- paths and timestamps --------------------------------------------------------

// Relative output directories nest under $OMGD_OUT_ROOT when it is set.
inline std::filesystem::path resolve_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("OMGD_OUT_ROOT"); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / p;
  }
  return p;
}

inline std::string iso8601_now() {
  const std::time_t tt = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// --- schedule resolution ---------------------------------------------------------

struct ResolvedSchedule {
  StepSchedule schedule = StepSchedule::constant(1e-3);
  std::string kind;
  double eta = 0.0;            // constant kind
  double c0 = 0.0;             // diminishing kind
  std::int64_t t_offset = 0;   // diminishing kind
  std::int64_t step_limit = -1;
};

// Turns the schedule section into a concrete StepSchedule.  For the
// diminishing kind, c0 <= 0 resolves to auto_margin / lambda_min (so
// c0 * lambda_min = auto_margin by construction) and t_offset <= 0 resolves to
// ceil(c0 * max(lambda_max, M * L_max)): a single masked step scales the
// sampled gradient by up to the mask count M, so eta_0 must clear the
// worst-case per-sample curvature, not just the mean curvature, or the first
// iterations blow up before the decay tames them.
inline ResolvedSchedule resolve_schedule(const ExperimentConfig& cfg,
                                         const LeastSquaresProblem& problem) {
  ResolvedSchedule rs;
  rs.kind = cfg.schedule_kind;
  if (cfg.schedule_kind == "constant") {
    rs.eta = cfg.eta;
    rs.schedule = StepSchedule::constant(cfg.eta, cfg.warmup);
  } else if (cfg.schedule_kind == "diminishing") {
    double c0 = cfg.c0;
    if (c0 <= 0.0) {
      if (problem.lambda_min <= 0.0) {
        throw ConfigError("schedule: auto c0 needs a positive curvature floor");
      }
      c0 = cfg.auto_margin / problem.lambda_min;
    }
    std::int64_t t_offset = cfg.t_offset;
    if (t_offset <= 0) {
      const double mask_scale =
          cfg.mask_count > 0 ? cfg.mask_count : std::ceil(1.0 / cfg.keep_ratio);
      const double stab = std::max(problem.lambda_max,
                                   std::max(mask_scale, 1.0) * problem.max_sample_smoothness());
      t_offset = static_cast<std::int64_t>(std::ceil(c0 * stab));
    }
    if (t_offset < 1) t_offset = 1;
    rs.c0 = c0;
    rs.t_offset = t_offset;
    rs.schedule = StepSchedule::diminishing(c0, t_offset, cfg.warmup);
  } else if (cfg.schedule_kind == "staged") {
    const int mask_count =
        cfg.mask_count > 0 ? cfg.mask_count
                           : static_cast<int>(std::ceil(1.0 / cfg.keep_ratio));
    rs.schedule = staged_schedule_nonconvex(cfg.staged_phi, cfg.staged_stages,
                                            problem.max_sample_smoothness(),
                                            std::max(mask_count, 1), cfg.warmup);
    rs.step_limit = rs.schedule.step_limit();
  } else {
    throw ConfigError("schedule: unknown kind " + cfg.schedule_kind);
  }
  return rs;
}

// --- structural checks (lemma_checks toggle) --------------------------------------

struct StructuralCheckReport {
  nlohmann::json details;
  bool all_hold = false;
};

// Runs the three structural guarantees on one problem instance at modest
// scale: exact per-cycle cancellation of the masked-gradient sum, the
// windowed accumulated-deviation bound with fitted constants, and the
// variance floor of independently sampled masks.
inline StructuralCheckReport run_structural_checks(const LeastSquaresProblem& problem,
                                                   const ExperimentConfig& cfg,
                                                   const StepSchedule& schedule) {
  const int n = problem.n();
  const int d = problem.d();
  const int mask_count =
      cfg.mask_count > 0 ? cfg.mask_count
                         : static_cast<int>(std::ceil(1.0 / cfg.keep_ratio));
  Rng rng(cfg.dataset.seed ^ 0xa11ce5ULL);
  Rng probe_rng = rng.split(stream::probe);

  // Probe points: the minimizer plus random displacements.  Constants fitted
  // on this list are valid at every listed point, so reference points for the
  // window bound come from the list itself.
  std::vector<Eigen::VectorXd> probes;
  probes.push_back(problem.theta_star);
  for (int k = 0; k < 6; ++k) {
    Eigen::VectorXd u(d);
    for (int j = 0; j < d; ++j) u[j] = probe_rng.normal();
    probes.push_back(problem.theta_star + 2.0 * u);
  }
  const DeviationConstants constants = estimate_deviation_constants(problem.samples, probes);
  const WindowConstants wc = window_constants(constants.c1, constants.c2, mask_count, n);

  StructuralCheckReport report;
  bool all = true;

  // 1. per-cycle cancellation
  {
    Rng mask_rng = rng.split(stream::mask);
    Rng order_rng = rng.split(stream::data_order);
    const MaskSet set = generate_disjoint_masks(d, mask_count, cfg.pinned, mask_rng);
    const TraversalSchedule traversal = generate_traversal(mask_count, n, order_rng);
    const CancellationResult cr =
        cycle_cancellation_residual(problem.samples, set, traversal, probes.back());
    report.details["cancellation"] = {{"residual", cr.residual},
                                      {"tolerance", cr.tolerance},
                                      {"holds", cr.holds()}};
    all = all && cr.holds();
  }

  // 2. windowed accumulated-deviation bound
  {
    Rng stream_rng = rng.split(17);
    const MaskSampleStream stream =
        make_mask_sample_stream(d, mask_count, n, cfg.pinned, 3, stream_rng);
    nlohmann::json cases = nlohmann::json::array();
    for (const Eigen::VectorXd* theta_ref : {&probes.front(), &probes.back()}) {
      for (std::int64_t tau : {std::int64_t{0}, static_cast<std::int64_t>(n)}) {
        for (std::int64_t m : {std::int64_t{1}, static_cast<std::int64_t>(n),
                               static_cast<std::int64_t>(2 * n)}) {
          if (tau + m > stream.total_steps()) continue;
          const WindowBoundResult wb = accumulated_deviation_bound(
              problem.samples, stream, schedule, tau, m, *theta_ref, wc);
          cases.push_back({{"tau", tau}, {"m", m}, {"lhs", wb.lhs}, {"rhs", wb.rhs},
                           {"holds", wb.holds()}});
          all = all && wb.holds();
        }
      }
    }
    report.details["window_bound"] = {{"c1", constants.c1},
                                      {"c2", constants.c2},
                                      {"window_constant", wc.C},
                                      {"gradient_factor", wc.Phi},
                                      {"cases", cases}};
  }

  // 3. independent-mask variance floor
  {
    Rng mc_rng = rng.split(23);
    const VarianceFloorResult vf = independent_mask_variance_floor(
        problem.samples, cfg.keep_ratio, schedule, 0, n, 1000, probes.back(), mc_rng);
    report.details["variance_floor"] = {{"lhs_hat", vf.lhs_hat},
                                        {"rhs", vf.rhs},
                                        {"standard_error", vf.standard_error},
                                        {"trials", vf.trials},
                                        {"holds", vf.holds()}};
    all = all && vf.holds();
  }

  report.all_hold = all;
  return report;
}

// --- synth command ---------------------------------------------------------------

namespace detail {

inline nlohmann::json rate_report_json(const RateReport& r) {
  return {{"slope", r.slope},
          {"intercept", r.intercept},
          {"standard_error", r.standard_error},
          {"window_lo", r.window_lo},
          {"window_hi", r.window_hi},
          {"seed_count", r.seed_count},
          {"point_count", r.point_count},
          {"per_seed_slopes", r.per_seed_slopes}};
}

inline TraceColumn parse_trace_column(const std::string& name) {
  if (name == "theta_err") return TraceColumn::ThetaErrSq;
  if (name == "grad_norm") return TraceColumn::GradNormSq;
  if (name == "subopt") return TraceColumn::Subopt;
  if (name == "decay") return TraceColumn::DecaySq;
  if (name == "reshuffle") return TraceColumn::ReshuffleSq;
  if (name == "compress") return TraceColumn::CompressSq;
  throw ConfigError("unknown trace column: " + name +
                    " (theta_err, grad_norm, subopt, decay, reshuffle, compress)");
}

}  // namespace detail

// Generates the synthetic problem, runs the estimator x seed grid in
// parallel, writes one trace CSV per run plus manifest.json, and optionally
// fits convergence rates and runs the structural checks.  Returns the process
// exit code (0 ok; 1 when a structural check fails).
inline int cmd_synth(const ConfigMap& merged, std::ostream& out) {
  const ExperimentConfig cfg = resolve_experiment_config(merged);
  const std::string hash = config_hash(merged);

  const LeastSquaresProblem problem = synth_regression(cfg.dataset);
  const ResolvedSchedule rs = resolve_schedule(cfg, problem);

  std::int64_t horizon = cfg.horizon;
  if (rs.step_limit >= 0 && rs.step_limit < horizon) {
    out << "note: staged schedule ends at step " << rs.step_limit
        << "; clamping horizon from " << horizon << "\n";
    horizon = rs.step_limit;
  }

  const std::filesystem::path out_dir = resolve_out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);

  struct Job {
    std::string estimator;
    std::uint64_t seed = 0;
  };
  std::vector<Job> jobs;
  for (const auto& name : cfg.estimators) {
    for (std::uint64_t seed : cfg.seeds) jobs.push_back({name, seed});
  }

  struct Result {
    RunTrace trace;
    std::string file;
    std::string status;
    double seconds = 0.0;
  };
  std::vector<Result> results(jobs.size());
  const std::string started_at = iso8601_now();
  std::mutex log_mu;

  parallel_for(static_cast<int>(jobs.size()), cfg.threads, [&](int idx) {
    const Job& job = jobs[idx];
    RunConfig rc;
    rc.estimator = EstimatorKind::parse(job.estimator, cfg.keep_ratio, cfg.mask_count);
    rc.schedule = rs.schedule;
    rc.horizon = horizon;
    rc.seed = job.seed;
    rc.decomposition = cfg.decompose;
    rc.pinned = cfg.pinned;
    if (horizon >= 1) {
      rc.checkpoints = geometric_checkpoints(cfg.checkpoint_count, horizon);
    }

    Result& res = results[idx];
    const std::string base = job.estimator + "_seed" + std::to_string(job.seed) + ".csv";
    const auto t0 = std::chrono::steady_clock::now();
    try {
      res.trace = run_estimator(problem, rc);
      res.status = "ok";
      res.file = base;
    } catch (const RunAbort& abort) {
      res.trace = abort.partial_trace;
      res.status = std::string("aborted: ") + abort.what();
      res.file = base + ".partial";
    }
    res.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ofstream os(out_dir / res.file);
    if (!os) throw std::runtime_error("cannot write " + (out_dir / res.file).string());
    write_trace_csv(res.trace, os);

    std::lock_guard<std::mutex> lock(log_mu);
    out << "run " << job.estimator << " seed " << job.seed << ": " << res.status;
    if (!res.trace.points.empty()) {
      out << "  final_subopt=" << res.trace.points.back().subopt;
    }
    out << "  (" << res.seconds << "s)\n";
  });

  // manifest
  nlohmann::json manifest;
  manifest["version"] = version_string;
  manifest["config_hash"] = hash;
  manifest["created_at"] = started_at;
  manifest["finished_at"] = iso8601_now();
  manifest["dataset"] = {{"n", cfg.dataset.n},
                         {"d", cfg.dataset.d},
                         {"noise_sd", cfg.dataset.noise_sd},
                         {"seed", cfg.dataset.seed}};
  manifest["problem"] = {{"lambda_min", problem.lambda_min},
                         {"lambda_max", problem.lambda_max},
                         {"max_sample_smoothness", problem.max_sample_smoothness()}};
  manifest["schedule"] = {{"kind", rs.kind},
                          {"eta", rs.eta},
                          {"c0", rs.c0},
                          {"t_offset", rs.t_offset},
                          {"warmup", cfg.warmup}};
  manifest["horizon"] = horizon;
  manifest["runs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const Result& res = results[i];
    nlohmann::json entry = {{"estimator", jobs[i].estimator},
                            {"seed", jobs[i].seed},
                            {"file", res.file},
                            {"status", res.status},
                            {"seconds", res.seconds},
                            {"partial_final_cycle", res.trace.partial_final_cycle}};
    if (res.trace.decomposition) {
      entry["max_reconstruction_ratio"] = res.trace.max_reconstruction_ratio;
    }
    if (!res.trace.points.empty()) {
      entry["final_subopt"] = res.trace.points.back().subopt;
      entry["final_theta_err_sq"] = res.trace.points.back().theta_err_sq;
    }
    manifest["runs"].push_back(entry);
  }

  int exit_code = 0;

  // rate fits
  if (cfg.rates && horizon >= 1) {
    const auto window_lo = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(cfg.window_lo_frac * horizon)));
    const auto window_hi =
        static_cast<std::int64_t>(std::llround(cfg.window_hi_frac * horizon));
    nlohmann::json rates_json;
    for (const auto& name : cfg.estimators) {
      std::vector<RunTrace> group;
      for (std::size_t i = 0; i < jobs.size(); ++i) {
        if (jobs[i].estimator == name && results[i].status == "ok") {
          group.push_back(results[i].trace);
        }
      }
      if (group.empty()) continue;
      const RateReport rate = fit_rate(group, TraceColumn::ThetaErrSq, window_lo, window_hi);
      rates_json[name] = detail::rate_report_json(rate);
      out << "rate " << name << ": slope=" << rate.slope
          << " se=" << rate.standard_error << " (seeds=" << rate.seed_count
          << ", points=" << rate.point_count << ")\n";
    }
    manifest["rates"] = rates_json;
    std::ofstream os(out_dir / "rates.json");
    os << rates_json.dump(2) << "\n";
  }

  // structural checks
  if (cfg.lemma_checks) {
    const StructuralCheckReport report = run_structural_checks(problem, cfg, rs.schedule);
    manifest["structural_checks"] = report.details;
    std::ofstream os(out_dir / "structural_checks.json");
    os << report.details.dump(2) << "\n";
    out << "structural checks: " << (report.all_hold ? "all hold" : "FAILED") << "\n";
    if (!report.all_hold) exit_code = 1;
  }

  {
    std::ofstream os(out_dir / "manifest.json");
    if (!os) throw std::runtime_error("cannot write manifest.json");
    os << manifest.dump(2) << "\n";
  }
  out << "wrote " << jobs.size() << " trace(s) to " << out_dir.string() << "\n";
  return exit_code;
}

// --- rates command ---------------------------------------------------------------

// Reads trace CSVs, groups them by the estimator recorded in each file, and
// fits log-log convergence slopes over [window_lo, window_hi] (0 means auto:
// the last checkpoint and a hundredth of it).  Writes JSON to out_path ("-"
// or empty: stdout).
inline int cmd_rates(const std::vector<std::string>& files, const std::string& column,
                     std::int64_t window_lo, std::int64_t window_hi,
                     const std::string& out_path, std::ostream& out) {
  if (files.empty()) throw ConfigError("rates: no trace files given");
  std::map<std::string, std::vector<RunTrace>> groups;
  for (const auto& file : files) {
    std::ifstream is(file);
    if (!is) throw ConfigError("rates: cannot open " + file);
    RunTrace trace = trace_from_csv(is);
    groups[trace.estimator.empty() ? std::string("unknown") : trace.estimator]
        .push_back(std::move(trace));
  }

  if (window_hi <= 0) {
    for (const auto& [name, traces] : groups) {
      for (const auto& trace : traces) {
        if (!trace.points.empty()) {
          window_hi = std::max(window_hi, trace.points.back().t);
        }
      }
    }
    if (window_hi <= 0) throw ConfigError("rates: traces contain no checkpoints");
  }
  if (window_lo <= 0) window_lo = std::max<std::int64_t>(1, window_hi / 100);

  const TraceColumn col = detail::parse_trace_column(column);
  nlohmann::json result;
  for (const auto& [name, traces] : groups) {
    const RateReport rate = fit_rate(traces, col, window_lo, window_hi);
    result[name] = detail::rate_report_json(rate);
    out << "rate " << name << ": slope=" << rate.slope << " se=" << rate.standard_error
        << " (seeds=" << rate.seed_count << ", points=" << rate.point_count << ")\n";
  }
  if (!out_path.empty() && out_path != "-") {
    std::ofstream os(out_path);
    if (!os) throw std::runtime_error("rates: cannot write " + out_path);
    os << result.dump(2) << "\n";
  } else {
    out << result.dump(2) << "\n";
  }
  return 0;
}

// --- decompose command -----------------------------------------------------------

// Runs the first configured estimator/seed with the error-split recorders on
// and reports where the final squared error lives.
inline int cmd_decompose(const ConfigMap& merged, const std::string& out_file,
                         std::ostream& out) {
  ExperimentConfig cfg = resolve_experiment_config(merged);
  const LeastSquaresProblem problem = synth_regression(cfg.dataset);
  const ResolvedSchedule rs = resolve_schedule(cfg, problem);

  std::int64_t horizon = cfg.horizon;
  if (rs.step_limit >= 0 && rs.step_limit < horizon) horizon = rs.step_limit;

  RunConfig rc;
  rc.estimator = EstimatorKind::parse(cfg.estimators.front(), cfg.keep_ratio, cfg.mask_count);
  rc.schedule = rs.schedule;
  rc.horizon = horizon;
  rc.seed = cfg.seeds.front();
  rc.decomposition = true;
  rc.pinned = cfg.pinned;
  if (horizon >= 1) rc.checkpoints = geometric_checkpoints(cfg.checkpoint_count, horizon);

  const RunTrace trace = run_estimator(problem, rc);

  if (!out_file.empty()) {
    const std::filesystem::path path = resolve_out_dir(out_file);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("decompose: cannot write " + path.string());
    write_trace_csv(trace, os);
    out << "wrote " << path.string() << "\n";
  }

  const TracePoint& last = trace.points.back();
  const double total = last.decay_sq + last.reshuffle_sq + last.compress_sq;
  out << "estimator " << trace.estimator << " seed " << trace.seed << " after " << last.t
      << " steps:\n";
  out << "  theta_err_sq        " << last.theta_err_sq << "\n";
  out << "  decay_sq            " << last.decay_sq << "\n";
  out << "  reshuffle_sq        " << last.reshuffle_sq << "\n";
  out << "  compress_sq         " << last.compress_sq << "\n";
  if (total > 0) {
    out << "  shares              " << last.decay_sq / total << " / "
        << last.reshuffle_sq / total << " / " << last.compress_sq / total << "\n";
  }
  out << "  max_reconstruction_ratio " << trace.max_reconstruction_ratio << "\n";
  return 0;
}

// --- masks command ---------------------------------------------------------------

// Generates a coordinate partition (writing it when out_file is set) or, in
// check mode, re-verifies a previously written file.
inline int cmd_masks_generate(int d, int mask_count, const std::vector<int>& pinned,
                              std::uint64_t seed, const std::string& out_file,
                              std::ostream& out) {
  Rng rng = Rng(seed).split(stream::mask);
  const MaskSet set = generate_disjoint_masks(d, mask_count, pinned, rng);
  const bool ok = verify_mask_set(set);
  if (static_cast<std::int64_t>(d) * mask_count <= 512) out << to_string(set);
  out << "mask-set d=" << d << " M=" << mask_count << " pinned=" << pinned.size()
      << ": " << (ok ? "coverage OK" : "coverage FAIL") << "\n";
  if (!out_file.empty()) {
    const std::filesystem::path path = resolve_out_dir(out_file);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("masks: cannot write " + path.string());
    write_mask_set(set, os);
    out << "wrote " << path.string() << "\n";
  }
  return ok ? 0 : 1;
}

inline int cmd_masks_check(const std::string& file, std::ostream& out) {
  std::ifstream is(file);
  if (!is) throw ConfigError("masks: cannot open " + file);
  const MaskSet set = read_mask_set(is);
  const bool ok = verify_mask_set(set);
  out << "mask-set d=" << set.d << " M=" << set.mask_count << " pinned="
      << set.pinned.size() << ": " << (ok ? "coverage OK" : "coverage FAIL") << "\n";
  return ok ? 0 : 1;
}

// --- train command ---------------------------------------------------------------

// Layer-subset training ablation: a gamma x period grid of runs on one tanh
// network and dataset, sharing seeds across cells so comparisons are paired.
// Writes a trace and a period log per run plus summary.csv and manifest.json.
inline int cmd_train(const ConfigMap& merged, std::ostream& out) {
  const ExperimentConfig cfg = resolve_experiment_config(merged);
  const std::string hash = config_hash(merged);

  for (int gamma : cfg.lisa_gamma_grid) {
    if (gamma < 1 || gamma > cfg.lisa_layers) {
      throw ConfigError("train: gamma " + std::to_string(gamma) +
                        " outside [1, layers]");
    }
  }
  for (int period : cfg.lisa_period_grid) {
    if (period < 1) throw ConfigError("train: period lengths must be >= 1");
  }

  const LayeredModel model =
      build_layered_model(cfg.lisa_input_dim, cfg.lisa_layers, cfg.lisa_width, cfg.lisa_bias);
  const SampleSet data = synth_samples({static_cast<int>(cfg.lisa_n), cfg.lisa_input_dim,
                                        cfg.lisa_noise_sd, cfg.lisa_data_seed});

  const std::filesystem::path out_dir = resolve_out_dir(cfg.out_dir);
  std::filesystem::create_directories(out_dir);

  struct Job {
    int gamma = 0;
    int period = 0;
    std::uint64_t seed = 0;
  };
  std::vector<Job> jobs;
  for (int gamma : cfg.lisa_gamma_grid) {
    for (int period : cfg.lisa_period_grid) {
      for (std::uint64_t seed : cfg.lisa_seeds) jobs.push_back({gamma, period, seed});
    }
  }

  struct Result {
    double final_loss = 0.0;
    double final_grad_norm_sq = 0.0;
    int resets = 0;
    std::string file;
  };
  std::vector<Result> results(jobs.size());
  std::mutex log_mu;

  parallel_for(static_cast<int>(jobs.size()), cfg.threads, [&](int idx) {
    const Job& job = jobs[idx];
    LisaConfig lc;
    lc.gamma = job.gamma;
    lc.period_length = job.period;
    lc.period_in_epochs = true;
    lc.horizon = cfg.lisa_horizon;
    lc.schedule = StepSchedule::constant(cfg.lisa_eta);
    lc.seed = job.seed;
    lc.sampling = cfg.lisa_sampling == "independent" ? PeriodSampling::Independent
                                                     : PeriodSampling::WithoutReplacement;

    const Eigen::VectorXd theta0 = model.init_params(job.seed);
    std::vector<PeriodLogEntry> period_log;
    const RunTrace trace = lisa_wor_train(model, theta0, data, lc, &period_log);

    Result& res = results[idx];
    res.final_loss = trace.points.back().subopt;
    res.final_grad_norm_sq = trace.points.back().grad_norm_sq;
    for (const auto& entry : period_log) {
      if (entry.leftover_discarded >= 0) ++res.resets;
    }
    const std::string base = "lisa_g" + std::to_string(job.gamma) + "_p" +
                             std::to_string(job.period) + "_seed" +
                             std::to_string(job.seed);
    res.file = base + ".csv";

    std::ofstream os(out_dir / res.file);
    if (!os) throw std::runtime_error("train: cannot write " + (out_dir / res.file).string());
    write_trace_csv(trace, os);
    std::ofstream ps(out_dir / (base + "_periods.csv"));
    ps << period_log_to_csv(period_log);

    std::lock_guard<std::mutex> lock(log_mu);
    out << "train gamma=" << job.gamma << " period=" << job.period << " seed=" << job.seed
        << ": final_loss=" << res.final_loss << "\n";
  });

  // summary.csv + per-cell means
  {
    std::ofstream os(out_dir / "summary.csv");
    os << "gamma,period,seed,final_loss,final_grad_norm_sq,pool_resets,file\n";
    for (std::size_t i = 0; i < jobs.size(); ++i) {
      os << jobs[i].gamma << "," << jobs[i].period << "," << jobs[i].seed << ","
         << results[i].final_loss << "," << results[i].final_grad_norm_sq << ","
         << results[i].resets << "," << results[i].file << "\n";
    }
  }
  std::map<std::pair<int, int>, std::pair<double, int>> cells;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& cell = cells[{jobs[i].gamma, jobs[i].period}];
    cell.first += results[i].final_loss;
    cell.second += 1;
  }
  out << "mean final loss by (gamma, period):\n";
  for (const auto& [key, cell] : cells) {
    out << "  gamma=" << key.first << " period=" << key.second << ": "
        << cell.first / cell.second << "\n";
  }

  nlohmann::json manifest;
  manifest["version"] = version_string;
  manifest["config_hash"] = hash;
  manifest["created_at"] = iso8601_now();
  manifest["model"] = {{"input_dim", cfg.lisa_input_dim},
                       {"middle_layers", cfg.lisa_layers},
                       {"width", cfg.lisa_width},
                       {"bias", cfg.lisa_bias},
                       {"params", model.n_params()}};
  manifest["data"] = {{"n", cfg.lisa_n},
                      {"noise_sd", cfg.lisa_noise_sd},
                      {"seed", cfg.lisa_data_seed}};
  manifest["sampling"] = cfg.lisa_sampling;
  manifest["horizon"] = cfg.lisa_horizon;
  manifest["eta"] = cfg.lisa_eta;
  manifest["runs"] = nlohmann::json::array();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    manifest["runs"].push_back({{"gamma", jobs[i].gamma},
                                {"period", jobs[i].period},
                                {"seed", jobs[i].seed},
                                {"file", results[i].file},
                                {"final_loss", results[i].final_loss},
                                {"pool_resets", results[i].resets}});
  }
  std::ofstream os(out_dir / "manifest.json");
  os << manifest.dump(2) << "\n";
  out << "wrote " << jobs.size() << " run(s) to " << out_dir.string() << "\n";
  return 0;
}

}  // namespace omgd
