#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

#include "omgd/rng.hpp"

namespace omgd {

// Recipe for a synthetic linear-regression dataset: rows x_i ~ N(0, I_d),
// generating weights w ~ U[0,1]^d, responses y_i = x_i^T w + noise_sd * N(0,1).
struct DatasetSpec {
  int n = 0;
  int d = 0;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;
};

// A finite sample set for the squared-error objective
//   f(theta; x, y) = (x^T theta - y)^2.
// Samples are stored column-wise (xs.col(i) is sample i) so per-sample access
// is contiguous.
struct SampleSet {
  Eigen::MatrixXd xs;  // d x n
  Eigen::VectorXd ys;  // n

  int n() const { return static_cast<int>(ys.size()); }
  int d() const { return static_cast<int>(xs.rows()); }

  double sample_loss(const Eigen::VectorXd& theta, int i) const {
    const double r = xs.col(i).dot(theta) - ys[i];
    return r * r;
  }

  // grad f(theta; x_i, y_i) = 2 x_i (x_i^T theta - y_i)
  void sample_gradient(const Eigen::VectorXd& theta, int i, Eigen::VectorXd& out) const {
    const double r = 2.0 * (xs.col(i).dot(theta) - ys[i]);
    out = r * xs.col(i);
  }

  Eigen::VectorXd sample_gradient(const Eigen::VectorXd& theta, int i) const {
    Eigen::VectorXd g;
    sample_gradient(theta, i, g);
    return g;
  }

  // (1/n) sum_i grad f(theta; z_i)
  Eigen::VectorXd mean_gradient(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(d());
    Eigen::VectorXd g(d());
    for (int i = 0; i < n(); ++i) {
      sample_gradient(theta, i, g);
      acc += g;
    }
    return acc / static_cast<double>(n());
  }

  double mean_loss(const Eigen::VectorXd& theta) const {
    double acc = 0.0;
    for (int i = 0; i < n(); ++i) acc += sample_loss(theta, i);
    return acc / static_cast<double>(n());
  }
};

inline SampleSet synth_samples(const DatasetSpec& spec) {
  if (spec.n <= 0 || spec.d <= 0) {
    throw std::invalid_argument("synth_samples: n and d must be positive");
  }
  if (spec.noise_sd < 0.0) {
    throw std::invalid_argument("synth_samples: noise_sd must be non-negative");
  }
  Rng rng(spec.seed);
  Eigen::VectorXd w(spec.d);
  for (int c = 0; c < spec.d; ++c) w[c] = rng.uniform();
  SampleSet s;
  s.xs.resize(spec.d, spec.n);
  s.ys.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    for (int c = 0; c < spec.d; ++c) s.xs(c, i) = rng.normal();
    s.ys[i] = s.xs.col(i).dot(w) + spec.noise_sd * rng.normal();
  }
  return s;
}

// The averaged objective F(theta) = (1/n) sum_i (x_i^T theta - y_i)^2 in its
// closed quadratic form  F(theta) = (1/2) theta^T A theta - b^T theta + c
// with A = (2/n) sum x x^T, b = (2/n) sum x y, c = (1/n) sum y^2, together
// with the minimizer theta_star = A^{-1} b and A's spectral range.
struct LeastSquaresProblem {
  SampleSet samples;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  double c = 0.0;
  Eigen::VectorXd theta_star;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double f_star = 0.0;

  int n() const { return samples.n(); }
  int d() const { return samples.d(); }

  double value(const Eigen::VectorXd& theta) const {
    return 0.5 * theta.dot(A * theta) - b.dot(theta) + c;
  }

  void full_gradient(const Eigen::VectorXd& theta, Eigen::VectorXd& out) const {
    out.noalias() = A * theta;
    out -= b;
  }

  Eigen::VectorXd full_gradient(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd g;
    full_gradient(theta, g);
    return g;
  }

  // F(theta) - F(theta_star), evaluated through the curvature form around the
  // minimizer; algebraically identical to value(theta) - f_star but immune to
  // cancellation once the error is tiny.
  double suboptimality(const Eigen::VectorXd& theta) const {
    const Eigen::VectorXd delta = theta - theta_star;
    return 0.5 * delta.dot(A * delta);
  }

  // Per-sample smoothness bound: the largest eigenvalue of any 2 x x^T.
  double max_sample_smoothness() const {
    double best = 0.0;
    for (int i = 0; i < n(); ++i) {
      best = std::max(best, 2.0 * samples.xs.col(i).squaredNorm());
    }
    return best;
  }
};

// Assembles the quadratic form from explicit samples.  Errors out if the
// curvature matrix is numerically singular (possible only when n < d).
inline LeastSquaresProblem build_problem(SampleSet samples) {
  LeastSquaresProblem p;
  p.samples = std::move(samples);
  const int n = p.samples.n();
  const int d = p.samples.d();
  const double inv_n = 1.0 / static_cast<double>(n);
  p.A.noalias() = (2.0 * inv_n) * (p.samples.xs * p.samples.xs.transpose());
  p.A = 0.5 * (p.A + p.A.transpose()).eval();  // exact symmetry
  p.b.noalias() = (2.0 * inv_n) * (p.samples.xs * p.samples.ys);
  p.c = inv_n * p.samples.ys.squaredNorm();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.A);
  p.lambda_min = eig.eigenvalues()(0);
  p.lambda_max = eig.eigenvalues()(d - 1);
  if (p.lambda_min <= 1e-12 * std::max(1.0, p.lambda_max)) {
    throw std::runtime_error(
        "build_problem: curvature matrix is numerically singular (lambda_min=" +
        std::to_string(p.lambda_min) + "); need n >= d samples in general position");
  }
  p.theta_star = p.A.llt().solve(p.b);
  p.f_star = p.value(p.theta_star);
  return p;
}

inline LeastSquaresProblem synth_regression(const DatasetSpec& spec) {
  return build_problem(synth_samples(spec));
}

// --- text serialization -----------------------------------------------------
//
// Row-major, space-separated matrix dump of the raw samples; the quadratic
// form is rebuilt on load, so the audit format stores only ground data.

inline void write_problem(const LeastSquaresProblem& p, std::ostream& os) {
  os << "least-squares-problem v1\n";
  os << "n " << p.n() << "\n";
  os << "d " << p.d() << "\n";
  os << "samples\n";
  char buf[64];
  for (int i = 0; i < p.n(); ++i) {
    for (int c = 0; c < p.d(); ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.samples.xs(c, i));
      os << buf << ' ';
    }
    std::snprintf(buf, sizeof(buf), "%.17g", p.samples.ys[i]);
    os << buf << "\n";
  }
}

inline LeastSquaresProblem read_problem(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "least-squares-problem v1") {
    throw std::runtime_error("read_problem: bad magic line");
  }
  std::string key;
  int n = 0, d = 0;
  is >> key >> n;
  if (key != "n" || n <= 0) throw std::runtime_error("read_problem: bad n");
  is >> key >> d;
  if (key != "d" || d <= 0) throw std::runtime_error("read_problem: bad d");
  is >> key;
  if (key != "samples") throw std::runtime_error("read_problem: missing samples");
  SampleSet s;
  s.xs.resize(d, n);
  s.ys.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) {
      if (!(is >> s.xs(c, i))) throw std::runtime_error("read_problem: truncated");
    }
    if (!(is >> s.ys[i])) throw std::runtime_error("read_problem: truncated");
  }
  return build_problem(std::move(s));
}

}  // namespace omgd
