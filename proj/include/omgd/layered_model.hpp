#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "omgd/objectives.hpp"
#include "omgd/rng.hpp"

namespace omgd {

// A small feed-forward regression network organized into parameter blocks:
// an embedding block, n_middle tanh-activated affine middle blocks, and a
// scalar affine head.  Parameters live in one flat vector; block boundaries
// are exposed so layer-wise schedulers can freeze and rescale per block.
//
// widths[0] is the embedding output width; widths[l] (l = 1..n_middle) is the
// output width of middle block l.  The head maps widths.back() to a scalar.
// Biases can be disabled to get blocks with exactly width*fan_in parameters.
class LayeredModel {
 public:
  LayeredModel(int input_dim, std::vector<int> widths, bool use_bias = true)
      : input_dim_(input_dim), widths_(std::move(widths)), use_bias_(use_bias) {
    if (input_dim_ < 1) throw std::invalid_argument("LayeredModel: input_dim must be >= 1");
    if (widths_.empty()) {
      throw std::invalid_argument("LayeredModel: need at least the embedding width");
    }
    for (int w : widths_) {
      if (w < 1) throw std::invalid_argument("LayeredModel: widths must be positive");
    }
    int fan_in = input_dim_;
    for (std::size_t b = 0; b < widths_.size(); ++b) {
      const int w = widths_[b];
      block_offsets_.push_back(total_);
      block_sizes_.push_back(w * fan_in + (use_bias_ ? w : 0));
      total_ += block_sizes_.back();
      fan_in = w;
    }
    block_offsets_.push_back(total_);
    block_sizes_.push_back(fan_in + (use_bias_ ? 1 : 0));  // head
    total_ += block_sizes_.back();
  }

  int input_dim() const { return input_dim_; }
  int n_middle() const { return static_cast<int>(widths_.size()) - 1; }
  int n_blocks() const { return static_cast<int>(block_sizes_.size()); }
  int n_params() const { return total_; }
  bool use_bias() const { return use_bias_; }
  const std::vector<int>& widths() const { return widths_; }

  // Block b covers [block_offset(b), block_offset(b) + block_size(b)).
  // Block 0 is the embedding, blocks 1..n_middle are the middle layers,
  // block n_middle+1 is the head.
  int block_offset(int b) const { return block_offsets_[static_cast<std::size_t>(b)]; }
  int block_size(int b) const { return block_sizes_[static_cast<std::size_t>(b)]; }
  int head_block() const { return n_blocks() - 1; }

  // Deterministic initialization: weights ~ N(0, 1/fan_in), biases zero.
  Eigen::VectorXd init_params(std::uint64_t seed) const {
    Rng rng(seed);
    Eigen::VectorXd theta(total_);
    int fan_in = input_dim_;
    for (std::size_t b = 0; b < widths_.size(); ++b) {
      const int w = widths_[b];
      fill_block(theta, static_cast<int>(b), w, fan_in, rng);
      fan_in = w;
    }
    fill_block(theta, head_block(), 1, fan_in, rng);
    return theta;
  }

  double loss(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y) const {
    const double r = forward(theta, x) - y;
    return r * r;
  }

  double mean_loss(const Eigen::VectorXd& theta, const SampleSet& data) const {
    double acc = 0.0;
    for (int i = 0; i < data.n(); ++i) acc += loss(theta, data.xs.col(i), data.ys[i]);
    return acc / static_cast<double>(data.n());
  }

  double forward(const Eigen::VectorXd& theta, const Eigen::VectorXd& x) const {
    check_theta(theta);
    Eigen::VectorXd h = x;
    int fan_in = input_dim_;
    for (std::size_t b = 0; b < widths_.size(); ++b) {
      const int w = widths_[b];
      h = (weight(theta, static_cast<int>(b), w, fan_in) * h +
           bias(theta, static_cast<int>(b), w, fan_in))
              .array()
              .tanh()
              .matrix();
      fan_in = w;
    }
    return weight(theta, head_block(), 1, fan_in).row(0).dot(h) +
           bias(theta, head_block(), 1, fan_in)[0];
  }

  // Per-sample gradient of (forward(theta, x) - y)^2 via backpropagation.
  void gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y,
                Eigen::VectorXd& grad) const {
    check_theta(theta);
    const int layers = static_cast<int>(widths_.size());
    std::vector<Eigen::VectorXd> acts(static_cast<std::size_t>(layers) + 1);
    acts[0] = x;
    int fan_in = input_dim_;
    for (int b = 0; b < layers; ++b) {
      const int w = widths_[static_cast<std::size_t>(b)];
      acts[static_cast<std::size_t>(b) + 1] =
          (weight(theta, b, w, fan_in) * acts[static_cast<std::size_t>(b)] +
           bias(theta, b, w, fan_in))
              .array()
              .tanh()
              .matrix();
      fan_in = w;
    }
    const Eigen::VectorXd& h_last = acts[static_cast<std::size_t>(layers)];
    const double yhat =
        weight(theta, head_block(), 1, fan_in).row(0).dot(h_last) +
        bias(theta, head_block(), 1, fan_in)[0];

    grad.setZero(total_);
    const double dy = 2.0 * (yhat - y);

    // Head block.
    {
      const int b = head_block();
      auto gw = grad.segment(block_offset(b), fan_in);
      gw = dy * h_last;
      if (use_bias_) grad[block_offset(b) + fan_in] = dy;
    }
    Eigen::VectorXd dh = dy * weight(theta, head_block(), 1, fan_in).row(0).transpose();

    for (int b = layers - 1; b >= 0; --b) {
      const int w = widths_[static_cast<std::size_t>(b)];
      const int fin = b == 0 ? input_dim_ : widths_[static_cast<std::size_t>(b) - 1];
      const Eigen::VectorXd& h_out = acts[static_cast<std::size_t>(b) + 1];
      const Eigen::VectorXd& h_in = acts[static_cast<std::size_t>(b)];
      const Eigen::VectorXd dpre =
          dh.cwiseProduct((1.0 - h_out.array().square()).matrix());
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + block_offset(b), w, fin);
      gw.noalias() = dpre * h_in.transpose();
      if (use_bias_) grad.segment(block_offset(b) + w * fin, w) = dpre;
      if (b > 0) dh.noalias() = weight(theta, b, w, fin).transpose() * dpre;
    }
  }

  Eigen::VectorXd gradient(const Eigen::VectorXd& theta, const Eigen::VectorXd& x,
                           double y) const {
    Eigen::VectorXd g;
    gradient(theta, x, y, g);
    return g;
  }

  Eigen::VectorXd mean_gradient(const Eigen::VectorXd& theta, const SampleSet& data) const {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(total_);
    Eigen::VectorXd g(total_);
    for (int i = 0; i < data.n(); ++i) {
      gradient(theta, data.xs.col(i), data.ys[i], g);
      acc += g;
    }
    return acc / static_cast<double>(data.n());
  }

 private:
  void check_theta(const Eigen::VectorXd& theta) const {
    if (theta.size() != total_) {
      throw std::invalid_argument("LayeredModel: parameter vector has size " +
                                  std::to_string(theta.size()) + ", expected " +
                                  std::to_string(total_));
    }
  }

  // Weight matrix view of block b (w x fan_in, column-major in the flat vector).
  Eigen::Map<const Eigen::MatrixXd> weight(const Eigen::VectorXd& theta, int b, int w,
                                           int fan_in) const {
    return Eigen::Map<const Eigen::MatrixXd>(theta.data() + block_offset(b), w, fan_in);
  }

  Eigen::VectorXd bias(const Eigen::VectorXd& theta, int b, int w, int fan_in) const {
    if (!use_bias_) return Eigen::VectorXd::Zero(w);
    return theta.segment(block_offset(b) + w * fan_in, w);
  }

  void fill_block(Eigen::VectorXd& theta, int b, int w, int fan_in, Rng& rng) const {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int idx = 0; idx < w * fan_in; ++idx) {
      theta[block_offset(b) + idx] = scale * rng.normal();
    }
    if (use_bias_) {
      for (int idx = 0; idx < w; ++idx) theta[block_offset(b) + w * fan_in + idx] = 0.0;
    }
  }

  int input_dim_;
  std::vector<int> widths_;
  bool use_bias_;
  std::vector<int> block_offsets_;
  std::vector<int> block_sizes_;
  int total_ = 0;
};

// Convenience builder mirroring the common case: n_middle middle blocks of
// uniform width.
inline LayeredModel build_layered_model(int input_dim, int n_middle, int width,
                                        bool use_bias = true) {
  if (n_middle < 1) {
    throw std::invalid_argument("build_layered_model: n_middle must be >= 1");
  }
  std::vector<int> widths(static_cast<std::size_t>(n_middle) + 1, width);
  return LayeredModel(input_dim, std::move(widths), use_bias);
}

}  // namespace omgd
