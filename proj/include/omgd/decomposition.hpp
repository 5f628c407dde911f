#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace omgd {

// Running split of the error theta_t - theta_star into three coupled
// recurrences sharing the contraction (I - eta_t A):
//   decay_{t+1}       = (I - eta_t A) decay_t
//   reshuffle_{t+1}   = (I - eta_t A) reshuffle_t
//                       + eta_t (grad F(theta_t) - grad f(theta_t; z_t))
//   compression_{t+1} = (I - eta_t A) compression_t
//                       + eta_t (grad f(theta_t; z_t) - g_t)
// seeded with decay_0 = theta_0 - theta_star and zero elsewhere.  Their sum
// telescopes to theta_t - theta_star exactly, which doubles as the runtime
// self-check.
class DecompositionState {
 public:
  void init(const Eigen::VectorXd& theta0_minus_star) {
    decay = theta0_minus_star;
    reshuffle = Eigen::VectorXd::Zero(theta0_minus_star.size());
    compression = Eigen::VectorXd::Zero(theta0_minus_star.size());
    tmp_.resize(theta0_minus_star.size());
  }

  // Advance one step.  grad_full and grad_sample are evaluated at the
  // pre-update iterate; g is the compressed gradient actually applied.
  void step(const Eigen::MatrixXd& a, double eta, const Eigen::VectorXd& grad_full,
            const Eigen::VectorXd& grad_sample, const Eigen::VectorXd& g) {
    tmp_.noalias() = a * decay;
    decay -= eta * tmp_;
    tmp_.noalias() = a * reshuffle;
    reshuffle -= eta * tmp_;
    tmp_.noalias() = a * compression;
    compression -= eta * tmp_;
    reshuffle += eta * (grad_full - grad_sample);
    compression += eta * (grad_sample - g);
  }

  // Relative reconstruction residual against the true error vector.
  double reconstruction_ratio(const Eigen::VectorXd& theta_minus_star) const {
    const double err = (decay + reshuffle + compression - theta_minus_star).norm();
    return err / (1.0 + theta_minus_star.norm());
  }

  Eigen::VectorXd decay;
  Eigen::VectorXd reshuffle;
  Eigen::VectorXd compression;

 private:
  Eigen::VectorXd tmp_;
};

}  // namespace omgd
