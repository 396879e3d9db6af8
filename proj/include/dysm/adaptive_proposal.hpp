#pragma once

#include <cmath>
#include <cstddef>
#include <span>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "dysm/random.hpp"

namespace dysm {

/// Gaussian random-walk proposal whose covariance follows the chain's
/// empirical covariance and whose overall scale is tuned
/// towards a target acceptance rate. Proposal covariance is
/// scale * (empirical_cov + epsilon * I).
///
/// adapt() is driven by the owner once per adaptation interval: the interval's
/// sample covariance is blended into the running estimate with weight
/// gamma_n = (n + 3)^-0.8 and the log scale moves by
/// 10 * gamma_n * (acceptance - target). The owner stops calling adapt()
/// after burn-in, which freezes the kernel.
class AdaptiveProposal {
 public:
  AdaptiveProposal(std::size_t dim, double initial_sd, double target_accept, double epsilon = 1e-6)
      : dim_(dim), target_(target_accept), epsilon_(epsilon),
        scale_(2.38 * 2.38 / static_cast<double>(dim)),
        cov_(Eigen::MatrixXd::Identity(dim, dim) * (initial_sd * initial_sd / (2.38 * 2.38 / static_cast<double>(dim)))),
        mean_(Eigen::VectorXd::Zero(dim)), interval_mean_(Eigen::VectorXd::Zero(dim)),
        interval_m2_(Eigen::MatrixXd::Zero(dim, dim)), z_(dim), step_(dim), delta_(dim) {
    refactor();
  }

  std::size_t dimension() const { return dim_; }
  double scale() const { return scale_; }
  double epsilon() const { return epsilon_; }
  double target_accept() const { return target_; }
  const Eigen::MatrixXd& empirical_cov() const { return cov_; }
  const Eigen::VectorXd& empirical_mean() const { return mean_; }
  Eigen::MatrixXd proposal_cov() const {
    return scale_ * (cov_ + epsilon_ * Eigen::MatrixXd::Identity(dim_, dim_));
  }
  int times_adapted() const { return times_adapted_; }

  void propose(std::span<const double> current, std::span<double> out, Rng& rng) {
    for (std::size_t i = 0; i < dim_; ++i) z_[i] = draw_normal(rng);
    step_.noalias() = chol_ * z_;
    for (std::size_t i = 0; i < dim_; ++i) out[i] = current[i] + step_[i];
  }

  /// Outcome bookkeeping; counts feed both diagnostics and adaptation.
  void count(bool accepted) {
    ++proposed_;
    if (accepted) ++accepted_;
    ++interval_proposed_;
    if (accepted) ++interval_accepted_;
  }

  /// Adds the post-move state to the current interval's moments.
  void record(std::span<const double> state) {
    ++interval_n_;
    for (std::size_t i = 0; i < dim_; ++i) delta_[i] = state[i] - interval_mean_[i];
    interval_mean_ += delta_ / static_cast<double>(interval_n_);
    for (std::size_t i = 0; i < dim_; ++i) z_[i] = state[i] - interval_mean_[i];
    interval_m2_.noalias() += delta_ * z_.transpose();
  }

  void adapt() {
    const double gamma = 1.0 / std::pow(times_adapted_ + 3.0, 0.8);
    const double rate = interval_proposed_ > 0 ? static_cast<double>(interval_accepted_) / interval_proposed_ : 0.0;
    if (interval_accepted_ > 0 && interval_n_ > 1) {
      const Eigen::MatrixXd sample_cov = interval_m2_ / static_cast<double>(interval_n_ - 1);
      cov_ += gamma * (0.5 * (sample_cov + sample_cov.transpose()) - cov_);
      mean_ += gamma * (interval_mean_ - mean_);
    }
    scale_ *= std::exp(10.0 * gamma * (rate - target_));
    ++times_adapted_;
    interval_n_ = 0;
    interval_proposed_ = interval_accepted_ = 0;
    interval_mean_.setZero();
    interval_m2_.setZero();
    refactor();
  }

  long long accepted() const { return accepted_; }
  long long proposed() const { return proposed_; }
  double acceptance_rate() const { return proposed_ > 0 ? static_cast<double>(accepted_) / proposed_ : 0.0; }
  void reset_counts() { accepted_ = proposed_ = 0; }

 private:
  void refactor() {
    Eigen::LLT<Eigen::MatrixXd> llt(proposal_cov());
    if (llt.info() == Eigen::Success) {
      chol_ = llt.matrixL();
    } else {
      // Fall back to the diagonal when the blended covariance lost definiteness.
      chol_ = (scale_ * (cov_.diagonal().cwiseAbs().array() + epsilon_)).sqrt().matrix().asDiagonal();
    }
  }

  std::size_t dim_;
  double target_;
  double epsilon_;
  double scale_;
  Eigen::MatrixXd cov_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd chol_;
  int times_adapted_ = 0;
  long long accepted_ = 0, proposed_ = 0;
  long long interval_accepted_ = 0, interval_proposed_ = 0, interval_n_ = 0;
  Eigen::VectorXd interval_mean_;
  Eigen::MatrixXd interval_m2_;
  Eigen::VectorXd z_, step_, delta_;
};

}  // namespace dysm
