#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grace/tensor.hpp"

namespace grace {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Linear warmup: factor = min(1, step / warmup_steps), steps counted from 1.
struct WarmupSchedule {
  std::int64_t warmup_steps = 0;

  double factor(std::int64_t step) const {
    if (warmup_steps <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup_steps));
  }
};

/// Adam with per-group learning rates and a shared warmup schedule.
template <typename Scalar>
class Adam {
 public:
  struct Group {
    std::vector<Var<Scalar>> params;
    double lr = 1e-3;
  };

  Adam(std::vector<Group> groups, WarmupSchedule schedule, AdamSettings settings = {})
      : groups_(std::move(groups)), schedule_(schedule), settings_(settings) {
    for (const auto& g : groups_) {
      if (!(g.lr > 0)) throw NumericError("adam: learning rate must be positive");
      for (const auto& p : g.params) {
        first_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
        second_.push_back(Mat<Scalar>::Zero(p.rows(), p.cols()));
      }
    }
  }

  std::int64_t steps() const noexcept { return step_; }
  double effective_lr(std::size_t group) const { return groups_.at(group).lr * schedule_.factor(step_); }
  const std::vector<Group>& groups() const noexcept { return groups_; }

  /// Global L2 norm of all accumulated gradients.
  double grad_norm() const {
    double sq = 0;
    for (const auto& g : groups_) {
      for (const auto& p : g.params) {
        if (p.has_grad()) sq += p.grad().template cast<double>().squaredNorm();
      }
    }
    return std::sqrt(sq);
  }

  /// Rescales gradients so their global norm is at most max_norm. Returns the
  /// norm before clipping.
  double clip_grad_norm(double max_norm) {
    const double norm = grad_norm();
    if (max_norm > 0 && norm > max_norm) {
      const Scalar s = static_cast<Scalar>(max_norm / norm);
      for (auto& g : groups_) {
        for (auto& p : g.params) {
          if (p.has_grad()) p.mutable_grad() *= s;
        }
      }
    }
    return norm;
  }

  /// One update from the accumulated gradients. Parameters are left untouched
  /// if any gradient is non-finite.
  void step() {
    for (const auto& g : groups_) {
      for (const auto& p : g.params) {
        if (p.has_grad() && !p.grad().allFinite()) {
          throw NumericError("adam: non-finite gradient at step " + std::to_string(step_ + 1));
        }
      }
    }
    ++step_;
    const double factor = schedule_.factor(step_);
    const double bc1 = 1.0 - std::pow(settings_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(settings_.beta2, static_cast<double>(step_));
    const Scalar b1 = static_cast<Scalar>(settings_.beta1), b2 = static_cast<Scalar>(settings_.beta2);
    std::size_t slot = 0;
    for (auto& g : groups_) {
      const Scalar lr = static_cast<Scalar>(g.lr * factor);
      for (auto& p : g.params) {
        Mat<Scalar>& m = first_[slot];
        Mat<Scalar>& v = second_[slot];
        ++slot;
        if (p.has_grad()) {
          const Mat<Scalar>& grad = p.grad();
          m = b1 * m + (Scalar(1) - b1) * grad;
          v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
        } else {
          m *= b1;
          v *= b2;
        }
        const Scalar c1 = static_cast<Scalar>(bc1), c2 = static_cast<Scalar>(bc2);
        const Scalar eps = static_cast<Scalar>(settings_.eps);
        p.mutable_value().array() -=
            lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_) {
      for (auto& p : g.params) p.zero_grad();
    }
  }

 private:
  std::vector<Group> groups_;
  WarmupSchedule schedule_;
  AdamSettings settings_;
  std::vector<Mat<Scalar>> first_;
  std::vector<Mat<Scalar>> second_;
  std::int64_t step_ = 0;
};

}  // namespace grace
