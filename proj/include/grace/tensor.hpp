#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Var is a shared handle to a Node holding a value and its accumulated
// gradient. Operations executed while a Tape is active on the current thread
// are recorded on it (define-by-run); without an active tape they only compute
// values. Parameter leaves live outside any tape and persist across tapes.

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "grace/errors.hpp"

namespace grace {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

template <typename Scalar>
class Tape;

template <typename Scalar>
struct Node {
  Mat<Scalar> value;
  Mat<Scalar> grad;  // empty until the first accumulation
  bool requires_grad = false;
  Tape<Scalar>* tape = nullptr;  // tape that produced this node, null for free leaves

  explicit Node(Mat<Scalar> v, bool rg = false) : value(std::move(v)), requires_grad(rg) {}

  void accumulate(const Eigen::Ref<const Mat<Scalar>>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }

  Mat<Scalar>& grad_buffer() {
    if (grad.size() == 0) grad = Mat<Scalar>::Zero(value.rows(), value.cols());
    return grad;
  }
};

/// Differentiable tensor handle.
template <typename Scalar>
class Var {
 public:
  using MatrixType = Mat<Scalar>;

  Var() = default;
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  /// A value that never accumulates gradient.
  static Var constant(MatrixType value) {
    return Var(std::make_shared<Node<Scalar>>(std::move(value), false));
  }

  /// A persistent trainable leaf.
  static Var parameter(MatrixType value) {
    return Var(std::make_shared<Node<Scalar>>(std::move(value), true));
  }

  static Var scalar(Scalar s) { return constant(MatrixType::Constant(1, 1, s)); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const MatrixType& value() const { return node_->value; }
  MatrixType& mutable_value() { return node_->value; }

  /// Accumulated gradient; zeros if nothing has flowed in yet.
  const MatrixType& grad() const { return node_->grad_buffer(); }
  MatrixType& mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const noexcept { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0, 0); }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  Scalar item() const {
    if (node_->value.size() != 1) throw ShapeError("item() on a non-scalar tensor");
    return node_->value(0, 0);
  }

  Node<Scalar>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& node_ptr() const noexcept { return node_; }

  /// Value-only copy with no graph attachment.
  Var detach() const { return constant(node_->value); }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// How a tape treats leaves that were not created on it.
enum class ParameterMode {
  Trainable,  // free leaves with requires_grad receive gradient
  Frozen,     // free leaves are constants; only tape-local leaves receive gradient
};

/// Ordered record of operations for one forward pass. Becomes the active
/// tape of the calling thread for its lifetime; tapes nest as a stack.
template <typename Scalar>
class Tape {
 public:
  explicit Tape(ParameterMode mode = ParameterMode::Trainable) : previous_(active_), mode_(mode) {
    active_ = this;
  }
  // Nodes outlive the tape as constants; their gradients stay readable.
  ~Tape() {
    for (auto& r : records_) detach_node(*r.output);
    for (auto& l : leaves_) detach_node(*l);
    active_ = previous_;
  }

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return active_; }

  /// Whether gradient for `node` is collected by this tape.
  bool tracks(const Node<Scalar>& node) const noexcept {
    if (!node.requires_grad) return false;
    if (node.tape == this) return true;
    return node.tape == nullptr && mode_ == ParameterMode::Trainable;
  }

  /// A leaf owned by this tape (gradient collected regardless of mode).
  Var<Scalar> leaf(Mat<Scalar> value, bool requires_grad = true) {
    auto node = std::make_shared<Node<Scalar>>(std::move(value), requires_grad);
    node->tape = this;
    leaves_.push_back(node);
    return Var<Scalar>(std::move(node));
  }

  void record(std::shared_ptr<Node<Scalar>> output, std::function<void(const Mat<Scalar>&)> rule) {
    output->tape = this;
    records_.push_back({std::move(output), std::move(rule)});
  }

  std::size_t size() const noexcept { return records_.size(); }

  /// Replays the tape in reverse from a scalar root. Intermediate gradients
  /// are reset on each call; leaf gradients accumulate across calls.
  void backward(const Var<Scalar>& root) {
    if (!root.defined() || root.size() != 1) throw TapeError("backward root must be a scalar");
    Node<Scalar>* rn = root.node();
    if (rn->tape != this || !rn->requires_grad) {
      throw TapeError("backward root is not recorded on this tape");
    }
    for (auto& r : records_) r.output->grad.resize(0, 0);
    rn->grad = Mat<Scalar>::Ones(1, 1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->output->grad.size() == 0) continue;
      it->rule(it->output->grad);
    }
  }

 private:
  struct Record {
    std::shared_ptr<Node<Scalar>> output;
    std::function<void(const Mat<Scalar>&)> rule;
  };

  static void detach_node(Node<Scalar>& n) {
    n.tape = nullptr;
    n.requires_grad = false;
  }

  static inline thread_local Tape* active_ = nullptr;

  std::vector<Record> records_;
  std::vector<std::shared_ptr<Node<Scalar>>> leaves_;
  Tape* previous_;
  ParameterMode mode_;
};

/// Scope in which operations compute values only: every free leaf is frozen
/// and no tape-local leaf exists, so nothing is recorded.
template <typename Scalar>
class NoGradScope {
 public:
  NoGradScope() : tape_(ParameterMode::Frozen) {}

 private:
  Tape<Scalar> tape_;
};

template <typename Scalar>
void backward(const Var<Scalar>& root) {
  Node<Scalar>* rn = root.defined() ? root.node() : nullptr;
  if (rn == nullptr || rn->tape == nullptr) throw TapeError("backward root is detached from any tape");
  rn->tape->backward(root);
}

namespace detail {

/// Tracks whether each input collects gradient on the active tape.
template <typename Scalar>
struct Recorder {
  Tape<Scalar>* tape = Tape<Scalar>::active();
  bool any = false;

  bool track(const Var<Scalar>& v) {
    const bool t = tape != nullptr && tape->tracks(*v.node());
    any = any || t;
    return t;
  }

  template <typename Rule>
  Var<Scalar> finish(Mat<Scalar> value, Rule&& rule) {
    auto out = std::make_shared<Node<Scalar>>(std::move(value), any);
    if (any) tape->record(out, std::forward<Rule>(rule));
    return Var<Scalar>(std::move(out));
  }
};

}  // namespace detail

}  // namespace grace
