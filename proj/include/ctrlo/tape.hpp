#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <utility>

#include "ctrlo/errors.hpp"

namespace ctrlo::ad {

using Mat = Eigen::MatrixXd;

class Tape;

/// Handle to one node of a computation graph. Vars are cheap value types;
/// the node they refer to lives on the tape that created it.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  bool needs_grad() const;
  Tape* tape() const { return tape_; }
  int index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* tape, int idx) : tape_(tape), idx_(idx) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

/// Dynamic tape: nodes are appended in evaluation order, so creation order is
/// a valid topological order and backward is a single reverse sweep. A tape
/// is rebuilt per forward pass and confined to one thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that participates in differentiation (a parameter).
  Var leaf(Mat value);
  /// Leaf referencing external storage; the caller keeps it alive and
  /// unmodified for the lifetime of the tape.
  Var leaf_view(const Mat* value);
  /// Constant input (no gradient is ever propagated into it).
  Var constant(Mat value);
  Var constant_view(const Mat* value);

  /// Reverse sweep from a scalar (1x1) loss. Gradients of all reachable
  /// nodes with needs_grad are accumulated; leaves keep theirs for harvest.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // --- used by the op implementations ---------------------------------
  struct Node {
    Mat own_value;
    const Mat* ext_value = nullptr;
    Mat grad;  // empty until touched during backward
    bool needs_grad = false;
    std::function<void()> back;  // empty for leaves/constants

    const Mat& value() const { return ext_value ? *ext_value : own_value; }
  };

  Var emplace(Mat value, bool needs_grad, std::function<void()> back);
  Node& node(int idx) { return nodes_[static_cast<std::size_t>(idx)]; }
  const Node& node(int idx) const { return nodes_[static_cast<std::size_t>(idx)]; }

  /// Accumulates an Eigen expression into a node's gradient without a
  /// temporary when the gradient is already allocated.
  template <class Expr>
  void accum(int idx, const Expr& e) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = e;
    else
      n.grad += e;
  }

  const Mat& grad_of(int idx) { return ensure_grad(idx); }
  /// Gradient buffer for in-place block accumulation (row/col slices).
  Mat& grad_mut(int idx) { return ensure_grad(idx); }

 private:
  Mat& ensure_grad(int idx);
  std::deque<Node> nodes_;
};

inline const Mat& Var::value() const { return tape_->node(idx_).value(); }
inline const Mat& Var::grad() const { return tape_->node(idx_).grad; }
inline bool Var::needs_grad() const { return tape_->node(idx_).needs_grad; }

}  // namespace ctrlo::ad
