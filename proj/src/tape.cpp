#include "ctrlo/tape.hpp"

namespace ctrlo::ad {

Var Tape::emplace(Mat value, bool needs_grad, std::function<void()> back) {
  Node n;
  n.own_value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Mat value) { return emplace(std::move(value), true, {}); }

Var Tape::leaf_view(const Mat* value) {
  Node n;
  n.ext_value = value;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::constant(Mat value) { return emplace(std::move(value), false, {}); }

Var Tape::constant_view(const Mat* value) {
  Node n;
  n.ext_value = value;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Mat& Tape::ensure_grad(int idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (n.grad.size() == 0) {
    const Mat& v = n.value();
    n.grad = Mat::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw contract_error("backward: loss lives on another tape");
  Node& top = node(loss.index());
  if (top.value().rows() != 1 || top.value().cols() != 1)
    throw contract_error("backward: loss must be scalar (1x1)");
  top.grad = Mat::Constant(1, 1, 1.0);
  for (int i = loss.index(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0 || !n.back) continue;
    n.back();
  }
}

}  // namespace ctrlo::ad
