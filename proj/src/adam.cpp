#include "ctrlo/adam.hpp"

#include <cmath>

#include "ctrlo/errors.hpp"

namespace ctrlo {

Adam::Adam(const ParamRegistry& reg, AdamConfig cfg) : cfg_(cfg) {
  m_ = reg.zeros_like();
  v_ = reg.zeros_like();
}

void Adam::step(const ParamRegistry& reg, const std::vector<ad::Mat>& grads) {
  if (grads.size() != reg.size()) throw argument_error("adam: gradient count mismatch");
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < reg.size(); ++i) {
    ad::Mat& p = *reg.entries()[i].value;
    const ad::Mat& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw argument_error("adam: gradient shape mismatch for " + reg.entries()[i].name);
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p.array() -=
        cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace ctrlo
