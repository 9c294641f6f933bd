#include "ctrlo/params.hpp"

#include <cmath>

namespace ctrlo {

void ParamContext::harvest(const ParamRegistry& reg, std::vector<ad::Mat>& out) const {
  for (std::size_t i = 0; i < reg.entries().size(); ++i) {
    auto it = leaves_.find(reg.entries()[i].value);
    if (it == leaves_.end()) continue;
    const ad::Mat& g = it->second.grad();
    if (g.size() == 0) continue;  // conservatively zero: never reached by backward
    out[i] += g;
  }
}

ad::Mat glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(rows + cols));
  return rng.normal_matrix(rows, cols, std);
}

ad::Mat zeros(Eigen::Index rows, Eigen::Index cols) { return ad::Mat::Zero(rows, cols); }
ad::Mat ones(Eigen::Index rows, Eigen::Index cols) { return ad::Mat::Ones(rows, cols); }

}  // namespace ctrlo
