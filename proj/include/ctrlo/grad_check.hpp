#pragma once

#include <functional>
#include <string>

#include "ctrlo/params.hpp"

namespace ctrlo {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_coord;  // "name(r,c)" of the worst coordinate
};

/// Verifies analytic gradients of a scalar-valued function against central
/// finite differences. `f` rebuilds the computation on a fresh tape each
/// call, reading parameters through the context; the parameters named in
/// `reg` are perturbed in place (and restored). Error per coordinate is
/// |analytic - numeric| / max(1, |analytic|).
GradCheckReport grad_check(const ParamRegistry& reg,
                           const std::function<ad::Var(ParamContext&)>& f, double h = 1e-5);

}  // namespace ctrlo
