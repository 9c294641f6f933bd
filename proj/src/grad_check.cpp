#include "ctrlo/grad_check.hpp"

#include <cmath>

#include "ctrlo/errors.hpp"

namespace ctrlo {

namespace {

double eval_scalar(const ParamRegistry& reg, const std::function<ad::Var(ParamContext&)>& f) {
  (void)reg;
  ad::Tape tape;
  ParamContext ctx(tape);
  ad::Var loss = f(ctx);
  if (loss.rows() != 1 || loss.cols() != 1) throw contract_error("grad_check: f must be scalar");
  const double v = loss.value()(0, 0);
  if (std::isnan(v)) throw numeric_error("grad_check: NaN while evaluating f");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ParamRegistry& reg,
                           const std::function<ad::Var(ParamContext&)>& f, double h) {
  if (!(h > 0.0)) throw argument_error("grad_check: h must be positive");

  std::vector<ad::Mat> analytic = reg.zeros_like();
  {
    ad::Tape tape;
    ParamContext ctx(tape);
    ad::Var loss = f(ctx);
    if (std::isnan(loss.value()(0, 0))) throw numeric_error("grad_check: NaN loss");
    tape.backward(loss);
    ctx.harvest(reg, analytic);
  }

  GradCheckReport rep;
  for (std::size_t i = 0; i < reg.size(); ++i) {
    ad::Mat& p = *reg.entries()[i].value;
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        const double saved = p(r, c);
        p(r, c) = saved + h;
        const double up = eval_scalar(reg, f);
        p(r, c) = saved - h;
        const double dn = eval_scalar(reg, f);
        p(r, c) = saved;
        const double numeric = (up - dn) / (2.0 * h);
        const double a = analytic[i](r, c);
        if (std::isnan(numeric)) throw numeric_error("grad_check: NaN finite difference");
        const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
        if (err > rep.max_rel_err) {
          rep.max_rel_err = err;
          rep.worst_coord = reg.entries()[i].name + "(" + std::to_string(r) + "," +
                            std::to_string(c) + ")";
        }
      }
    }
  }
  return rep;
}

}  // namespace ctrlo
