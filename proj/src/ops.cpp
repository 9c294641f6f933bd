#include "ctrlo/ops.hpp"

#include <cmath>
#include <string>

namespace ctrlo::ad {

namespace {

Tape* same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw contract_error("operands live on different tapes");
  return a.tape();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw argument_error(msg);
}

// Shorthand used by every backward closure.
const Mat& out_grad(Tape* t, int io) { return t->node(io).grad; }

}  // namespace

Var add(Var a, Var b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  const bool ng = a.needs_grad() || b.needs_grad();
  Var out = t->emplace(a.value() + b.value(), ng, {});
  if (ng) {
    const int ia = a.index(), ib = b.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io] {
      const Mat& g = out_grad(t, io);
      t->accum(ia, g);
      t->accum(ib, g);
    };
  }
  return out;
}

Var sub(Var a, Var b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  const bool ng = a.needs_grad() || b.needs_grad();
  Var out = t->emplace(a.value() - b.value(), ng, {});
  if (ng) {
    const int ia = a.index(), ib = b.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io] {
      const Mat& g = out_grad(t, io);
      t->accum(ia, g);
      t->accum(ib, -g);
    };
  }
  return out;
}

Var mul(Var a, Var b) {
  Tape* t = same_tape(a, b);
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
  const bool ng = a.needs_grad() || b.needs_grad();
  Var out = t->emplace(a.value().cwiseProduct(b.value()), ng, {});
  if (ng) {
    const int ia = a.index(), ib = b.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io] {
      const Mat& g = out_grad(t, io);
      t->accum(ia, g.cwiseProduct(t->node(ib).value()));
      t->accum(ib, g.cwiseProduct(t->node(ia).value()));
    };
  }
  return out;
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  Tape* t = a.tape();
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value() * s, ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, s] { t->accum(ia, out_grad(t, io) * s); };
  }
  return out;
}

Var add_scalar(Var a, double s) {
  Tape* t = a.tape();
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value().array() + s, ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] { t->accum(ia, out_grad(t, io)); };
  }
  return out;
}

Var add_row_broadcast(Var a, Var b) {
  Tape* t = same_tape(a, b);
  require(b.rows() == 1 && b.cols() == a.cols(), "add_row_broadcast: b must be 1 x cols(a)");
  Mat v = a.value();
  v.rowwise() += b.value().row(0);
  const bool ng = a.needs_grad() || b.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), ib = b.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io] {
      const Mat& g = out_grad(t, io);
      t->accum(ia, g);
      t->accum(ib, g.colwise().sum());
    };
  }
  return out;
}

Var colwise_scale(Var a, Var w) {
  Tape* t = same_tape(a, w);
  require(w.cols() == 1 && w.rows() == a.rows(), "colwise_scale: w must be rows(a) x 1");
  Mat v = a.value().array().colwise() * w.value().col(0).array();
  const bool ng = a.needs_grad() || w.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), iw = w.index(), io = out.index();
    t->node(io).back = [t, ia, iw, io] {
      const Mat& g = out_grad(t, io);
      t->accum(ia, (g.array().colwise() * t->node(iw).value().col(0).array()).matrix());
      t->accum(iw, g.cwiseProduct(t->node(ia).value()).rowwise().sum());
    };
  }
  return out;
}

Var matmul(Var a, Var b) {
  Tape* t = same_tape(a, b);
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  const bool ng = a.needs_grad() || b.needs_grad();
  Var out = t->emplace(a.value() * b.value(), ng, {});
  if (ng) {
    const int ia = a.index(), ib = b.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io] {
      const Mat& g = out_grad(t, io);
      if (t->node(ia).needs_grad) t->accum(ia, g * t->node(ib).value().transpose());
      if (t->node(ib).needs_grad) t->accum(ib, t->node(ia).value().transpose() * g);
    };
  }
  return out;
}

Var transpose(Var a) {
  Tape* t = a.tape();
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value().transpose(), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] { t->accum(ia, out_grad(t, io).transpose()); };
  }
  return out;
}

Var tile_rows(Var a, Eigen::Index n) {
  Tape* t = a.tape();
  require(a.rows() == 1, "tile_rows: input must be a single row");
  require(n >= 1, "tile_rows: n must be positive");
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value().replicate(n, 1), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] { t->accum(ia, out_grad(t, io).colwise().sum()); };
  }
  return out;
}

Var row_slice(Var a, Eigen::Index first, Eigen::Index count) {
  Tape* t = a.tape();
  require(first >= 0 && count >= 0 && first + count <= a.rows(), "row_slice: out of range");
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value().middleRows(first, count), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, first, count] {
      t->grad_mut(ia).middleRows(first, count) += out_grad(t, io);
    };
  }
  return out;
}

Var col_slice(Var a, Eigen::Index first, Eigen::Index count) {
  Tape* t = a.tape();
  require(first >= 0 && count >= 0 && first + count <= a.cols(), "col_slice: out of range");
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value().middleCols(first, count), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, first, count] {
      t->grad_mut(ia).middleCols(first, count) += out_grad(t, io);
    };
  }
  return out;
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: empty");
  Tape* t = parts.front().tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  bool ng = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.cols() == cols, "concat_rows: column mismatch");
    rows += p.rows();
    ng = ng || p.needs_grad();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    std::vector<int> idx;
    std::vector<Eigen::Index> cnt;
    for (const Var& p : parts) {
      idx.push_back(p.index());
      cnt.push_back(p.rows());
    }
    const int io = out.index();
    t->node(io).back = [t, idx, cnt, io] {
      const Mat& g = out_grad(t, io);
      Eigen::Index at2 = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        t->accum(idx[i], g.middleRows(at2, cnt[i]));
        at2 += cnt[i];
      }
    };
  }
  return out;
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: empty");
  Tape* t = parts.front().tape();
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  bool ng = false;
  for (const Var& p : parts) {
    same_tape(parts.front(), p);
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
    ng = ng || p.needs_grad();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    std::vector<int> idx;
    std::vector<Eigen::Index> cnt;
    for (const Var& p : parts) {
      idx.push_back(p.index());
      cnt.push_back(p.cols());
    }
    const int io = out.index();
    t->node(io).back = [t, idx, cnt, io] {
      const Mat& g = out_grad(t, io);
      Eigen::Index at2 = 0;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        t->accum(idx[i], g.middleCols(at2, cnt[i]));
        at2 += cnt[i];
      }
    };
  }
  return out;
}

Var sigmoid(Var a) {
  Tape* t = a.tape();
  Mat v = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] {
      const Mat& y = t->node(io).value();
      t->accum(ia, (out_grad(t, io).array() * y.array() * (1.0 - y.array())).matrix());
    };
  }
  return out;
}

Var tanh_(Var a) {
  Tape* t = a.tape();
  Mat v = a.value().array().tanh().matrix();
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] {
      const Mat& y = t->node(io).value();
      t->accum(ia, (out_grad(t, io).array() * (1.0 - y.array().square())).matrix());
    };
  }
  return out;
}

Var silu(Var a) {
  Tape* t = a.tape();
  Mat s = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  Mat v = a.value().cwiseProduct(s);
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, s = std::move(s)] {
      const auto& x = t->node(ia).value().array();
      const auto& sa = s.array();
      t->accum(ia, (out_grad(t, io).array() * (sa + x * sa * (1.0 - sa))).matrix());
    };
  }
  return out;
}

Var exp_(Var a) {
  Tape* t = a.tape();
  Mat v = a.value().array().exp().matrix();
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] {
      t->accum(ia, out_grad(t, io).cwiseProduct(t->node(io).value()));
    };
  }
  return out;
}

Var log_(Var a) {
  Tape* t = a.tape();
  Mat v = a.value().array().log().matrix();
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io] {
      t->accum(ia, out_grad(t, io).cwiseQuotient(t->node(ia).value()));
    };
  }
  return out;
}

Var sum(Var a) {
  Tape* t = a.tape();
  const bool ng = a.needs_grad();
  Var out = t->emplace(Mat::Constant(1, 1, a.value().sum()), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    const Eigen::Index r = a.rows(), c = a.cols();
    t->node(io).back = [t, ia, io, r, c] {
      t->accum(ia, Mat::Constant(r, c, out_grad(t, io)(0, 0)));
    };
  }
  return out;
}

Var mean(Var a) {
  Tape* t = a.tape();
  const bool ng = a.needs_grad();
  const double n = static_cast<double>(a.rows() * a.cols());
  Var out = t->emplace(Mat::Constant(1, 1, a.value().sum() / n), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    const Eigen::Index r = a.rows(), c = a.cols();
    t->node(io).back = [t, ia, io, r, c, n] {
      t->accum(ia, Mat::Constant(r, c, out_grad(t, io)(0, 0) / n));
    };
  }
  return out;
}

Var row_sums(Var a) {
  Tape* t = a.tape();
  const bool ng = a.needs_grad();
  Var out = t->emplace(a.value().rowwise().sum(), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    const Eigen::Index c = a.cols();
    t->node(io).back = [t, ia, io, c] {
      t->accum(ia, out_grad(t, io).col(0).replicate(1, c));
    };
  }
  return out;
}

Var softmax(Var a, int axis) {
  Tape* t = a.tape();
  require(axis == 0 || axis == 1, "softmax: axis must be 0 or 1");
  Mat y;
  if (axis == 1) {
    Eigen::ArrayXXd e = (a.value().array().colwise() - a.value().rowwise().maxCoeff().array()).exp();
    y = (e.colwise() / e.rowwise().sum()).matrix();
  } else {
    Eigen::ArrayXXd e = (a.value().array().rowwise() - a.value().colwise().maxCoeff().array()).exp();
    y = (e.rowwise() / e.colwise().sum()).matrix();
  }
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(y), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, axis] {
      const Mat& g = out_grad(t, io);
      const Mat& yv = t->node(io).value();
      if (axis == 1) {
        Eigen::ArrayXd dot = g.cwiseProduct(yv).rowwise().sum().array();
        t->accum(ia, (yv.array() * (g.array().colwise() - dot)).matrix());
      } else {
        Eigen::RowVectorXd dot = g.cwiseProduct(yv).colwise().sum();
        t->accum(ia, (yv.array() * (g.array().rowwise() - dot.array())).matrix());
      }
    };
  }
  return out;
}

Var logsumexp_rows(Var a) {
  Tape* t = a.tape();
  Eigen::VectorXd m = a.value().rowwise().maxCoeff();
  Eigen::ArrayXXd e = (a.value().array().colwise() - m.array()).exp();
  Eigen::ArrayXd s = e.rowwise().sum();
  Mat v = (m.array() + s.log()).matrix();
  Mat p = (e.colwise() / s).matrix();  // row-softmax, reused in backward
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, p = std::move(p)] {
      t->accum(ia, (p.array().colwise() * out_grad(t, io).col(0).array()).matrix());
    };
  }
  return out;
}

Var row_normalize(Var a, double eps) {
  Tape* t = a.tape();
  Eigen::ArrayXd s = (a.value().array() + eps).rowwise().sum();
  Mat y = ((a.value().array() + eps).colwise() / s).matrix();
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(y), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, s = std::move(s)] {
      const Mat& g = out_grad(t, io);
      const Mat& yv = t->node(io).value();
      Eigen::ArrayXd dot = g.cwiseProduct(yv).rowwise().sum().array();
      t->accum(ia, ((g.array().colwise() - dot).colwise() / s).matrix());
    };
  }
  return out;
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  same_tape(x, gamma);
  Tape* t = same_tape(x, beta);
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "layer_norm: gamma must be 1 x cols(x)");
  require(beta.rows() == 1 && beta.cols() == x.cols(), "layer_norm: beta must be 1 x cols(x)");
  require(eps > 0.0, "layer_norm: eps must be positive");
  const Eigen::Index c = x.cols();
  Eigen::ArrayXd mu = x.value().rowwise().mean();
  Eigen::ArrayXXd d = x.value().array().colwise() - mu;
  Eigen::ArrayXd inv = 1.0 / ((d.square().rowwise().sum() / static_cast<double>(c)) + eps).sqrt();
  Mat xhat = (d.colwise() * inv).matrix();
  Mat y = ((xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
           beta.value().row(0).array())
              .matrix();
  const bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  Var out = t->emplace(std::move(y), ng, {});
  if (ng) {
    const int ix = x.index(), ig = gamma.index(), ib = beta.index(), io = out.index();
    t->node(io).back = [t, ix, ig, ib, io, xhat = std::move(xhat), inv = std::move(inv), c] {
      const Mat& g = out_grad(t, io);
      t->accum(ib, g.colwise().sum());
      t->accum(ig, g.cwiseProduct(xhat).colwise().sum());
      if (t->node(ix).needs_grad) {
        Eigen::ArrayXXd dxhat = g.array().rowwise() * t->node(ig).value().row(0).array();
        Eigen::ArrayXd sum_d = dxhat.rowwise().sum();
        Eigen::ArrayXd sum_dx = (dxhat * xhat.array()).rowwise().sum();
        const double cn = static_cast<double>(c);
        Eigen::ArrayXXd dx =
            ((dxhat * cn).colwise() - sum_d) - (xhat.array().colwise() * sum_dx);
        t->accum(ix, (dx.colwise() * (inv / cn)).matrix());
      }
    };
  }
  return out;
}

Var l2_normalize_rows(Var x) {
  Tape* t = x.tape();
  Eigen::ArrayXd n = x.value().rowwise().norm();
  for (Eigen::Index i = 0; i < n.size(); ++i)
    if (!(n(i) > 1e-30))
      throw numeric_error("l2_normalize_rows: row " + std::to_string(i) +
                          " has (near-)zero norm before normalization");
  Mat y = (x.value().array().colwise() / n).matrix();
  const bool ng = x.needs_grad();
  Var out = t->emplace(std::move(y), ng, {});
  if (ng) {
    const int ix = x.index(), io = out.index();
    t->node(io).back = [t, ix, io, n = std::move(n)] {
      const Mat& g = out_grad(t, io);
      const Mat& yv = t->node(io).value();
      Eigen::ArrayXd dot = g.cwiseProduct(yv).rowwise().sum().array();
      t->accum(ix, ((g.array() - (yv.array().colwise() * dot)).colwise() / n).matrix());
    };
  }
  return out;
}

Var gather_cols(Var a, const std::vector<Eigen::Index>& idx) {
  Tape* t = a.tape();
  require(static_cast<Eigen::Index>(idx.size()) == a.rows(), "gather_cols: one index per row");
  Mat v(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    require(idx[static_cast<std::size_t>(i)] >= 0 && idx[static_cast<std::size_t>(i)] < a.cols(),
            "gather_cols: index out of range");
    v(i, 0) = a.value()(i, idx[static_cast<std::size_t>(i)]);
  }
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, idx] {
      const Mat& g = out_grad(t, io);
      Mat& ga = t->grad_mut(ia);
      for (Eigen::Index i = 0; i < g.rows(); ++i)
        ga(i, idx[static_cast<std::size_t>(i)]) += g(i, 0);
    };
  }
  return out;
}

Var mse(Var a, Var target) {
  Tape* t = same_tape(a, target);
  require(a.rows() == target.rows() && a.cols() == target.cols(), "mse: shape mismatch");
  Mat diff = a.value() - target.value();
  const double n = static_cast<double>(a.rows() * a.cols());
  Var out = t->emplace(Mat::Constant(1, 1, diff.squaredNorm() / n),
                       a.needs_grad() || target.needs_grad(), {});
  if (out.needs_grad()) {
    const int ia = a.index(), ib = target.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io, diff = std::move(diff), n] {
      const double g = out_grad(t, io)(0, 0) * 2.0 / n;
      if (t->node(ia).needs_grad) t->accum(ia, diff * g);
      if (t->node(ib).needs_grad) t->accum(ib, diff * (-g));
    };
  }
  return out;
}

Var gru_cell(Var state, Var input, const GruWeights& w) {
  require(state.rows() == input.rows(), "gru_cell: state/input row mismatch");
  require(state.cols() == w.u_z.value().rows() && input.cols() == w.w_z.value().rows(),
          "gru_cell: weight shapes inconsistent with state/input");
  Var z = sigmoid(add_row_broadcast(add(matmul(input, w.w_z), matmul(state, w.u_z)), w.b_z));
  Var r = sigmoid(add_row_broadcast(add(matmul(input, w.w_r), matmul(state, w.u_r)), w.b_r));
  Var h = tanh_(add_row_broadcast(add(matmul(input, w.w_h), matmul(mul(r, state), w.u_h)), w.b_h));
  // out = z*h + (1-z)*state
  return add(mul(z, h), sub(state, mul(z, state)));
}

}  // namespace ctrlo::ad
