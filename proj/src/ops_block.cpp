#include <string>

#include "ctrlo/ops.hpp"

// Batched block primitives. Loops over sample blocks write disjoint output
// ranges; OpenMP across blocks keeps bitwise results identical for any
// thread count.

namespace ctrlo::ad {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw argument_error(msg);
}

const Mat& out_grad(Tape* t, int io) { return t->node(io).grad; }

}  // namespace

Var select_rows(Var a, std::vector<Eigen::Index> idx) {
  Tape* t = a.tape();
  for (Eigen::Index i : idx)
    require(i >= 0 && i < a.rows(), "select_rows: index out of range");
  Mat v(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) v.row(static_cast<Eigen::Index>(r)) = a.value().row(idx[r]);
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, idx = std::move(idx)] {
      const Mat& g = out_grad(t, io);
      Mat& ga = t->grad_mut(ia);
      for (std::size_t r = 0; r < idx.size(); ++r)
        ga.row(idx[r]) += g.row(static_cast<Eigen::Index>(r));
    };
  }
  return out;
}

Var block_matmul(Var a, Var b, Eigen::Index blocks, bool transpose_b) {
  Tape* t = a.tape();
  require(blocks >= 1 && a.rows() % blocks == 0 && b.rows() % blocks == 0,
          "block_matmul: rows must split evenly into blocks");
  const Eigen::Index ra = a.rows() / blocks;
  const Eigen::Index rb = b.rows() / blocks;
  Eigen::Index out_cols;
  if (transpose_b) {
    require(a.cols() == b.cols(), "block_matmul: inner dimension mismatch (a*b^T)");
    out_cols = rb;
  } else {
    require(a.cols() == rb, "block_matmul: inner dimension mismatch (a*b)");
    out_cols = b.cols();
  }
  Mat v(a.rows(), out_cols);
  {
    const Mat& av = a.value();
    const Mat& bv = b.value();
#pragma omp parallel for schedule(static)
    for (Eigen::Index blk = 0; blk < blocks; ++blk) {
      if (transpose_b)
        v.middleRows(blk * ra, ra).noalias() =
            av.middleRows(blk * ra, ra) * bv.middleRows(blk * rb, rb).transpose();
      else
        v.middleRows(blk * ra, ra).noalias() =
            av.middleRows(blk * ra, ra) * bv.middleRows(blk * rb, rb);
    }
  }
  const bool ng = a.needs_grad() || b.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), ib = b.index(), io = out.index();
    t->node(io).back = [t, ia, ib, io, blocks, ra, rb, transpose_b] {
      const Mat& g = out_grad(t, io);
      const Mat& av = t->node(ia).value();
      const Mat& bv = t->node(ib).value();
      const bool need_a = t->node(ia).needs_grad;
      const bool need_b = t->node(ib).needs_grad;
      Mat& ga = need_a ? t->grad_mut(ia) : t->grad_mut(io);  // placeholder ref
      Mat& gb = need_b ? t->grad_mut(ib) : t->grad_mut(io);
#pragma omp parallel for schedule(static)
      for (Eigen::Index blk = 0; blk < blocks; ++blk) {
        const auto gblk = g.middleRows(blk * ra, ra);
        if (transpose_b) {
          if (need_a) ga.middleRows(blk * ra, ra).noalias() += gblk * bv.middleRows(blk * rb, rb);
          if (need_b)
            gb.middleRows(blk * rb, rb).noalias() += gblk.transpose() * av.middleRows(blk * ra, ra);
        } else {
          if (need_a)
            ga.middleRows(blk * ra, ra).noalias() += gblk * bv.middleRows(blk * rb, rb).transpose();
          if (need_b)
            gb.middleRows(blk * rb, rb).noalias() +=
                av.middleRows(blk * ra, ra).transpose() * gblk;
        }
      }
    };
  }
  return out;
}

Var block_transpose(Var a, Eigen::Index blocks) {
  Tape* t = a.tape();
  require(blocks >= 1 && a.rows() % blocks == 0,
          "block_transpose: rows must split evenly into blocks");
  const Eigen::Index r = a.rows() / blocks;
  const Eigen::Index c = a.cols();
  Mat v(blocks * c, r);
  {
    const Mat& av = a.value();
#pragma omp parallel for schedule(static)
    for (Eigen::Index blk = 0; blk < blocks; ++blk)
      v.middleRows(blk * c, c).noalias() = av.middleRows(blk * r, r).transpose();
  }
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, blocks, r, c] {
      const Mat& g = out_grad(t, io);
      Mat& ga = t->grad_mut(ia);
#pragma omp parallel for schedule(static)
      for (Eigen::Index blk = 0; blk < blocks; ++blk)
        ga.middleRows(blk * r, r).noalias() += g.middleRows(blk * c, c).transpose();
    };
  }
  return out;
}

Var broadcast_positions(Var z, Var pos) {
  Tape* t = z.tape();
  require(z.cols() == pos.cols(), "broadcast_positions: width mismatch");
  const Eigen::Index rows = z.rows();
  const Eigen::Index k = pos.rows();
  Mat v(rows * k, z.cols());
  {
    const Mat& zv = z.value();
    const Mat& pv = pos.value();
#pragma omp parallel for schedule(static)
    for (Eigen::Index r = 0; r < rows; ++r)
      v.middleRows(r * k, k) = pv.rowwise() + zv.row(r);
  }
  const bool ng = z.needs_grad() || pos.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int iz = z.index(), ip = pos.index(), io = out.index();
    t->node(io).back = [t, iz, ip, io, rows, k] {
      const Mat& g = out_grad(t, io);
      if (t->node(iz).needs_grad) {
        Mat& gz = t->grad_mut(iz);
        for (Eigen::Index r = 0; r < rows; ++r)
          gz.row(r) += g.middleRows(r * k, k).colwise().sum();
      }
      if (t->node(ip).needs_grad) {
        Mat& gp = t->grad_mut(ip);
        for (Eigen::Index r = 0; r < rows; ++r) gp += g.middleRows(r * k, k);
      }
    };
  }
  return out;
}

Var fold_rows(Var a, Eigen::Index cols) {
  Tape* t = a.tape();
  require(a.cols() == 1, "fold_rows: input must be a column");
  require(cols >= 1 && a.rows() % cols == 0, "fold_rows: rows must split evenly");
  const Eigen::Index r = a.rows() / cols;
  Mat v(r, cols);
  for (Eigen::Index i = 0; i < r; ++i)
    v.row(i) = a.value().col(0).segment(i * cols, cols).transpose();
  const bool ng = a.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int ia = a.index(), io = out.index();
    t->node(io).back = [t, ia, io, r, cols] {
      const Mat& g = out_grad(t, io);
      Mat& ga = t->grad_mut(ia);
      for (Eigen::Index i = 0; i < r; ++i)
        ga.col(0).segment(i * cols, cols) += g.row(i).transpose();
    };
  }
  return out;
}

Var mask_combine(Var feats, Var masks, Eigen::Index n_slots, Eigen::Index positions) {
  Tape* t = feats.tape();
  require(masks.cols() == positions, "mask_combine: mask width must equal positions");
  require(masks.rows() % n_slots == 0, "mask_combine: mask rows must split into slots");
  const Eigen::Index blocks = masks.rows() / n_slots;
  require(feats.rows() == blocks * n_slots * positions, "mask_combine: feats rows mismatch");
  const Eigen::Index d = feats.cols();
  Mat v = Mat::Zero(blocks * positions, d);
  {
    const Mat& fv = feats.value();
    const Mat& mv = masks.value();
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b)
      for (Eigen::Index i = 0; i < n_slots; ++i) {
        const auto fblk = fv.middleRows((b * n_slots + i) * positions, positions);
        const auto w = mv.row(b * n_slots + i);
        v.middleRows(b * positions, positions).noalias() +=
            w.transpose().asDiagonal() * fblk;
      }
  }
  const bool ng = feats.needs_grad() || masks.needs_grad();
  Var out = t->emplace(std::move(v), ng, {});
  if (ng) {
    const int if_ = feats.index(), im = masks.index(), io = out.index();
    t->node(io).back = [t, if_, im, io, blocks, n_slots, positions] {
      const Mat& g = out_grad(t, io);
      const Mat& fv = t->node(if_).value();
      const Mat& mv = t->node(im).value();
      const bool need_f = t->node(if_).needs_grad;
      const bool need_m = t->node(im).needs_grad;
      Mat& gf = need_f ? t->grad_mut(if_) : t->grad_mut(io);
      Mat& gm = need_m ? t->grad_mut(im) : t->grad_mut(io);
#pragma omp parallel for schedule(static)
      for (Eigen::Index b = 0; b < blocks; ++b) {
        const auto gblk = g.middleRows(b * positions, positions);
        for (Eigen::Index i = 0; i < n_slots; ++i) {
          const Eigen::Index base = (b * n_slots + i) * positions;
          if (need_f)
            gf.middleRows(base, positions).noalias() +=
                mv.row(b * n_slots + i).transpose().asDiagonal() * gblk;
          if (need_m)
            gm.row(b * n_slots + i) +=
                (fv.middleRows(base, positions).cwiseProduct(gblk)).rowwise().sum().transpose();
        }
      }
    };
  }
  return out;
}

}  // namespace ctrlo::ad
