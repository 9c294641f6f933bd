#pragma once

#include <vector>

#include "ctrlo/tape.hpp"

// Differentiable primitives. Free functions over Vars; every op appends one
// node to the tape of its operands. Shapes are Eigen dense matrices; scalars
// are 1x1. Mixed-tape operands are a programming error and throw.

namespace ctrlo::ad {

// Elementwise / arithmetic.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

// y = a + b broadcast over rows (b is 1 x cols): the bias pattern.
Var add_row_broadcast(Var a, Var b);
// y(i,j) = a(i,j) * w(i,0): per-row scaling by a column vector.
Var colwise_scale(Var a, Var w);

Var matmul(Var a, Var b);
Var transpose(Var a);

// Views.
// y = a row repeated n times (n x cols).
Var tile_rows(Var a, Eigen::Index n);
Var row_slice(Var a, Eigen::Index first, Eigen::Index count);
Var col_slice(Var a, Eigen::Index first, Eigen::Index count);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);

// Nonlinearities (all with continuous derivatives).
Var sigmoid(Var a);
Var tanh_(Var a);
Var silu(Var a);  // x * sigmoid(x)
Var exp_(Var a);
Var log_(Var a);

// Reductions.
Var sum(Var a);       // 1x1
Var mean(Var a);      // 1x1
Var row_sums(Var a);  // rows x 1

// softmax along an axis: axis 1 normalizes within each row, axis 0 within
// each column; the output sums to 1 along that axis.
Var softmax(Var a, int axis);
inline Var softmax_rows(Var a) { return softmax(a, 1); }
inline Var softmax_cols(Var a) { return softmax(a, 0); }

// Row-stable log(sum(exp)) -> rows x 1.
Var logsumexp_rows(Var a);

// y_ij = (a_ij + eps) / sum_j (a_ij + eps): rows sum to 1.
Var row_normalize(Var a, double eps);

// Per-row layer norm; gamma/beta are 1 x cols.
Var layer_norm(Var x, Var gamma, Var beta, double eps);

// Rows divided by their Euclidean norm. Throws numeric_error on a
// (numerically) zero row.
Var l2_normalize_rows(Var x);

// Picks one column per row: y(i,0) = a(i, idx[i]).
Var gather_cols(Var a, const std::vector<Eigen::Index>& idx);

// Mean squared error against a target (constant or Var), 1x1.
Var mse(Var a, Var target);

/// Gated recurrent unit over row-parallel states. Weights map input/state
/// columns to gate columns; biases are 1 x dim. Update gate z mixes
/// candidate (z=1) against previous state (z=0).
struct GruWeights {
  Var w_z, u_z, b_z;
  Var w_r, u_r, b_r;
  Var w_h, u_h, b_h;
};
Var gru_cell(Var state, Var input, const GruWeights& w);

// Convenience: x*W + b with b broadcast over rows.
inline Var linear(Var x, Var w, Var b) { return add_row_broadcast(matmul(x, w), b); }

// ---- batched (row-stacked) primitives --------------------------------
// Batched tensors stack the per-sample blocks along rows: a batch of B
// matrices of shape R x C lives in one (B*R) x C matrix. These ops apply a
// per-block product without mixing samples; block loops parallelize over
// disjoint outputs, so results are thread-count independent.

// out.row(i) = a.row(idx[i]); duplicate and omitted rows are fine (backward
// scatter-adds).
Var select_rows(Var a, std::vector<Eigen::Index> idx);

// Per block b: out_b = a_b * b_b (transpose_b=false, a_b: Ra x d, b_b: d ->
// rows_b x cols) or out_b = a_b * b_b^T (transpose_b=true, b_b: Rb x d).
Var block_matmul(Var a, Var b, Eigen::Index blocks, bool transpose_b);

// Per block: out_b = a_b^T (R x C -> C x R, stacked).
Var block_transpose(Var a, Eigen::Index blocks);

// out.row(r*K + k) = z.row(r) + pos.row(k): slot codes broadcast over the K
// decoder positions.
Var broadcast_positions(Var z, Var pos);

// (R*K) x 1 column -> R x K matrix (row-major regrouping).
Var fold_rows(Var a, Eigen::Index cols);

// Mask-weighted sum over slots: feats is (B*N*K) x D (slot-major per
// block), masks is (B*N) x K; out is (B*K) x D with
//   out[(b,k),:] = sum_i masks[(b,i),k] * feats[(b,i,k),:].
Var mask_combine(Var feats, Var masks, Eigen::Index n_slots, Eigen::Index positions);

}  // namespace ctrlo::ad
