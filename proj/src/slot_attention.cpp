#include "ctrlo/slot_attention.hpp"

#include <cmath>

namespace ctrlo {

using ad::Mat;
using ad::Var;

namespace {
constexpr double kAttnEps = 1e-8;  // added to attention before the weighted mean
constexpr double kLnEps = 1e-5;
}  // namespace

SlotAttnParams SlotAttnParams::init(int d_in, int d_slot, int d_sa, int d_query, int mlp_hidden,
                                    Rng& rng) {
  SlotAttnParams p;
  p.w_k = glorot(d_in, d_sa, rng);
  p.w_q = glorot(d_slot, d_sa, rng);
  p.w_v = glorot(d_in, d_slot, rng);
  p.query_w = glorot(d_query, d_slot, rng);
  p.query_b = zeros(1, d_slot);
  p.gru_wz = glorot(d_slot, d_slot, rng);
  p.gru_uz = glorot(d_slot, d_slot, rng);
  p.gru_bz = zeros(1, d_slot);
  p.gru_wr = glorot(d_slot, d_slot, rng);
  p.gru_ur = glorot(d_slot, d_slot, rng);
  p.gru_br = zeros(1, d_slot);
  p.gru_wh = glorot(d_slot, d_slot, rng);
  p.gru_uh = glorot(d_slot, d_slot, rng);
  p.gru_bh = zeros(1, d_slot);
  p.mlp_w1 = glorot(d_slot, mlp_hidden, rng);
  p.mlp_b1 = zeros(1, mlp_hidden);
  p.mlp_w2 = glorot(mlp_hidden, d_slot, rng);
  p.mlp_b2 = zeros(1, d_slot);
  p.ln_in_g = ones(1, d_in);
  p.ln_in_b = zeros(1, d_in);
  p.ln_slots_g = ones(1, d_slot);
  p.ln_slots_b = zeros(1, d_slot);
  p.ln_mlp_g = ones(1, d_slot);
  p.ln_mlp_b = zeros(1, d_slot);
  p.init_mean = rng.normal_matrix(1, d_slot, 0.5);
  p.init_log_std = ad::Mat::Constant(1, d_slot, -1.0);
  return p;
}

void SlotAttnParams::register_into(ParamRegistry& reg, const std::string& prefix) const {
  auto* self = const_cast<SlotAttnParams*>(this);
  reg.add(prefix + ".w_k", &self->w_k);
  reg.add(prefix + ".w_q", &self->w_q);
  reg.add(prefix + ".w_v", &self->w_v);
  reg.add(prefix + ".query_w", &self->query_w);
  reg.add(prefix + ".query_b", &self->query_b);
  reg.add(prefix + ".gru_wz", &self->gru_wz);
  reg.add(prefix + ".gru_uz", &self->gru_uz);
  reg.add(prefix + ".gru_bz", &self->gru_bz);
  reg.add(prefix + ".gru_wr", &self->gru_wr);
  reg.add(prefix + ".gru_ur", &self->gru_ur);
  reg.add(prefix + ".gru_br", &self->gru_br);
  reg.add(prefix + ".gru_wh", &self->gru_wh);
  reg.add(prefix + ".gru_uh", &self->gru_uh);
  reg.add(prefix + ".gru_bh", &self->gru_bh);
  reg.add(prefix + ".mlp_w1", &self->mlp_w1);
  reg.add(prefix + ".mlp_b1", &self->mlp_b1);
  reg.add(prefix + ".mlp_w2", &self->mlp_w2);
  reg.add(prefix + ".mlp_b2", &self->mlp_b2);
  reg.add(prefix + ".ln_in_g", &self->ln_in_g);
  reg.add(prefix + ".ln_in_b", &self->ln_in_b);
  reg.add(prefix + ".ln_slots_g", &self->ln_slots_g);
  reg.add(prefix + ".ln_slots_b", &self->ln_slots_b);
  reg.add(prefix + ".ln_mlp_g", &self->ln_mlp_g);
  reg.add(prefix + ".ln_mlp_b", &self->ln_mlp_b);
  reg.add(prefix + ".init_mean", &self->init_mean);
  reg.add(prefix + ".init_log_std", &self->init_log_std);
}

Mat draw_slot_noise(int free_rows, int d_slot, Rng& rng) {
  return rng.normal_matrix(free_rows, d_slot);
}

Var init_slots(ParamContext& ctx, const SlotAttnParams& p, Var cond, int n_slots,
               SlotInitMode mode, const Mat& noise) {
  const int m = (cond.valid() && mode != SlotInitMode::none) ? static_cast<int>(cond.rows()) : 0;
  if (cond.valid() && static_cast<int>(cond.rows()) > n_slots)
    throw contract_error("init_slots: more queries than slots (M > N)");
  const int free = n_slots - m;
  if (noise.rows() < free || noise.cols() != p.d_slot())
    throw argument_error("init_slots: noise shape mismatch");

  ad::Tape& t = ctx.tape();
  std::vector<Var> parts;
  Var mean = ctx.use(p.init_mean);
  Var std_row = ad::exp_(ctx.use(p.init_log_std));
  auto gaussian_rows = [&](int rows, int row_offset) {
    Var eps = t.constant(noise.middleRows(row_offset, rows));
    return ad::add_row_broadcast(ad::mul(eps, ad::tile_rows(std_row, rows)), mean);
  };
  if (m > 0) {
    Var proj = ad::linear(cond, ctx.use(p.query_w), ctx.use(p.query_b));
    if (mode == SlotInitMode::add) {
      // conditioned rows consume the first m noise rows to stay aligned
      if (noise.rows() < n_slots) throw argument_error("init_slots: noise shape mismatch");
      parts.push_back(ad::add(proj, gaussian_rows(m, 0)));
      if (free > 0) parts.push_back(gaussian_rows(free, m));
    } else {
      parts.push_back(proj);
      if (free > 0) parts.push_back(gaussian_rows(free, 0));
    }
  } else if (free > 0) {
    parts.push_back(gaussian_rows(free, 0));
  }
  return parts.size() == 1 ? parts.front() : ad::concat_rows(parts);
}

Var init_slots(ParamContext& ctx, const SlotAttnParams& p, Var cond, int n_slots,
               SlotInitMode mode, Rng& rng) {
  const Mat noise = draw_slot_noise(n_slots, p.d_slot(), rng);
  return init_slots(ctx, p, cond, n_slots, mode, noise);
}

namespace {

// Shared body: k(inputs) / v(inputs) are hoisted out of the iteration loop by
// run_slot_attention.
SlotAttnState attention_step_pre(ParamContext& ctx, const SlotAttnParams& p, Var slots,
                                 Var k_in, Var v_in) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(p.d_sa()));
  Var slots_ln = ad::layer_norm(slots, ctx.use(p.ln_slots_g), ctx.use(p.ln_slots_b), kLnEps);
  Var q = ad::matmul(slots_ln, ctx.use(p.w_q));  // n x d_sa
  // logits over (patch, slot); softmax across slots
  Var logits = ad::scale(ad::matmul(k_in, ad::transpose(q)), inv_sqrt_d);  // k x n
  Var attn = ad::transpose(ad::softmax(logits, 1));                       // n x k
  Var weights = ad::row_normalize(attn, kAttnEps);
  Var updates = ad::matmul(weights, v_in);  // n x d_slot

  ad::GruWeights gw{ctx.use(p.gru_wz), ctx.use(p.gru_uz), ctx.use(p.gru_bz),
                    ctx.use(p.gru_wr), ctx.use(p.gru_ur), ctx.use(p.gru_br),
                    ctx.use(p.gru_wh), ctx.use(p.gru_uh), ctx.use(p.gru_bh)};
  Var next = ad::gru_cell(slots, updates, gw);
  Var h = ad::layer_norm(next, ctx.use(p.ln_mlp_g), ctx.use(p.ln_mlp_b), kLnEps);
  h = ad::linear(ad::silu(ad::linear(h, ctx.use(p.mlp_w1), ctx.use(p.mlp_b1))),
                 ctx.use(p.mlp_w2), ctx.use(p.mlp_b2));
  SlotAttnState out;
  out.slots = ad::add(next, h);
  out.attn = attn;
  out.weights = weights;
  return out;
}

}  // namespace

SlotAttnState attention_step(ParamContext& ctx, const SlotAttnParams& p, Var slots, Var inputs) {
  if (static_cast<int>(inputs.cols()) != p.d_in())
    throw argument_error("attention_step: input width mismatch");
  if (static_cast<int>(slots.cols()) != p.d_slot())
    throw argument_error("attention_step: slot width mismatch");
  Var k_in = ad::matmul(inputs, ctx.use(p.w_k));
  Var v_in = ad::matmul(inputs, ctx.use(p.w_v));
  return attention_step_pre(ctx, p, slots, k_in, v_in);
}

SlotAttnState run_slot_attention(ParamContext& ctx, const SlotAttnParams& p, Var inputs,
                                 Var cond, int n_slots, int t_iters, SlotInitMode mode,
                                 const Mat& noise) {
  if (t_iters < 1) throw argument_error("run_slot_attention: need at least one iteration");
  Var x = ad::layer_norm(inputs, ctx.use(p.ln_in_g), ctx.use(p.ln_in_b), kLnEps);
  Var k_in = ad::matmul(x, ctx.use(p.w_k));
  Var v_in = ad::matmul(x, ctx.use(p.w_v));
  Var slots = init_slots(ctx, p, cond, n_slots, mode, noise);
  SlotAttnState st;
  for (int it = 0; it < t_iters; ++it) {
    st = attention_step_pre(ctx, p, slots, k_in, v_in);
    slots = st.slots;
  }
  st.conditioned = (cond.valid() && mode != SlotInitMode::none) ? static_cast<int>(cond.rows()) : 0;
  return st;
}

}  // namespace ctrlo
