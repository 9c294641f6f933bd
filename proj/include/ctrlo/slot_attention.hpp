#pragma once

#include <string>

#include "ctrlo/params.hpp"

namespace ctrlo {

/// How conditioned slots are initialized from projected queries.
/// `assign` writes the projection into the slot, `add` adds it to a Gaussian
/// sample, `none` ignores queries at initialization entirely.
enum class SlotInitMode { assign, add, none };

struct SlotAttnParams {
  // attention projections
  ad::Mat w_k;  // d_in x d_sa
  ad::Mat w_q;  // d_slot x d_sa
  ad::Mat w_v;  // d_in x d_slot
  // query projection p_l into slot space
  ad::Mat query_w;  // d_query x d_slot
  ad::Mat query_b;  // 1 x d_slot
  // GRU
  ad::Mat gru_wz, gru_uz, gru_bz;
  ad::Mat gru_wr, gru_ur, gru_br;
  ad::Mat gru_wh, gru_uh, gru_bh;
  // residual MLP
  ad::Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  // layer norms: inputs (once per run), slots (per iteration), pre-MLP
  ad::Mat ln_in_g, ln_in_b;
  ad::Mat ln_slots_g, ln_slots_b;
  ad::Mat ln_mlp_g, ln_mlp_b;
  // learned Gaussian for free slots
  ad::Mat init_mean;     // 1 x d_slot
  ad::Mat init_log_std;  // 1 x d_slot

  int d_in() const { return static_cast<int>(w_k.rows()); }
  int d_sa() const { return static_cast<int>(w_k.cols()); }
  int d_slot() const { return static_cast<int>(w_q.rows()); }
  int d_query() const { return static_cast<int>(query_w.rows()); }

  static SlotAttnParams init(int d_in, int d_slot, int d_sa, int d_query, int mlp_hidden,
                             Rng& rng);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
};

/// Slots plus the attention map of the last iteration. `weights` are the
/// per-slot renormalized attention rows used by the update rule (and by the
/// grounding aggregation).
struct SlotAttnState {
  ad::Var slots;    // n x d_slot
  ad::Var attn;     // n x k, columns sum to 1 over slots
  ad::Var weights;  // n x k, rows sum to 1 over patches
  int conditioned = 0;
};

/// Draws free-slot noise (rows M..N-1) for init_slots; split out so callers
/// control determinism per (seed, step, sample).
ad::Mat draw_slot_noise(int free_rows, int d_slot, Rng& rng);

/// Initializes N slots: the first M from projected conditioning vectors, the
/// rest from the learned Gaussian with the given noise. `cond` may be an
/// invalid Var when M == 0. Throws contract_error if M > N.
ad::Var init_slots(ParamContext& ctx, const SlotAttnParams& p, ad::Var cond, int n_slots,
                   SlotInitMode mode, const ad::Mat& noise);
ad::Var init_slots(ParamContext& ctx, const SlotAttnParams& p, ad::Var cond, int n_slots,
                   SlotInitMode mode, Rng& rng);

/// One attention iteration. `inputs` must already be layer-normalized (done
/// once per run). Returns the updated slots and both attention maps.
SlotAttnState attention_step(ParamContext& ctx, const SlotAttnParams& p, ad::Var slots,
                             ad::Var inputs);

/// Full Alg-1 loop: layer-norms inputs, initializes slots, iterates T times
/// and returns the final slots with the last iteration's attention.
SlotAttnState run_slot_attention(ParamContext& ctx, const SlotAttnParams& p, ad::Var inputs,
                                 ad::Var cond, int n_slots, int t_iters, SlotInitMode mode,
                                 const ad::Mat& noise);

}  // namespace ctrlo
