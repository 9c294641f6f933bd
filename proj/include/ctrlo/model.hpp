#pragma once

#include <string>
#include <vector>

#include "ctrlo/grounding.hpp"
#include "ctrlo/scene.hpp"
#include "ctrlo/slot_attention.hpp"

namespace ctrlo {

/// Model hyperparameters in one place; RunConfig resolves into this.
struct ModelDims {
  int k = 256;        // patches
  int d_in = 34;      // feature width (also the reconstruction width)
  int n_slots = 7;
  int d_slot = 64;
  int d_sa = 64;      // slot-attention attention dim
  int slot_mlp_hidden = 128;
  int t_iters = 3;
  int map_heads = 4;
  int map_attn = 32;  // total attention width of the mapping network
  int map_ff = 136;   // feedforward width (4 x d_in by default)
  int dec_width = 64;
  int dec_hidden_layers = 3;
  int cond_hidden = 128;
  int d_emb = 16;
  int point_hidden = 32;
  int proj_hidden = 64;
  double tau = 0.1;
};

/// One pre-norm transformer encoder block.
struct MappingBlock {
  ad::Mat ln1_g, ln1_b;
  ad::Mat w_q, w_k, w_v;  // d_in x map_attn
  ad::Mat w_o, b_o;       // map_attn x d_in, 1 x d_in
  ad::Mat ln2_g, ln2_b;
  ad::Mat ff_w1, ff_b1, ff_w2, ff_b2;
};

/// The learnable mapping network g: 3 transformer encoder blocks over the K
/// feature tokens, shape preserving.
struct MappingParams {
  std::vector<MappingBlock> blocks;  // always 3
  int heads = 4;

  static MappingParams init(int d_in, int attn_width, int ff_width, int heads, Rng& rng);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
};

/// Query-conditioned spatial broadcast decoder.
struct DecoderParams {
  ad::Mat cond_w1, cond_b1, cond_w2, cond_b2;  // (d_slot + d_query) -> d_slot
  ad::Mat null_query;                          // 1 x d_query, for unconditioned slots
  ad::Mat pos_emb;                             // k x d_slot, added after broadcast
  std::vector<ad::Mat> mlp_w, mlp_b;           // hidden chain ending in d_feat + 1

  int k() const { return static_cast<int>(pos_emb.rows()); }
  int d_query() const { return static_cast<int>(null_query.cols()); }

  static DecoderParams init(int k, int d_slot, int d_query, int cond_hidden, int width,
                            int hidden_layers, int d_feat, Rng& rng);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
};

/// Everything a forward pass produces that downstream consumers need.
struct ModelOutput {
  SlotAttnState slots;
  std::vector<ad::Var> recon_per_slot;  // n entries of k x d_feat
  ad::Var alpha;                        // n x k logits
  ad::Var masks;                        // n x k, columns sum to 1
  ad::Var recon;                        // k x d_feat
  ad::Var mapped;                       // h' = g(h), k x d_in
};

/// Token-wise transformer encoding of the feature grid; shape preserved.
ad::Var map_features(ParamContext& ctx, const MappingParams& p, ad::Var h);

/// Broadcast-decodes slots (optionally conditioned on the control queries)
/// into per-slot reconstructions, alpha logits, masks and the combined
/// reconstruction. `cond` may be invalid; slots beyond its rows use the
/// learned null query. With `use_conditioning` false the conditioning MLP is
/// bypassed entirely (the unconditioned decoder).
void decode(ParamContext& ctx, const DecoderParams& p, ad::Var slots, ad::Var cond,
            bool use_conditioning, ModelOutput& out);

/// Mean squared error between the reconstruction and the feature grid.
ad::Var recon_loss(ad::Var recon, ad::Var target);

/// recon + lambda * contrastive.
ad::Var total_loss(ad::Var recon, ad::Var contrastive, double lambda);

/// Full parameter bundle.
struct ModelParams {
  ModelDims dims;
  MappingParams mapping;
  SlotAttnParams slot_attn;
  DecoderParams decoder;
  GroundingParams grounding;

  static ModelParams init(const ModelDims& dims, Rng& rng);
  /// Stable name -> matrix registry (declaration order).
  ParamRegistry registry() const;
};

struct ForwardOptions {
  SlotInitMode init_mode = SlotInitMode::assign;
  bool decoder_conditioning = true;
};

/// map_features -> run_slot_attention -> decode. The mapped features are
/// kept on the output for the grounding losses.
ModelOutput forward_pass(ParamContext& ctx, const ModelParams& p, const FeatureGrid& grid,
                         const QuerySet& queries, const ForwardOptions& opt,
                         const ad::Mat& slot_noise);

/// Hard predicted masks: per-patch argmax over slot masks, ties to the
/// lowest slot index. Returns one K-vector of slot ids.
std::vector<int> hard_masks(const ad::Mat& masks);

}  // namespace ctrlo
