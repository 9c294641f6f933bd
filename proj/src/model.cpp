#include "ctrlo/model.hpp"

#include <cmath>

namespace ctrlo {

using ad::Mat;
using ad::Var;

namespace {
constexpr double kLnEps = 1e-5;
constexpr int kMappingBlocks = 3;
}  // namespace

MappingParams MappingParams::init(int d_in, int attn_width, int ff_width, int heads, Rng& rng) {
  if (attn_width % heads != 0)
    throw argument_error("mapping: attention width must divide into heads");
  MappingParams p;
  p.heads = heads;
  for (int b = 0; b < kMappingBlocks; ++b) {
    MappingBlock blk;
    blk.ln1_g = ones(1, d_in);
    blk.ln1_b = zeros(1, d_in);
    blk.w_q = glorot(d_in, attn_width, rng);
    blk.w_k = glorot(d_in, attn_width, rng);
    blk.w_v = glorot(d_in, attn_width, rng);
    blk.w_o = glorot(attn_width, d_in, rng);
    blk.b_o = zeros(1, d_in);
    blk.ln2_g = ones(1, d_in);
    blk.ln2_b = zeros(1, d_in);
    blk.ff_w1 = glorot(d_in, ff_width, rng);
    blk.ff_b1 = zeros(1, ff_width);
    blk.ff_w2 = glorot(ff_width, d_in, rng);
    blk.ff_b2 = zeros(1, d_in);
    p.blocks.push_back(std::move(blk));
  }
  return p;
}

void MappingParams::register_into(ParamRegistry& reg, const std::string& prefix) const {
  auto* self = const_cast<MappingParams*>(this);
  for (std::size_t b = 0; b < self->blocks.size(); ++b) {
    MappingBlock& blk = self->blocks[b];
    const std::string pre = prefix + ".block" + std::to_string(b);
    reg.add(pre + ".ln1_g", &blk.ln1_g);
    reg.add(pre + ".ln1_b", &blk.ln1_b);
    reg.add(pre + ".w_q", &blk.w_q);
    reg.add(pre + ".w_k", &blk.w_k);
    reg.add(pre + ".w_v", &blk.w_v);
    reg.add(pre + ".w_o", &blk.w_o);
    reg.add(pre + ".b_o", &blk.b_o);
    reg.add(pre + ".ln2_g", &blk.ln2_g);
    reg.add(pre + ".ln2_b", &blk.ln2_b);
    reg.add(pre + ".ff_w1", &blk.ff_w1);
    reg.add(pre + ".ff_b1", &blk.ff_b1);
    reg.add(pre + ".ff_w2", &blk.ff_w2);
    reg.add(pre + ".ff_b2", &blk.ff_b2);
  }
}

Var map_features(ParamContext& ctx, const MappingParams& p, Var h) {
  Var x = h;
  for (const MappingBlock& blk : p.blocks) {
    Var a = ad::layer_norm(x, ctx.use(blk.ln1_g), ctx.use(blk.ln1_b), kLnEps);
    Var q = ad::matmul(a, ctx.use(blk.w_q));
    Var k = ad::matmul(a, ctx.use(blk.w_k));
    Var v = ad::matmul(a, ctx.use(blk.w_v));
    const Eigen::Index width = q.cols();
    const Eigen::Index dh = width / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int hix = 0; hix < p.heads; ++hix) {
      Var qh = ad::col_slice(q, hix * dh, dh);
      Var kh = ad::col_slice(k, hix * dh, dh);
      Var vh = ad::col_slice(v, hix * dh, dh);
      Var scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
      heads.push_back(ad::matmul(ad::softmax(scores, 1), vh));
    }
    Var attn_out = p.heads == 1 ? heads.front() : ad::concat_cols(heads);
    x = ad::add(x, ad::linear(attn_out, ctx.use(blk.w_o), ctx.use(blk.b_o)));
    Var f = ad::layer_norm(x, ctx.use(blk.ln2_g), ctx.use(blk.ln2_b), kLnEps);
    f = ad::linear(ad::silu(ad::linear(f, ctx.use(blk.ff_w1), ctx.use(blk.ff_b1))),
                   ctx.use(blk.ff_w2), ctx.use(blk.ff_b2));
    x = ad::add(x, f);
  }
  return x;
}

DecoderParams DecoderParams::init(int k, int d_slot, int d_query, int cond_hidden, int width,
                                  int hidden_layers, int d_feat, Rng& rng) {
  DecoderParams p;
  p.cond_w1 = glorot(d_slot + d_query, cond_hidden, rng);
  p.cond_b1 = zeros(1, cond_hidden);
  p.cond_w2 = glorot(cond_hidden, d_slot, rng);
  p.cond_b2 = zeros(1, d_slot);
  p.null_query = rng.normal_matrix(1, d_query, 0.1);
  p.pos_emb = rng.normal_matrix(k, d_slot, 0.1);
  int in = d_slot;
  for (int l = 0; l < hidden_layers; ++l) {
    p.mlp_w.push_back(glorot(in, width, rng));
    p.mlp_b.push_back(zeros(1, width));
    in = width;
  }
  p.mlp_w.push_back(glorot(in, d_feat + 1, rng));
  p.mlp_b.push_back(zeros(1, d_feat + 1));
  return p;
}

void DecoderParams::register_into(ParamRegistry& reg, const std::string& prefix) const {
  auto* self = const_cast<DecoderParams*>(this);
  reg.add(prefix + ".cond_w1", &self->cond_w1);
  reg.add(prefix + ".cond_b1", &self->cond_b1);
  reg.add(prefix + ".cond_w2", &self->cond_w2);
  reg.add(prefix + ".cond_b2", &self->cond_b2);
  reg.add(prefix + ".null_query", &self->null_query);
  reg.add(prefix + ".pos_emb", &self->pos_emb);
  for (std::size_t l = 0; l < self->mlp_w.size(); ++l) {
    reg.add(prefix + ".mlp_w" + std::to_string(l), &self->mlp_w[l]);
    reg.add(prefix + ".mlp_b" + std::to_string(l), &self->mlp_b[l]);
  }
}

void decode(ParamContext& ctx, const DecoderParams& p, Var slots, Var cond,
            bool use_conditioning, ModelOutput& out) {
  const int n = static_cast<int>(slots.rows());
  const int m = cond.valid() ? static_cast<int>(cond.rows()) : 0;
  if (m > n) throw contract_error("decode: more queries than slots");
  const int d_feat = static_cast<int>(p.mlp_w.back().cols()) - 1;

  Var z = slots;
  if (use_conditioning) {
    Var queries_full;
    if (m == 0) {
      queries_full = ad::tile_rows(ctx.use(p.null_query), n);
    } else if (m == n) {
      queries_full = cond;
    } else {
      queries_full = ad::concat_rows({cond, ad::tile_rows(ctx.use(p.null_query), n - m)});
    }
    Var joined = ad::concat_cols({slots, queries_full});
    z = ad::linear(ad::silu(ad::linear(joined, ctx.use(p.cond_w1), ctx.use(p.cond_b1))),
                   ctx.use(p.cond_w2), ctx.use(p.cond_b2));
  }

  Var pos = ctx.use(p.pos_emb);
  out.recon_per_slot.clear();
  std::vector<Var> alpha_rows;
  alpha_rows.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Var h = ad::add_row_broadcast(pos, ad::row_slice(z, i, 1));  // broadcast slot over positions
    for (std::size_t l = 0; l + 1 < p.mlp_w.size(); ++l)
      h = ad::silu(ad::linear(h, ctx.use(p.mlp_w[l]), ctx.use(p.mlp_b[l])));
    h = ad::linear(h, ctx.use(p.mlp_w.back()), ctx.use(p.mlp_b.back()));
    out.recon_per_slot.push_back(ad::col_slice(h, 0, d_feat));
    alpha_rows.push_back(ad::transpose(ad::col_slice(h, d_feat, 1)));
  }
  out.alpha = n == 1 ? alpha_rows.front() : ad::concat_rows(alpha_rows);
  out.masks = ad::softmax(out.alpha, 0);  // over slots, per patch
  Var recon;
  for (int i = 0; i < n; ++i) {
    Var w = ad::transpose(ad::row_slice(out.masks, i, 1));  // k x 1
    Var term = ad::colwise_scale(out.recon_per_slot[static_cast<std::size_t>(i)], w);
    recon = recon.valid() ? ad::add(recon, term) : term;
  }
  out.recon = recon;
}

Var recon_loss(Var recon, Var target) {
  if (recon.rows() != target.rows() || recon.cols() != target.cols())
    throw argument_error("recon_loss: shape mismatch");
  return ad::mse(recon, target);
}

Var total_loss(Var recon, Var contrastive, double lambda) {
  if (lambda < 0.0) throw argument_error("total_loss: lambda must be non-negative");
  if (!contrastive.valid() || lambda == 0.0) return recon;
  return ad::add(recon, ad::scale(contrastive, lambda));
}

ModelParams ModelParams::init(const ModelDims& dims, Rng& rng) {
  ModelParams p;
  p.dims = dims;
  p.mapping = MappingParams::init(dims.d_in, dims.map_attn, dims.map_ff, dims.map_heads, rng);
  p.slot_attn = SlotAttnParams::init(dims.d_in, dims.d_slot, dims.d_sa, 2 * dims.d_emb,
                                     dims.slot_mlp_hidden, rng);
  p.decoder = DecoderParams::init(dims.k, dims.d_slot, 2 * dims.d_emb, dims.cond_hidden,
                                  dims.dec_width, dims.dec_hidden_layers, dims.d_in, rng);
  p.grounding =
      GroundingParams::init(dims.d_in, dims.d_emb, dims.point_hidden, dims.proj_hidden,
                            dims.tau, rng);
  return p;
}

ParamRegistry ModelParams::registry() const {
  ParamRegistry reg;
  mapping.register_into(reg, "map");
  slot_attn.register_into(reg, "sa");
  decoder.register_into(reg, "dec");
  grounding.register_into(reg, "gr");
  return reg;
}

ModelOutput forward_pass(ParamContext& ctx, const ModelParams& p, const FeatureGrid& grid,
                         const QuerySet& queries, const ForwardOptions& opt,
                         const Mat& slot_noise) {
  if (grid.features.rows() != p.dims.k || grid.features.cols() != p.dims.d_in)
    throw argument_error("forward_pass: feature grid does not match model dims");
  ad::Tape& t = ctx.tape();
  Var h = t.constant_view(&grid.features);
  ModelOutput out;
  out.mapped = map_features(ctx, p.mapping, h);

  Var cond;
  if (queries.count() > 0) cond = build_query(ctx, p.grounding, queries);
  out.slots = run_slot_attention(ctx, p.slot_attn, out.mapped, cond, p.dims.n_slots,
                                 p.dims.t_iters, opt.init_mode, slot_noise);
  decode(ctx, p.decoder, out.slots.slots, cond, opt.decoder_conditioning, out);
  return out;
}

std::vector<int> hard_masks(const Mat& masks) {
  std::vector<int> label(static_cast<std::size_t>(masks.cols()), 0);
  for (Eigen::Index k = 0; k < masks.cols(); ++k) {
    int best = 0;
    double bv = masks(0, k);
    for (Eigen::Index i = 1; i < masks.rows(); ++i)
      if (masks(i, k) > bv) {  // strict: ties stay at the lowest index
        bv = masks(i, k);
        best = static_cast<int>(i);
      }
    label[static_cast<std::size_t>(k)] = best;
  }
  return label;
}

}  // namespace ctrlo
