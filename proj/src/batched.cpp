#include "ctrlo/batched.hpp"

#include <cmath>
#include <numeric>

namespace ctrlo {

using ad::Mat;
using ad::Var;

namespace {
constexpr double kAttnEps = 1e-8;
constexpr double kLnEps = 1e-5;
}  // namespace

BatchedInputs pack_batch(const std::vector<const Sample*>& batch,
                         const std::vector<Mat>& noises) {
  if (batch.empty()) throw contract_error("pack_batch: empty batch");
  const Sample& first = *batch.front();
  const int k = first.grid.patch_count();
  const int d_in = static_cast<int>(first.grid.features.cols());
  const int b = static_cast<int>(batch.size());

  BatchedInputs in;
  in.features.resize(static_cast<Eigen::Index>(b) * k, d_in);
  int total_q = 0;
  for (const Sample* s : batch) {
    if (s->grid.patch_count() != k || s->grid.features.cols() != d_in)
      throw argument_error("pack_batch: inconsistent sample shapes");
    total_q += s->queries.count();
  }
  const int d_emb = total_q > 0 ? [&] {
    for (const Sample* s : batch)
      if (s->queries.count() > 0) return static_cast<int>(s->queries.lang_codes.cols());
    return 0;
  }() : 0;
  in.lang_codes.resize(total_q, d_emb);
  in.points.resize(total_q, 2);
  in.has_point.reserve(static_cast<std::size_t>(total_q));
  const Eigen::Index n = noises.empty() ? 0 : noises.front().rows();
  const Eigen::Index d_slot = noises.empty() ? 0 : noises.front().cols();
  in.slot_noise.resize(static_cast<Eigen::Index>(b) * n, d_slot);

  int at = 0;
  for (int bi = 0; bi < b; ++bi) {
    const Sample& s = *batch[static_cast<std::size_t>(bi)];
    in.features.middleRows(static_cast<Eigen::Index>(bi) * k, k) = s.grid.features;
    in.slot_noise.middleRows(static_cast<Eigen::Index>(bi) * n, n) =
        noises[static_cast<std::size_t>(bi)];
    in.query_count.push_back(s.queries.count());
    for (int q = 0; q < s.queries.count(); ++q, ++at) {
      in.lang_codes.row(at) = s.queries.lang_codes.row(q);
      in.points.row(at) = s.queries.points.row(q);
      in.has_point.push_back(s.queries.has_point[static_cast<std::size_t>(q)]);
    }
  }
  return in;
}

namespace {

Var batched_mapping(ParamContext& ctx, const MappingParams& p, Var x, Eigen::Index batch) {
  for (const MappingBlock& blk : p.blocks) {
    Var a = ad::layer_norm(x, ctx.use(blk.ln1_g), ctx.use(blk.ln1_b), kLnEps);
    Var q = ad::matmul(a, ctx.use(blk.w_q));
    Var k = ad::matmul(a, ctx.use(blk.w_k));
    Var v = ad::matmul(a, ctx.use(blk.w_v));
    const Eigen::Index dh = q.cols() / p.heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> heads;
    heads.reserve(static_cast<std::size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
      Var qh = p.heads == 1 ? q : ad::col_slice(q, h * dh, dh);
      Var kh = p.heads == 1 ? k : ad::col_slice(k, h * dh, dh);
      Var vh = p.heads == 1 ? v : ad::col_slice(v, h * dh, dh);
      Var scores = ad::scale(ad::block_matmul(qh, kh, batch, true), inv_sqrt);
      heads.push_back(ad::block_matmul(ad::softmax_rows(scores), vh, batch, false));
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

}  // namespace

BatchedStep batched_step(ParamContext& ctx, const ModelParams& params, const RunConfig& cfg,
                         const BatchedInputs& in, const detail::BatchContext& bt,
                         bool contrastive_from_slots, const GroundingParams* slot_head) {
  ad::Tape& t = ctx.tape();
  const Eigen::Index batch = static_cast<Eigen::Index>(in.query_count.size());
  const int k = params.dims.k;
  const int n = params.dims.n_slots;
  const int total_q =
      std::accumulate(in.query_count.begin(), in.query_count.end(), 0);
  const SlotInitMode mode = cfg.slot_init_mode();

  Var features = t.constant_view(&in.features);
  Var mapped = batched_mapping(ctx, params.mapping, features, batch);

  // ---- slot attention over row blocks -----------------------------------
  const SlotAttnParams& sp = params.slot_attn;
  Var x = ad::layer_norm(mapped, ctx.use(sp.ln_in_g), ctx.use(sp.ln_in_b), kLnEps);
  Var k_in = ad::matmul(x, ctx.use(sp.w_k));
  Var v_in = ad::matmul(x, ctx.use(sp.w_v));

  Var cond_flat;  // (sum M) x d_query
  if (total_q > 0) {
    Var lang = t.constant_view(&in.lang_codes);
    Var pts;
    bool any = false;
    for (std::uint8_t f : in.has_point) any = any || f != 0;
    if (any) pts = t.constant_view(&in.points);
    cond_flat = build_query(ctx, params.grounding, lang, pts, in.has_point);
  }

  // initial slots: conditioned rows take the projected queries, the rest the
  // learned Gaussian
  Var gaussian = ad::add_row_broadcast(
      ad::mul(t.constant_view(&in.slot_noise),
              ad::tile_rows(ad::exp_(ctx.use(sp.init_log_std)), batch * n)),
      ctx.use(sp.init_mean));
  Var slots;
  std::vector<Eigen::Index> cond_slot_rows;  // flat (b*n + i) per conditioned slot
  {
    int off = 0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      const int m = in.query_count[static_cast<std::size_t>(b)];
      if (m > n) throw contract_error("batched_step: more queries than slots (M > N)");
      for (int i = 0; i < m; ++i) cond_slot_rows.push_back(b * n + i);
      off += m;
    }
    (void)off;
  }
  if (total_q == 0 || mode == SlotInitMode::none) {
    slots = gaussian;
  } else {
    Var proj = ad::linear(cond_flat, ctx.use(sp.query_w), ctx.use(sp.query_b));
    if (mode == SlotInitMode::add)
      proj = ad::add(proj, ad::select_rows(gaussian, cond_slot_rows));
    Var cat = ad::concat_rows({proj, gaussian});
    std::vector<Eigen::Index> pick(static_cast<std::size_t>(batch * n));
    int qi = 0;
    for (Eigen::Index b = 0; b < batch; ++b) {
      const int m = in.query_count[static_cast<std::size_t>(b)];
      for (int i = 0; i < n; ++i)
        pick[static_cast<std::size_t>(b * n + i)] =
            i < m ? qi + i : total_q + b * n + i;
      qi += m;
    }
    slots = ad::select_rows(cat, pick);
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(sp.d_sa()));
  Var attn, weights;
  for (int it = 0; it < params.dims.t_iters; ++it) {
    Var slots_ln = ad::layer_norm(slots, ctx.use(sp.ln_slots_g), ctx.use(sp.ln_slots_b), kLnEps);
    Var q = ad::matmul(slots_ln, ctx.use(sp.w_q));                        // (B*N) x d_sa
    Var logits = ad::scale(ad::block_matmul(k_in, q, batch, true), inv_sqrt_d);  // (B*K) x N
    attn = ad::block_transpose(ad::softmax_rows(logits), batch);          // (B*N) x K
    weights = ad::row_normalize(attn, kAttnEps);
    Var updates = ad::block_matmul(weights, v_in, batch, false);          // (B*N) x d_slot
    ad::GruWeights gw{ctx.use(sp.gru_wz), ctx.use(sp.gru_uz), ctx.use(sp.gru_bz),
                      ctx.use(sp.gru_wr), ctx.use(sp.gru_ur), ctx.use(sp.gru_br),
                      ctx.use(sp.gru_wh), ctx.use(sp.gru_uh), ctx.use(sp.gru_bh)};
    Var next = ad::gru_cell(slots, updates, gw);
    Var h = ad::layer_norm(next, ctx.use(sp.ln_mlp_g), ctx.use(sp.ln_mlp_b), kLnEps);
    h = ad::linear(ad::silu(ad::linear(h, ctx.use(sp.mlp_w1), ctx.use(sp.mlp_b1))),
                   ctx.use(sp.mlp_w2), ctx.use(sp.mlp_b2));
    slots = ad::add(next, h);
  }

  // ---- decoder -----------------------------------------------------------
  const DecoderParams& dp = params.decoder;
  Var z = slots;
  if (cfg.decoder_conditioning) {
    Var queries_full;
    if (total_q == 0) {
      queries_full = ad::tile_rows(ctx.use(dp.null_query), batch * n);
    } else {
      Var cat = ad::concat_rows({cond_flat, ctx.use(dp.null_query)});
      std::vector<Eigen::Index> pick(static_cast<std::size_t>(batch * n),
                                     static_cast<Eigen::Index>(total_q));
      int qi = 0;
      for (Eigen::Index b = 0; b < batch; ++b) {
        const int m = in.query_count[static_cast<std::size_t>(b)];
        for (int i = 0; i < m; ++i) pick[static_cast<std::size_t>(b * n + i)] = qi + i;
        qi += m;
      }
      queries_full = ad::select_rows(cat, pick);
    }
    Var joined = ad::concat_cols({slots, queries_full});
    z = ad::linear(ad::silu(ad::linear(joined, ctx.use(dp.cond_w1), ctx.use(dp.cond_b1))),
                   ctx.use(dp.cond_w2), ctx.use(dp.cond_b2));
  }
  Var h = ad::broadcast_positions(z, ctx.use(dp.pos_emb));  // (B*N*K) x d_slot
  for (std::size_t l = 0; l + 1 < dp.mlp_w.size(); ++l)
    h = ad::silu(ad::linear(h, ctx.use(dp.mlp_w[l]), ctx.use(dp.mlp_b[l])));
  h = ad::linear(h, ctx.use(dp.mlp_w.back()), ctx.use(dp.mlp_b.back()));
  const int d_feat = static_cast<int>(dp.mlp_w.back().cols()) - 1;
  Var feats = ad::col_slice(h, 0, d_feat);
  Var alpha = ad::fold_rows(ad::col_slice(h, d_feat, 1), k);  // (B*N) x K
  Var masks = ad::block_transpose(ad::softmax_rows(ad::block_transpose(alpha, batch)), batch);
  Var recon = ad::mask_combine(feats, masks, n, k);  // (B*K) x d_feat

  BatchedStep out;
  out.masks = masks;
  out.weights = weights;
  Var recon_l = ad::mse(recon, features);
  out.recon_mean = recon_l.value()(0, 0);

  Var cc;
  if (cfg.contrastive_loss && total_q > 0) {
    std::vector<Eigen::Index> iota(static_cast<std::size_t>(total_q));
    std::iota(iota.begin(), iota.end(), 0);
    Var lang_targets = t.constant_view(&bt.lang_targets);
    if (contrastive_from_slots) {
      const GroundingParams& head = slot_head ? *slot_head : params.grounding;
      Var z_src = ad::select_rows(slots, cond_slot_rows);
      cc = contrastive_loss(project_embedding(ctx, head, z_src, ProjectionHead::lang), iota,
                            lang_targets, cfg.tau);
    } else {
      Var z_all = ad::block_matmul(weights, mapped, batch, false);  // (B*N) x d_in
      Var z_src = ad::select_rows(z_all, cond_slot_rows);
      cc = contrastive_loss(project_embedding(ctx, params.grounding, z_src, ProjectionHead::lang),
                            iota, lang_targets, cfg.tau);
      if (cfg.point_queries && bt.point_targets.rows() > 0) {
        Var raw = t.constant_view(&bt.point_targets);
        Var pt_targets = ad::l2_normalize_rows(embed_point(ctx, params.grounding, raw));
        Var zp = project_embedding(ctx, params.grounding, z_src, ProjectionHead::point);
        cc = ad::add(cc, contrastive_loss(zp, iota, pt_targets, cfg.tau));
      }
    }
    out.cc_mean = cc.value()(0, 0) / total_q;
  }

  out.loss = recon_l;
  if (cc.valid() && cfg.lambda_cc > 0.0)
    out.loss = ad::add(out.loss, ad::scale(cc, cfg.lambda_cc / total_q));
  return out;
}

}  // namespace ctrlo
