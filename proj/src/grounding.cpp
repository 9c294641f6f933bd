#include "ctrlo/grounding.hpp"

namespace ctrlo {

using ad::Mat;
using ad::Var;

GroundingParams GroundingParams::init(int z_in, int d_emb, int point_hidden, int proj_hidden,
                                      double tau, Rng& rng) {
  if (!(tau > 0.0)) throw argument_error("grounding: tau must be positive");
  GroundingParams p;
  p.point_w1 = glorot(2, point_hidden, rng);
  p.point_b1 = zeros(1, point_hidden);
  p.point_w2 = glorot(point_hidden, d_emb, rng);
  p.point_b2 = zeros(1, d_emb);
  p.no_point = rng.normal_matrix(1, d_emb, 0.1);
  if (proj_hidden == 0) {
    // single linear, bias-free heads (the test configuration)
    p.lang_w1 = glorot(z_in, d_emb, rng);
    p.pt_w1 = glorot(z_in, d_emb, rng);
    p.lang_b1 = zeros(0, 0);
    p.lang_w2 = zeros(0, 0);
    p.lang_b2 = zeros(0, 0);
    p.pt_b1 = zeros(0, 0);
    p.pt_w2 = zeros(0, 0);
    p.pt_b2 = zeros(0, 0);
  } else {
    p.lang_w1 = glorot(z_in, proj_hidden, rng);
    p.lang_b1 = zeros(1, proj_hidden);
    p.lang_w2 = glorot(proj_hidden, d_emb, rng);
    p.lang_b2 = zeros(1, d_emb);
    p.pt_w1 = glorot(z_in, proj_hidden, rng);
    p.pt_b1 = zeros(1, proj_hidden);
    p.pt_w2 = glorot(proj_hidden, d_emb, rng);
    p.pt_b2 = zeros(1, d_emb);
  }
  p.tau = tau;
  return p;
}

void GroundingParams::register_into(ParamRegistry& reg, const std::string& prefix) const {
  auto* self = const_cast<GroundingParams*>(this);
  reg.add(prefix + ".point_w1", &self->point_w1);
  reg.add(prefix + ".point_b1", &self->point_b1);
  reg.add(prefix + ".point_w2", &self->point_w2);
  reg.add(prefix + ".point_b2", &self->point_b2);
  reg.add(prefix + ".no_point", &self->no_point);
  reg.add(prefix + ".lang_w1", &self->lang_w1);
  reg.add(prefix + ".lang_b1", &self->lang_b1);
  reg.add(prefix + ".lang_w2", &self->lang_w2);
  reg.add(prefix + ".lang_b2", &self->lang_b2);
  reg.add(prefix + ".pt_w1", &self->pt_w1);
  reg.add(prefix + ".pt_b1", &self->pt_b1);
  reg.add(prefix + ".pt_w2", &self->pt_w2);
  reg.add(prefix + ".pt_b2", &self->pt_b2);
}

Var embed_point(ParamContext& ctx, const GroundingParams& p, Var points) {
  if (points.cols() != 2) throw argument_error("embed_point: points must be M x 2");
  const Mat& v = points.value();
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    if (v(i, 0) < 0.0 || v(i, 0) > 1.0 || v(i, 1) < 0.0 || v(i, 1) > 1.0)
      throw argument_error("embed_point: coordinates outside the unit square");
  Var h = ad::silu(ad::linear(points, ctx.use(p.point_w1), ctx.use(p.point_b1)));
  return ad::linear(h, ctx.use(p.point_w2), ctx.use(p.point_b2));
}

Var build_query(ParamContext& ctx, const GroundingParams& p, Var lang_codes, Var points,
                const std::vector<std::uint8_t>& has_point) {
  const int m = static_cast<int>(lang_codes.rows());
  if (static_cast<int>(has_point.size()) != m)
    throw argument_error("build_query: has_point size mismatch");

  bool any = false, all = true;
  for (std::uint8_t f : has_point) {
    any = any || f != 0;
    all = all && f != 0;
  }
  Var point_block;
  if (!any) {
    point_block = ad::tile_rows(ctx.use(p.no_point), m);
  } else if (all) {
    point_block = embed_point(ctx, p, points);
  } else {
    // mixed rows: embed everything, swap the no-point rows back in
    Var emb = embed_point(ctx, p, points);
    std::vector<Var> rows;
    rows.reserve(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i)
      rows.push_back(has_point[static_cast<std::size_t>(i)] ? ad::row_slice(emb, i, 1)
                                                            : ctx.use(p.no_point));
    point_block = ad::concat_rows(rows);
  }
  return ad::concat_cols({lang_codes, point_block});
}

Var build_query(ParamContext& ctx, const GroundingParams& p, const QuerySet& queries) {
  ad::Tape& t = ctx.tape();
  Var lang = t.constant(queries.lang_codes);
  Var pts;
  bool any = false;
  for (std::uint8_t f : queries.has_point) any = any || f != 0;
  if (any) pts = t.constant(queries.points);
  return build_query(ctx, p, lang, pts, queries.has_point);
}

Var aggregate_slot_features(Var weights, Var mapped, int slot) {
  if (slot < 0 || slot >= weights.rows())
    throw argument_error("aggregate_slot_features: slot index out of range");
  return ad::matmul(ad::row_slice(weights, slot, 1), mapped);
}

Var aggregate_conditioned(Var weights, Var mapped, int count) {
  if (count < 1 || count > weights.rows())
    throw argument_error("aggregate_conditioned: bad conditioned count");
  return ad::matmul(ad::row_slice(weights, 0, count), mapped);
}

Var project_embedding(ParamContext& ctx, const GroundingParams& p, Var z, ProjectionHead head) {
  const bool lang = head == ProjectionHead::lang;
  if ((lang ? p.lang_w2 : p.pt_w2).size() == 0)  // linear head configuration
    return ad::l2_normalize_rows(ad::matmul(z, ctx.use(lang ? p.lang_w1 : p.pt_w1)));
  Var h = ad::silu(ad::linear(z, ctx.use(lang ? p.lang_w1 : p.pt_w1),
                              ctx.use(lang ? p.lang_b1 : p.pt_b1)));
  Var out =
      ad::linear(h, ctx.use(lang ? p.lang_w2 : p.pt_w2), ctx.use(lang ? p.lang_b2 : p.pt_b2));
  return ad::l2_normalize_rows(out);
}

Var contrastive_loss(Var z_embs, const std::vector<Eigen::Index>& positives, Var targets,
                     double tau) {
  if (!(tau > 0.0)) throw argument_error("contrastive_loss: tau must be positive");
  if (!targets.valid() || targets.rows() == 0)
    throw contract_error("contrastive_loss: empty target set");
  if (static_cast<Eigen::Index>(positives.size()) != z_embs.rows())
    throw contract_error("contrastive_loss: one positive index per row");
  for (Eigen::Index i : positives)
    if (i < 0 || i >= targets.rows())
      throw contract_error("contrastive_loss: positive index out of range");
  Var sims = ad::scale(ad::matmul(z_embs, ad::transpose(targets)), 1.0 / tau);  // M x T
  Var lse = ad::logsumexp_rows(sims);
  Var picked = ad::gather_cols(sims, positives);
  return ad::sum(ad::sub(lse, picked));
}

Var dual_contrastive(ParamContext& ctx, const GroundingParams& p, Var weights, Var mapped,
                     int conditioned, Var lang_targets,
                     const std::vector<Eigen::Index>& lang_positives, Var point_targets,
                     const std::vector<Eigen::Index>& point_positives) {
  if (static_cast<int>(lang_positives.size()) != conditioned)
    throw contract_error("dual_contrastive: language positives misaligned with conditioned slots");
  Var z = aggregate_conditioned(weights, mapped, conditioned);
  Var loss = contrastive_loss(project_embedding(ctx, p, z, ProjectionHead::lang), lang_positives,
                              lang_targets, p.tau);
  if (point_targets.valid() && point_targets.rows() > 0) {
    if (static_cast<int>(point_positives.size()) != conditioned)
      throw contract_error("dual_contrastive: point positives misaligned with conditioned slots");
    Var zp = project_embedding(ctx, p, z, ProjectionHead::point);
    loss = ad::add(loss, contrastive_loss(zp, point_positives, point_targets, p.tau));
  }
  return loss;
}

}  // namespace ctrlo
