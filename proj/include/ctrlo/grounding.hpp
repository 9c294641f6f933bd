#pragma once

#include <string>
#include <vector>

#include "ctrlo/params.hpp"
#include "ctrlo/scene.hpp"

namespace ctrlo {

enum class ProjectionHead { lang, point };

/// Point-embedding MLP, the two projection heads feeding the control
/// contrastive loss, and the learned padding for point-less queries.
struct GroundingParams {
  // point embedding: 2 -> hidden -> d_emb
  ad::Mat point_w1, point_b1, point_w2, point_b2;
  ad::Mat no_point;  // 1 x d_emb, used when a query carries no point
  // projection heads: z_in -> hidden -> d_emb, separate per target space
  ad::Mat lang_w1, lang_b1, lang_w2, lang_b2;
  ad::Mat pt_w1, pt_b1, pt_w2, pt_b2;
  double tau = 0.1;

  int d_emb() const { return static_cast<int>(point_w2.cols()); }
  int z_in() const { return static_cast<int>(lang_w1.rows()); }
  int d_query() const { return 2 * d_emb(); }

  static GroundingParams init(int z_in, int d_emb, int point_hidden, int proj_hidden,
                              double tau, Rng& rng);
  void register_into(ParamRegistry& reg, const std::string& prefix) const;
};

/// All conditioning targets of one batch, flattened across samples. Each
/// sample keeps the range of its own queries via the positive indices.
struct BatchTargets {
  ad::Mat lang;    // T x d_emb, unit rows
  ad::Mat points;  // T x 2; empty when the point regime is off
  int count() const { return static_cast<int>(lang.rows()); }
};

/// Embeds center-of-mass points (rows of [0,1]^2) with the 2-layer MLP.
ad::Var embed_point(ParamContext& ctx, const GroundingParams& p, ad::Var points);

/// Conditioning vectors: concat(lang_code, point embedding) per query; the
/// point block falls back to the learned no-point vector.
ad::Var build_query(ParamContext& ctx, const GroundingParams& p, ad::Var lang_codes,
                    ad::Var points, const std::vector<std::uint8_t>& has_point);

/// Convenience overload reading a QuerySet (constant inputs).
ad::Var build_query(ParamContext& ctx, const GroundingParams& p, const QuerySet& queries);

/// z_i for one slot: attention-weighted mean of the mapped features, using
/// the update rule's per-slot renormalized weights.
ad::Var aggregate_slot_features(ad::Var weights, ad::Var mapped, int slot);
/// Rows 0..count-1 at once (the conditioned slots).
ad::Var aggregate_conditioned(ad::Var weights, ad::Var mapped, int count);

/// MLP projection followed by L2 normalization; rows come out unit-norm.
ad::Var project_embedding(ParamContext& ctx, const GroundingParams& p, ad::Var z,
                          ProjectionHead head);

/// InfoNCE over all T batch targets at temperature tau:
///   -sum_i log( exp(z_i . l_pos(i) / tau) / sum_t exp(z_i . l_t / tau) ).
ad::Var contrastive_loss(ad::Var z_embs, const std::vector<Eigen::Index>& positives,
                         ad::Var targets, double tau);

/// L^l + L^p with the respective heads and target sets. `point_targets` /
/// `point_positives` may be empty for the language-only regime.
ad::Var dual_contrastive(ParamContext& ctx, const GroundingParams& p, ad::Var weights,
                         ad::Var mapped, int conditioned, ad::Var lang_targets,
                         const std::vector<Eigen::Index>& lang_positives, ad::Var point_targets,
                         const std::vector<Eigen::Index>& point_positives);

}  // namespace ctrlo
