#pragma once

#include <vector>

#include "ctrlo/config.hpp"
#include "ctrlo/train.hpp"

namespace ctrlo {

/// One training step as a single graph over the row-stacked batch. Samples
/// occupy disjoint row blocks, so per-sample structure is preserved while
/// the token-parallel layers run as whole-batch GEMMs. Numerically this
/// computes the same per-sample model as forward_pass; the step loss is
///   mean_b recon_b + lambda * (sum_b cc_b) / (total conditioned slots).
struct BatchedStep {
  ad::Var loss;
  double recon_mean = 0.0;
  double cc_mean = 0.0;  // per conditioned slot
  // row-stacked diagnostics (values live on the tape)
  ad::Var masks;    // (B*N) x K
  ad::Var weights;  // (B*N) x K
};

struct BatchedInputs {
  ad::Mat features;      // (B*K) x d_in
  ad::Mat slot_noise;    // (B*N) x d_slot
  ad::Mat lang_codes;    // (sum M) x d_emb
  ad::Mat points;        // (sum M) x 2
  std::vector<std::uint8_t> has_point;  // sum M
  std::vector<int> query_count;         // per sample
};

BatchedInputs pack_batch(const std::vector<const Sample*>& batch,
                         const std::vector<ad::Mat>& noises);

BatchedStep batched_step(ParamContext& ctx, const ModelParams& params, const RunConfig& cfg,
                         const BatchedInputs& in, const detail::BatchContext& bt,
                         bool contrastive_from_slots, const GroundingParams* slot_head);

}  // namespace ctrlo
