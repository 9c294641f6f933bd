#pragma once

#include <functional>
#include <optional>
#include <string>

#include "ctrlo/adam.hpp"
#include "ctrlo/config.hpp"
#include "ctrlo/metrics.hpp"
#include "ctrlo/model.hpp"
#include "ctrlo/synthscene.hpp"

namespace ctrlo {

/// Knobs for tests and embedding callers; none of these are reachable from
/// the CLI/config surface.
struct TrainOptions {
  /// Stop once a periodic eval reaches this FG-ARI (still capped by steps).
  std::optional<double> stop_at_fg_ari;
  /// Wrong wiring used by the leakage regression: the contrastive input is
  /// the slot vector itself instead of the aggregated mapped features.
  bool contrastive_from_slots = false;
  /// Called after every step with (step, recon, contrastive) batch means.
  std::function<void(int, double, double)> on_step;
  /// Train on this dataset (cycled deterministically) instead of streaming
  /// freshly generated scenes.
  const Dataset* dataset = nullptr;
  bool quiet = false;
};

struct TrainResult {
  std::string final_checkpoint;
  int steps_run = 0;
  bool aborted_nan = false;
  double final_recon = 0.0;
  double final_contrastive = 0.0;
  double first_contrastive = 0.0;
  MetricsReport last_eval;
};

/// Trains per config into out_dir: writes train_log.txt, rotating
/// checkpoints and checkpoint_final.ckpt. Deterministic per (config, seed)
/// for any worker count: per-sample gradients are reduced in sample order.
TrainResult train(const RunConfig& cfg, const std::string& out_dir,
                  const TrainOptions& opt = {});

/// Forward-evaluates a parameter set over a dataset: hard masks from the
/// decoder, all four metrics, and the Monte-Carlo shuffled-binding baseline.
MetricsReport evaluate_params(const ModelParams& params, const RunConfig& cfg,
                              const Dataset& eval_set);

/// Loads the checkpoint (dims must match cfg), evaluates, writes report.txt
/// and report.json into out_dir (empty out_dir skips the files).
MetricsReport evaluate(const std::string& checkpoint, const RunConfig& cfg,
                       const Dataset& eval_set, const std::string& out_dir);

/// The held-out eval set of a config (pure function of data_seed).
Dataset make_eval_set(const RunConfig& cfg, int count);

/// Loads cfg's model shape and checkpoint into a fresh ModelParams.
ModelParams load_model(const std::string& checkpoint, const RunConfig& cfg);

namespace detail {

/// Per-sample loss graph assembly shared by train/evaluate/tests.
struct SampleLoss {
  ad::Var recon;
  ad::Var contrastive;  // invalid when unused
  ModelOutput output;
  int conditioned = 0;
};

struct BatchContext {
  ad::Mat lang_targets;    // T x d_emb, unit rows
  ad::Mat point_targets;   // T x 2 raw points (embedded in-graph), empty if off
  std::vector<int> first_index;  // per sample: offset of its queries in the batch
};

BatchContext build_batch_targets(const std::vector<const Sample*>& batch, const RunConfig& cfg,
                                 const SceneCodebooks& books);

SampleLoss sample_loss(ParamContext& ctx, const ModelParams& params, const Sample& s,
                       const RunConfig& cfg, const BatchContext& bt, int sample_index,
                       const ad::Mat& slot_noise, bool contrastive_from_slots,
                       const GroundingParams* slot_head);

}  // namespace detail

}  // namespace ctrlo
