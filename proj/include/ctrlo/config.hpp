#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctrlo/model.hpp"
#include "ctrlo/scene.hpp"

namespace ctrlo {

/// Every knob of a run. Parsed from plain-text key=value files; unknown keys
/// are rejected and the resolved config is echoed into every artifact, so a
/// run can always be reproduced from its outputs.
struct RunConfig {
  // training
  std::uint64_t seed = 1;
  int steps = 20000;
  int batch_size = 32;
  double lr = 0.0004;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int workers = 0;  // 0 = hardware concurrency
  // model
  int n_slots = 7;
  int t_iters = 3;
  int d_slot = 64;
  int d_sa = 64;
  int slot_mlp_hidden = 128;
  int map_heads = 4;
  int map_attn = 16;
  int map_ff = 0;  // 0 = 4 x d_in
  int dec_width = 32;
  int dec_hidden_layers = 3;
  int cond_hidden = 64;
  int d_emb = 16;
  int point_hidden = 32;
  int proj_hidden = 64;
  // losses
  double tau = 0.1;
  double lambda_cc = 1.0;
  // ablation switches
  std::string init_mode = "assign";  // assign | add | none
  bool contrastive_loss = true;
  bool decoder_conditioning = true;
  bool point_queries = true;
  std::string target_codebook = "shared";  // shared | distinct
  // synthetic benchmark
  int grid_side = 16;
  int categories = 12;
  int d_app = 32;
  int min_objects = 2;
  int max_objects = 5;
  double feature_noise = 0.05;
  std::string shape_family = "rect";  // rect | blob
  double codebook_min_sep = 0.5;
  std::uint64_t data_seed = 77;
  // evaluation / checkpointing
  int eval_samples = 256;
  int eval_every = 2000;
  int checkpoint_every = 1000;
  int keep_checkpoints = 3;

  int d_in() const { return d_app + 2; }
  int map_ff_resolved() const { return map_ff > 0 ? map_ff : 4 * d_in(); }

  ModelDims dims() const;
  SceneConfig scene() const;
  SlotInitMode slot_init_mode() const;

  /// Consistency checks (ranges, enum values, divisibility); throws
  /// config_error.
  void validate() const;
};

/// Parses a key=value file ('#' starts a comment). Unknown keys raise
/// config_error naming the key.
RunConfig parse_config_file(const std::string& path);

/// Applies one "key=value" override.
void apply_override(RunConfig& cfg, const std::string& kv);

/// Full echo: one key=value line per field, declaration order. Reparsing the
/// echo reproduces the config exactly.
std::string serialize_config(const RunConfig& cfg);

/// Parses serialized text (same grammar as the file form).
RunConfig parse_config_text(const std::string& text);

}  // namespace ctrlo
