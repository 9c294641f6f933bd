#pragma once

#include <string>
#include <vector>

#include "ctrlo/train.hpp"

namespace ctrlo {

/// One grid cell: a switch combination, in the benchmark's fixed row order
/// {slot-init only, +DC, +CL, +CL+DC}.
struct AblationRow {
  std::string name;
  bool contrastive = false;
  bool decoder_conditioning = false;
  std::vector<MetricsReport> per_seed;
  MetricsReport mean;  // seed-averaged
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  bool complete = true;

  std::string to_text() const;
};

/// The four switch combinations with everything else taken from `base`.
std::vector<AblationRow> ablation_grid();

/// Derives the cell config: identical to base except the two switches (and
/// the seed).
RunConfig cell_config(const RunConfig& base, const AblationRow& row, std::uint64_t seed);

/// Trains and evaluates the full grid with shared seeds; writes per-cell
/// artifacts plus ablation.txt / ablation.json under out_dir. Cells that
/// fail leave the table marked incomplete instead of aborting the rest.
AblationTable ablate(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                     const std::string& out_dir, const TrainOptions& opt = {});

}  // namespace ctrlo
