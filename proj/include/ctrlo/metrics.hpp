#pragma once

#include <cstdint>
#include <utility>
#include <vector>

namespace ctrlo {

using Mask = std::vector<std::uint8_t>;

/// A list of equally sized patch masks. Predicted sets come from the decoder
/// argmax and partition the grid; ground-truth sets are the disjoint object
/// masks (background excluded).
struct MaskSet {
  enum class Origin { predicted, ground_truth };
  Origin origin = Origin::predicted;
  std::vector<Mask> masks;
};

/// |a and b| / |a or b|; two empty masks count as identical (1).
double iou(const Mask& a, const Mask& b);

/// Adjusted Rand index between the two labelings restricted to foreground
/// patches. An empty or single-cluster-degenerate foreground is defined as
/// 1; `degenerate` (when given) is set in that case.
double fg_ari(const MaskSet& pred, const MaskSet& gt, const Mask& foreground,
              bool* degenerate = nullptr);

/// Mean over ground-truth masks of the best-IoU predicted mask.
double mbo(const MaskSet& pred, const MaskSet& gt);

struct Binding {
  int slot;    // conditioned slot index into pred
  int object;  // index into gt
};

enum class BindingRule {
  unique_argmax,  // hit iff the conditioned slot is the unique best-IoU
                  // predicted mask for its object; ties are misses
  mutual_best     // additionally the object must be that mask's best match
};

/// Fraction of bindings that are hits.
double binding_hits(const MaskSet& pred, const MaskSet& gt, const std::vector<Binding>& bindings,
                    BindingRule rule = BindingRule::unique_argmax);

/// Mean IoU over (conditioned slot mask, ground-truth mask) pairs.
double miou(const std::vector<std::pair<Mask, Mask>>& pairs);

/// Eval-set aggregate. fg_ari / mbo / miou are per-sample means; binding
/// hits are pooled over every binding in the set.
struct MetricsReport {
  double fg_ari = 0.0;
  double mbo = 0.0;
  double binding_hits = 0.0;
  double miou = 0.0;
  int samples = 0;
  int total_bindings = 0;
  int degenerate_fg_ari = 0;  // samples where FG-ARI fell back to its convention
  double binding_baseline = 0.0;  // Monte-Carlo random-binding reference
};

}  // namespace ctrlo
