#include "ctrlo/metrics.hpp"

#include <algorithm>

#include "ctrlo/errors.hpp"

namespace ctrlo {

namespace {

void require_same_length(const MaskSet& a, const MaskSet& b) {
  std::size_t len = 0;
  for (const Mask& m : a.masks) {
    if (len == 0) len = m.size();
    if (m.size() != len) throw argument_error("mask length mismatch");
  }
  for (const Mask& m : b.masks)
    if (m.size() != len && len != 0) throw argument_error("mask length mismatch");
}

double comb2(double n) { return n * (n - 1.0) / 2.0; }

// IoU matrix pred x gt.
std::vector<std::vector<double>> iou_matrix(const MaskSet& pred, const MaskSet& gt) {
  std::vector<std::vector<double>> m(pred.masks.size(), std::vector<double>(gt.masks.size()));
  for (std::size_t i = 0; i < pred.masks.size(); ++i)
    for (std::size_t j = 0; j < gt.masks.size(); ++j) m[i][j] = iou(pred.masks[i], gt.masks[j]);
  return m;
}

}  // namespace

double iou(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw argument_error("iou: mask length mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += (x && y) ? 1 : 0;
    uni += (x || y) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // empty vs empty
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double fg_ari(const MaskSet& pred, const MaskSet& gt, const Mask& foreground, bool* degenerate) {
  require_same_length(pred, gt);
  if (degenerate) *degenerate = false;
  const std::size_t k = foreground.size();

  // Label each foreground patch in both partitions.
  std::vector<int> pl, gl;
  for (std::size_t p = 0; p < k; ++p) {
    if (!foreground[p]) continue;
    int pi = -1, gi = -1;
    for (std::size_t i = 0; i < pred.masks.size(); ++i)
      if (pred.masks[i][p]) {
        pi = static_cast<int>(i);
        break;
      }
    for (std::size_t j = 0; j < gt.masks.size(); ++j)
      if (gt.masks[j][p]) {
        gi = static_cast<int>(j);
        break;
      }
    if (pi < 0) throw argument_error("fg_ari: foreground patch uncovered by predicted masks");
    if (gi < 0) throw argument_error("fg_ari: foreground patch uncovered by ground truth");
    pl.push_back(pi);
    gl.push_back(gi);
  }
  const std::size_t n = pl.size();
  if (n < 2) {  // no patch pairs to count
    if (degenerate) *degenerate = true;
    return 1.0;
  }

  std::vector<std::vector<double>> cont(pred.masks.size(),
                                        std::vector<double>(gt.masks.size(), 0.0));
  for (std::size_t i = 0; i < n; ++i)
    cont[static_cast<std::size_t>(pl[i])][static_cast<std::size_t>(gl[i])] += 1.0;

  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  std::vector<double> a(pred.masks.size(), 0.0), b(gt.masks.size(), 0.0);
  for (std::size_t i = 0; i < cont.size(); ++i)
    for (std::size_t j = 0; j < cont[i].size(); ++j) {
      sum_ij += comb2(cont[i][j]);
      a[i] += cont[i][j];
      b[j] += cont[i][j];
    }
  for (double v : a) sum_a += comb2(v);
  for (double v : b) sum_b += comb2(v);
  const double total = comb2(static_cast<double>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  const double denom = max_index - expected;
  if (denom == 0.0) {
    if (degenerate) *degenerate = true;
    return 1.0;  // both partitions trivially aligned
  }
  return (sum_ij - expected) / denom;
}

double mbo(const MaskSet& pred, const MaskSet& gt) {
  require_same_length(pred, gt);
  if (gt.masks.empty()) throw contract_error("mbo: empty ground truth");
  if (pred.masks.empty()) throw contract_error("mbo: empty prediction");
  double acc = 0.0;
  for (const Mask& g : gt.masks) {
    double best = 0.0;
    for (const Mask& p : pred.masks) best = std::max(best, iou(p, g));
    acc += best;
  }
  return acc / static_cast<double>(gt.masks.size());
}

double binding_hits(const MaskSet& pred, const MaskSet& gt, const std::vector<Binding>& bindings,
                    BindingRule rule) {
  require_same_length(pred, gt);
  if (bindings.empty()) throw contract_error("binding_hits: no bindings");
  const auto m = iou_matrix(pred, gt);
  int hits = 0;
  for (const Binding& b : bindings) {
    if (b.slot < 0 || b.slot >= static_cast<int>(pred.masks.size()) || b.object < 0 ||
        b.object >= static_cast<int>(gt.masks.size()))
      throw argument_error("binding_hits: binding references missing mask");
    const std::size_t si = static_cast<std::size_t>(b.slot);
    const std::size_t oj = static_cast<std::size_t>(b.object);
    const double v = m[si][oj];
    bool hit = true;
    for (std::size_t i = 0; i < pred.masks.size() && hit; ++i)
      if (i != si && m[i][oj] >= v) hit = false;  // ties count as misses
    if (hit && rule == BindingRule::mutual_best) {
      for (std::size_t j = 0; j < gt.masks.size() && hit; ++j)
        if (j != oj && m[si][j] >= v) hit = false;
    }
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(bindings.size());
}

double miou(const std::vector<std::pair<Mask, Mask>>& pairs) {
  if (pairs.empty()) throw contract_error("miou: empty pair list");
  double acc = 0.0;
  for (const auto& [p, g] : pairs) acc += iou(p, g);
  return acc / static_cast<double>(pairs.size());
}

}  // namespace ctrlo
