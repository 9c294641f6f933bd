#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctrlo/errors.hpp"
#include "ctrlo/metrics.hpp"
#include "ctrlo/rng.hpp"

using namespace ctrlo;

namespace {

// ---- brute-force oracles -------------------------------------------------

// Pair-counting adjusted Rand index over the foreground patches, O(K^2).
double ari_pair_oracle(const std::vector<int>& pl, const std::vector<int>& gl) {
  const std::size_t n = pl.size();
  double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool same_p = pl[i] == pl[j], same_g = gl[i] == gl[j];
      if (same_p && same_g)
        a += 1;
      else if (same_p && !same_g)
        b += 1;
      else if (!same_p && same_g)
        c += 1;
      else
        d += 1;
    }
  const double denom = (a + b) * (b + d) + (a + c) * (c + d);
  if (denom == 0.0) return 1.0;
  return 2.0 * (a * d - b * c) / denom;
}

double iou_oracle(const Mask& x, const Mask& y) {
  int inter = 0, uni = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    inter += (x[i] && y[i]) ? 1 : 0;
    uni += (x[i] || y[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / uni;
}

struct RandomInstance {
  MaskSet pred, gt;
  Mask foreground;
  std::vector<int> pred_label, gt_label;  // foreground labelings
};

// Random partition of K patches into n_pred predicted masks plus a random
// set of disjoint gt masks.
RandomInstance random_instance(Rng& rng, int k, int n_pred, int n_gt) {
  RandomInstance ri;
  ri.pred.masks.assign(static_cast<std::size_t>(n_pred), Mask(static_cast<std::size_t>(k), 0));
  for (int p = 0; p < k; ++p)
    ri.pred.masks[rng.uniform_index(static_cast<std::uint64_t>(n_pred))]
                 [static_cast<std::size_t>(p)] = 1;
  ri.gt.origin = MaskSet::Origin::ground_truth;
  ri.gt.masks.assign(static_cast<std::size_t>(n_gt), Mask(static_cast<std::size_t>(k), 0));
  ri.foreground.assign(static_cast<std::size_t>(k), 0);
  for (int p = 0; p < k; ++p) {
    const auto pick = rng.uniform_index(static_cast<std::uint64_t>(n_gt) + 1);
    if (pick == static_cast<std::uint64_t>(n_gt)) continue;  // background
    ri.gt.masks[pick][static_cast<std::size_t>(p)] = 1;
    ri.foreground[static_cast<std::size_t>(p)] = 1;
  }
  for (int p = 0; p < k; ++p) {
    if (!ri.foreground[static_cast<std::size_t>(p)]) continue;
    for (int i = 0; i < n_pred; ++i)
      if (ri.pred.masks[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)])
        ri.pred_label.push_back(i);
    for (int j = 0; j < n_gt; ++j)
      if (ri.gt.masks[static_cast<std::size_t>(j)][static_cast<std::size_t>(p)])
        ri.gt_label.push_back(j);
  }
  return ri;
}

Mask from_bits(std::initializer_list<int> bits) {
  Mask m;
  for (int b : bits) m.push_back(static_cast<std::uint8_t>(b));
  return m;
}

}  // namespace

TEST_CASE("iou: spec examples") {
  CHECK(iou(from_bits({1, 1, 0, 0}), from_bits({1, 1, 0, 0})) == 1.0);
  CHECK(iou(from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})) == 0.0);
  CHECK(iou(from_bits({1, 1, 0, 0}), from_bits({1, 1, 1, 1})) == doctest::Approx(0.5));
  CHECK(iou(from_bits({0, 0}), from_bits({0, 0})) == 1.0);  // empty/empty convention
  CHECK_THROWS_AS(iou(from_bits({1}), from_bits({1, 0})), argument_error);
}

TEST_CASE("fg_ari: identity, one-cluster example, empty foreground") {
  MaskSet pred, gt;
  pred.masks = {from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})};
  gt.masks = {from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})};
  Mask fg = from_bits({1, 1, 1, 1});
  CHECK(fg_ari(pred, gt, fg) == doctest::Approx(1.0));

  // one predicted cluster vs two equal gt clusters of size 2 over 4 patches
  MaskSet pred1;
  pred1.masks = {from_bits({1, 1, 1, 1})};
  CHECK(fg_ari(pred1, gt, fg) == doctest::Approx(0.0));

  bool degenerate = false;
  Mask empty_fg = from_bits({0, 0, 0, 0});
  CHECK(fg_ari(pred, gt, empty_fg, &degenerate) == 1.0);
  CHECK(degenerate);
}

TEST_CASE("fg_ari matches the pair-counting oracle on random instances") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 4 + static_cast<int>(rng.uniform_index(27));  // K <= 30
    const int n_pred = 1 + static_cast<int>(rng.uniform_index(5));
    const int n_gt = 1 + static_cast<int>(rng.uniform_index(4));
    RandomInstance ri = random_instance(rng, k, n_pred, n_gt);
    const double got = fg_ari(ri.pred, ri.gt, ri.foreground);
    const double want =
        ri.pred_label.size() < 2 ? 1.0 : ari_pair_oracle(ri.pred_label, ri.gt_label);
    CHECK(std::abs(got - want) <= 1e-12);
  }
}

TEST_CASE("mbo: examples and exhaustive oracle") {
  MaskSet pred, gt;
  pred.masks = {from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})};
  gt.masks = {from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})};
  CHECK(mbo(pred, gt) == doctest::Approx(1.0));

  MaskSet pred_disjoint;
  pred_disjoint.masks = {from_bits({0, 0, 0, 0}), from_bits({0, 0, 0, 0})};
  CHECK(mbo(pred_disjoint, gt) == doctest::Approx(0.0));

  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 4 + static_cast<int>(rng.uniform_index(27));
    RandomInstance ri = random_instance(rng, k, 3, 2);
    double want = 0.0;
    for (const Mask& g : ri.gt.masks) {
      double best = 0.0;
      for (const Mask& p : ri.pred.masks) best = std::max(best, iou_oracle(p, g));
      want += best;
    }
    want /= static_cast<double>(ri.gt.masks.size());
    CHECK(std::abs(mbo(ri.pred, ri.gt) - want) <= 1e-12);
  }

  MaskSet empty_gt;
  CHECK_THROWS_AS(mbo(pred, empty_gt), contract_error);
}

TEST_CASE("binding_hits: oracle masks, misses, constructed instance") {
  // oracle predictions equal to gt with the identity binding: all hits
  MaskSet pred, gt;
  pred.masks = {from_bits({1, 1, 0, 0, 0, 0}), from_bits({0, 0, 1, 1, 0, 0}),
                from_bits({0, 0, 0, 0, 1, 1})};
  gt.masks = {from_bits({1, 1, 0, 0, 0, 0}), from_bits({0, 0, 1, 1, 0, 0})};
  CHECK(binding_hits(pred, gt, {{0, 0}, {1, 1}}) == doctest::Approx(1.0));

  // conditioned slot's mask empty while another overlaps: a miss
  MaskSet pred2;
  pred2.masks = {from_bits({0, 0, 0, 0, 0, 0}), from_bits({1, 1, 1, 1, 0, 0}),
                 from_bits({0, 0, 0, 0, 1, 1})};
  CHECK(binding_hits(pred2, gt, {{0, 0}}) == doctest::Approx(0.0));

  // 3 slots, 2 objects: verify against the exhaustive IoU argmax
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 4 + static_cast<int>(rng.uniform_index(27));
    RandomInstance ri = random_instance(rng, k, 3, 2);
    std::vector<Binding> bindings{{0, 0}, {1, 1}};
    int hits = 0;
    for (const Binding& b : bindings) {
      const double v = iou_oracle(ri.pred.masks[static_cast<std::size_t>(b.slot)],
                                  ri.gt.masks[static_cast<std::size_t>(b.object)]);
      bool hit = true;
      for (int j = 0; j < 3; ++j)
        if (j != b.slot &&
            iou_oracle(ri.pred.masks[static_cast<std::size_t>(j)],
                       ri.gt.masks[static_cast<std::size_t>(b.object)]) >= v)
          hit = false;
      hits += hit ? 1 : 0;
    }
    CHECK(binding_hits(ri.pred, ri.gt, bindings) ==
          doctest::Approx(hits / 2.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(binding_hits(pred, gt, {}), contract_error);
}

TEST_CASE("binding_hits: tie handling and the mutual-best flag") {
  // two predicted masks tie on the object: strict rule counts a miss
  MaskSet pred, gt;
  pred.masks = {from_bits({1, 0, 0, 0}), from_bits({0, 1, 0, 0})};
  gt.masks = {from_bits({1, 1, 0, 0})};
  CHECK(binding_hits(pred, gt, {{0, 0}}) == 0.0);

  // mutual-best: slot 0 is the argmax for object 0, but slot 0 overlaps
  // object 1 even more, so the mutual reading rejects it
  MaskSet pred2, gt2;
  pred2.masks = {from_bits({1, 1, 1, 1, 1, 0}), from_bits({0, 0, 0, 0, 0, 1})};
  gt2.masks = {from_bits({1, 1, 0, 0, 0, 0}), from_bits({0, 0, 1, 1, 1, 0})};
  CHECK(binding_hits(pred2, gt2, {{0, 0}}, BindingRule::unique_argmax) == 1.0);
  CHECK(binding_hits(pred2, gt2, {{0, 0}}, BindingRule::mutual_best) == 0.0);
}

TEST_CASE("metrics are invariant to reordering unconditioned masks; binding is index-sensitive") {
  Rng rng(13);
  RandomInstance ri = random_instance(rng, 24, 4, 3);
  const double ari0 = fg_ari(ri.pred, ri.gt, ri.foreground);
  const double mbo0 = mbo(ri.pred, ri.gt);

  MaskSet shuffled = ri.pred;  // swap two unconditioned masks (2 and 3)
  std::swap(shuffled.masks[2], shuffled.masks[3]);
  CHECK(fg_ari(shuffled, ri.gt, ri.foreground) == doctest::Approx(ari0).epsilon(1e-12));
  CHECK(mbo(shuffled, ri.gt) == doctest::Approx(mbo0).epsilon(1e-12));
  CHECK(binding_hits(shuffled, ri.gt, {{0, 0}, {1, 1}}) ==
        doctest::Approx(binding_hits(ri.pred, ri.gt, {{0, 0}, {1, 1}})).epsilon(1e-12));

  // permuting the conditioned indices without permuting the bindings
  // changes binding hits on a constructed instance
  MaskSet pred, gt;
  pred.masks = {from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})};
  gt.masks = {from_bits({1, 1, 0, 0}), from_bits({0, 0, 1, 1})};
  CHECK(binding_hits(pred, gt, {{0, 0}, {1, 1}}) == 1.0);
  std::swap(pred.masks[0], pred.masks[1]);  // conditioned slots swapped
  CHECK(binding_hits(pred, gt, {{0, 0}, {1, 1}}) == 0.0);
}

TEST_CASE("miou: examples and oracle") {
  std::vector<std::pair<Mask, Mask>> pairs{{from_bits({1, 1}), from_bits({1, 1})},
                                           {from_bits({1, 0}), from_bits({1, 0})}};
  CHECK(miou(pairs) == doctest::Approx(1.0));
  pairs[1] = {from_bits({1, 0}), from_bits({0, 1})};
  CHECK(miou(pairs) == doctest::Approx(0.5));

  Rng rng(15);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<Mask, Mask>> ps;
    double want = 0.0;
    const int n = 1 + static_cast<int>(rng.uniform_index(5));
    for (int i = 0; i < n; ++i) {
      Mask a(12), b(12);
      for (int j = 0; j < 12; ++j) {
        a[static_cast<std::size_t>(j)] = rng.uniform_index(2) != 0;
        b[static_cast<std::size_t>(j)] = rng.uniform_index(2) != 0;
      }
      want += iou_oracle(a, b);
      ps.emplace_back(std::move(a), std::move(b));
    }
    CHECK(miou(ps) == doctest::Approx(want / n).epsilon(1e-12));
  }

  CHECK_THROWS_AS(miou({}), contract_error);
}
