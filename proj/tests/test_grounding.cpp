#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctrlo/grad_check.hpp"
#include "ctrlo/grounding.hpp"

using namespace ctrlo;
using ad::Mat;
using ad::Var;

namespace {

GroundingParams make_params(int z_in, int d_emb, int proj_hidden, std::uint64_t seed) {
  Rng rng(seed);
  return GroundingParams::init(z_in, d_emb, 5, proj_hidden, 0.1, rng);
}

}  // namespace

TEST_CASE("aggregate_slot_features") {
  Rng rng(1);
  Mat mapped = rng.normal_matrix(6, 4);
  ad::Tape t;

  // uniform attention: the mean of the mapped rows
  Mat w = Mat::Constant(3, 6, 1.0 / 6.0);
  Var z = aggregate_slot_features(t.constant(w), t.constant(mapped), 1);
  CHECK((z.value().row(0) - mapped.colwise().mean()).cwiseAbs().maxCoeff() < 1e-12);

  // one-hot attention picks that patch row
  Mat oh = Mat::Zero(2, 6);
  oh(0, 4) = 1.0;
  oh(1, 2) = 1.0;
  Var z2 = aggregate_slot_features(t.constant(oh), t.constant(mapped), 0);
  CHECK((z2.value().row(0) - mapped.row(4)).cwiseAbs().maxCoeff() < 1e-12);

  // random weights against a double-loop oracle
  Mat wr = rng.normal_matrix(3, 6).array().abs();
  for (int i = 0; i < 3; ++i) wr.row(i) /= wr.row(i).sum();
  Var z3 = aggregate_slot_features(t.constant(wr), t.constant(mapped), 2);
  Eigen::RowVectorXd oracle = Eigen::RowVectorXd::Zero(4);
  for (int k = 0; k < 6; ++k)
    for (int d = 0; d < 4; ++d) oracle(d) += wr(2, k) * mapped(k, d);
  CHECK((z3.value().row(0) - oracle).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(aggregate_slot_features(t.constant(wr), t.constant(mapped), 5),
                  argument_error);

  // batched variant matches the per-slot one
  Var zc = aggregate_conditioned(t.constant(wr), t.constant(mapped), 2);
  CHECK((zc.value().row(1) -
         aggregate_slot_features(t.constant(wr), t.constant(mapped), 1).value().row(0))
            .cwiseAbs()
            .maxCoeff() < 1e-14);
}

TEST_CASE("project_embedding: unit norm, linear-head scale invariance, disjoint heads") {
  GroundingParams p = make_params(6, 4, 5, 2);
  Rng rng(3);
  ad::Tape t;
  ParamContext ctx(t);
  Mat z = rng.normal_matrix(5, 6);
  Mat ln = project_embedding(ctx, p, t.constant(z), ProjectionHead::lang).value();
  for (int i = 0; i < 5; ++i) CHECK(std::abs(ln.row(i).norm() - 1.0) < 1e-10);

  // the two heads have disjoint parameters
  Mat pt = project_embedding(ctx, p, t.constant(z), ProjectionHead::point).value();
  CHECK((ln - pt).cwiseAbs().maxCoeff() > 1e-3);
  GroundingParams p2 = p;
  p2.pt_w1 = p.pt_w1 * 2.0;
  ad::Tape t2;
  ParamContext ctx2(t2);
  Mat ln2 = project_embedding(ctx2, p2, t2.constant(z), ProjectionHead::lang).value();
  CHECK((ln2 - ln).cwiseAbs().maxCoeff() < 1e-14);

  // linear no-bias head: scaling the input leaves the embedding unchanged
  GroundingParams lin = make_params(6, 4, 0, 4);
  ad::Tape t3;
  ParamContext ctx3(t3);
  Mat a = project_embedding(ctx3, lin, t3.constant(z), ProjectionHead::lang).value();
  Mat b = project_embedding(ctx3, lin, t3.constant((z * 2.0).eval()), ProjectionHead::lang).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("contrastive_loss: spec values and the log-sum-exp oracle") {
  ad::Tape t;

  // T=1: numerator equals denominator
  {
    Mat z(1, 3), tgt(1, 3);
    z << 1.0, 0.0, 0.0;
    tgt << 0.0, 1.0, 0.0;
    Var loss = contrastive_loss(t.constant(z), {0}, t.constant(tgt), 0.1);
    CHECK(std::abs(loss.value()(0, 0)) < 1e-12);
  }

  // all logits equal: loss = M * ln T
  {
    const int m = 3, tcount = 5;
    Mat z = Mat::Zero(m, 4);
    z.col(0).setOnes();
    Mat tgt = Mat::Zero(tcount, 4);
    tgt.col(1).setOnes();  // every z.t dot product is 0
    std::vector<Eigen::Index> pos{0, 2, 4};
    Var loss = contrastive_loss(t.constant(z), pos, t.constant(tgt), 0.1);
    CHECK(loss.value()(0, 0) ==
          doctest::Approx(m * std::log(static_cast<double>(tcount))).epsilon(1e-12));
  }

  // M=2, T=3 against an extended-precision oracle
  {
    Rng rng(5);
    Mat z = rng.normal_matrix(2, 4);
    Mat tgt = rng.normal_matrix(3, 4);
    for (int i = 0; i < 2; ++i) z.row(i).normalize();
    for (int i = 0; i < 3; ++i) tgt.row(i).normalize();
    std::vector<Eigen::Index> pos{2, 0};
    const double tau = 0.1;
    long double oracle = 0.0L;
    for (int i = 0; i < 2; ++i) {
      long double denom = 0.0L;
      for (int j = 0; j < 3; ++j)
        denom += expl(static_cast<long double>(z.row(i).dot(tgt.row(j)) / tau));
      const long double num =
          expl(static_cast<long double>(z.row(i).dot(tgt.row(pos[static_cast<std::size_t>(i)])) / tau));
      oracle += -logl(num / denom);
    }
    Var loss = contrastive_loss(t.constant(z), pos, t.constant(tgt), tau);
    CHECK(loss.value()(0, 0) == doctest::Approx(static_cast<double>(oracle)).epsilon(1e-12));
    CHECK(loss.value()(0, 0) >= 0.0);
  }

  // monotonicity: raising the positive similarity lowers the loss
  {
    Rng rng(6);
    Mat z = rng.normal_matrix(1, 4);
    Mat tgt = rng.normal_matrix(4, 4);
    Var l1 = contrastive_loss(t.constant(z), {1}, t.constant(tgt), 0.1);
    Mat tgt2 = tgt;
    tgt2.row(1) += 0.05 * z.row(0);  // push the positive toward z
    Var l2 = contrastive_loss(t.constant(z), {1}, t.constant(tgt2), 0.1);
    CHECK(l2.value()(0, 0) < l1.value()(0, 0));
  }

  // contract errors
  Mat z1 = Mat::Ones(1, 4);
  CHECK_THROWS_AS(contrastive_loss(t.constant(z1), {0}, Var(), 0.1), contract_error);
  Mat tgt1 = Mat::Ones(2, 4);
  CHECK_THROWS_AS(contrastive_loss(t.constant(z1), {5}, t.constant(tgt1), 0.1), contract_error);
  CHECK_THROWS_AS(contrastive_loss(t.constant(z1), {0}, t.constant(tgt1), 0.0), argument_error);
}

TEST_CASE("dual_contrastive: language-only reduction and additivity") {
  GroundingParams p = make_params(6, 4, 5, 7);
  Rng rng(8);
  ad::Tape t;
  ParamContext ctx(t);
  Mat w = rng.normal_matrix(3, 7).array().abs();
  for (int i = 0; i < 3; ++i) w.row(i) /= w.row(i).sum();
  Mat mapped = rng.normal_matrix(7, 6);
  Mat lang_t = rng.normal_matrix(4, 4);
  for (int i = 0; i < 4; ++i) lang_t.row(i).normalize();
  Mat pts(4, 2);
  pts << 0.1, 0.2, 0.8, 0.7, 0.4, 0.5, 0.9, 0.1;
  std::vector<Eigen::Index> pos{1, 3};

  Var wv = t.constant(w), mv = t.constant(mapped), lv = t.constant(lang_t);

  // without point targets the dual loss is the language term alone
  Var lang_only = dual_contrastive(ctx, p, wv, mv, 2, lv, pos, Var(), {});
  Var z = aggregate_conditioned(wv, mv, 2);
  Var direct = contrastive_loss(project_embedding(ctx, p, z, ProjectionHead::lang), pos, lv, p.tau);
  CHECK(lang_only.value()(0, 0) == doctest::Approx(direct.value()(0, 0)).epsilon(1e-14));

  // with point targets, the dual is the exact sum of its two parts
  Var pt_emb = ad::l2_normalize_rows(embed_point(ctx, p, t.constant(pts)));
  Var both = dual_contrastive(ctx, p, wv, mv, 2, lv, pos, pt_emb, pos);
  Var pt_part =
      contrastive_loss(project_embedding(ctx, p, z, ProjectionHead::point), pos, pt_emb, p.tau);
  CHECK(both.value()(0, 0) ==
        doctest::Approx(direct.value()(0, 0) + pt_part.value()(0, 0)).epsilon(1e-14));

  // misaligned positive lists are contract errors
  CHECK_THROWS_AS(dual_contrastive(ctx, p, wv, mv, 2, lv, {0}, Var(), {}), contract_error);
}

TEST_CASE("embed_point: determinism, zero-weight constant, bounds, gradient") {
  GroundingParams p = make_params(6, 4, 5, 9);
  ad::Tape t;
  ParamContext ctx(t);
  Mat pt(1, 2);
  pt << 0.25, 0.75;
  Mat a = embed_point(ctx, p, t.constant(pt)).value();
  Mat b = embed_point(ctx, p, t.constant(pt)).value();
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  GroundingParams zp = p;
  zp.point_w1.setZero();
  zp.point_w2.setZero();
  zp.point_b1.setZero();
  Mat pts(3, 2);
  pts << 0.1, 0.1, 0.5, 0.9, 0.7, 0.3;
  ad::Tape t2;
  ParamContext ctx2(t2);
  Mat out = embed_point(ctx2, zp, t2.constant(pts)).value();
  for (int i = 0; i < 3; ++i)
    CHECK((out.row(i) - zp.point_b2.row(0)).cwiseAbs().maxCoeff() < 1e-14);

  Mat bad(1, 2);
  bad << 1.5, 0.0;
  CHECK_THROWS_AS(embed_point(ctx, p, t.constant(bad)), argument_error);

  ParamRegistry reg;
  reg.add("pw1", &p.point_w1);
  reg.add("pb1", &p.point_b1);
  reg.add("pw2", &p.point_w2);
  reg.add("pb2", &p.point_b2);
  Mat query(2, 2);
  query << 0.2, 0.3, 0.6, 0.8;
  GradCheckReport rep = grad_check(reg, [&](ParamContext& c) {
    Var e = embed_point(c, p, c.tape().constant(query));
    return ad::sum(ad::mul(e, e));
  });
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("build_query: shapes, no-point padding, point distinctness") {
  GroundingParams p = make_params(6, 4, 5, 10);
  Rng rng(11);
  ad::Tape t;
  ParamContext ctx(t);
  Mat lang = rng.normal_matrix(2, 4);
  Mat pts(2, 2);
  pts << 0.2, 0.3, 0.7, 0.6;

  Var with_pt = build_query(ctx, p, t.constant(lang), t.constant(pts), {1, 1});
  CHECK(with_pt.cols() == 8);  // 2 * d_emb
  CHECK(with_pt.rows() == 2);

  Var without = build_query(ctx, p, t.constant(lang), Var(), {0, 0});
  CHECK((without.value().block(0, 4, 1, 4) - p.no_point).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((without.value().block(1, 4, 1, 4) - p.no_point).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((without.value().block(0, 0, 2, 4) - lang).cwiseAbs().maxCoeff() < 1e-14);

  // same category, different points -> distinct conditioning vectors
  Mat same_lang(2, 4);
  same_lang << lang.row(0), lang.row(0);
  Var q = build_query(ctx, p, t.constant(same_lang), t.constant(pts), {1, 1});
  CHECK((q.value().row(0) - q.value().row(1)).cwiseAbs().maxCoeff() > 1e-8);

  // mixed rows: one embedded point, one padded
  Var mixed = build_query(ctx, p, t.constant(lang), t.constant(pts), {1, 0});
  CHECK((mixed.value().block(1, 4, 1, 4) - p.no_point).cwiseAbs().maxCoeff() < 1e-14);
  Mat emb = embed_point(ctx, p, t.constant(pts)).value();
  CHECK((mixed.value().block(0, 4, 1, 4) - emb.row(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gradient through the full grounding path") {
  GroundingParams p = make_params(5, 3, 4, 12);
  Rng rng(13);
  Mat w = rng.normal_matrix(2, 6).array().abs();
  for (int i = 0; i < 2; ++i) w.row(i) /= w.row(i).sum();
  Mat mapped = rng.normal_matrix(6, 5);
  Mat lang_t = rng.normal_matrix(3, 3);
  for (int i = 0; i < 3; ++i) lang_t.row(i).normalize();
  Mat pts(3, 2);
  pts << 0.1, 0.9, 0.5, 0.5, 0.9, 0.2;
  std::vector<Eigen::Index> pos{0, 2};

  ParamRegistry reg;
  p.register_into(reg, "gr");
  reg.add("mapped", &mapped);
  GradCheckReport rep = grad_check(reg, [&](ParamContext& ctx) {
    ad::Tape& t = ctx.tape();
    Var pt_t = ad::l2_normalize_rows(embed_point(ctx, p, t.constant(pts)));
    return dual_contrastive(ctx, p, t.constant(w), ctx.use(mapped), 2, t.constant(lang_t), pos,
                            pt_t, pos);
  });
  INFO("worst " << rep.worst_coord);
  CHECK(rep.max_rel_err < 1e-4);
}
