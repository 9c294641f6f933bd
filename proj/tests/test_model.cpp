#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctrlo/grad_check.hpp"
#include "ctrlo/model.hpp"
#include "ctrlo/synthscene.hpp"

using namespace ctrlo;
using ad::Mat;
using ad::Var;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.k = 8;
  d.d_in = 4;
  d.n_slots = 3;
  d.d_slot = 4;
  d.d_sa = 4;
  d.slot_mlp_hidden = 6;
  d.t_iters = 2;
  d.map_heads = 2;
  d.map_attn = 4;
  d.map_ff = 8;
  d.dec_width = 6;
  d.dec_hidden_layers = 2;
  d.cond_hidden = 6;
  d.d_emb = 4;
  d.point_hidden = 5;
  d.proj_hidden = 5;
  return d;
}

}  // namespace

TEST_CASE("map_features: identity at zeroed residual branches") {
  Rng rng(1);
  MappingParams p = MappingParams::init(6, 4, 8, 2, rng);
  for (MappingBlock& b : p.blocks) {
    b.w_o.setZero();
    b.b_o.setZero();
    b.ff_w2.setZero();
    b.ff_b2.setZero();
  }
  ad::Tape t;
  ParamContext ctx(t);
  Mat h = rng.normal_matrix(7, 6);
  Var out = map_features(ctx, p, t.constant(h));
  CHECK((out.value() - h).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("map_features: token permutation equivariance and K=1") {
  Rng rng(2);
  MappingParams p = MappingParams::init(5, 4, 10, 2, rng);
  Mat h = rng.normal_matrix(6, 5);

  ad::Tape t;
  ParamContext ctx(t);
  Mat out = map_features(ctx, p, t.constant(h)).value();

  Mat hp = h;  // swap tokens 1 and 4
  hp.row(1) = h.row(4);
  hp.row(4) = h.row(1);
  Mat outp = map_features(ctx, p, t.constant(hp)).value();
  CHECK((outp.row(1) - out.row(4)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((outp.row(4) - out.row(1)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((outp.row(0) - out.row(0)).cwiseAbs().maxCoeff() < 1e-12);

  // single token: attention mixes nothing, output = residual + ff path
  Mat h1 = rng.normal_matrix(1, 5);
  Mat out1 = map_features(ctx, p, t.constant(h1)).value();
  // oracle: attention over one key is that key's value row regardless of score
  Mat x = h1;
  for (const MappingBlock& b : p.blocks) {
    // layer norm of a single row
    auto ln = [&](const Mat& v, const Mat& g, const Mat& beta) {
      const double mu = v.row(0).mean();
      Eigen::RowVectorXd d = v.row(0).array() - mu;
      const double var = d.array().square().mean();
      Eigen::RowVectorXd xh = d / std::sqrt(var + 1e-5);
      return ((xh.array() * g.row(0).array()) + beta.row(0).array()).matrix().eval();
    };
    Eigen::RowVectorXd a = ln(x, b.ln1_g, b.ln1_b);
    Eigen::RowVectorXd attn_out = a * b.w_v;  // softmax over a single key is 1
    x = x + ((attn_out * b.w_o) + b.b_o.row(0));
    Eigen::RowVectorXd f = ln(x, b.ln2_g, b.ln2_b);
    Eigen::RowVectorXd hmid = f * b.ff_w1 + b.ff_b1.row(0);
    Eigen::RowVectorXd act =
        hmid.array() * (1.0 / (1.0 + (-hmid.array()).exp()));  // silu
    x = x + ((act.matrix() * b.ff_w2) + b.ff_b2.row(0));
  }
  CHECK((out1 - x).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("decode: single slot, identical slots, hand-sized convex combination") {
  Rng rng(3);
  // N=1: mask is identically one, recon equals that slot's output
  {
    DecoderParams p = DecoderParams::init(5, 4, 6, 6, 8, 2, 3, rng);
    ad::Tape t;
    ParamContext ctx(t);
    ModelOutput out;
    decode(ctx, p, t.constant(rng.normal_matrix(1, 4)), Var(), true, out);
    CHECK((out.masks.value().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK((out.recon.value() - out.recon_per_slot[0].value()).cwiseAbs().maxCoeff() < 1e-12);
  }

  // identical conditioned inputs: masks are exactly one half
  {
    DecoderParams p = DecoderParams::init(5, 4, 6, 6, 8, 2, 3, rng);
    ad::Tape t;
    ParamContext ctx(t);
    Mat srow = rng.normal_matrix(1, 4);
    Mat slots(2, 4);
    slots << srow, srow;
    ModelOutput out;
    decode(ctx, p, t.constant(slots), Var(), true, out);
    CHECK((out.masks.value().array() - 0.5).abs().maxCoeff() < 1e-12);
  }

  // hand-sized N=2, K=1, d_feat=1: recon = m0*r0 + m1*r1
  {
    DecoderParams p = DecoderParams::init(1, 3, 4, 5, 6, 2, 1, rng);
    ad::Tape t;
    ParamContext ctx(t);
    Mat slots = rng.normal_matrix(2, 3);
    Mat queries = rng.normal_matrix(2, 4);
    ModelOutput out;
    decode(ctx, p, t.constant(slots), t.constant(queries), true, out);
    const double a0 = out.alpha.value()(0, 0), a1 = out.alpha.value()(1, 0);
    const double m = std::max(a0, a1);
    const double e0 = std::exp(a0 - m), e1 = std::exp(a1 - m);
    const double w0 = e0 / (e0 + e1), w1 = e1 / (e0 + e1);
    const double expect =
        w0 * out.recon_per_slot[0].value()(0, 0) + w1 * out.recon_per_slot[1].value()(0, 0);
    CHECK(out.recon.value()(0, 0) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(out.masks.value()(0, 0) == doctest::Approx(w0).epsilon(1e-12));
  }
}

TEST_CASE("decode: mask columns sum to one; conditioned pair equivariance") {
  Rng rng(4);
  DecoderParams p = DecoderParams::init(6, 4, 5, 6, 8, 3, 4, rng);
  ad::Tape t;
  ParamContext ctx(t);
  Mat slots = rng.normal_matrix(4, 4);
  Mat queries = rng.normal_matrix(3, 5);
  ModelOutput out;
  decode(ctx, p, t.constant(slots), t.constant(queries), true, out);
  for (int k = 0; k < 6; ++k) CHECK(std::abs(out.masks.value().col(k).sum() - 1.0) < 1e-10);

  // jointly permuting (slot, query) pairs permutes the decoder outputs
  Mat slots_p = slots, queries_p = queries;
  slots_p.row(0) = slots.row(2);
  slots_p.row(2) = slots.row(0);
  queries_p.row(0) = queries.row(2);
  queries_p.row(2) = queries.row(0);
  ModelOutput out_p;
  decode(ctx, p, t.constant(slots_p), t.constant(queries_p), true, out_p);
  CHECK((out_p.alpha.value().row(0) - out.alpha.value().row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out_p.alpha.value().row(2) - out.alpha.value().row(0)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((out_p.recon.value() - out.recon.value()).cwiseAbs().maxCoeff() < 1e-12);

  // decoder conditioning off: cond MLP and queries are bypassed
  ModelOutput out_un;
  decode(ctx, p, t.constant(slots), t.constant(queries), false, out_un);
  ModelOutput out_un2;
  decode(ctx, p, t.constant(slots), Var(), false, out_un2);
  CHECK((out_un.recon.value() - out_un2.recon.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("recon_loss examples and oracle") {
  Rng rng(5);
  ad::Tape t;
  Mat a = rng.normal_matrix(6, 3);
  CHECK(recon_loss(t.constant(a), t.constant(a)).value()(0, 0) == 0.0);
  Mat b = a.array() + 1.0;
  CHECK(recon_loss(t.constant(b), t.constant(a)).value()(0, 0) == doctest::Approx(1.0).epsilon(1e-14));

  Mat c = rng.normal_matrix(6, 3);
  double oracle = 0.0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) oracle += (a(i, j) - c(i, j)) * (a(i, j) - c(i, j));
  oracle /= 18.0;
  CHECK(recon_loss(t.constant(a), t.constant(c)).value()(0, 0) ==
        doctest::Approx(oracle).epsilon(1e-13));

  CHECK_THROWS_AS(recon_loss(t.constant(a), t.constant(rng.normal_matrix(5, 3))), argument_error);
}

TEST_CASE("total_loss arithmetic") {
  ad::Tape t;
  Var r = t.constant(Mat::Constant(1, 1, 0.5));
  Var c = t.constant(Mat::Constant(1, 1, 0.5));
  CHECK(total_loss(r, c, 1.0).value()(0, 0) == doctest::Approx(1.0));
  CHECK(total_loss(r, c, 0.0).value()(0, 0) == doctest::Approx(0.5));
  Var zero = t.constant(Mat::Constant(1, 1, 0.0));
  CHECK(total_loss(r, zero, 2.0).value()(0, 0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(total_loss(r, c, -0.1), argument_error);
}

TEST_CASE("forward_pass: determinism, mask partition, M=0") {
  ModelDims dims = tiny_dims();
  Rng rng(6);
  ModelParams params = ModelParams::init(dims, rng);

  SceneConfig sc;
  sc.grid_side = 2;          // memo: k must be grid_side^2 for the decoder
  sc.categories = 3;
  sc.min_objects = 1;
  sc.max_objects = 2;
  sc.d_app = 2;              // d_feat = 4 = dims.d_in
  sc.d_emb = 4;
  sc.min_separation = 0.2;
  SceneCodebooks books = make_scene_codebooks(sc, 7);
  Rng srng(8);
  Sample s = generate_scene(sc, books, srng);
  while (s.queries.count() > dims.n_slots) s = generate_scene(sc, books, srng);

  dims.k = 4;
  params = ModelParams::init(dims, rng);
  Rng nr(9);
  const Mat noise = draw_slot_noise(dims.n_slots, dims.d_slot, nr);

  ForwardOptions fopt;
  auto run = [&] {
    ad::Tape t;
    ParamContext ctx(t);
    ModelOutput out = forward_pass(ctx, params, s.grid, s.queries, fopt, noise);
    return out.masks.value();
  };
  Mat m1 = run(), m2 = run();
  CHECK((m1 - m2).cwiseAbs().maxCoeff() == 0.0);  // deterministic given the same noise
  for (int k = 0; k < 4; ++k) CHECK(std::abs(m1.col(k).sum() - 1.0) < 1e-10);

  // M=0 with conditioning switches off: the unconditioned pipeline
  QuerySet empty;
  empty.lang_codes.resize(0, sc.d_emb);
  empty.points.resize(0, 2);
  fopt.init_mode = SlotInitMode::none;
  fopt.decoder_conditioning = false;
  ad::Tape t;
  ParamContext ctx(t);
  ModelOutput out = forward_pass(ctx, params, s.grid, empty, fopt, noise);
  CHECK(out.slots.conditioned == 0);
  CHECK(out.mapped.rows() == 4);
}

TEST_CASE("gradients of the decode path") {
  Rng rng(10);
  DecoderParams p = DecoderParams::init(4, 3, 4, 5, 5, 2, 3, rng);
  Mat slots = rng.normal_matrix(2, 3);
  Mat queries = rng.normal_matrix(2, 4);
  Mat target = rng.normal_matrix(4, 3);
  ParamRegistry reg;
  p.register_into(reg, "dec");
  reg.add("slots", &slots);
  GradCheckReport rep = grad_check(reg, [&](ParamContext& ctx) {
    ModelOutput out;
    decode(ctx, p, ctx.use(slots), ctx.tape().constant(queries), true, out);
    return recon_loss(out.recon, ctx.tape().constant(target));
  });
  INFO("worst " << rep.worst_coord);
  CHECK(rep.max_rel_err < 1e-4);
}
