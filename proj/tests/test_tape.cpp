#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ctrlo/adam.hpp"
#include "ctrlo/grad_check.hpp"
#include "ctrlo/ops.hpp"
#include "ctrlo/rng.hpp"

using namespace ctrlo;
using ad::Mat;
using ad::Var;

namespace {

Mat row2(double a, double b) {
  Mat m(1, 2);
  m << a, b;
  return m;
}

// Random parameters bounded in norm, as the gradient-suite properties demand.
Mat bounded_random(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat m = rng.normal_matrix(r, c);
  const double n = m.norm();
  if (n > 10.0) m *= 10.0 / n;
  return m;
}

}  // namespace

TEST_CASE("softmax hand values and invariances") {
  ad::Tape t;
  Var x = t.constant(row2(0.0, 0.0));
  Mat y = ad::softmax(x, 1).value();
  CHECK(y(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y(0, 1) == doctest::Approx(0.5).epsilon(1e-12));

  // [ln 1, ln 3] -> [0.25, 0.75]
  Var x2 = t.constant(row2(std::log(1.0), std::log(3.0)));
  Mat y2 = ad::softmax(x2, 1).value();
  CHECK(y2(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(y2(0, 1) == doctest::Approx(0.75).epsilon(1e-12));

  // shift invariance and row sums
  Rng rng(7);
  Mat r = rng.normal_matrix(5, 9);
  ad::Tape t2;
  Mat a = ad::softmax(t2.constant(r), 1).value();
  Mat b = ad::softmax(t2.constant((r.array() + 3.25).matrix()), 1).value();
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < 5; ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);

  // monotone in inputs: raising one logit raises its probability
  Mat r2 = r;
  r2(2, 3) += 0.5;
  Mat c = ad::softmax(t2.constant(r2), 1).value();
  CHECK(c(2, 3) > a(2, 3));

  // axis 0 normalizes columns
  Mat a0 = ad::softmax(t2.constant(r), 0).value();
  for (int j = 0; j < 9; ++j) CHECK(std::abs(a0.col(j).sum() - 1.0) < 1e-12);

  CHECK_THROWS_AS(ad::softmax(t2.constant(r), 2), argument_error);
}

TEST_CASE("layer_norm hand values") {
  ad::Tape t;
  Var g = t.constant(ones(1, 3));
  Var b = t.constant(zeros(1, 3));

  // constant row collapses to beta
  Mat cst(1, 3);
  cst << 4.0, 4.0, 4.0;
  Mat y = ad::layer_norm(t.constant(cst), g, b, 1e-5).value();
  CHECK(y.cwiseAbs().maxCoeff() < 1e-9);

  // [1,-1] already has mean 0, std 1
  ad::Tape t2;
  Mat x(1, 2);
  x << 1.0, -1.0;
  Mat y2 = ad::layer_norm(t2.constant(x), t2.constant(ones(1, 2)), t2.constant(zeros(1, 2)), 1e-12)
               .value();
  CHECK(y2(0, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(y2(0, 1) == doctest::Approx(-1.0).epsilon(1e-6));

  // gamma=0 gives constant beta
  ad::Tape t3;
  Mat bt(1, 2);
  bt << 2.5, -1.0;
  Mat y3 =
      ad::layer_norm(t3.constant(x), t3.constant(zeros(1, 2)), t3.constant(bt), 1e-5).value();
  CHECK(y3(0, 0) == doctest::Approx(2.5));
  CHECK(y3(0, 1) == doctest::Approx(-1.0));

  // mean of output is beta-mean within 1e-10 for non-degenerate rows
  Rng rng(3);
  ad::Tape t4;
  Mat r = rng.normal_matrix(6, 8);
  Mat y4 = ad::layer_norm(t4.constant(r), t4.constant(ones(1, 8)), t4.constant(zeros(1, 8)), 1e-5)
               .value();
  for (int i = 0; i < 6; ++i) CHECK(std::abs(y4.row(i).mean()) < 1e-10);

  CHECK_THROWS_AS(
      ad::layer_norm(t4.constant(r), t4.constant(ones(1, 7)), t4.constant(zeros(1, 8)), 1e-5),
      argument_error);
}

TEST_CASE("gru gate limits") {
  Rng rng(11);
  const int d = 5;
  ad::Tape t;
  auto c = [&](Mat m) { return t.constant(std::move(m)); };
  Mat state = rng.normal_matrix(3, d);
  Mat input = rng.normal_matrix(3, d);

  ad::GruWeights w;
  w.w_z = c(zeros(d, d));
  w.u_z = c(zeros(d, d));
  w.w_r = c(zeros(d, d));
  w.u_r = c(zeros(d, d));
  w.w_h = c(glorot(d, d, rng));
  w.u_h = c(glorot(d, d, rng));
  w.b_r = c(zeros(1, d));
  w.b_h = c(zeros(1, d));

  // update gate saturated to 1: output == candidate
  w.b_z = c(ones(1, d) * 60.0);
  Var out1 = ad::gru_cell(c(state), c(input), w);
  ad::Tape t2;  // recompute candidate independently
  // z=1 exactly would give tanh(input*w_h + (0.5*state)*u_h) with r=sigmoid(0)=0.5
  Mat r_gate = Mat::Constant(3, d, 0.5);
  Mat cand = (input * w.w_h.value() + r_gate.cwiseProduct(state) * w.u_h.value()).array().tanh();
  CHECK((out1.value() - cand).cwiseAbs().maxCoeff() < 1e-9);

  // update gate saturated to 0: output == previous state
  w.b_z = c(ones(1, d) * -60.0);
  Var out0 = ad::gru_cell(c(state), c(input), w);
  CHECK((out0.value() - state).cwiseAbs().maxCoeff() < 1e-9);

  // all-zero weights: output bounded by tanh mixing
  ad::GruWeights wz;
  wz.w_z = c(zeros(d, d));
  wz.u_z = c(zeros(d, d));
  wz.b_z = c(zeros(1, d));
  wz.w_r = c(zeros(d, d));
  wz.u_r = c(zeros(d, d));
  wz.b_r = c(zeros(1, d));
  wz.w_h = c(zeros(d, d));
  wz.u_h = c(zeros(d, d));
  wz.b_h = c(zeros(1, d));
  Mat small = rng.normal_matrix(3, d) * 0.5;
  Var outz = ad::gru_cell(c(small), c(small), wz);
  // z = 0.5, candidate = tanh(0) = 0 -> out = 0.5*state
  CHECK((outz.value() - 0.5 * small).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(ad::gru_cell(c(state), c(rng.normal_matrix(2, d)), w), argument_error);
}

TEST_CASE("backward on quadratic and unused leaves") {
  ad::Tape t;
  Mat x(1, 2);
  x << 1.0, 2.0;
  Var vx = t.leaf(x);
  Var vy = t.leaf(row2(5.0, -3.0));  // unused
  Var loss = ad::sum(ad::mul(vx, vx));
  t.backward(loss);
  CHECK(vx.grad()(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(vx.grad()(0, 1) == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(vy.grad().size() == 0);  // untouched: exactly zero contribution

  ad::Tape t2;
  Var nonscalar = t2.leaf(row2(1, 2));
  CHECK_THROWS_AS(t2.backward(nonscalar), contract_error);
}

TEST_CASE("shared subexpressions accumulate like the expanded tree") {
  // loss = s*s with s = a+b, versus expanded (a+b)*(a+b) built twice
  Mat a0 = row2(0.7, -1.2), b0 = row2(0.4, 2.0);
  ad::Tape t;
  Var a = t.leaf(a0), b = t.leaf(b0);
  Var s = ad::add(a, b);
  t.backward(ad::sum(ad::mul(s, s)));
  Mat ga_shared = a.grad();

  ad::Tape t2;
  Var a2 = t2.leaf(a0), b2 = t2.leaf(b0);
  Var s1 = ad::add(a2, b2);
  Var s2 = ad::add(a2, b2);
  t2.backward(ad::sum(ad::mul(s1, s2)));
  CHECK((a2.grad() - ga_shared).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((a2.grad() - b2.grad()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("gradient of every primitive matches finite differences") {
  Rng rng(21);
  auto check = [&](const char* name, auto builder, std::vector<std::pair<const char*, Mat*>> ps) {
    ParamRegistry reg;
    for (auto& [n, m] : ps) reg.add(n, m);
    GradCheckReport rep = grad_check(reg, builder, 1e-5);
    INFO(name << " worst " << rep.worst_coord);
    CHECK(rep.max_rel_err < 1e-4);
  };

  Mat a = bounded_random(4, 5, rng), b = bounded_random(4, 5, rng);
  Mat w = bounded_random(5, 3, rng), cvec = bounded_random(4, 1, rng);
  Mat g1 = bounded_random(1, 5, rng), b1 = bounded_random(1, 5, rng);

  check("add/mul/scale", [&](ParamContext& ctx) {
    return ad::sum(ad::scale(ad::mul(ad::add(ctx.use(a), ctx.use(b)), ctx.use(a)), 1.3));
  }, {{"a", &a}, {"b", &b}});

  check("sub/neg/add_scalar", [&](ParamContext& ctx) {
    return ad::mean(ad::add_scalar(ad::sub(ctx.use(a), ad::neg(ctx.use(b))), 0.7));
  }, {{"a", &a}, {"b", &b}});

  check("matmul/transpose", [&](ParamContext& ctx) {
    return ad::sum(ad::matmul(ad::transpose(ad::matmul(ctx.use(a), ctx.use(w))),
                              ad::matmul(ctx.use(a), ctx.use(w))));
  }, {{"a", &a}, {"w", &w}});

  check("row-broadcast bias", [&](ParamContext& ctx) {
    return ad::sum(ad::tanh_(ad::add_row_broadcast(ctx.use(a), ctx.use(g1))));
  }, {{"a", &a}, {"g", &g1}});

  check("colwise_scale", [&](ParamContext& ctx) {
    return ad::sum(ad::colwise_scale(ctx.use(a), ctx.use(cvec)));
  }, {{"a", &a}, {"c", &cvec}});

  check("sigmoid/tanh/silu/exp", [&](ParamContext& ctx) {
    Var x = ctx.use(a);
    return ad::sum(ad::add(ad::sigmoid(x), ad::add(ad::tanh_(x), ad::add(ad::silu(x),
                   ad::exp_(ad::scale(x, 0.1))))));
  }, {{"a", &a}});

  Mat pos = (bounded_random(3, 4, rng).array().abs() + 0.5).matrix();
  check("log", [&](ParamContext& ctx) { return ad::sum(ad::log_(ctx.use(pos))); },
        {{"p", &pos}});

  check("softmax rows+cols", [&](ParamContext& ctx) {
    return ad::sum(ad::mul(ad::softmax(ctx.use(a), 1), ad::softmax(ctx.use(a), 0)));
  }, {{"a", &a}});

  check("logsumexp", [&](ParamContext& ctx) {
    return ad::sum(ad::logsumexp_rows(ctx.use(a)));
  }, {{"a", &a}});

  Mat att = (bounded_random(3, 6, rng).array().abs()).matrix();
  check("row_normalize", [&](ParamContext& ctx) {
    Var y = ad::row_normalize(ctx.use(att), 1e-8);
    return ad::sum(ad::mul(y, y));
  }, {{"att", &att}});

  check("layer_norm", [&](ParamContext& ctx) {
    return ad::sum(ad::silu(ad::layer_norm(ctx.use(a), ctx.use(g1), ctx.use(b1), 1e-5)));
  }, {{"a", &a}, {"gm", &g1}, {"bt", &b1}});

  check("l2_normalize_rows", [&](ParamContext& ctx) {
    Var y = ad::l2_normalize_rows(ctx.use(a));
    return ad::sum(ad::mul(y, ad::exp_(ad::scale(y, 0.3))));
  }, {{"a", &a}});

  std::vector<Eigen::Index> idx{1, 0, 2, 4};
  check("gather_cols", [&](ParamContext& ctx) {
    return ad::sum(ad::gather_cols(ad::softmax(ctx.use(a), 1), idx));
  }, {{"a", &a}});

  check("mse", [&](ParamContext& ctx) { return ad::mse(ctx.use(a), ctx.use(b)); },
        {{"a", &a}, {"b", &b}});

  check("slices/concat", [&](ParamContext& ctx) {
    Var x = ctx.use(a);
    Var top = ad::row_slice(x, 0, 2), bot = ad::row_slice(x, 2, 2);
    Var re = ad::concat_rows({bot, top});
    Var l = ad::col_slice(re, 0, 3), r = ad::col_slice(re, 3, 2);
    return ad::sum(ad::mul(ad::concat_cols({r, l}), ad::concat_cols({r, l})));
  }, {{"a", &a}});

  // softmax-cross-entropy, the derived diffcore example
  Mat logits = bounded_random(4, 6, rng);
  std::vector<Eigen::Index> labels{2, 0, 5, 1};
  check("softmax-cross-entropy", [&](ParamContext& ctx) {
    Var z = ctx.use(logits);
    Var lse = ad::logsumexp_rows(z);
    Var picked = ad::gather_cols(z, labels);
    return ad::mean(ad::sub(lse, picked));
  }, {{"logits", &logits}});

  // full GRU cell
  const int d = 4;
  Mat st = bounded_random(3, d, rng), in = bounded_random(3, d, rng);
  Mat wz = bounded_random(d, d, rng), uz = bounded_random(d, d, rng), bz = bounded_random(1, d, rng);
  Mat wr = bounded_random(d, d, rng), ur = bounded_random(d, d, rng), br = bounded_random(1, d, rng);
  Mat wh = bounded_random(d, d, rng), uh = bounded_random(d, d, rng), bh = bounded_random(1, d, rng);
  check("gru_cell", [&](ParamContext& ctx) {
    ad::GruWeights gw{ctx.use(wz), ctx.use(uz), ctx.use(bz), ctx.use(wr), ctx.use(ur),
                      ctx.use(br), ctx.use(wh), ctx.use(uh), ctx.use(bh)};
    Var out = ad::gru_cell(ctx.use(st), ctx.use(in), gw);
    return ad::sum(ad::mul(out, out));
  }, {{"st", &st}, {"in", &in}, {"wz", &wz}, {"uz", &uz}, {"bz", &bz}, {"wr", &wr},
      {"ur", &ur}, {"br", &br}, {"wh", &wh}, {"uh", &uh}, {"bh", &bh}});
}

TEST_CASE("grad_check on quadratic is near machine precision") {
  Rng rng(5);
  Mat x = rng.normal_matrix(3, 3);
  ParamRegistry reg;
  reg.add("x", &x);
  GradCheckReport rep =
      grad_check(reg, [&](ParamContext& ctx) { return ad::sum(ad::mul(ctx.use(x), ctx.use(x))); });
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("adam steps") {
  // zero gradient leaves parameters unchanged
  Mat p = row2(1.5, -2.0);
  ParamRegistry reg;
  reg.add("p", &p);
  Adam opt(reg, {});
  std::vector<Mat> g{zeros(1, 2)};
  Mat before = p;
  opt.step(reg, g);
  CHECK((p - before).cwiseAbs().maxCoeff() == 0.0);
  CHECK(opt.steps_taken() == 1);

  // constant gradient, first step moves by ~ -lr * sign(g)
  AdamConfig cfg;
  cfg.lr = 0.0004;  // default learning rate
  Mat q = row2(0.3, 0.9);
  ParamRegistry reg2;
  reg2.add("q", &q);
  Adam opt2(reg2, cfg);
  Mat grad = row2(3.0, -0.25);
  Mat q0 = q;
  opt2.step(reg2, {grad});
  // bias-corrected first step: m_hat = g, v_hat = g^2 -> delta = -lr*sign(g)
  CHECK((q - q0)(0, 0) == doctest::Approx(-cfg.lr).epsilon(1e-4));
  CHECK((q - q0)(0, 1) == doctest::Approx(cfg.lr).epsilon(1e-4));

  AdamConfig defaults;
  CHECK(defaults.lr == doctest::Approx(0.0004));
}

TEST_CASE("l2_normalize_rows rejects zero rows") {
  ad::Tape t;
  Mat z = zeros(2, 3);
  z.row(0) << 1.0, 0.0, 0.0;
  CHECK_THROWS_AS(ad::l2_normalize_rows(t.constant(z)), numeric_error);
}

TEST_CASE("forward primitives stay finite on bounded inputs") {
  Rng rng(99);
  for (int trial = 0; trial < 20; ++trial) {
    ad::Tape t;
    Mat x = bounded_random(6, 7, rng);
    Var v = t.constant(x);
    Mat outs[] = {ad::softmax(v, 1).value(), ad::silu(v).value(),
                  ad::logsumexp_rows(v).value(),
                  ad::layer_norm(v, t.constant(ones(1, 7)), t.constant(zeros(1, 7)), 1e-5).value()};
    for (const Mat& m : outs) CHECK(m.allFinite());
  }
}
