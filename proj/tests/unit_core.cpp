#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "scfa/nn.hpp"
#include "scfa/rng.hpp"
#include "scfa/tensor.hpp"

using namespace scfa;
using testutil::check_gradients;

namespace {

Tensor<double> rand_t(int h, int w, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::random_uniform(h, w, c, rng, lo, hi);
}

// keep elementwise kinks (relu, |.|) away from their non-differentiable point
void nudge_away_from(Tensor<double>& t, double point, double margin = 5e-2) {
  for (long i = 0; i < t.m.size(); ++i) {
    double& v = t.m.data()[i];
    if (std::abs(v - point) < margin) v = point + (v >= point ? margin : -margin);
  }
}

}  // namespace

TEST_CASE("rng: determinism and state roundtrip") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.raw() == b.raw());

  Rng c(7);
  for (int i = 0; i < 13; ++i) c.uniform();
  const std::string snap = c.state();
  std::vector<double> first;
  for (int i = 0; i < 20; ++i) first.push_back(c.normal());
  Rng d(999);
  d.set_state(snap);
  for (int i = 0; i < 20; ++i) CHECK(d.normal() == first[(size_t)i]);
}

TEST_CASE("rng: distribution ranges") {
  Rng r(42);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const int k = r.uniform_int(-3, 5);
    CHECK(k >= -3);
    CHECK(k <= 5);
  }
  double acc = 0;
  for (int i = 0; i < 20000; ++i) acc += r.normal();
  CHECK(std::abs(acc / 20000.0) < 0.03);
}

TEST_CASE("rng: derived seeds differ by tag") {
  CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
  CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
  CHECK(derive_seed(5, "x") == derive_seed(5, "x"));
}

TEST_CASE("tensor: layout and pixel addressing") {
  Tensor<double> t(2, 3, 4);
  CHECK(t.m.rows() == 4);
  CHECK(t.m.cols() == 6);
  t.at(1, 2, 3) = 7.5;
  CHECK(t.m(3, 1 * 3 + 2) == 7.5);
  CHECK(t.pix(1, 2) == 5);
}

TEST_CASE("tensor: gray reduction and clamp") {
  Tensor<double> t(1, 2, 3);
  t.m.col(0) << 0.0, 0.3, 0.6;
  t.m.col(1) << 1.0, 1.0, 1.0;
  Tensor<double> g = to_gray(t);
  CHECK(g.c == 1);
  CHECK(g.m(0, 0) == doctest::Approx(0.3));
  CHECK(g.m(0, 1) == doctest::Approx(1.0));
  CHECK(gray_mean(t) == doctest::Approx((0.9 + 3.0) / 6.0));
  Tensor<double> cl = clamped(t, 0.0, 0.5);
  CHECK(cl.max_value() == 0.5);
}

TEST_CASE("image: model/metric space conversion roundtrip") {
  Rng rng(3);
  Image<double> img{rand_t(8, 8, 3, rng), Space::model};
  Image<double> back = img.to_metric().to_model();
  CHECK((back.t.m - img.t.m).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(img.to_metric().t.min_value() >= 0.0);
  CHECK(img.to_metric().t.max_value() <= 1.0);
}

TEST_CASE("autograd: elementwise op gradients") {
  Rng rng(11);
  Var<double> a(rand_t(4, 5, 3, rng), true);
  Var<double> b(rand_t(4, 5, 3, rng), true);
  nudge_away_from(a.value(), 0.0);

  auto run = [&](const char* tag, std::function<Var<double>()> f) {
    CAPTURE(tag);
    auto res = check_gradients({{"a", a}, {"b", b}}, f);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-6);
  };

  run("add", [&] { return mean_all(add(a, b)); });
  run("sub", [&] { return mean_all(sub(a, b)); });
  run("mul", [&] { return mean_all(mul(a, b)); });
  run("scale", [&] { return mean_all(scale(a, -2.5)); });
  run("relu", [&] { return mean_all(relu(a)); });
  run("leaky", [&] { return mean_all(leaky_relu(a, 0.2)); });
  run("tanh", [&] { return mean_all(tanh_op(a)); });
  run("sigmoid", [&] { return mean_all(sigmoid_op(a)); });
  run("softmax", [&] { return mean_all(mul(softmax_c(a), b)); });
  run("sum", [&] { return sum_all(mul(a, b)); });
}

TEST_CASE("autograd: self-referencing product accumulates both paths") {
  Var<double> a(Tensor<double>::constant(1, 1, 1, 3.0), true);
  Var<double> y = mean_all(mul(a, a));
  backward(y);
  CHECK(a.grad().m(0, 0) == doctest::Approx(6.0));
}

TEST_CASE("autograd: conv2d matches naive reference") {
  Rng rng(5);
  const int h = 6, w = 7, ci = 3, co = 4, k = 3;
  Var<double> x(rand_t(h, w, ci, rng), true);
  Conv<double> conv(ci, co, k, 1, 1, rng, 0.3);

  Tensor<double> got = conv(x).value();
  for (int oy = 0; oy < h; ++oy)
    for (int ox = 0; ox < w; ++ox)
      for (int oc = 0; oc < co; ++oc) {
        double acc = conv.b.value().m(oc, 0);
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy - 1 + ky, ix = ox - 1 + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ic = 0; ic < ci; ++ic)
              acc += conv.w.value().m(oc, (ky * k + kx) * ci + ic) * x.value().at(iy, ix, ic);
          }
        CHECK(got.at(oy, ox, oc) == doctest::Approx(acc).epsilon(1e-10));
      }
}

TEST_CASE("autograd: conv2d gradients (stride 1 and 2)") {
  Rng rng(17);
  Var<double> x(rand_t(6, 6, 2, rng), true);
  Conv<double> c1(2, 3, 3, 1, 1, rng, 0.3);
  Conv<double> c2(3, 4, 3, 2, 1, rng, 0.3);
  Var<double> tgt(rand_t(3, 3, 4, rng));

  auto loss = [&] { return charbonnier_loss(c2(c1(x)), tgt, 1e-3); };
  auto res = check_gradients(
      {{"x", x}, {"w1", c1.w}, {"b1", c1.b}, {"w2", c2.w}, {"b2", c2.b}}, loss);
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("autograd: instance norm statistics and gradients") {
  Rng rng(23);
  Var<double> x(rand_t(5, 5, 3, rng, -2.0, 3.0), true);
  InstanceNorm2d<double> norm(3);
  Tensor<double> y = norm(x).value();
  for (int ch = 0; ch < 3; ++ch) {
    const double mu = y.m.row(ch).mean();
    const double var = (y.m.row(ch).array() - mu).square().mean();
    CHECK(std::abs(mu) < 1e-9);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));  // eps shrinks it slightly
  }

  norm.gamma.value().m.setRandom();
  norm.beta.value().m.setRandom();
  Var<double> tgt(rand_t(5, 5, 3, rng));
  auto loss = [&] { return mse_to_const(mul(norm(x), tgt), 0.3); };
  auto res = check_gradients({{"x", x}, {"gamma", norm.gamma}, {"beta", norm.beta}}, loss, 1e-5);
  CAPTURE(res.worst);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("autograd: resampling and pooling gradients") {
  Rng rng(31);
  Var<double> x(rand_t(4, 6, 2, rng), true);
  Var<double> tgt_up(rand_t(8, 12, 2, rng));
  Var<double> tgt_dn(rand_t(2, 3, 2, rng));

  // wide eps keeps the probe loss smooth so only the resampling is under test
  auto r1 = check_gradients({{"x", x}}, [&] { return charbonnier_loss(upsample_nearest2(x), tgt_up, 0.5); });
  CHECK(r1.max_rel_err < 1e-6);
  auto r2 = check_gradients({{"x", x}}, [&] { return charbonnier_loss(avg_pool2(x), tgt_dn, 0.5); });
  CHECK(r2.max_rel_err < 1e-6);
  auto r3 = check_gradients({{"x", x}}, [&] { return mse_to_const(global_avg_pool(x), 0.25); });
  CHECK(r3.max_rel_err < 1e-6);
}

TEST_CASE("autograd: concat routes gradients to the right slices") {
  Rng rng(37);
  Var<double> a(rand_t(3, 3, 2, rng), true);
  Var<double> b(rand_t(3, 3, 5, rng), true);
  Var<double> wsum(rand_t(3, 3, 7, rng));
  auto res = check_gradients({{"a", a}, {"b", b}}, [&] { return mean_all(mul(concat_c(a, b), wsum)); });
  CHECK(res.max_rel_err < 1e-6);
  CHECK(concat_c(a, b).value().c == 7);
}

TEST_CASE("autograd: linear layer gradients") {
  Rng rng(41);
  Var<double> x(rand_t(1, 1, 6, rng), true);
  Linear<double> fc(6, 4, rng, 0.5);
  auto res = check_gradients({{"x", x}, {"w", fc.w}, {"b", fc.b}},
                             [&] { return mse_to_const(fc(x), 0.1); });
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("autograd: fused loss gradients") {
  Rng rng(43);
  Var<double> a(rand_t(4, 4, 3, rng), true);
  Var<double> b(rand_t(4, 4, 3, rng), true);
  {
    Tensor<double> d = a.value();
    d.m -= b.value().m;
    nudge_away_from(d, 0.0);
    a.value().m = b.value().m + d.m;  // keep |a-b| away from zero for l1
  }
  auto run = [&](const char* tag, std::function<Var<double>()> f, double tol) {
    CAPTURE(tag);
    auto res = check_gradients({{"a", a}, {"b", b}}, f);
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < tol);
  };
  run("charbonnier", [&] { return charbonnier_loss(a, b, 1e-3); }, 1e-5);
  run("l1", [&] { return l1_loss(a, b); }, 1e-6);
  run("mse_const", [&] { return mse_to_const(a, 0.7); }, 1e-6);
  run("cosine", [&] { return cosine_sim(a, b); }, 1e-6);

  Var<double> p(rand_t(4, 4, 1, rng, 0.05, 0.95), true);
  auto r1 = check_gradients({{"p", p}}, [&] { return bce_to_const(p, 1.0); });
  CHECK(r1.max_rel_err < 1e-6);
  auto r0 = check_gradients({{"p", p}}, [&] { return bce_to_const(p, 0.0); });
  CHECK(r0.max_rel_err < 1e-6);
}

TEST_CASE("autograd: closed-form loss values") {
  Rng rng(47);
  Var<double> x(rand_t(6, 6, 3, rng));
  CHECK(charbonnier_loss(x, x, 1e-3).value().m(0, 0) == 1e-3);
  CHECK(l1_loss(x, x).value().m(0, 0) == 0.0);
  CHECK(cosine_sim(x, x).value().m(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

  Var<double> half(Tensor<double>::constant(2, 2, 1, 0.5));
  CHECK(bce_to_const(half, 1.0).value().m(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(mse_to_const(half, 0.0).value().m(0, 0) == doctest::Approx(0.25));
}

TEST_CASE("autograd: detach and frozen subgraphs are pruned") {
  Rng rng(53);
  Var<double> a(rand_t(3, 3, 1, rng), true);
  Var<double> frozen(rand_t(3, 3, 1, rng), false);

  Var<double> y1 = mean_all(mul(detach(a), a));
  backward(y1);
  CHECK(a.grad().m.isApprox(a.value().m / 9.0));  // only the live path contributes

  Var<double> y2 = mean_all(mul(frozen, frozen));
  CHECK_FALSE(y2.needs_grad());
  backward(y2);  // no-op, must not throw
  CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("autograd: gradients accumulate across backward calls until zeroed") {
  Var<double> a(Tensor<double>::constant(1, 1, 1, 2.0), true);
  Var<double> y1 = mean_all(scale(a, 3.0));
  backward(y1);
  Var<double> y2 = mean_all(scale(a, 4.0));
  backward(y2);
  CHECK(a.grad().m(0, 0) == doctest::Approx(7.0));
  a.zero_grad();
  CHECK(a.grad().m(0, 0) == 0.0);
}

TEST_CASE("nn: parameter collection names and trainability toggle") {
  Rng rng(59);
  DoubleConv<double> block(3, 8, rng);
  NamedParams<double> ps;
  block.collect("enc.l1", ps);
  CHECK(ps.size() == 8);
  CHECK(ps[0].first == "enc.l1.a.conv.w");
  CHECK(ps[7].first == "enc.l1.b.norm.beta");
  set_trainable(ps, false);
  for (auto& [n, v] : ps) CHECK_FALSE(v.requires_grad());
  set_trainable(ps, true);
  CHECK(param_count(ps) == 3 * 9 * 8 + 8 + 8 + 8 + 8 * 9 * 8 + 8 + 8 + 8);
}
