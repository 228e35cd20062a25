#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <vector>

#include "metric_oracles.hpp"
#include "scfa/metrics.hpp"

using namespace scfa;
using namespace scfa::testutil;
namespace fs = std::filesystem;
using Mat = MatrixX<double>;

TEST_CASE("psnr matches a direct mse recomputation") {
  Rng rng(301);
  for (int k = 0; k < 20; ++k) {
    const Tensor<double> a = random_metric(32, 32, 3, rng), b = random_metric(32, 32, 3, rng);
    double se = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        for (int c = 0; c < 3; ++c) {
          const double d = a.at(y, x, c) - b.at(y, x, c);
          se += d * d;
        }
    const double want = 10.0 * std::log10(1.0 / (se / (32.0 * 32 * 3)));
    CHECK(psnr(a, b) == doctest::Approx(want).epsilon(1e-9));
    CHECK(std::abs(psnr(a, b) - want) <= 1e-6);
  }
}

TEST_CASE("psnr closed forms and errors") {
  Rng rng(302);
  const Tensor<double> x = random_metric(32, 32, 3, rng);
  CHECK(psnr(x, x) == 100.0);

  Tensor<double> half = Tensor<double>::constant(32, 32, 3, 0.5);
  Tensor<double> off = Tensor<double>::constant(32, 32, 3, 0.6);
  CHECK(psnr(off, half) == doctest::Approx(20.0));  // mse 0.01

  CHECK_THROWS_AS(psnr(x, random_metric(16, 16, 3, rng)), Error);
  Tensor<double> bad = half;
  bad.at(0, 0, 0) = 1.5;
  CHECK_THROWS_AS(psnr(bad, half), Error);
}

TEST_CASE("ssim matches a windowed brute-force oracle") {
  Rng rng(303);
  for (int k = 0; k < 20; ++k) {
    // Mix of rough and smooth fixtures: smooth ones exercise the stabilizing
    // constants instead of saturating the variance terms.
    Tensor<double> a = random_metric(32, 32, 1 + 2 * (k % 2), rng);
    Tensor<double> b = random_metric(32, 32, 1 + 2 * (k % 2), rng);
    if (k % 3 == 0) {
      a.m = (a.m.array() * 0.05 + 0.4).matrix();
      b.m = (b.m.array() * 0.05 + 0.4).matrix();
    }
    CHECK(std::abs(ssim(a, b) - oracle_ssim(a, b)) <= 1e-4);
  }
}

TEST_CASE("ssim identities") {
  Rng rng(304);
  const Tensor<double> a = random_metric(33, 47, 3, rng), b = random_metric(33, 47, 3, rng);
  CHECK(ssim(a, a) == 1.0);
  CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-9);

  // Constant images offset by 0.5: structure saturates through the
  // stabilizers, luminance stays below 1.
  const Tensor<double> lo = Tensor<double>::constant(32, 32, 3, 0.25);
  const Tensor<double> hi = Tensor<double>::constant(32, 32, 3, 0.75);
  const double got = ssim(lo, hi);
  CHECK(got == doctest::Approx(oracle_ssim(lo, hi)));
  CHECK(got == doctest::Approx((2 * 0.25 * 0.75 + 1e-4) / (0.25 * 0.25 + 0.75 * 0.75 + 1e-4)));
  CHECK(got < 1.0);
  CHECK_THROWS_AS(ssim(random_metric(8, 8, 3, rng), random_metric(8, 8, 3, rng)), Error);
}

TEST_CASE("optical density closed forms") {
  const Tensor<double> white = Tensor<double>::constant(16, 16, 3, 1.0);
  ODMap<double> od = optical_density(white, 1.0);
  CHECK(od.od.m.cwiseAbs().maxCoeff() == 0.0);
  CHECK(od.alpha == 1.0);
  CHECK(od.i0 == 255.0);

  // Pixels whose transmitted DAB fraction is 10^-c unmix back to OD = c.
  for (double conc : {1.0, 2.0}) {
    const Tensor<double> img = dab_image(Mat::Constant(16, 16, conc));
    const Mat got = optical_density(img, 1.0).od.m.cast<double>();
    CHECK(got.minCoeff() == doctest::Approx(conc).epsilon(1e-9));
    CHECK(got.maxCoeff() == doctest::Approx(conc).epsilon(1e-9));
  }
  // alpha exponentiates the absorbance.
  const Tensor<double> img = dab_image(Mat::Constant(16, 16, 2.0));
  CHECK(optical_density(img, 2.0).od.m.minCoeff() == doctest::Approx(4.0).epsilon(1e-9));

  CHECK_THROWS_AS(optical_density(Tensor<double>::constant(16, 16, 1, 1.0), 1.0), Error);
  CHECK_THROWS_AS(optical_density(white, -1.0), Error);
}

TEST_CASE("optical density is monotone in absorbance") {
  Rng rng(305);
  Mat conc(24, 24);
  for (long i = 0; i < conc.size(); ++i) conc.data()[i] = rng.uniform(0.0, 1.2);
  const Mat lo = optical_density(dab_image(conc), 1.0).od.m;
  const Mat hi = optical_density(dab_image(Mat(conc.array() + 0.3)), 1.0).od.m;
  CHECK(((hi - lo).array() > 0.25).all());
}

TEST_CASE("l1_od identities and oracle") {
  Rng rng(306);
  const Tensor<double> x = random_metric(32, 32, 3, rng);
  CHECK(l1_od(x, x) == 0.0);
  const Tensor<double> white = Tensor<double>::constant(32, 32, 3, 1.0);
  CHECK(l1_od(white, white) == 0.0);

  // Oracle: unmix by solving the stain system per pixel instead of using the
  // cached inverse, then threshold and sum.
  Eigen::Matrix3d stains;
  for (int r = 0; r < 3; ++r) {
    stains(r, 0) = kHemaOD[r];
    stains(r, 1) = kEosinOD[r];
    stains(r, 2) = kDabOD[r];
  }
  auto oracle_od = [&](const Tensor<double>& img, double y, double x_, double alpha) {
    Eigen::Vector3d odv;
    for (int ch = 0; ch < 3; ++ch)
      odv(ch) = -std::log10(std::max(img.at(int(y), int(x_), ch), 1.0 / 255.0));
    const double dab = std::max(0.0, stains.colPivHouseholderQr().solve(odv)(2));
    return std::pow(dab, alpha);
  };
  for (int k = 0; k < 5; ++k) {
    Mat ca(32, 32), cb(32, 32);
    for (long i = 0; i < ca.size(); ++i) {
      ca.data()[i] = rng.uniform(0.0, 1.0);
      cb.data()[i] = rng.uniform(0.0, 1.0);
    }
    const Tensor<double> a = dab_image(ca), b = dab_image(cb);
    const double alpha = k % 2 ? 2.0 : 1.0;
    double want = 0;
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) {
        double oa = oracle_od(a, y, x, alpha), ob = oracle_od(b, y, x, alpha);
        if (oa < 0.15) oa = 0;
        if (ob < 0.15) ob = 0;
        want += std::abs(oa - ob);
      }
    CHECK(l1_od(a, b, alpha) == doctest::Approx(want).epsilon(1e-9));
  }
  CHECK_THROWS_AS(l1_od(x, random_metric(16, 16, 3, rng)), Error);
}

TEST_CASE("vif matches a step-by-step recomputation") {
  Rng rng(307);
  for (int k = 0; k < 20; ++k) {
    const int side = 32 + 8 * (k % 3);
    Tensor<double> trg = random_metric(side, side, 3, rng);
    Tensor<double> gen = trg;
    // Distort: blend toward noise by a per-fixture amount.
    const double t = 0.1 + 0.8 * (k / 19.0);
    const Tensor<double> noise = random_metric(side, side, 3, rng);
    gen.m = ((1 - t) * gen.m + t * noise.m).eval();
    const double got = vif(gen, trg), want = oracle_vif(gen, trg);
    CHECK(std::abs(got - want) <= 1e-3);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("vif identities") {
  Rng rng(308);
  const Tensor<double> x = random_metric(32, 32, 3, rng);
  CHECK(std::abs(vif(x, x) - 1.0) <= 1e-6);
  // A constant (zero-information) generation preserves almost nothing.
  const Tensor<double> flat = Tensor<double>::constant(32, 32, 3, 0.5);
  CHECK(vif(flat, x) <= 0.05);
  CHECK_THROWS_AS(vif(random_metric(16, 16, 3, rng), random_metric(16, 16, 3, rng)), Error);
}

TEST_CASE("style metric is deterministic and validates shapes") {
  Rng rng(309);
  StyleConstrainer<float> sigma(4, 11);
  std::vector<Tensor<float>> trg, gen;
  std::vector<std::string> ids;
  for (int i = 0; i < 3; ++i) {
    trg.push_back(Tensor<float>::random_uniform(32, 32, 3, rng, -1.0, 1.0));
    gen.push_back(Tensor<float>::random_uniform(32, 32, 3, rng, -1.0, 1.0));
    ids.push_back("pair_" + std::to_string(i));
  }
  const double a = style_metric_lsdc(sigma, trg, gen, ids);
  const double b = style_metric_lsdc(sigma, trg, gen, ids);
  CHECK(a == b);
  CHECK(std::isfinite(a));
  CHECK(a >= 0.0);

  std::vector<Tensor<float>> short_gen(gen.begin(), gen.end() - 1);
  CHECK_THROWS_AS(style_metric_lsdc(sigma, trg, short_gen, ids), Error);
  CHECK_THROWS_AS(style_metric_lsdc(sigma, {}, {}, {}), Error);
}

TEST_CASE("acc and auc match hand values") {
  // Three class-0 rows predicted correctly, one class-1 row missed.
  std::vector<int> labels = {0, 0, 0, 1};
  std::vector<std::array<double, 4>> probs = {
      {0.9, 0.1, 0.0, 0.0}, {0.8, 0.2, 0.0, 0.0}, {0.7, 0.3, 0.0, 0.0}, {0.6, 0.4, 0.0, 0.0}};
  const AccAuc r = acc_auc_weighted(labels, probs);
  CHECK(r.acc == doctest::Approx(0.75));
  REQUIRE(bool(r.auc));

  // Perfectly separable and confident: both metrics saturate.
  std::vector<int> l2 = {0, 1, 2, 3};
  std::vector<std::array<double, 4>> p2 = {
      {0.97, 0.01, 0.01, 0.01}, {0.01, 0.97, 0.01, 0.01}, {0.01, 0.01, 0.97, 0.01},
      {0.01, 0.01, 0.01, 0.97}};
  const AccAuc r2 = acc_auc_weighted(l2, p2);
  CHECK(r2.acc == 1.0);
  CHECK(*r2.auc == 1.0);

  // Single-class set: accuracy defined, AUC absent.
  const AccAuc r3 = acc_auc_weighted({2, 2}, {{0.1, 0.2, 0.6, 0.1}, {0.1, 0.6, 0.2, 0.1}});
  CHECK(r3.acc == 0.5);
  CHECK(!r3.auc);

  // All-tied scores: every one-vs-rest AUC is exactly one half.
  const AccAuc r4 = acc_auc_weighted({0, 1, 2, 3}, {{0.25, 0.25, 0.25, 0.25},
                                                    {0.25, 0.25, 0.25, 0.25},
                                                    {0.25, 0.25, 0.25, 0.25},
                                                    {0.25, 0.25, 0.25, 0.25}});
  CHECK(*r4.auc == 0.5);

  CHECK_THROWS_AS(acc_auc_weighted({}, {}), Error);
  CHECK_THROWS_AS(acc_auc_weighted({0}, {{0.5, 0.5, 0.0, 0.0}, {0.5, 0.5, 0.0, 0.0}}), Error);
}

TEST_CASE("auc equals the pairwise-counting oracle exactly") {
  Rng rng(310);
  for (int k = 0; k < 20; ++k) {
    const int n = 6 + int(rng.uniform_int(0, 6));
    std::vector<int> labels(n);
    std::vector<std::array<double, 4>> probs(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = int(rng.uniform_int(0, 3));
      double s = 0;
      for (double& p : probs[i]) {
        // Quantized scores so ties actually occur.
        p = std::round(rng.uniform(0.0, 1.0) * 8) / 8.0 + 0.01;
        s += p;
      }
      for (double& p : probs[i]) p /= s;
    }
    labels[0] = 0;
    labels[1] = 1;  // guarantee two classes

    const double want = oracle_auc_pairwise(labels, probs);
    const AccAuc r = acc_auc_weighted(labels, probs);
    REQUIRE(bool(r.auc));
    CHECK(*r.auc == want);
  }
}

TEST_CASE("report aggregates equal recomputation and round-trip the emitters") {
  Rng rng(311);
  MetricsReport r;
  r.l_sdc = 0.625;
  for (int i = 0; i < 6; ++i) {
    ImageMetrics row;
    row.pair_id = "p" + std::to_string(i);
    row.her2_label = i % 3;
    row.psnr = rng.uniform(10.0, 40.0);
    row.ssim = rng.uniform(0.0, 1.0);
    row.l1_od = rng.uniform(0.0, 50.0);
    row.vif = rng.uniform(0.0, 1.0);
    double s = 0;
    for (double& p : row.class_probs) {
      p = rng.uniform(0.01, 1.0);
      s += p;
    }
    for (double& p : row.class_probs) p /= s;
    row.predicted_class = int(std::max_element(row.class_probs.begin(), row.class_probs.end()) -
                              row.class_probs.begin());
    r.rows.push_back(row);
  }
  finalize_report(r);

  double psum = 0;
  for (const ImageMetrics& row : r.rows) psum += row.psnr;
  CHECK(r.mean_psnr == doctest::Approx(psum / 6).epsilon(1e-12));

  const nlohmann::json j = report_to_json(r);
  for (const char* key : {"psnr", "ssim", "l_sdc", "l1_od", "acc", "auc", "vif"})
    CHECK(j.at("aggregates").contains(key));
  CHECK(j.at("aggregates").size() == 7);

  const MetricsReport back = report_from_json(j);
  CHECK(back.rows.size() == r.rows.size());
  CHECK(back.mean_psnr == r.mean_psnr);
  CHECK(back.acc == r.acc);
  CHECK(bool(back.auc) == bool(r.auc));
  CHECK(report_to_json(back).dump() == j.dump());

  const std::string csv = report_to_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);  // header + six rows
  CHECK(csv.rfind("pair_id,her2_label,psnr,ssim,l1_od,vif,predicted_class,p0,p1,p2,p3\n", 0) == 0);
}

TEST_CASE("evaluate_suite runs both generator kinds deterministically") {
  const fs::path dir = fs::temp_directory_path() / "scfa_metrics_fixture";
  fs::remove_all(dir);
  const DatasetManifest m = generate_synthetic_dataset(8, 4, 32, 414, dir / "data");

  PatternClassifier<float> cls(4, 99);
  StyleConstrainer<float> sigma(4, 98);

  for (const std::string preset : {"full", "baseline"}) {
    TrainConfig cfg;
    cfg.preset = preset;
    cfg.epochs_phase1 = 1;
    cfg.epochs_phase2 = 1;
    cfg.seed = 5;
    cfg.disc_width = 4;
    cfg.sdc.width = 4;
    cfg.generator.base_channels = 4;
    cfg.generator.image_size = 32;
    Trainer<float> t(cfg, m, cls, std::nullopt);
    const fs::path ckpt = dir / ("ckpt_" + preset);
    t.run(ckpt);

    const MetricsReport a = evaluate_suite(ckpt, m, cls, sigma, 1.0);
    const MetricsReport b = evaluate_suite(ckpt, m, cls, sigma, 1.0);
    CHECK(report_to_json(a).dump() == report_to_json(b).dump());

    CHECK(a.rows.size() == 4);
    CHECK(a.alpha == 1.0);
    double vsum = 0;
    for (const ImageMetrics& row : a.rows) {
      CHECK(row.psnr > 0.0);
      CHECK(row.ssim >= -1.0);
      CHECK(row.ssim <= 1.0);
      CHECK(row.vif >= 0.0);
      CHECK(row.l1_od >= 0.0);
      vsum += row.vif;
    }
    CHECK(a.mean_vif == doctest::Approx(vsum / 4).epsilon(1e-12));
    CHECK(std::isfinite(a.l_sdc));
  }

  CHECK_THROWS_AS(evaluate_suite(dir / "nope", m, cls, sigma, 1.0), Error);
}
