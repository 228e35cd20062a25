#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "scfa/adversaries.hpp"
#include "scfa/augment.hpp"
#include "scfa/classifier.hpp"
#include "scfa/dataset.hpp"
#include "scfa/losses.hpp"
#include "scfa/stains.hpp"
#include "scfa/training.hpp"

// Evaluation suite: PSNR, SSIM, DAB optical density and its L1 distance,
// pixel-domain multi-scale VIF, the constrainer-based style metric, and
// weighted Acc/AUC from the grade classifier. Image metrics take
// metric-space ([0, 1]) tensors and accumulate in double regardless of the
// storage scalar, so reports are reproducible bit for bit across runs.

namespace scfa {

namespace detail {

template <typename S>
inline MatrixX<double> to_double_m(const Tensor<S>& t) {
  return t.m.template cast<double>();
}

template <typename S>
inline void require_metric_pair(const Tensor<S>& gen, const Tensor<S>& trg, const char* where) {
  require_same_shape(gen, trg, where);
  for (const Tensor<S>* t : {&gen, &trg}) {
    if (!t->all_finite() || t->min_value() < S(-1e-6) || t->max_value() > S(1) + S(1e-6))
      throw Error(std::string(where) + ": expected metric-space values in [0, 1]");
  }
}

/// Channel-mean grayscale as a dense h x w matrix (row = y, col = x).
template <typename S>
inline MatrixX<double> gray_plane(const Tensor<S>& t) {
  MatrixX<double> g(t.h, t.w);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) {
      double s = 0;
      for (int ch = 0; ch < t.c; ++ch) s += double(t.at(y, x, ch));
      g(y, x) = s / t.c;
    }
  return g;
}

/// Normalized 2D Gaussian window of side n.
inline MatrixX<double> gaussian_window(int n, double sigma) {
  MatrixX<double> w(n, n);
  const double c = (n - 1) / 2.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double dy = y - c, dx = x - c;
      w(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  w /= w.sum();
  return w;
}

/// Valid-mode 2D correlation; output shrinks by the window size minus one.
/// Returns an empty matrix when the input is smaller than the window.
inline MatrixX<double> filter_valid(const MatrixX<double>& img, const MatrixX<double>& win) {
  const long oh = img.rows() - win.rows() + 1, ow = img.cols() - win.cols() + 1;
  if (oh < 1 || ow < 1) return MatrixX<double>();
  MatrixX<double> out(oh, ow);
  for (long y = 0; y < oh; ++y)
    for (long x = 0; x < ow; ++x)
      out(y, x) = (img.block(y, x, win.rows(), win.cols()).array() * win.array()).sum();
  return out;
}

inline MatrixX<double> subsample2(const MatrixX<double>& img) {
  MatrixX<double> out((img.rows() + 1) / 2, (img.cols() + 1) / 2);
  for (long y = 0; y < out.rows(); ++y)
    for (long x = 0; x < out.cols(); ++x) out(y, x) = img(2 * y, 2 * x);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pixel fidelity

/// 10*log10(1 / MSE) in dB over all channels, capped at 100 (the value
/// reported for identical images).
template <typename S>
inline double psnr(const Tensor<S>& gen, const Tensor<S>& trg) {
  detail::require_metric_pair(gen, trg, "psnr");
  const double mse =
      (detail::to_double_m(gen) - detail::to_double_m(trg)).array().square().mean();
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, valid-mode filtering on the grayscale plane.
/// Identical inputs give exactly 1: every factor in the ratio is computed the
/// same way on both sides, so numerator and denominator are bitwise equal.
template <typename S>
inline double ssim(const Tensor<S>& gen, const Tensor<S>& trg) {
  detail::require_metric_pair(gen, trg, "ssim");
  if (gen.h < 11 || gen.w < 11) throw Error("ssim: image smaller than the 11x11 window");
  const MatrixX<double> a = detail::gray_plane(gen), b = detail::gray_plane(trg);
  const MatrixX<double> win = detail::gaussian_window(11, 1.5);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  const MatrixX<double> mu1 = detail::filter_valid(a, win), mu2 = detail::filter_valid(b, win);
  const MatrixX<double> s11 =
      detail::filter_valid(a.cwiseProduct(a), win) - mu1.cwiseProduct(mu1);
  const MatrixX<double> s22 =
      detail::filter_valid(b.cwiseProduct(b), win) - mu2.cwiseProduct(mu2);
  const MatrixX<double> s12 =
      detail::filter_valid(a.cwiseProduct(b), win) - mu1.cwiseProduct(mu2);

  double acc = 0;
  for (long i = 0; i < mu1.size(); ++i) {
    const double m1 = mu1(i), m2 = mu2(i);
    const double num = (2 * m1 * m2 + c1) * (2 * s12(i) + c2);
    const double den = (m1 * m1 + m2 * m2 + c1) * (s11(i) + s22(i) + c2);
    acc += num / den;
  }
  return acc / mu1.size();
}

// ---------------------------------------------------------------------------
// Optical density

template <typename S>
struct ODMap {
  Tensor<S> od;  // h x w x 1, >= 0
  double alpha = 1.0;
  double i0 = 255.0;  // incident intensity in 8-bit units; 1.0 in metric space
};

/// DAB optical density per pixel: color-deconvolve the DAB channel, then
/// OD = (-log10(I / I0))^alpha with transmitted intensity floored at one
/// byte-equivalent. For alpha = 1 this is the raw DAB absorbance.
template <typename S>
inline ODMap<S> optical_density(const Tensor<S>& metric_rgb, double alpha = 1.0) {
  if (metric_rgb.c != 3) throw Error("optical_density: expected an RGB image");
  if (alpha < 0) throw Error("optical_density: alpha must be >= 0");
  ODMap<S> map{dab_absorbance(metric_rgb), alpha, 255.0};
  if (alpha != 1.0)
    map.od.m = map.od.m.array().pow(S(alpha)).matrix();
  return map;
}

/// Sum (not mean) of absolute OD differences after zeroing sub-threshold
/// responses, mirroring the positive-signal masking used in the focus loss.
template <typename S>
inline double l1_od(const Tensor<S>& gen, const Tensor<S>& trg, double alpha = 1.0,
                    double threshold = 0.15) {
  detail::require_metric_pair(gen, trg, "l1_od");
  auto masked = [&](const Tensor<S>& img) -> MatrixX<double> {
    const MatrixX<double> od = detail::to_double_m(optical_density(img, alpha).od);
    return od.unaryExpr([&](double v) { return v < threshold ? 0.0 : v; });
  };
  return (masked(gen) - masked(trg)).array().abs().sum();
}

// ---------------------------------------------------------------------------
// Visual information fidelity

/// Pixel-domain multi-scale VIF on the grayscale plane scaled to [0, 255]
/// (the noise variance sigma_n^2 = 2 is calibrated for byte range). Four
/// scales with Gaussian windows of side 17/9/5/3 (sigma = side/5); from the
/// second scale on, images are low-pass filtered and decimated by 2 before
/// the local statistics. Scales whose valid output would be empty contribute
/// nothing. A zero-information reference (den = 0) is defined as perfectly
/// preserved.
template <typename S>
inline double vif(const Tensor<S>& gen, const Tensor<S>& trg) {
  detail::require_metric_pair(gen, trg, "vif");
  if (std::min(gen.h, gen.w) < 17)
    throw Error("vif: image smaller than the coarsest-scale window (17)");
  MatrixX<double> ref = detail::gray_plane(trg) * 255.0;
  MatrixX<double> dist = detail::gray_plane(gen) * 255.0;
  const double sigma_nsq = 2.0, eps = 1e-10;

  double num = 0, den = 0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (4 - scale + 1)) + 1;
    const MatrixX<double> win = detail::gaussian_window(n, n / 5.0);
    if (scale > 1) {
      ref = detail::subsample2(detail::filter_valid(ref, win));
      dist = detail::subsample2(detail::filter_valid(dist, win));
      if (ref.size() == 0) break;
    }
    const MatrixX<double> mu1 = detail::filter_valid(ref, win);
    if (mu1.size() == 0) continue;
    const MatrixX<double> mu2 = detail::filter_valid(dist, win);
    const MatrixX<double> s11 =
        detail::filter_valid(ref.cwiseProduct(ref), win) - mu1.cwiseProduct(mu1);
    const MatrixX<double> s22 =
        detail::filter_valid(dist.cwiseProduct(dist), win) - mu2.cwiseProduct(mu2);
    const MatrixX<double> s12 =
        detail::filter_valid(ref.cwiseProduct(dist), win) - mu1.cwiseProduct(mu2);

    for (long i = 0; i < mu1.size(); ++i) {
      double sigma1_sq = std::max(0.0, s11(i));
      double sigma2_sq = std::max(0.0, s22(i));
      double g = s12(i) / (sigma1_sq + eps);
      double sv_sq = sigma2_sq - g * s12(i);
      if (sigma1_sq < eps) {
        g = 0;
        sv_sq = sigma2_sq;
        sigma1_sq = 0;
      }
      if (sigma2_sq < eps) {
        g = 0;
        sv_sq = 0;
      }
      if (g < 0) {
        sv_sq = sigma2_sq;
        g = 0;
      }
      sv_sq = std::max(sv_sq, eps);
      num += std::log10(1.0 + g * g * sigma1_sq / (sv_sq + sigma_nsq));
      den += std::log10(1.0 + sigma1_sq / sigma_nsq);
    }
  }
  if (den == 0) return 1.0;
  return num / den;
}

// ---------------------------------------------------------------------------
// Style metric

/// Fixed base for the per-pair deformation streams, so the style metric sees
/// the same simulated positives on every evaluation of the same test set.
inline constexpr std::uint64_t kStyleMetricSeed = 0x5dc0de;

/// Mean alignment loss over (target, deformed-target, generated) triples,
/// scored by a frozen reference constrainer: both pairs are scored against
/// the deformed-real label, so the metric falls as generated images enter the
/// style distribution the reference accepts (and floors at the reference's
/// own positive-pair loss). Inputs are model-space tensors; the deformed
/// positive for pair i is derived deterministically from its id.
template <typename S>
inline double style_metric_lsdc(const StyleConstrainer<S>& reference,
                                const std::vector<Tensor<S>>& trg,
                                const std::vector<Tensor<S>>& gen,
                                const std::vector<std::string>& pair_ids) {
  if (trg.size() != gen.size() || trg.size() != pair_ids.size())
    throw Error("style_metric_lsdc: target/generated/id counts differ");
  if (trg.empty()) throw Error("style_metric_lsdc: empty test set");
  double acc = 0;
  for (std::size_t i = 0; i < trg.size(); ++i) {
    Rng rng(derive_seed(kStyleMetricSeed, "metric.sdc." + pair_ids[i]));
    const Tensor<S> sim =
        simulate_weak_pairing(Image<S>(trg[i], Space::model), random_spec(rng)).t;
    acc += double(sdc_alignment_loss(reference, trg[i], sim, Var<S>(gen[i])).value().m(0, 0));
  }
  return acc / trg.size();
}

// ---------------------------------------------------------------------------
// Classification quality

struct AccAuc {
  double acc = 0.0;
  std::optional<double> auc;  // absent when the label set has a single class
};

/// Acc: fraction of rows whose argmax probability matches the label (equal to
/// support-weighted per-class recall). AUC: one-vs-rest per class via the
/// rank-sum statistic with average ranks on ties, weighted by class support.
inline AccAuc acc_auc_weighted(const std::vector<int>& labels,
                               const std::vector<std::array<double, 4>>& probs) {
  if (labels.size() != probs.size()) throw Error("acc_auc_weighted: label/prob counts differ");
  if (labels.empty()) throw Error("acc_auc_weighted: empty input");
  const long n = static_cast<long>(labels.size());

  long hits = 0;
  for (long i = 0; i < n; ++i) {
    const auto& p = probs[i];
    const int pred = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    if (pred == labels[i]) ++hits;
  }
  AccAuc out;
  out.acc = double(hits) / n;

  if (std::set<int>(labels.begin(), labels.end()).size() < 2) return out;

  double weighted = 0;
  for (int cls = 0; cls < 4; ++cls) {
    const long n_pos = std::count(labels.begin(), labels.end(), cls);
    if (n_pos == 0) continue;
    const long n_neg = n - n_pos;
    // Average ranks of the class scores; ties share the mean of their span.
    std::vector<long> order(n);
    for (long i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](long a, long b) { return probs[a][cls] < probs[b][cls]; });
    std::vector<double> rank(n);
    for (long i = 0; i < n;) {
      long j = i;
      while (j + 1 < n && probs[order[j + 1]][cls] == probs[order[i]][cls]) ++j;
      const double r = (i + j) / 2.0 + 1.0;
      for (long k = i; k <= j; ++k) rank[order[k]] = r;
      i = j + 1;
    }
    double pos_ranks = 0;
    for (long i = 0; i < n; ++i)
      if (labels[i] == cls) pos_ranks += rank[i];
    const double auc_c =
        (pos_ranks - n_pos * (n_pos + 1) / 2.0) / (double(n_pos) * double(n_neg));
    weighted += (double(n_pos) / n) * auc_c;
  }
  out.auc = weighted;
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct ImageMetrics {
  std::string pair_id;
  int her2_label = 0;
  double psnr = 0, ssim = 0, l1_od = 0, vif = 0;
  int predicted_class = 0;
  std::array<double, 4> class_probs{};
};

struct MetricsReport {
  std::vector<ImageMetrics> rows;
  double mean_psnr = 0, mean_ssim = 0, mean_l1_od = 0, mean_vif = 0;
  double l_sdc = 0;
  double acc = 0;
  std::optional<double> auc;
  double alpha = 1.0;
};

/// Recomputes every aggregate from the per-image rows, so the struct cannot
/// drift out of sync with them.
inline void finalize_report(MetricsReport& r) {
  if (r.rows.empty()) throw Error("finalize_report: no rows");
  double p = 0, s = 0, l = 0, v = 0;
  std::vector<int> labels;
  std::vector<std::array<double, 4>> probs;
  for (const ImageMetrics& row : r.rows) {
    p += row.psnr;
    s += row.ssim;
    l += row.l1_od;
    v += row.vif;
    labels.push_back(row.her2_label);
    probs.push_back(row.class_probs);
  }
  const double n = double(r.rows.size());
  r.mean_psnr = p / n;
  r.mean_ssim = s / n;
  r.mean_l1_od = l / n;
  r.mean_vif = v / n;
  const AccAuc aa = acc_auc_weighted(labels, probs);
  r.acc = aa.acc;
  r.auc = aa.auc;
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json agg = {
      {"psnr", r.mean_psnr}, {"ssim", r.mean_ssim}, {"l_sdc", r.l_sdc},
      {"l1_od", r.mean_l1_od}, {"acc", r.acc},
      {"auc", r.auc ? nlohmann::json(*r.auc) : nlohmann::json(nullptr)},
      {"vif", r.mean_vif}};
  nlohmann::json rows = nlohmann::json::array();
  for (const ImageMetrics& row : r.rows)
    rows.push_back({{"pair_id", row.pair_id},
                    {"her2_label", row.her2_label},
                    {"psnr", row.psnr},
                    {"ssim", row.ssim},
                    {"l1_od", row.l1_od},
                    {"vif", row.vif},
                    {"predicted_class", row.predicted_class},
                    {"class_probs", row.class_probs}});
  return {{"alpha", r.alpha}, {"aggregates", agg}, {"images", rows}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  r.alpha = j.at("alpha").get<double>();
  r.l_sdc = j.at("aggregates").at("l_sdc").get<double>();
  for (const nlohmann::json& row : j.at("images")) {
    ImageMetrics m;
    m.pair_id = row.at("pair_id").get<std::string>();
    m.her2_label = row.at("her2_label").get<int>();
    m.psnr = row.at("psnr").get<double>();
    m.ssim = row.at("ssim").get<double>();
    m.l1_od = row.at("l1_od").get<double>();
    m.vif = row.at("vif").get<double>();
    m.predicted_class = row.at("predicted_class").get<int>();
    m.class_probs = row.at("class_probs").get<std::array<double, 4>>();
    r.rows.push_back(std::move(m));
  }
  finalize_report(r);
  return r;
}

inline std::string report_to_csv(const MetricsReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "pair_id,her2_label,psnr,ssim,l1_od,vif,predicted_class,p0,p1,p2,p3\n";
  for (const ImageMetrics& row : r.rows) {
    os << row.pair_id << ',' << row.her2_label << ',' << row.psnr << ',' << row.ssim << ','
       << row.l1_od << ',' << row.vif << ',' << row.predicted_class;
    for (double p : row.class_probs) os << ',' << p;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Suite driver

/// Loads just the translator weights from a checkpoint directory (no
/// optimizer state, no adversaries) and runs it over the test split with the
/// same preprocessing the trainer applies at load time.
template <typename S>
inline MetricsReport evaluate_suite(const std::filesystem::path& checkpoint_dir,
                                    const DatasetManifest& m,
                                    const PatternClassifier<S>& classifier,
                                    const StyleConstrainer<S>& reference_sdc,
                                    double alpha = 1.0, double fod_threshold = 0.15) {
  nlohmann::json meta = load_json(checkpoint_dir / "meta.json");
  if (!meta.contains("config")) throw Error("evaluate_suite: meta.json missing config");
  const TrainConfig cfg = train_config_from_json(meta["config"]);
  if (m.image_size != cfg.generator.image_size)
    throw Error("evaluate_suite: manifest image size " + std::to_string(m.image_size) +
                " does not match the checkpoint's " + std::to_string(cfg.generator.image_size));

  FalGenerator<S> fal;
  UnetGenerator<S> baseline;
  if (cfg.generator.fal_enabled) {
    GeneratorConfig gcfg = cfg.generator;
    gcfg.seed = derive_seed(cfg.seed, "nets.generator");
    fal = FalGenerator<S>(gcfg);
    load_params_into(checkpoint_dir / "source_encoder.scfw", fal.source_encoder_params());
    load_params_into(checkpoint_dir / "approximator.scfw", fal.approximator_params());
    load_params_into(checkpoint_dir / "decoder.scfw", fal.decoder_params());
  } else {
    baseline =
        UnetGenerator<S>(cfg.generator.base_channels, derive_seed(cfg.seed, "nets.baseline"));
    load_params_into(checkpoint_dir / "baseline_generator.scfw", baseline.params());
  }

  const std::vector<const ManifestEntry*> test = m.split_entries("test");
  if (test.empty()) throw Error("evaluate_suite: empty test split");

  MetricsReport report;
  report.alpha = alpha;
  std::vector<Tensor<S>> trg_model, gen_model;
  std::vector<std::string> pair_ids;
  for (const ManifestEntry* e : test) {
    auto [src, trg] =
        normalize_illumination(load_pair_image<S>(m, *e, true), load_pair_image<S>(m, *e, false));
    const Tensor<S> gen = cfg.generator.fal_enabled ? fal.translate(Var<S>(src.t)).value()
                                                    : baseline(Var<S>(src.t)).value();
    const Tensor<S> gen_metric = clamped(Image<S>(gen, Space::model).to_metric().t, S(0), S(1));
    const Tensor<S> trg_metric = trg.to_metric().t;

    ImageMetrics row;
    row.pair_id = e->pair_id;
    row.her2_label = e->her2_label;
    row.psnr = psnr(gen_metric, trg_metric);
    row.ssim = ssim(gen_metric, trg_metric);
    row.l1_od = l1_od(gen_metric, trg_metric, alpha, fod_threshold);
    row.vif = vif(gen_metric, trg_metric);
    const Tensor<S> cls_probs = classifier.classify(Var<S>(gen)).value();
    for (int k = 0; k < 4; ++k) row.class_probs[k] = double(cls_probs.m(k, 0));
    row.predicted_class = static_cast<int>(
        std::max_element(row.class_probs.begin(), row.class_probs.end()) -
        row.class_probs.begin());
    report.rows.push_back(std::move(row));

    trg_model.push_back(trg.t);
    gen_model.push_back(gen);
    pair_ids.push_back(e->pair_id);
  }
  report.l_sdc = style_metric_lsdc(reference_sdc, trg_model, gen_model, pair_ids);
  finalize_report(report);
  return report;
}

}  // namespace scfa
