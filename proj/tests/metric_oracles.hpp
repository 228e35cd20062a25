#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "scfa/core.hpp"
#include "scfa/stains.hpp"

// Brute-force metric recomputations shared by the unit tests and the
// acceptance gate. Each oracle rebuilds its metric from the definition with
// plain loops and different algebra (deviation-form moments instead of
// product-form), sharing nothing with the implementation but the window
// shapes.
namespace scfa::testutil {

using OMat = MatrixX<double>;

inline Tensor<double> random_metric(int h, int w, int c, Rng& rng) {
  Tensor<double> t(h, w, c);
  for (long i = 0; i < t.m.size(); ++i) t.m.data()[i] = rng.uniform(0.0, 1.0);
  return t;
}

inline double oracle_gauss(int n, double sigma, int y, int x) {
  const double c = (n - 1) / 2.0;
  return std::exp(-((x - c) * (x - c) + (y - c) * (y - c)) / (2 * sigma * sigma));
}

inline OMat oracle_gray255(const Tensor<double>& t, double scale) {
  OMat g(t.h, t.w);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x) {
      double s = 0;
      for (int ch = 0; ch < t.c; ++ch) s += t.at(y, x, ch);
      g(y, x) = scale * s / t.c;
    }
  return g;
}

inline double oracle_psnr(const Tensor<double>& gen, const Tensor<double>& trg) {
  double se = 0;
  for (long i = 0; i < gen.m.size(); ++i) {
    const double d = gen.m.data()[i] - trg.m.data()[i];
    se += d * d;
  }
  const double mse = se / double(gen.m.size());
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

struct WindowStats {
  double mu1, mu2, var1, var2, cov;
};

/// Weighted moments of one window via explicit deviation sums.
inline WindowStats oracle_window(const OMat& a, const OMat& b, int y0, int x0, int n,
                                 double sigma) {
  double wsum = 0, mu1 = 0, mu2 = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double w = oracle_gauss(n, sigma, y, x);
      wsum += w;
      mu1 += w * a(y0 + y, x0 + x);
      mu2 += w * b(y0 + y, x0 + x);
    }
  mu1 /= wsum;
  mu2 /= wsum;
  double var1 = 0, var2 = 0, cov = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double w = oracle_gauss(n, sigma, y, x) / wsum;
      const double da = a(y0 + y, x0 + x) - mu1, db = b(y0 + y, x0 + x) - mu2;
      var1 += w * da * da;
      var2 += w * db * db;
      cov += w * da * db;
    }
  return {mu1, mu2, var1, var2, cov};
}

inline double oracle_ssim(const Tensor<double>& gen, const Tensor<double>& trg) {
  const OMat a = oracle_gray255(gen, 1.0), b = oracle_gray255(trg, 1.0);
  const double c1 = 1e-4, c2 = 9e-4;
  double acc = 0;
  long count = 0;
  for (int y = 0; y + 11 <= gen.h; ++y)
    for (int x = 0; x + 11 <= gen.w; ++x) {
      const WindowStats s = oracle_window(a, b, y, x, 11, 1.5);
      acc += ((2 * s.mu1 * s.mu2 + c1) * (2 * s.cov + c2)) /
             ((s.mu1 * s.mu1 + s.mu2 * s.mu2 + c1) * (s.var1 + s.var2 + c2));
      ++count;
    }
  return acc / count;
}

inline OMat oracle_filter_then_half(const OMat& img, int n, double sigma) {
  const long oh = img.rows() - n + 1, ow = img.cols() - n + 1;
  if (oh < 1 || ow < 1) return OMat();
  double wsum = 0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) wsum += oracle_gauss(n, sigma, y, x);
  OMat full(oh, ow);
  for (long y = 0; y < oh; ++y)
    for (long x = 0; x < ow; ++x) {
      double s = 0;
      for (int wy = 0; wy < n; ++wy)
        for (int wx = 0; wx < n; ++wx)
          s += oracle_gauss(n, sigma, wy, wx) * img(y + wy, x + wx);
      full(y, x) = s / wsum;
    }
  OMat half((oh + 1) / 2, (ow + 1) / 2);
  for (long y = 0; y < half.rows(); ++y)
    for (long x = 0; x < half.cols(); ++x) half(y, x) = full(2 * y, 2 * x);
  return half;
}

inline double oracle_vif(const Tensor<double>& gen, const Tensor<double>& trg) {
  OMat ref = oracle_gray255(trg, 255.0), dist = oracle_gray255(gen, 255.0);
  double num = 0, den = 0;
  for (int scale = 1; scale <= 4; ++scale) {
    const int n = (1 << (5 - scale)) + 1;
    const double sigma = n / 5.0;
    if (scale > 1) {
      ref = oracle_filter_then_half(ref, n, sigma);
      dist = oracle_filter_then_half(dist, n, sigma);
      if (ref.size() == 0) break;
    }
    if (ref.rows() < n || ref.cols() < n) continue;
    for (long y = 0; y + n <= ref.rows(); ++y)
      for (long x = 0; x + n <= ref.cols(); ++x) {
        const WindowStats s = oracle_window(ref, dist, y, x, n, sigma);
        double s1 = std::max(0.0, s.var1), s2 = std::max(0.0, s.var2);
        double g = s.cov / (s1 + 1e-10);
        double sv = s2 - g * s.cov;
        if (s1 < 1e-10) {
          g = 0;
          sv = s2;
          s1 = 0;
        }
        if (s2 < 1e-10) {
          g = 0;
          sv = 0;
        }
        if (g < 0) {
          sv = s2;
          g = 0;
        }
        sv = std::max(sv, 1e-10);
        num += std::log10(1 + g * g * s1 / (sv + 2.0));
        den += std::log10(1 + s1 / 2.0);
      }
  }
  return den == 0 ? 1.0 : num / den;
}

/// One-vs-rest AUC by O(n^2) win counting, support-weighted over classes.
inline double oracle_auc_pairwise(const std::vector<int>& labels,
                                  const std::vector<std::array<double, 4>>& probs) {
  const int n = int(labels.size());
  double total = 0;
  for (int cls = 0; cls < 4; ++cls) {
    long n_pos = 0;
    for (int l : labels) n_pos += (l == cls);
    if (n_pos == 0) continue;
    const long n_neg = n - n_pos;
    double wins = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (labels[i] != cls || labels[j] == cls) continue;
        if (probs[i][cls] > probs[j][cls]) wins += 1;
        else if (probs[i][cls] == probs[j][cls]) wins += 0.5;
      }
    total += (double(n_pos) / n) * (wins / (double(n_pos) * double(n_neg)));
  }
  return total;
}

/// Metric-space RGB of a uniform DAB concentration field.
inline Tensor<double> dab_image(const OMat& conc) {
  Tensor<double> t(int(conc.rows()), int(conc.cols()), 3);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        t.at(y, x, ch) = std::pow(10.0, -conc(y, x) * kDabOD[ch]);
  return t;
}

}  // namespace scfa::testutil
