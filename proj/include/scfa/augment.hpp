#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "scfa/rng.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Weak-pairing simulation: a random elastic deformation combined with a
// rotation + translation, followed by a crop to the largest axis-aligned
// rectangle whose pixels all map inside the input, and a bilinear resize back
// to the original size. Elastic displacement is calibrated in pixels at a
// 1024px tile and scales linearly with image size; the smoothing kernel is
// sigma = size/8.

struct AugmentationSpec {
  double elastic_intensity = 0.0;          // 0 (off) or [5, 100]
  std::array<double, 2> translate_frac{0.0, 0.0};  // each in [-0.2, 0.2]
  double rotate_deg = 0.0;                 // [-15, 15]
  std::uint64_t seed = 0;

  bool is_identity() const {
    return elastic_intensity == 0.0 && translate_frac[0] == 0.0 && translate_frac[1] == 0.0 &&
           rotate_deg == 0.0;
  }
};

inline void validate_spec(const AugmentationSpec& s) {
  if (s.elastic_intensity != 0.0 && (s.elastic_intensity < 5.0 || s.elastic_intensity > 100.0))
    throw Error("AugmentationSpec: elastic_intensity must be 0 or in [5,100]");
  for (double t : s.translate_frac)
    if (t < -0.2 || t > 0.2 || !std::isfinite(t))
      throw Error("AugmentationSpec: translate_frac out of [-0.2,0.2]");
  if (s.rotate_deg < -15.0 || s.rotate_deg > 15.0 || !std::isfinite(s.rotate_deg))
    throw Error("AugmentationSpec: rotate_deg out of [-15,15]");
}

/// Uniformly random spec from the declared ranges (used during training).
inline AugmentationSpec random_spec(Rng& rng) {
  AugmentationSpec s;
  s.elastic_intensity = rng.uniform(5.0, 100.0);
  s.translate_frac = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
  s.rotate_deg = rng.uniform(-15.0, 15.0);
  s.seed = rng.raw();
  return s;
}

namespace detail {

/// Separable Gaussian blur with replicated edges over an (h, w) field.
template <typename S>
inline void gaussian_blur(MatrixX<S>& f, double sigma) {
  if (sigma <= 0.0) return;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<S> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += (k[(std::size_t)(i + r)] = S(std::exp(-0.5 * i * i / (sigma * sigma))));
  for (auto& v : k) v = S(v / sum);

  const int h = static_cast<int>(f.rows()), w = static_cast<int>(f.cols());
  MatrixX<S> tmp(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      S acc = 0;
      for (int i = -r; i <= r; ++i)
        acc += k[(std::size_t)(i + r)] * f(y, std::clamp(x + i, 0, w - 1));
      tmp(y, x) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      S acc = 0;
      for (int i = -r; i <= r; ++i)
        acc += k[(std::size_t)(i + r)] * tmp(std::clamp(y + i, 0, h - 1), x);
      f(y, x) = acc;
    }
}

/// Largest all-true axis-aligned rectangle (histogram-of-heights method).
/// Returns {y0, x0, h, w}; h = w = 0 when the mask is empty.
inline std::array<int, 4> largest_rectangle(const std::vector<std::vector<bool>>& mask) {
  const int h = static_cast<int>(mask.size());
  const int w = h ? static_cast<int>(mask[0].size()) : 0;
  std::vector<int> heights(static_cast<std::size_t>(w), 0);
  std::array<int, 4> best{0, 0, 0, 0};
  long best_area = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) heights[(std::size_t)x] = mask[(std::size_t)y][(std::size_t)x] ? heights[(std::size_t)x] + 1 : 0;
    std::vector<std::pair<int, int>> stack;  // (start_x, height)
    for (int x = 0; x <= w; ++x) {
      int start = x;
      const int cur = x < w ? heights[(std::size_t)x] : 0;
      while (!stack.empty() && stack.back().second > cur) {
        auto [sx, sh] = stack.back();
        stack.pop_back();
        const long area = static_cast<long>(sh) * (x - sx);
        if (area > best_area) {
          best_area = area;
          best = {y - sh + 1, sx, sh, x - sx};
        }
        start = sx;
      }
      if (cur > 0 && (stack.empty() || stack.back().second < cur)) stack.push_back({start, cur});
    }
  }
  return best;
}

template <typename S>
inline S bilinear_clamped(const Tensor<S>& t, double y, double x, int ch) {
  const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, t.h - 1);
  const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, t.w - 1);
  const int y1 = std::min(y0 + 1, t.h - 1);
  const int x1 = std::min(x0 + 1, t.w - 1);
  const double fy = std::clamp(y - y0, 0.0, 1.0);
  const double fx = std::clamp(x - x0, 0.0, 1.0);
  const double top = (1.0 - fx) * t.at(y0, x0, ch) + fx * t.at(y0, x1, ch);
  const double bot = (1.0 - fx) * t.at(y1, x0, ch) + fx * t.at(y1, x1, ch);
  return S((1.0 - fy) * top + fy * bot);
}

}  // namespace detail

/// Applies the spec's combined warp. When `fill` is set, pixels without full
/// bilinear support in the intermediate (pre-crop) image take that value;
/// the crop guarantees none of them survive into the output.
template <typename S>
inline Image<S> simulate_weak_pairing(const Image<S>& img, const AugmentationSpec& spec,
                                      std::optional<S> fill = std::nullopt) {
  validate_image(img, "simulate_weak_pairing");
  if (img.space != Space::model) throw Error("simulate_weak_pairing: expects model space");
  validate_spec(spec);
  if (spec.is_identity()) return img;

  const int h = img.t.h, w = img.t.w, c = img.t.c;
  const int size = std::min(h, w);
  Rng rng(spec.seed);

  // Smoothed random displacement field, peak magnitude elastic_intensity
  // pixels at 1024px, proportionally less at smaller tiles.
  MatrixX<S> dy = MatrixX<S>::Zero(h, w), dx = MatrixX<S>::Zero(h, w);
  if (spec.elastic_intensity > 0.0) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        dy(y, x) = S(rng.uniform(-1.0, 1.0));
        dx(y, x) = S(rng.uniform(-1.0, 1.0));
      }
    detail::gaussian_blur(dy, size / 8.0);
    detail::gaussian_blur(dx, size / 8.0);
    double max_mag = 0.0;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        max_mag = std::max(max_mag, std::hypot(double(dy(y, x)), double(dx(y, x))));
    const double amp = spec.elastic_intensity * size / 1024.0;
    const double scale = max_mag > 0.0 ? amp / max_mag : 0.0;
    dy *= S(scale);
    dx *= S(scale);
  }

  const double theta = spec.rotate_deg * M_PI / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const double tx = spec.translate_frac[0] * w, ty = spec.translate_frac[1] * h;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;

  // Backward map: undo translation, rotate about the centre by -theta, then
  // perturb by the elastic field.
  Tensor<S> warped(h, w, c);
  std::vector<std::vector<bool>> valid((std::size_t)h, std::vector<bool>((std::size_t)w, false));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double ux = x - tx - cx, uy = y - ty - cy;
      const double sx = ct * ux + st * uy + cx + dx(y, x);
      const double sy = -st * ux + ct * uy + cy + dy(y, x);
      const bool ok = sx >= 0.0 && sx <= w - 1.0 && sy >= 0.0 && sy <= h - 1.0;
      valid[(std::size_t)y][(std::size_t)x] = ok;
      for (int ch = 0; ch < c; ++ch)
        warped.at(y, x, ch) = (ok || !fill) ? detail::bilinear_clamped(img.t, sy, sx, ch) : *fill;
    }

  const auto [ry, rx, rh, rw] = detail::largest_rectangle(valid);
  if (rh < 2 || rw < 2) throw Error("simulate_weak_pairing: valid region degenerate");

  // Align-corner bilinear resize of the crop back to (h, w).
  Tensor<S> out(h, w, c);
  const double fy = h > 1 ? double(rh - 1) / (h - 1) : 0.0;
  const double fx = w > 1 ? double(rw - 1) / (w - 1) : 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        out.at(y, x, ch) = detail::bilinear_clamped(warped, ry + y * fy, rx + x * fx, ch);
  return Image<S>{std::move(out), Space::model};
}

/// Shifts the target so its grayscale mean matches the source's, then clamps.
/// The source is never modified.
template <typename S>
inline std::pair<Image<S>, Image<S>> normalize_illumination(const Image<S>& src,
                                                            const Image<S>& trg) {
  validate_image(src, "normalize_illumination/src");
  validate_image(trg, "normalize_illumination/trg");
  if (src.space != Space::model || trg.space != Space::model)
    throw Error("normalize_illumination: expects model space");
  require_same_shape(src.t, trg.t, "normalize_illumination");
  const S shift = gray_mean(src.t) - gray_mean(trg.t);
  if (shift == S(0)) return {src, trg};
  Image<S> out = trg;
  out.t.m.array() += shift;
  out.t = clamped(out.t, S(-1), S(1));
  return {src, std::move(out)};
}

}  // namespace scfa
