#pragma once

#include <cmath>
#include <string>

#include "scfa/augment.hpp"
#include "scfa/rng.hpp"
#include "scfa/stains.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Procedural weakly-paired stain tiles. A shared "tissue geometry" (nuclei
// bumps on a stroma texture) renders once with hematoxylin+eosin absorbance
// (the source) and once with hematoxylin+DAB (the target). Brown coverage and
// strength grow monotonically with the grade label, and nuclei density also
// rises with grade, so the source morphology carries the label signal a
// translator needs. The target is finally warped by a mild random spec, which
// is what makes the pairing weak rather than pixel-aligned.

template <typename S>
struct StainPair {
  Image<S> source, target;
  int her2_label = 0;
  std::string pair_id;
  AugmentationSpec misalignment;
};

namespace detail {

inline double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

/// Sum-of-anisotropic-Gaussians nuclei field plus a blurred-noise stroma
/// texture, both in [0,1].
inline void tissue_fields(int size, int label, Rng& rng, MatrixX<double>& geom,
                          MatrixX<double>& stroma) {
  const double px = size / 64.0;
  geom = MatrixX<double>::Zero(size, size);
  const int n_bumps = static_cast<int>(std::lround((8 + 4 * label) * px * px));
  for (int i = 0; i < n_bumps; ++i) {
    const double cx = rng.uniform(0.0, size - 1.0), cy = rng.uniform(0.0, size - 1.0);
    const double sa = rng.uniform(2.5, 5.0) * px, sb = rng.uniform(2.5, 5.0) * px;
    const double phi = rng.uniform(0.0, M_PI);
    const double amp = rng.uniform(0.75, 1.0);
    const double cp = std::cos(phi), sp = std::sin(phi);
    const int r = static_cast<int>(std::ceil(3.5 * std::max(sa, sb)));
    for (int y = std::max(0, (int)cy - r); y <= std::min(size - 1, (int)cy + r); ++y)
      for (int x = std::max(0, (int)cx - r); x <= std::min(size - 1, (int)cx + r); ++x) {
        const double dx = x - cx, dy = y - cy;
        const double a = (dx * cp + dy * sp) / sa, b = (-dx * sp + dy * cp) / sb;
        geom(y, x) += amp * std::exp(-0.5 * (a * a + b * b));
      }
  }
  geom = geom.cwiseMin(1.0);

  stroma = MatrixX<double>::Zero(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) stroma(y, x) = rng.uniform();
  gaussian_blur(stroma, size / 32.0);
  const double lo = stroma.minCoeff(), hi = stroma.maxCoeff();
  if (hi > lo) stroma = (stroma.array() - lo) / (hi - lo);
}

template <typename S>
inline Image<S> render_transmittance(const MatrixX<double>& c1, const std::array<double, 3>& v1,
                                     const MatrixX<double>& c2, const std::array<double, 3>& v2,
                                     Rng& rng) {
  const int size = static_cast<int>(c1.rows());
  Tensor<S> t(size, size, 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double noise = rng.uniform(-0.008, 0.008);
      for (int ch = 0; ch < 3; ++ch) {
        const double od = c1(y, x) * v1[(std::size_t)ch] + c2(y, x) * v2[(std::size_t)ch];
        const double trans = std::clamp(std::pow(10.0, -od) + noise, 1.0 / 255.0, 1.0);
        t.at(y, x, ch) = S(2.0 * trans - 1.0);
      }
    }
  return Image<S>{std::move(t), Space::model};
}

}  // namespace detail

/// Grade-dependent staining law. Gains and coverage thresholds are chosen so
/// class-conditional mean DAB absorbance increases strictly with the label
/// and grade 0 stays below the functional-detection cutoff.
struct StainLaw {
  static constexpr std::array<double, 4> dab_gain{0.06, 0.45, 0.85, 1.30};
  static constexpr std::array<double, 4> coverage_threshold{0.55, 0.42, 0.30, 0.20};
};

template <typename S>
inline StainPair<S> synthesize_pair(int image_size, int label, const std::string& pair_id,
                                    std::uint64_t child_seed) {
  if (label < 0 || label > 3) throw Error("synthesize_pair: label out of range");
  if (image_size < 32) throw Error("synthesize_pair: image_size must be >= 32");
  Rng rng(child_seed);

  MatrixX<double> geom, stroma;
  detail::tissue_fields(image_size, label, rng, geom, stroma);

  MatrixX<double> c_hema = 0.9 * geom + 0.05 * stroma;
  MatrixX<double> c_eosin = (0.35 * stroma).array() + 0.15;
  Image<S> source = detail::render_transmittance<S>(c_hema, kHemaOD, c_eosin, kEosinOD, rng);

  const double t0 = StainLaw::coverage_threshold[(std::size_t)label];
  MatrixX<double> c_dab(image_size, image_size);
  for (int y = 0; y < image_size; ++y)
    for (int x = 0; x < image_size; ++x)
      c_dab(y, x) = StainLaw::dab_gain[(std::size_t)label] * detail::smoothstep(t0, t0 + 0.25, geom(y, x));
  MatrixX<double> c_hema2 = 0.35 * geom + 0.03 * stroma;
  Image<S> target = detail::render_transmittance<S>(c_hema2, kHemaOD, c_dab, kDabOD, rng);

  AugmentationSpec mis;
  mis.elastic_intensity = rng.uniform(5.0, 25.0);
  mis.translate_frac = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)};
  mis.rotate_deg = rng.uniform(-5.0, 5.0);
  mis.seed = rng.raw();

  StainPair<S> pair;
  pair.source = std::move(source);
  pair.target = simulate_weak_pairing(target, mis);
  pair.her2_label = label;
  pair.pair_id = pair_id;
  pair.misalignment = mis;
  return pair;
}

}  // namespace scfa
