#pragma once

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "scfa/tensor.hpp"

namespace scfa {

// Standard RGB absorbance directions (Ruifrok-style unit vectors) used both
// to synthesize transmittance images and to unmix the DAB channel.
inline constexpr std::array<double, 3> kHemaOD{0.650, 0.704, 0.286};
inline constexpr std::array<double, 3> kEosinOD{0.072, 0.990, 0.105};
inline constexpr std::array<double, 3> kDabOD{0.268, 0.570, 0.776};

inline const Eigen::Matrix3d& stain_unmix_matrix() {
  static const Eigen::Matrix3d inv = [] {
    Eigen::Matrix3d v;
    for (int i = 0; i < 3; ++i) {
      v(i, 0) = kHemaOD[(std::size_t)i];
      v(i, 1) = kEosinOD[(std::size_t)i];
      v(i, 2) = kDabOD[(std::size_t)i];
    }
    return Eigen::Matrix3d(v.inverse());
  }();
  return inv;
}

/// DAB absorbance map (H,W,1) of a metric-space RGB image: per-pixel RGB
/// absorbances are unmixed against the three stain directions and the DAB
/// coefficient kept, clamped to >= 0. Transmittance is floored at one byte
/// step to keep the log finite.
template <typename S>
inline Tensor<S> dab_absorbance(const Tensor<S>& metric_rgb) {
  if (metric_rgb.c != 3) throw Error("dab_absorbance: expects an RGB image");
  Tensor<S> out(metric_rgb.h, metric_rgb.w, 1);
  const Eigen::Matrix3d& unmix = stain_unmix_matrix();
  for (long p = 0; p < metric_rgb.m.cols(); ++p) {
    Eigen::Vector3d od;
    for (int ch = 0; ch < 3; ++ch)
      od(ch) = -std::log10(std::max(double(metric_rgb.m(ch, p)), 1.0 / 255.0));
    out.m(0, p) = S(std::max(0.0, (unmix * od)(2)));
  }
  return out;
}

}  // namespace scfa
