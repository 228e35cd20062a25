#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

#include "scfa/rng.hpp"

namespace scfa {

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense H x W x C tensor. Storage is a (C, H*W) column-major matrix: column
// p = y*W + x holds the channel vector of pixel (y, x), so per-pixel channel
// blocks are contiguous and per-channel reductions are row operations.
// Network weights reuse the same container; for them only the matrix shape
// (c rows, h*w cols) is meaningful.
template <typename S>
struct Tensor {
  int h = 0, w = 0, c = 0;
  MatrixX<S> m;

  Tensor() = default;
  Tensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), m(MatrixX<S>::Zero(c_, static_cast<long>(h_) * w_)) {}

  static Tensor zeros(int h, int w, int c) { return Tensor(h, w, c); }

  static Tensor constant(int h, int w, int c, S v) {
    Tensor t(h, w, c);
    t.m.setConstant(v);
    return t;
  }

  static Tensor scalar(S v) { return constant(1, 1, 1, v); }

  static Tensor random_uniform(int h, int w, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(h, w, c);
    for (long j = 0; j < t.m.cols(); ++j)
      for (long i = 0; i < t.m.rows(); ++i) t.m(i, j) = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  static Tensor random_normal(int h, int w, int c, Rng& rng, double mean = 0.0, double stddev = 1.0) {
    Tensor t(h, w, c);
    for (long j = 0; j < t.m.cols(); ++j)
      for (long i = 0; i < t.m.rows(); ++i) t.m(i, j) = static_cast<S>(rng.normal(mean, stddev));
    return t;
  }

  long size() const { return static_cast<long>(h) * w * c; }
  bool empty() const { return size() == 0; }
  bool same_shape(const Tensor& o) const { return h == o.h && w == o.w && c == o.c; }
  std::string shape_str() const {
    return std::to_string(h) + "x" + std::to_string(w) + "x" + std::to_string(c);
  }

  long pix(int y, int x) const { return static_cast<long>(y) * w + x; }
  S& at(int y, int x, int ch) { return m(ch, pix(y, x)); }
  S at(int y, int x, int ch) const { return m(ch, pix(y, x)); }

  bool all_finite() const { return m.allFinite(); }
  S min_value() const { return m.minCoeff(); }
  S max_value() const { return m.maxCoeff(); }
  S mean_value() const { return m.mean(); }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t;
    t.h = h;
    t.w = w;
    t.c = c;
    t.m = m.template cast<T>();
    return t;
  }
};

template <typename S>
inline void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* where) {
  if (!a.same_shape(b))
    throw Error(std::string(where) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename S>
inline Tensor<S> clamped(const Tensor<S>& t, S lo, S hi) {
  Tensor<S> r = t;
  r.m = r.m.array().max(lo).min(hi).matrix();
  return r;
}

/// Mean over pixels of the per-pixel channel average.
template <typename S>
inline S gray_mean(const Tensor<S>& t) {
  return t.m.mean();
}

/// Single-channel per-pixel average (H x W x 1).
template <typename S>
inline Tensor<S> to_gray(const Tensor<S>& t) {
  Tensor<S> g(t.h, t.w, 1);
  g.m = t.m.colwise().mean();
  return g;
}

// ---------------------------------------------------------------------------
// Image = tensor plus value-range tag. Model space is [-1, 1] (network I/O),
// metric space is [0, 1] (quality metrics, stain optics).

enum class Space { model, metric };

template <typename S>
struct Image {
  Tensor<S> t;
  Space space = Space::model;

  Image() = default;
  Image(Tensor<S> t_, Space s) : t(std::move(t_)), space(s) {}

  Image to_model() const {
    if (space == Space::model) return *this;
    Image r(t, Space::model);
    r.t.m = (t.m.array() * S(2) - S(1)).matrix();
    return r;
  }

  Image to_metric() const {
    if (space == Space::metric) return *this;
    Image r(t, Space::metric);
    r.t.m = ((t.m.array() + S(1)) * S(0.5)).matrix();
    return r;
  }
};

template <typename S>
inline void validate_image(const Image<S>& img, const char* where) {
  const S lo = img.space == Space::model ? S(-1) : S(0);
  const S hi = S(1);
  if (img.t.h < 8 || img.t.w < 8)
    throw Error(std::string(where) + ": image too small: " + img.t.shape_str());
  if (img.t.c != 3 && img.t.c != 1)
    throw Error(std::string(where) + ": expected 1 or 3 channels, got " + std::to_string(img.t.c));
  if (!img.t.all_finite() || img.t.min_value() < lo || img.t.max_value() > hi)
    throw Error(std::string(where) + ": values outside declared space");
}

}  // namespace scfa
