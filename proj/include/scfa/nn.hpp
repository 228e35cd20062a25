#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scfa/autograd.hpp"
#include "scfa/rng.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Thin layer structs over the autograd ops. Parameters are Vars owned by the
// layer; collect() flattens them into a named list for optimizers and
// checkpointing. Names must stay stable across versions, they are the
// on-disk identity of each tensor.

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Var<S>>>;

template <typename S>
inline void set_trainable(NamedParams<S> ps, bool trainable) {  // by value: Vars share nodes
  for (auto& [name, v] : ps) v.set_requires_grad(trainable);
}

template <typename S>
inline void zero_grads(NamedParams<S>& ps) {
  for (auto& [name, v] : ps) v.zero_grad();
}

template <typename S>
inline long param_count(const NamedParams<S>& ps) {
  long n = 0;
  for (const auto& [name, v] : ps) n += v.value().size();
  return n;
}

template <typename S>
struct Conv {
  int k = 3, stride = 1, pad = 1;
  Var<S> w, b;

  Conv() = default;
  Conv(int c_in, int c_out, int k_, int stride_, int pad_, Rng& rng, double init_std = 0.02)
      : k(k_), stride(stride_), pad(pad_) {
    Tensor<S> wt(c_in * k * k, 1, c_out);
    for (long i = 0; i < wt.m.size(); ++i) wt.m.data()[i] = S(rng.normal() * init_std);
    w = Var<S>(std::move(wt), true);
    b = Var<S>(Tensor<S>::zeros(1, 1, c_out), true);
  }

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, w, b, k, stride, pad); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

template <typename S>
struct InstanceNorm2d {
  Var<S> gamma, beta;

  InstanceNorm2d() = default;
  explicit InstanceNorm2d(int c) {
    gamma = Var<S>(Tensor<S>::constant(1, 1, c, S(1)), true);
    beta = Var<S>(Tensor<S>::zeros(1, 1, c), true);
  }

  Var<S> operator()(const Var<S>& x) const { return instance_norm(x, gamma, beta); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// conv3x3 -> instance norm -> relu (norm can be dropped for diagnostics)
template <typename S>
struct ConvINRelu {
  Conv<S> conv;
  InstanceNorm2d<S> norm;
  bool use_norm = true;

  ConvINRelu() = default;
  // Norm-free blocks get He-scaled init; the fixed 0.02 std only keeps
  // activations healthy when a norm re-standardizes each layer.
  ConvINRelu(int c_in, int c_out, Rng& rng, bool use_norm_ = true)
      : conv(c_in, c_out, 3, 1, 1, rng,
             use_norm_ ? 0.02 : std::sqrt(2.0 / (9.0 * c_in))),
        norm(c_out),
        use_norm(use_norm_) {}

  Var<S> operator()(const Var<S>& x) const {
    return use_norm ? relu(norm(conv(x))) : relu(conv(x));
  }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    conv.collect(prefix + ".conv", out);
    if (use_norm) norm.collect(prefix + ".norm", out);
  }
};

/// Two stacked ConvINRelu blocks, the workhorse of encoder/decoder stages.
template <typename S>
struct DoubleConv {
  ConvINRelu<S> first, second;

  DoubleConv() = default;
  DoubleConv(int c_in, int c_out, Rng& rng, bool use_norm = true)
      : first(c_in, c_out, rng, use_norm), second(c_out, c_out, rng, use_norm) {}

  Var<S> operator()(const Var<S>& x) const { return second(first(x)); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    first.collect(prefix + ".a", out);
    second.collect(prefix + ".b", out);
  }
};

/// Strided 3x3 conv halving the spatial resolution, with norm + relu.
template <typename S>
struct Downsample {
  Conv<S> conv;
  InstanceNorm2d<S> norm;

  Downsample() = default;
  Downsample(int c_in, int c_out, Rng& rng) : conv(c_in, c_out, 3, 2, 1, rng), norm(c_out) {}

  Var<S> operator()(const Var<S>& x) const { return relu(norm(conv(x))); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".norm", out);
  }
};

/// Nearest-neighbour x2 upsample followed by a 3x3 conv with norm + relu.
template <typename S>
struct Upsample {
  Conv<S> conv;
  InstanceNorm2d<S> norm;

  Upsample() = default;
  Upsample(int c_in, int c_out, Rng& rng) : conv(c_in, c_out, 3, 1, 1, rng), norm(c_out) {}

  Var<S> operator()(const Var<S>& x) const { return relu(norm(conv(upsample_nearest2(x)))); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    conv.collect(prefix + ".conv", out);
    norm.collect(prefix + ".norm", out);
  }
};

template <typename S>
struct Linear {
  Var<S> w, b;

  Linear() = default;
  Linear(int c_in, int c_out, Rng& rng, double init_std = 0.02) {
    Tensor<S> wt(c_in, 1, c_out);
    for (long i = 0; i < wt.m.size(); ++i) wt.m.data()[i] = S(rng.normal() * init_std);
    w = Var<S>(std::move(wt), true);
    b = Var<S>(Tensor<S>::zeros(1, 1, c_out), true);
  }

  Var<S> operator()(const Var<S>& x) const { return linear(x, w, b); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

}  // namespace scfa
