#pragma once

#include <array>
#include <string>

#include "scfa/nn.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

// Dual-encoder / single-decoder translation stack. The target encoder and
// decoder learn an autoencoder over target-style images first; the source
// encoder + per-level feature approximator are then trained to drive the
// frozen decoder from source images. A plain single-encoder U-Net of the
// same footprint serves as the ablation baseline and as the reverse
// generator for the cycle term.

struct GeneratorConfig {
  int base_channels = 32;
  int image_size = 64;
  bool fal_enabled = true;
  std::uint64_t seed = 0;
};

inline void validate_config(const GeneratorConfig& cfg) {
  if (cfg.base_channels < 4 || cfg.base_channels % 2 != 0)
    throw Error("GeneratorConfig: base_channels must be even and >= 4");
  if (cfg.image_size % 16 != 0 || cfg.image_size < 16)
    throw Error("GeneratorConfig: image_size must be a positive multiple of 16");
}

template <typename S>
struct FeaturePyramid {
  std::array<Var<S>, 5> levels;
};

/// Shape law: level k (1-based) is (H/2^(k-1), W/2^(k-1)) with ch*2^(k-1)
/// channels.
template <typename S>
inline void validate_pyramid(const FeaturePyramid<S>& p, int base_channels, int image_size) {
  for (int k = 0; k < 5; ++k) {
    const Var<S>& v = p.levels[(std::size_t)k];
    if (!v.valid()) throw Error("FeaturePyramid: missing level " + std::to_string(k + 1));
    const int want_sp = image_size >> k, want_ch = base_channels << k;
    if (v.value().h != want_sp || v.value().w != want_sp || v.value().c != want_ch)
      throw Error("FeaturePyramid: level " + std::to_string(k + 1) + " is " +
                  v.value().shape_str() + ", expected " + std::to_string(want_sp) + "x" +
                  std::to_string(want_sp) + "x" + std::to_string(want_ch));
    if (!v.value().all_finite()) throw Error("FeaturePyramid: non-finite level " + std::to_string(k + 1));
  }
}

template <typename S>
struct PyramidEncoder {
  DoubleConv<S> l1;
  struct Stage {
    Downsample<S> down;
    DoubleConv<S> conv;
  };
  std::array<Stage, 4> stages;  // levels 2..5

  PyramidEncoder() = default;
  PyramidEncoder(int in_ch, int base, Rng& rng) : l1(in_ch, base, rng) {
    for (int k = 0; k < 4; ++k)
      stages[(std::size_t)k] = Stage{Downsample<S>(base << k, base << (k + 1), rng),
                                     DoubleConv<S>(base << (k + 1), base << (k + 1), rng)};
  }

  FeaturePyramid<S> operator()(const Var<S>& x) const {
    FeaturePyramid<S> p;
    p.levels[0] = l1(x);
    for (int k = 0; k < 4; ++k)
      p.levels[(std::size_t)k + 1] =
          stages[(std::size_t)k].conv(stages[(std::size_t)k].down(p.levels[(std::size_t)k]));
    return p;
  }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    l1.collect(prefix + ".l1", out);
    for (int k = 0; k < 4; ++k) {
      stages[(std::size_t)k].down.collect(prefix + ".l" + std::to_string(k + 2) + ".down", out);
      stages[(std::size_t)k].conv.collect(prefix + ".l" + std::to_string(k + 2) + ".conv", out);
    }
  }
};

/// One two-layer conv block per pyramid level, shapes preserved. Level 5 has
/// its own unshared block like the rest; nothing is passed through untouched.
template <typename S>
struct FeatureApproximator {
  std::array<DoubleConv<S>, 5> blocks;

  FeatureApproximator() = default;
  FeatureApproximator(int base, Rng& rng, bool use_norm = true) {
    for (int k = 0; k < 5; ++k)
      blocks[(std::size_t)k] = DoubleConv<S>(base << k, base << k, rng, use_norm);
  }

  FeaturePyramid<S> operator()(const FeaturePyramid<S>& p) const {
    FeaturePyramid<S> out;
    for (int k = 0; k < 5; ++k) out.levels[(std::size_t)k] = blocks[(std::size_t)k](p.levels[(std::size_t)k]);
    return out;
  }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    for (int k = 0; k < 5; ++k) blocks[(std::size_t)k].collect(prefix + ".l" + std::to_string(k + 1), out);
  }
};

template <typename S>
struct PyramidDecoder {
  struct Stage {
    Upsample<S> up;
    DoubleConv<S> conv;
  };
  std::array<Stage, 4> stages;  // merge levels 4..1
  Conv<S> head;

  PyramidDecoder() = default;
  PyramidDecoder(int out_ch, int base, Rng& rng) : head(base, out_ch, 3, 1, 1, rng) {
    for (int k = 0; k < 4; ++k) {
      const int hi = base << (4 - k), lo = base << (3 - k);
      stages[(std::size_t)k] = Stage{Upsample<S>(hi, lo, rng), DoubleConv<S>(2 * lo, lo, rng)};
    }
  }

  Var<S> operator()(const FeaturePyramid<S>& p) const {
    Var<S> x = p.levels[4];
    for (int k = 0; k < 4; ++k)
      x = stages[(std::size_t)k].conv(concat_c(stages[(std::size_t)k].up(x), p.levels[(std::size_t)(3 - k)]));
    return tanh_op(head(x));
  }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    for (int k = 0; k < 4; ++k) {
      stages[(std::size_t)k].up.collect(prefix + ".m" + std::to_string(4 - k) + ".up", out);
      stages[(std::size_t)k].conv.collect(prefix + ".m" + std::to_string(4 - k) + ".conv", out);
    }
    head.collect(prefix + ".head", out);
  }
};

/// Single-encoder U-Net (encoder + decoder, no approximator). Doubles as the
/// ablation baseline generator and as the reverse generator.
template <typename S>
struct UnetGenerator {
  PyramidEncoder<S> encoder;
  PyramidDecoder<S> decoder;

  UnetGenerator() = default;
  UnetGenerator(int base, std::uint64_t seed) {
    Rng rng(seed);
    encoder = PyramidEncoder<S>(3, base, rng);
    decoder = PyramidDecoder<S>(3, base, rng);
  }

  Var<S> operator()(const Var<S>& x) const { return decoder(encoder(x)); }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    encoder.collect(prefix + ".encoder", out);
    decoder.collect(prefix + ".decoder", out);
  }

  NamedParams<S> params() {
    NamedParams<S> ps;
    collect("unet", ps);
    return ps;
  }
};

template <typename S>
struct FalGenerator {
  GeneratorConfig cfg;
  PyramidEncoder<S> target_encoder, source_encoder;
  FeatureApproximator<S> approximator;
  PyramidDecoder<S> decoder;

  FalGenerator() = default;
  explicit FalGenerator(const GeneratorConfig& cfg_) : cfg(cfg_) {
    validate_config(cfg);
    // Each sub-network draws from its own derived stream, so adding or
    // resizing one cannot shift the others' initializations.
    Rng r1(derive_seed(cfg.seed, "gen.target_encoder"));
    Rng r2(derive_seed(cfg.seed, "gen.source_encoder"));
    Rng r3(derive_seed(cfg.seed, "gen.approximator"));
    Rng r4(derive_seed(cfg.seed, "gen.decoder"));
    target_encoder = PyramidEncoder<S>(3, cfg.base_channels, r1);
    source_encoder = PyramidEncoder<S>(3, cfg.base_channels, r2);
    approximator = FeatureApproximator<S>(cfg.base_channels, r3);
    decoder = PyramidDecoder<S>(3, cfg.base_channels, r4);
  }

  void check_input(const Var<S>& img) const {
    if (img.value().h != cfg.image_size || img.value().w != cfg.image_size || img.value().c != 3)
      throw Error("generator: input is " + img.value().shape_str() + ", expected " +
                  std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + "x3");
  }

  FeaturePyramid<S> encode_target(const Var<S>& trg) const {
    check_input(trg);
    return target_encoder(trg);
  }
  FeaturePyramid<S> encode_source(const Var<S>& src) const {
    check_input(src);
    return source_encoder(src);
  }
  FeaturePyramid<S> approximate_features(const FeaturePyramid<S>& p) const {
    validate_pyramid(p, cfg.base_channels, cfg.image_size);
    return approximator(p);
  }
  Var<S> decode(const FeaturePyramid<S>& p) const {
    validate_pyramid(p, cfg.base_channels, cfg.image_size);
    return decoder(p);
  }
  /// decode(approximate(encode_source(src))); target-encoder-free by
  /// construction.
  Var<S> translate(const Var<S>& src) const {
    return decoder(approximator(source_encoder(src)));
  }
  Var<S> reconstruct_target(const Var<S>& trg) const { return decoder(target_encoder(trg)); }

  NamedParams<S> target_encoder_params() {
    NamedParams<S> ps;
    target_encoder.collect("target_encoder", ps);
    return ps;
  }
  NamedParams<S> source_encoder_params() {
    NamedParams<S> ps;
    source_encoder.collect("source_encoder", ps);
    return ps;
  }
  NamedParams<S> approximator_params() {
    NamedParams<S> ps;
    approximator.collect("approximator", ps);
    return ps;
  }
  NamedParams<S> source_side_params() {
    NamedParams<S> ps;
    source_encoder.collect("source_encoder", ps);
    approximator.collect("approximator", ps);
    return ps;
  }
  NamedParams<S> decoder_params() {
    NamedParams<S> ps;
    decoder.collect("decoder", ps);
    return ps;
  }
  NamedParams<S> all_params() {
    NamedParams<S> ps;
    target_encoder.collect("target_encoder", ps);
    source_encoder.collect("source_encoder", ps);
    approximator.collect("approximator", ps);
    decoder.collect("decoder", ps);
    return ps;
  }
};

}  // namespace scfa
