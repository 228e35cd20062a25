#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scfa/augment.hpp"
#include "scfa/dataset.hpp"
#include "scfa/nn.hpp"
#include "scfa/optim.hpp"

namespace scfa {

// The image discriminator A and the style constrainer Sigma. Both use the
// same patch backbone: three stride-2 conv blocks (no norm on the first) and
// a 1x1 head. A returns the raw patch score map; Sigma consumes a 6-channel
// pair concatenation and reduces to a single probability.

enum class SdcMode { adversarial, pretrained };

template <typename S>
struct PatchDiscriminator {
  Conv<S> c1, c2, c3, head;
  InstanceNorm2d<S> n2, n3;
  bool use_norm = true;

  PatchDiscriminator() = default;
  PatchDiscriminator(int in_ch, int width, std::uint64_t seed, bool use_norm_ = true)
      : use_norm(use_norm_) {
    Rng rng(seed);
    // Without norms the fixed 0.02-std init would shrink activations layer
    // by layer, so scale by fan-in instead.
    auto std_for = [&](int c_in) { return use_norm_ ? 0.02 : std::sqrt(2.0 / (9.0 * c_in)); };
    c1 = Conv<S>(in_ch, width, 3, 2, 1, rng, std_for(in_ch));
    c2 = Conv<S>(width, 2 * width, 3, 2, 1, rng, std_for(width));
    n2 = InstanceNorm2d<S>(2 * width);
    c3 = Conv<S>(2 * width, 4 * width, 3, 2, 1, rng, std_for(2 * width));
    n3 = InstanceNorm2d<S>(4 * width);
    head = Conv<S>(4 * width, 1, 1, 1, 0, rng);
  }

  /// Raw (unsquashed) patch scores; spatial size is input/8.
  Var<S> operator()(const Var<S>& x) const {
    Var<S> h1 = leaky_relu(c1(x), 0.2);
    Var<S> h2 = use_norm ? leaky_relu(n2(c2(h1)), 0.2) : leaky_relu(c2(h1), 0.2);
    Var<S> h3 = use_norm ? leaky_relu(n3(c3(h2)), 0.2) : leaky_relu(c3(h2), 0.2);
    return head(h3);
  }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
    if (use_norm) n2.collect(prefix + ".n2", out);
    c3.collect(prefix + ".c3", out);
    if (use_norm) n3.collect(prefix + ".n3", out);
    head.collect(prefix + ".head", out);
  }

  NamedParams<S> params() {
    NamedParams<S> ps;
    collect("disc", ps);
    return ps;
  }
};

template <typename S>
struct StyleConstrainer {
  int width = 16;
  PatchDiscriminator<S> body;

  StyleConstrainer() = default;
  // Norm-free body: style membership hinges on absolute color statistics,
  // which per-image normalization would strip. The explicit difference
  // channels let the first layer see half-vs-half mismatch directly.
  StyleConstrainer(int width_, std::uint64_t seed) : width(width_), body(9, width_, seed, false) {}

  /// P(other shares trg's style distribution), as a scalar Var in (0,1).
  Var<S> score(const Var<S>& trg, const Var<S>& other) const {
    require_same_shape(trg.value(), other.value(), "sdc_score");
    return sigmoid_op(global_avg_pool(body(concat_c(concat_c(trg, other), sub(trg, other)))));
  }

  double score_value(const Tensor<S>& trg, const Tensor<S>& other) const {
    return double(score(Var<S>(trg), Var<S>(other)).value().m(0, 0));
  }

  NamedParams<S> params() {
    NamedParams<S> ps;
    body.collect("sdc", ps);
    return ps;
  }
};

// ---------------------------------------------------------------------------
// Stand-alone pretraining: positives are (target, deformed target) pairs,
// negatives are (target, target-of-another-grade) pairs.

template <typename S>
struct SdcExample {
  Tensor<S> trg, other;
  int label = 0;  // 1 = same style (deformation of trg), 0 = different grade
};

template <typename S>
inline SdcExample<S> sample_sdc_example(const std::vector<std::pair<Tensor<S>, int>>& pool,
                                        Rng& rng) {
  if (pool.size() < 2) throw Error("sample_sdc_example: pool too small");
  const int i = rng.uniform_int(0, (int)pool.size() - 1);
  SdcExample<S> ex;
  ex.trg = pool[(std::size_t)i].first;
  if (rng.uniform() < 0.5) {
    ex.label = 1;
    Image<S> warped = simulate_weak_pairing(Image<S>{ex.trg, Space::model}, random_spec(rng));
    ex.other = std::move(warped.t);
  } else {
    ex.label = 0;
    int j = rng.uniform_int(0, (int)pool.size() - 1);
    int guard = 0;
    while (pool[(std::size_t)j].second == pool[(std::size_t)i].second) {
      j = rng.uniform_int(0, (int)pool.size() - 1);
      if (++guard > 10000) throw Error("sample_sdc_example: needs >= 2 distinct classes");
    }
    ex.other = pool[(std::size_t)j].first;
  }
  return ex;
}

template <typename S>
struct SdcPretrainResult {
  StyleConstrainer<S> sdc;
  double balanced_accuracy = 0.0;
};

template <typename S>
inline std::vector<std::pair<Tensor<S>, int>> load_target_pool(const DatasetManifest& m,
                                                               const std::string& split) {
  std::vector<std::pair<Tensor<S>, int>> pool;
  for (const ManifestEntry* e : m.split_entries(split))
    pool.push_back({load_pair_image<S>(m, *e, false).t, e->her2_label});
  return pool;
}

template <typename S>
inline SdcPretrainResult<S> pretrain_sdc(const DatasetManifest& m, int epochs, std::uint64_t seed,
                                         int width = 16, double lr = 1e-4) {
  auto train_pool = load_target_pool<S>(m, "train");
  auto test_pool = load_target_pool<S>(m, "test");
  {
    int first = train_pool.empty() ? -1 : train_pool[0].second;
    bool multi = false;
    for (auto& [t, label] : train_pool) multi = multi || label != first;
    if (!multi) throw Error("pretrain_sdc: manifest needs >= 2 distinct her2_label classes");
  }

  SdcPretrainResult<S> result;
  result.sdc = StyleConstrainer<S>(width, derive_seed(seed, "sdc.init"));
  NamedParams<S> ps = result.sdc.params();
  set_trainable(ps, true);
  Adam<S> opt(ps, lr);
  Rng rng(derive_seed(seed, "sdc.sampler"));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t step = 0; step < train_pool.size(); ++step) {
      SdcExample<S> ex = sample_sdc_example(train_pool, rng);
      opt.zero_grad();
      Var<S> loss = bce_to_const(result.sdc.score(Var<S>(ex.trg), Var<S>(ex.other)),
                                 double(ex.label));
      backward(loss);
      opt.step();
    }
  }
  set_trainable(ps, false);

  // One positive and one cross-class negative per held-out target.
  Rng eval_rng(derive_seed(seed, "sdc.eval"));
  long tp = 0, pos = 0, tn = 0, neg = 0;
  for (std::size_t i = 0; i < test_pool.size(); ++i) {
    Image<S> warped =
        simulate_weak_pairing(Image<S>{test_pool[i].first, Space::model}, random_spec(eval_rng));
    ++pos;
    if (result.sdc.score_value(test_pool[i].first, warped.t) > 0.5) ++tp;
    for (std::size_t off = 1; off < test_pool.size(); ++off) {
      const std::size_t j = (i + off) % test_pool.size();
      if (test_pool[j].second != test_pool[i].second) {
        ++neg;
        if (result.sdc.score_value(test_pool[i].first, test_pool[j].first) <= 0.5) ++tn;
        break;
      }
    }
  }
  result.balanced_accuracy =
      0.5 * (pos ? double(tp) / double(pos) : 0.0) + 0.5 * (neg ? double(tn) / double(neg) : 0.0);
  return result;
}

}  // namespace scfa
