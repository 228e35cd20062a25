#pragma once

#include <string>
#include <utility>
#include <vector>

#include "scfa/dataset.hpp"
#include "scfa/nn.hpp"
#include "scfa/optim.hpp"

namespace scfa {

// Grade pattern classifier: four conv/pool blocks doubling in width, global
// average pooling and a linear head over the 4 grades. The feature map after
// the last block (before pooling) doubles as the backbone for the prototype
// consistency loss. No instance norm here: grading rides on absolute stain
// coverage, which per-image normalization would cancel.

template <typename S>
struct PatternClassifier {
  int width = 16;
  ConvINRelu<S> b1, b2, b3, b4;
  Linear<S> fc;

  PatternClassifier() = default;
  PatternClassifier(int width_, std::uint64_t seed) : width(width_) {
    Rng rng(seed);
    b1 = ConvINRelu<S>(3, width, rng, false);
    b2 = ConvINRelu<S>(width, 2 * width, rng, false);
    b3 = ConvINRelu<S>(2 * width, 4 * width, rng, false);
    b4 = ConvINRelu<S>(4 * width, 8 * width, rng, false);
    fc = Linear<S>(8 * width, 4, rng);
  }

  /// Penultimate feature map, spatial size input/16 with 8*width channels.
  Var<S> features(const Var<S>& img) const {
    Var<S> h = avg_pool2(b1(img));
    h = avg_pool2(b2(h));
    h = avg_pool2(b3(h));
    return avg_pool2(b4(h));
  }

  Var<S> logits(const Var<S>& img) const { return fc(global_avg_pool(features(img))); }

  /// (1,1,4) probability vector.
  Var<S> classify(const Var<S>& img) const { return softmax_c(logits(img)); }

  int predict(const Tensor<S>& img) const {
    Eigen::Index best = 0;
    classify(Var<S>(img)).value().m.col(0).maxCoeff(&best);
    return (int)best;
  }

  void collect(const std::string& prefix, NamedParams<S>& out) {
    b1.collect(prefix + ".b1", out);
    b2.collect(prefix + ".b2", out);
    b3.collect(prefix + ".b3", out);
    b4.collect(prefix + ".b4", out);
    fc.collect(prefix + ".fc", out);
  }

  NamedParams<S> params() {
    NamedParams<S> ps;
    collect("classifier", ps);
    return ps;
  }
};

template <typename S>
struct ClassifierPretrainResult {
  PatternClassifier<S> classifier;
  double holdout_accuracy = 0.0;
};

template <typename S>
inline ClassifierPretrainResult<S> pretrain_classifier(const DatasetManifest& m, int epochs,
                                                       std::uint64_t seed, int width = 16,
                                                       double lr = 1e-4) {
  auto train_pool = load_target_pool<S>(m, "train");
  auto test_pool = load_target_pool<S>(m, "test");
  {
    bool seen[4] = {};
    for (auto& [t, label] : train_pool) seen[label] = true;
    if (!(seen[0] && seen[1] && seen[2] && seen[3]))
      throw Error("pretrain_classifier: training split must cover all 4 grades");
  }

  ClassifierPretrainResult<S> result;
  result.classifier = PatternClassifier<S>(width, derive_seed(seed, "classifier.init"));
  NamedParams<S> ps = result.classifier.params();
  set_trainable(ps, true);
  Adam<S> opt(ps, lr);
  Rng rng(derive_seed(seed, "classifier.order"));

  std::vector<std::size_t> order(train_pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[(std::size_t)rng.uniform_int(0, (int)i)]);
    for (std::size_t i : order) {
      opt.zero_grad();
      Var<S> loss = softmax_xent(result.classifier.logits(Var<S>(train_pool[i].first)),
                                 train_pool[i].second);
      backward(loss);
      opt.step();
    }
  }
  set_trainable(ps, false);

  long hits = 0;
  for (auto& [img, label] : test_pool)
    if (result.classifier.predict(img) == label) ++hits;
  result.holdout_accuracy = test_pool.empty() ? 0.0 : double(hits) / double(test_pool.size());
  return result;
}

}  // namespace scfa
