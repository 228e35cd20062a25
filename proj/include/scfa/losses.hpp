#pragma once

#include <cmath>

#include "scfa/autograd.hpp"
#include "scfa/stains.hpp"
#include "scfa/tensor.hpp"

namespace scfa {

enum class GanVariant { least_squares, bce };

struct LossWeights {
  double lambda_cha = 100.0;
  double lambda_sdc = 10.0;
  double lambda_cyc = 10.0;
  double lambda_p = 20.0;
  double lambda_cptc = 2.5;
  double lambda_l1 = 0.0;  // direct pixel L1 to the weakly-paired target (pix2pix-style runs)
  double eps_charbonnier = 1e-3;
  double fod_threshold = 0.15;
  GanVariant gan_variant = GanVariant::least_squares;
  bool use_sdc = true;
  bool use_cycle = true;
  bool use_pattern = true;
  bool use_ctpc = true;
};

/// Per-term scalar values of a composite loss plus the differentiable root.
/// `composite` always equals the lambda-weighted sum of the term values.
template <typename S>
struct LossBreakdown {
  S gan = S(0);
  S sdc = S(0);
  S cyc = S(0);
  S pattern = S(0);
  S ctpc = S(0);
  S cha = S(0);
  S l1 = S(0);
  S composite = S(0);
  bool ctpc_skipped = false;
  Var<S> total;
};

/// Mean GAN objective of a raw score map against a constant label.
/// least_squares scores the raw map; bce squashes it through a sigmoid first.
template <typename S>
inline Var<S> gan_loss(const Var<S>& scores, double label, GanVariant variant) {
  if (variant == GanVariant::least_squares) return mse_to_const(scores, S(label));
  return bce_to_const(sigmoid_op(scores), S(label));
}

/// Binary real/fake objective on two probabilities: the first should score 1,
/// the second 0.
template <typename S>
inline Var<S> sdc_pair_loss(const Var<S>& p_deformed, const Var<S>& p_generated) {
  Var<S> a = bce_to_const(p_deformed, S(1));
  Var<S> b = bce_to_const(p_generated, S(0));
  return scale(add(a, b), S(0.5));
}

/// Constrainer training objective: (target, deformed-real) pairs are the
/// positive class, (target, generated) pairs the negative class.
template <typename S, typename SdcT>
inline Var<S> sdc_loss(const SdcT& sdc, const Tensor<S>& trg, const Tensor<S>& sim,
                       const Tensor<S>& gen) {
  return sdc_pair_loss(sdc.score(Var<S>(trg), Var<S>(sim)), sdc.score(Var<S>(trg), Var<S>(gen)));
}

/// Generator-side style objective: both halves are scored against the
/// deformed-real label, so gradients push the generated image toward the
/// style distribution the constrainer accepts. The deformed-real half carries
/// no generator gradient; it keeps the reported magnitude comparable between
/// the two halves and with the constrainer's own objective.
template <typename S, typename SdcT>
inline Var<S> sdc_alignment_loss(const SdcT& sdc, const Tensor<S>& trg, const Tensor<S>& sim,
                                 const Var<S>& gen) {
  Var<S> a = bce_to_const(sdc.score(Var<S>(trg), Var<S>(sim)), S(1));
  Var<S> b = bce_to_const(sdc.score(Var<S>(trg), gen), S(1));
  return scale(add(a, b), S(0.5));
}

/// Mean absolute error between the source and the reverse-translated
/// generated image.
template <typename S, typename RevT>
inline Var<S> cycle_loss(const RevT& reverse, const Tensor<S>& src, const Var<S>& gen) {
  return l1_loss(Var<S>(src), reverse(gen));
}

/// One minus the cosine similarity of two probability vectors.
template <typename S>
inline Var<S> pattern_loss_from_probs(const Var<S>& p_a, const Var<S>& p_b) {
  return sub(Var<S>(Tensor<S>::scalar(S(1))), cosine_sim(p_a, p_b));
}

/// Class-pattern agreement between the target image and the generated image
/// under a frozen classifier.
template <typename S, typename ClsT>
inline Var<S> pattern_loss(const ClsT& classifier, const Tensor<S>& trg, const Var<S>& gen) {
  return pattern_loss_from_probs(classifier.classify(Var<S>(trg)), classifier.classify(gen));
}

/// Binary mask of strongly stained pixels: 1 where the DAB absorbance of a
/// metric-space RGB image exceeds the threshold.
template <typename S>
inline Tensor<S> fod_mask(const Tensor<S>& metric_rgb, S threshold) {
  Tensor<S> od = dab_absorbance(metric_rgb);
  Tensor<S> mask(od.h, od.w, 1);
  mask.m = (od.m.array() > threshold).template cast<S>();
  return mask;
}

namespace detail {

/// Block-mean downsampling of an (H,W,1) map to the classifier's feature grid,
/// flattened to the row-vector layout weighted_mean_c expects.
template <typename S>
inline Eigen::Matrix<S, 1, Eigen::Dynamic> block_mean_weights(const Tensor<S>& map, int out_h,
                                                              int out_w) {
  if (map.h % out_h != 0 || map.w % out_w != 0)
    throw Error("block_mean_weights: map size not divisible by feature grid");
  const int fy = map.h / out_h, fx = map.w / out_w;
  Eigen::Matrix<S, 1, Eigen::Dynamic> wt(out_h * out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      S acc = S(0);
      for (int dy = 0; dy < fy; ++dy)
        for (int dx = 0; dx < fx; ++dx) acc += map.m(0, map.pix(y * fy + dy, x * fx + dx));
      wt(y * out_w + x) = acc / S(fy * fx);
    }
  return wt;
}

template <typename S>
inline Tensor<S> to_metric_values(const Tensor<S>& model_rgb) {
  Tensor<S> out = model_rgb;
  out.m = ((out.m.array() + S(1)) * S(0.5)).cwiseMax(S(0)).cwiseMin(S(1));
  return out;
}

}  // namespace detail

/// Tumor-prototype agreement: each image's strongly-stained region (its own
/// mask, treated as a constant region selector) pools the classifier's
/// deepest conv features into a prototype vector; the loss is one minus the
/// prototype cosine similarity. If either mask is empty the term is skipped
/// and a constant zero returned.
template <typename S, typename ClsT>
inline Var<S> ctpc_loss(const ClsT& classifier, const Tensor<S>& trg, const Var<S>& gen,
                        S threshold, bool* skipped) {
  Tensor<S> mask_trg = fod_mask(detail::to_metric_values(trg), threshold);
  Tensor<S> mask_gen = fod_mask(detail::to_metric_values(gen.value()), threshold);
  Var<S> feat_trg = classifier.features(Var<S>(trg));
  Var<S> feat_gen = classifier.features(gen);
  const int fh = feat_trg.value().h, fw = feat_trg.value().w;
  Eigen::Matrix<S, 1, Eigen::Dynamic> wt_trg = detail::block_mean_weights(mask_trg, fh, fw);
  Eigen::Matrix<S, 1, Eigen::Dynamic> wt_gen = detail::block_mean_weights(mask_gen, fh, fw);
  if (skipped) *skipped = false;
  if (!(wt_trg.sum() > S(0)) || !(wt_gen.sum() > S(0))) {
    if (skipped) *skipped = true;
    return Var<S>(Tensor<S>::scalar(S(0)));
  }
  Var<S> proto_trg = weighted_mean_c(feat_trg, wt_trg);
  Var<S> proto_gen = weighted_mean_c(feat_gen, wt_gen);
  return sub(Var<S>(Tensor<S>::scalar(S(1))), cosine_sim(proto_trg, proto_gen));
}

/// Autoencoder-phase objective on an already-built reconstruction: it should
/// fool the discriminator and stay close to the input under the Charbonnier
/// penalty. Callers that also run a discriminator update can reuse `recon`.
template <typename S, typename DiscT>
inline LossBreakdown<S> rec_loss_on(const Var<S>& recon, const DiscT& disc, const Tensor<S>& trg,
                                    const LossWeights& w) {
  Var<S> gan = gan_loss(disc(recon), 1.0, w.gan_variant);
  Var<S> cha = charbonnier_loss(recon, Var<S>(trg), S(w.eps_charbonnier));
  LossBreakdown<S> out;
  out.gan = gan.value().m(0, 0);
  out.cha = cha.value().m(0, 0);
  out.total = w.lambda_cha == 0.0 ? gan : add(gan, scale(cha, S(w.lambda_cha)));
  out.composite = out.total.value().m(0, 0);
  return out;
}

template <typename S, typename GenT, typename DiscT>
inline LossBreakdown<S> rec_loss(const GenT& gen, const DiscT& disc, const Tensor<S>& trg,
                                 const LossWeights& w) {
  return rec_loss_on(gen.reconstruct_target(Var<S>(trg)), disc, trg, w);
}

/// Full generator objective: GAN term plus the enabled weighted terms.
/// Pointer arguments may be null only when their term is disabled.
template <typename S, typename DiscT, typename SdcT, typename ClsT, typename RevT>
inline LossBreakdown<S> gen_loss(const Var<S>& gen, const Tensor<S>& src, const Tensor<S>& trg,
                                 const Tensor<S>& sim, const DiscT& disc, const SdcT* sdc,
                                 const ClsT* classifier, const RevT* reverse,
                                 const LossWeights& w) {
  LossBreakdown<S> out;
  Var<S> total = gan_loss(disc(gen), 1.0, w.gan_variant);
  out.gan = total.value().m(0, 0);
  auto attach = [&](const Var<S>& term, double lambda, S& slot) {
    slot = term.value().m(0, 0);
    if (lambda != 0.0) total = add(total, scale(term, S(lambda)));
  };
  if (w.use_sdc) {
    if (!sdc) throw Error("gen_loss: sdc term enabled but no constrainer supplied");
    attach(sdc_alignment_loss(*sdc, trg, sim, gen), w.lambda_sdc, out.sdc);
  }
  if (w.use_cycle) {
    if (!reverse) throw Error("gen_loss: cycle term enabled but no reverse generator supplied");
    attach(cycle_loss(*reverse, src, gen), w.lambda_cyc, out.cyc);
  }
  if (w.use_pattern) {
    if (!classifier) throw Error("gen_loss: pattern term enabled but no classifier supplied");
    attach(pattern_loss(*classifier, trg, gen), w.lambda_p, out.pattern);
  }
  if (w.use_ctpc) {
    if (!classifier) throw Error("gen_loss: ctpc term enabled but no classifier supplied");
    attach(ctpc_loss(*classifier, trg, gen, S(w.fod_threshold), &out.ctpc_skipped), w.lambda_cptc,
           out.ctpc);
  }
  if (w.lambda_l1 != 0.0) attach(l1_loss(gen, Var<S>(trg)), w.lambda_l1, out.l1);
  out.total = total;
  out.composite = total.value().m(0, 0);
  return out;
}

/// Discriminator objective: generated images (detached) should score 0,
/// real targets 1.
template <typename S, typename DiscT>
inline Var<S> adversary_gan_loss(const DiscT& disc, const Tensor<S>& gen_detached,
                                 const Tensor<S>& trg, GanVariant variant) {
  Var<S> fake = gan_loss(disc(Var<S>(gen_detached)), 0.0, variant);
  Var<S> real = gan_loss(disc(Var<S>(trg)), 1.0, variant);
  return scale(add(fake, real), S(0.5));
}

}  // namespace scfa
