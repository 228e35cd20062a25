#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "scfa/adversaries.hpp"
#include "scfa/augment.hpp"
#include "scfa/checkpoint.hpp"
#include "scfa/classifier.hpp"
#include "scfa/dataset.hpp"
#include "scfa/generators.hpp"
#include "scfa/losses.hpp"
#include "scfa/optim.hpp"

namespace scfa {

struct SdcConfig {
  SdcMode mode = SdcMode::adversarial;
  int width = 16;
  int pretrain_epochs = 8;
};

struct TrainConfig {
  double lr = 1e-4;
  int batch_size = 1;
  double beta1 = 0.5, beta2 = 0.999;
  int epochs_phase1 = 30;
  int epochs_phase2 = 30;
  std::uint64_t seed = 1;
  LossWeights loss_weights;
  SdcConfig sdc;
  GeneratorConfig generator;
  std::string preset;  // empty = use flags as given
  int disc_width = 16;
  int checkpoint_every = 0;  // extra checkpoints every K phase-2 epochs; 0 = phase ends only

  void validate() const {
    if (!(lr > 0)) throw Error("train config: lr must be positive");
    if (batch_size != 1) throw Error("train config: only batch_size 1 is supported");
    if (epochs_phase1 < 1 || epochs_phase2 < 1) throw Error("train config: epochs must be >= 1");
    if (disc_width < 1 || sdc.width < 1) throw Error("train config: widths must be positive");
  }
};

/// The ablation chain: each name switches on the flag set of one Table row.
/// Rows form a strict inclusion chain ending in the full model.
inline void apply_preset(TrainConfig& cfg, const std::string& name) {
  LossWeights& w = cfg.loss_weights;
  w.use_sdc = w.use_cycle = w.use_pattern = w.use_ctpc = false;
  w.lambda_l1 = 0.0;
  cfg.generator.fal_enabled = false;
  w.use_cycle = true;
  if (name == "baseline") return;
  w.use_ctpc = true;
  if (name == "+ctpc") return;
  w.use_sdc = true;
  if (name == "+ctpc+sdc") return;
  cfg.generator.fal_enabled = true;
  if (name == "+ctpc+sdc+fal") return;
  w.use_pattern = true;
  if (name == "full") return;
  throw Error("unknown preset: " + name);
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"baseline", "+ctpc", "+ctpc+sdc", "+ctpc+sdc+fal",
                                              "full"};
  return names;
}

// --- config <-> json ------------------------------------------------------

inline std::string to_string(GanVariant v) {
  return v == GanVariant::least_squares ? "least_squares" : "bce";
}
inline std::string to_string(SdcMode m) {
  return m == SdcMode::adversarial ? "adversarial" : "pretrained";
}

inline nlohmann::json loss_weights_to_json(const LossWeights& w) {
  return {{"lambda_cha", w.lambda_cha},
          {"lambda_sdc", w.lambda_sdc},
          {"lambda_cyc", w.lambda_cyc},
          {"lambda_p", w.lambda_p},
          {"lambda_cptc", w.lambda_cptc},
          {"lambda_l1", w.lambda_l1},
          {"eps_charbonnier", w.eps_charbonnier},
          {"fod_threshold", w.fod_threshold},
          {"gan_variant", to_string(w.gan_variant)},
          {"use_sdc", w.use_sdc},
          {"use_cycle", w.use_cycle},
          {"use_pattern", w.use_pattern},
          {"use_ctpc", w.use_ctpc}};
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"batch_size", c.batch_size},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epochs_phase1", c.epochs_phase1},
          {"epochs_phase2", c.epochs_phase2},
          {"seed", c.seed},
          {"preset", c.preset},
          {"disc_width", c.disc_width},
          {"checkpoint_every", c.checkpoint_every},
          {"loss_weights", loss_weights_to_json(c.loss_weights)},
          {"sdc",
           {{"mode", to_string(c.sdc.mode)},
            {"width", c.sdc.width},
            {"pretrain_epochs", c.sdc.pretrain_epochs}}},
          {"generator",
           {{"base_channels", c.generator.base_channels},
            {"image_size", c.generator.image_size},
            {"fal_enabled", c.generator.fal_enabled}}}};
}

namespace detail {

/// Pulls a field, erasing it from the working copy so callers can reject
/// leftovers as unknown keys.
template <typename T>
inline void take(nlohmann::json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw Error(std::string("config: field '") + key + "' has the wrong type");
    }
    j.erase(it);
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& where) {
  if (!j.empty())
    throw Error("config: unknown key '" + j.begin().key() + "' in " + where);
}

}  // namespace detail

inline LossWeights loss_weights_from_json(nlohmann::json j) {
  LossWeights w;
  detail::take(j, "lambda_cha", w.lambda_cha);
  detail::take(j, "lambda_sdc", w.lambda_sdc);
  detail::take(j, "lambda_cyc", w.lambda_cyc);
  detail::take(j, "lambda_p", w.lambda_p);
  detail::take(j, "lambda_cptc", w.lambda_cptc);
  detail::take(j, "lambda_l1", w.lambda_l1);
  detail::take(j, "eps_charbonnier", w.eps_charbonnier);
  detail::take(j, "fod_threshold", w.fod_threshold);
  std::string gv = to_string(w.gan_variant);
  detail::take(j, "gan_variant", gv);
  if (gv == "least_squares")
    w.gan_variant = GanVariant::least_squares;
  else if (gv == "bce")
    w.gan_variant = GanVariant::bce;
  else
    throw Error("config: gan_variant must be least_squares or bce");
  detail::take(j, "use_sdc", w.use_sdc);
  detail::take(j, "use_cycle", w.use_cycle);
  detail::take(j, "use_pattern", w.use_pattern);
  detail::take(j, "use_ctpc", w.use_ctpc);
  detail::reject_unknown(j, "loss_weights");
  return w;
}

inline TrainConfig train_config_from_json(nlohmann::json j) {
  TrainConfig c;
  detail::take(j, "lr", c.lr);
  detail::take(j, "batch_size", c.batch_size);
  detail::take(j, "beta1", c.beta1);
  detail::take(j, "beta2", c.beta2);
  detail::take(j, "epochs_phase1", c.epochs_phase1);
  detail::take(j, "epochs_phase2", c.epochs_phase2);
  detail::take(j, "seed", c.seed);
  detail::take(j, "preset", c.preset);
  detail::take(j, "disc_width", c.disc_width);
  detail::take(j, "checkpoint_every", c.checkpoint_every);
  if (auto it = j.find("loss_weights"); it != j.end()) {
    c.loss_weights = loss_weights_from_json(*it);
    j.erase(it);
  }
  if (auto it = j.find("sdc"); it != j.end()) {
    nlohmann::json s = *it;
    j.erase(it);
    std::string mode = to_string(c.sdc.mode);
    detail::take(s, "mode", mode);
    if (mode == "adversarial")
      c.sdc.mode = SdcMode::adversarial;
    else if (mode == "pretrained")
      c.sdc.mode = SdcMode::pretrained;
    else
      throw Error("config: sdc.mode must be adversarial or pretrained");
    detail::take(s, "width", c.sdc.width);
    detail::take(s, "pretrain_epochs", c.sdc.pretrain_epochs);
    detail::reject_unknown(s, "sdc");
  }
  if (auto it = j.find("generator"); it != j.end()) {
    nlohmann::json g = *it;
    j.erase(it);
    detail::take(g, "base_channels", c.generator.base_channels);
    detail::take(g, "image_size", c.generator.image_size);
    detail::take(g, "fal_enabled", c.generator.fal_enabled);
    detail::reject_unknown(g, "generator");
  }
  detail::reject_unknown(j, "train config");
  if (!c.preset.empty()) apply_preset(c, c.preset);
  return c;
}

// --- trainer --------------------------------------------------------------

template <typename S>
inline NamedParams<S> concat_params(NamedParams<S> a, const NamedParams<S>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

/// Two-phase trainer. Phase 1 fits the target-side autoencoder (target
/// encoder + decoder, with a dedicated reconstruction discriminator); phase 2
/// freezes the decoder and fits the translation path (source encoder +
/// approximator, or the single-encoder baseline) against a re-initialized
/// image discriminator, the style constrainer, and the frozen classifier.
/// Every dataset pass performs exactly one generator and one adversary update
/// per pair.
template <typename S = float>
struct Trainer {
  TrainConfig cfg;
  DatasetManifest manifest;

  std::vector<Tensor<S>> train_src, train_trg;
  std::vector<int> train_labels;

  FalGenerator<S> fal;
  UnetGenerator<S> baseline;
  UnetGenerator<S> reverse;
  PatchDiscriminator<S> disc;
  StyleConstrainer<S> sdc;
  PatternClassifier<S> cls;
  bool has_cls = false;

  Adam<S> opt_gen, opt_disc, opt_sdc;
  Rng rng;
  int phase = 0;  // 0 fresh, 1/2 in phase, 3 done
  int epoch_in_phase = 0;
  long global_step = 0;
  std::ostream* log = nullptr;

  Trainer(TrainConfig config, const DatasetManifest& m,
          std::optional<PatternClassifier<S>> classifier = std::nullopt,
          std::optional<StyleConstrainer<S>> pretrained_sdc = std::nullopt)
      : cfg(std::move(config)), manifest(m), rng(0) {
    if (!cfg.preset.empty()) apply_preset(cfg, cfg.preset);
    cfg.validate();
    if (manifest.image_size != cfg.generator.image_size)
      throw Error("train: manifest images are " + std::to_string(manifest.image_size) +
                  "px but the generator expects " + std::to_string(cfg.generator.image_size));
    const LossWeights& w = cfg.loss_weights;
    if ((w.use_pattern || w.use_ctpc) && !classifier)
      throw Error("train: pattern/ctpc terms need a pretrained classifier");
    if (w.use_sdc && cfg.sdc.mode == SdcMode::pretrained && !pretrained_sdc)
      throw Error("train: sdc pretrained mode needs a pretrained constrainer");

    GeneratorConfig gcfg = cfg.generator;
    gcfg.seed = derive_seed(cfg.seed, "nets.generator");
    fal = FalGenerator<S>(gcfg);
    baseline = UnetGenerator<S>(gcfg.base_channels, derive_seed(cfg.seed, "nets.baseline"));
    reverse = UnetGenerator<S>(gcfg.base_channels, derive_seed(cfg.seed, "nets.reverse"));
    disc = PatchDiscriminator<S>(3, cfg.disc_width, derive_seed(cfg.seed, "nets.disc.phase1"));
    if (pretrained_sdc) {
      sdc = std::move(*pretrained_sdc);
      set_trainable(sdc.params(), false);
    } else {
      sdc = StyleConstrainer<S>(cfg.sdc.width, derive_seed(cfg.seed, "nets.sdc"));
    }
    if (classifier) {
      cls = std::move(*classifier);
      has_cls = true;
      set_trainable(cls.params(), false);
    }
    rng = Rng(derive_seed(cfg.seed, "train.loop"));

    const auto train_entries = manifest.split_entries("train");
    if (train_entries.empty()) throw Error("train: manifest train split is empty");
    for (const ManifestEntry* e : train_entries) {
      Image<S> src = load_pair_image<S>(manifest, *e, true);
      Image<S> trg = load_pair_image<S>(manifest, *e, false);
      auto [nsrc, ntrg] = normalize_illumination(src, trg);
      train_src.push_back(std::move(nsrc.t));
      train_trg.push_back(std::move(ntrg.t));
      train_labels.push_back(e->her2_label);
    }
  }

  bool fal_enabled() const { return cfg.generator.fal_enabled; }

  void check_finite(double v, const char* what) const {
    if (!std::isfinite(v))
      throw Error(std::string("train: non-finite ") + what + " at step " +
                  std::to_string(global_step) + " (phase " + std::to_string(phase) + ")");
  }

  void log_line(nlohmann::json j) {
    if (!log) return;
    j["step"] = global_step;
    j["phase"] = phase;
    *log << j.dump() << "\n";
  }

  std::vector<std::size_t> epoch_order() {
    std::vector<std::size_t> order(train_trg.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[(std::size_t)rng.uniform_int(0, (int)i - 1)]);
    return order;
  }

  // --- phase 1 ---

  void begin_phase1() {
    if (phase != 0) throw Error("train: phase 1 must start from a fresh trainer");
    if (!fal_enabled()) throw Error("train: phase 1 requires fal_enabled");
    disc = PatchDiscriminator<S>(3, cfg.disc_width, derive_seed(cfg.seed, "nets.disc.phase1"));
    opt_gen = Adam<S>(concat_params(fal.target_encoder_params(), fal.decoder_params()), cfg.lr);
    opt_disc = Adam<S>(disc.params(), cfg.lr);
    opt_gen.beta1 = opt_disc.beta1 = cfg.beta1;
    opt_gen.beta2 = opt_disc.beta2 = cfg.beta2;
    opt_sdc = Adam<S>();
    phase = 1;
    epoch_in_phase = 0;
  }

  /// One pass over the train targets; returns the epoch-mean reconstruction
  /// composite.
  double phase1_epoch() {
    if (phase != 1) throw Error("train: phase1_epoch outside phase 1");
    double sum = 0.0;
    long count = 0;
    for (std::size_t idx : epoch_order()) {
      Tensor<S> trg =
          simulate_weak_pairing(Image<S>{train_trg[idx], Space::model}, random_spec(rng)).t;

      set_trainable(disc.params(), false);
      Var<S> recon = fal.reconstruct_target(Var<S>(trg));
      LossBreakdown<S> bd = rec_loss_on(recon, disc, trg, cfg.loss_weights);
      check_finite(bd.composite, "reconstruction loss");
      opt_gen.zero_grad();
      backward(bd.total);
      opt_gen.step();

      set_trainable(disc.params(), true);
      Var<S> dl = adversary_gan_loss(disc, recon.value(), trg, cfg.loss_weights.gan_variant);
      check_finite(dl.value().m(0, 0), "discriminator loss");
      opt_disc.zero_grad();
      backward(dl);
      opt_disc.step();

      ++global_step;
      sum += bd.composite;
      ++count;
      log_line({{"gan", bd.gan},
                {"cha", bd.cha},
                {"composite", bd.composite},
                {"disc", dl.value().m(0, 0)}});
    }
    ++epoch_in_phase;
    return sum / (double)count;
  }

  // --- phase 2 ---

  void begin_phase2() {
    if (phase == 1 && epoch_in_phase < cfg.epochs_phase1)
      throw Error("train: phase 1 incomplete");
    if (phase >= 2) throw Error("train: phase 2 already started");
    if (phase == 0 && fal_enabled()) throw Error("train: fal training needs phase 1 first");
    // Dedicated, freshly initialized image discriminator for this phase.
    disc = PatchDiscriminator<S>(3, cfg.disc_width, derive_seed(cfg.seed, "nets.disc.phase2"));
    NamedParams<S> gen_params =
        fal_enabled() ? fal.source_side_params() : baseline.params();
    if (cfg.loss_weights.use_cycle) gen_params = concat_params(gen_params, reverse.params());
    if (fal_enabled()) {
      set_trainable(fal.target_encoder_params(), false);
      set_trainable(fal.decoder_params(), false);
    }
    opt_gen = Adam<S>(std::move(gen_params), cfg.lr);
    opt_disc = Adam<S>(disc.params(), cfg.lr);
    opt_gen.beta1 = opt_disc.beta1 = cfg.beta1;
    opt_gen.beta2 = opt_disc.beta2 = cfg.beta2;
    if (cfg.loss_weights.use_sdc && cfg.sdc.mode == SdcMode::adversarial) {
      opt_sdc = Adam<S>(sdc.params(), cfg.lr);
      opt_sdc.beta1 = cfg.beta1;
      opt_sdc.beta2 = cfg.beta2;
    } else {
      opt_sdc = Adam<S>();
    }
    phase = 2;
    epoch_in_phase = 0;
  }

  Var<S> generate(const Tensor<S>& src) const {
    return fal_enabled() ? fal.translate(Var<S>(src)) : baseline(Var<S>(src));
  }

  /// One pass over the train pairs; returns the epoch-mean generator
  /// composite.
  double phase2_epoch() {
    if (phase != 2) throw Error("train: phase2_epoch outside phase 2");
    const LossWeights& w = cfg.loss_weights;
    const bool adversarial_sdc = w.use_sdc && cfg.sdc.mode == SdcMode::adversarial;
    double sum = 0.0;
    long count = 0;
    for (std::size_t idx : epoch_order()) {
      const Tensor<S>& src = train_src[idx];
      const Tensor<S>& trg = train_trg[idx];
      Tensor<S> sim = simulate_weak_pairing(Image<S>{trg, Space::model}, random_spec(rng)).t;

      set_trainable(disc.params(), false);
      if (adversarial_sdc) set_trainable(sdc.params(), false);
      Var<S> gen = generate(src);
      LossBreakdown<S> bd =
          gen_loss(gen, src, trg, sim, disc, w.use_sdc ? &sdc : nullptr,
                   has_cls ? &cls : nullptr, w.use_cycle ? &reverse : nullptr, w);
      check_finite(bd.composite, "generator loss");
      opt_gen.zero_grad();
      backward(bd.total);
      opt_gen.step();

      set_trainable(disc.params(), true);
      Tensor<S> gen_detached = gen.value();
      Var<S> dl = adversary_gan_loss(disc, gen_detached, trg, w.gan_variant);
      check_finite(dl.value().m(0, 0), "discriminator loss");
      opt_disc.zero_grad();
      backward(dl);
      opt_disc.step();

      double sdc_adv = 0.0;
      if (adversarial_sdc) {
        set_trainable(sdc.params(), true);
        Var<S> sl = sdc_loss(sdc, trg, sim, gen_detached);
        sdc_adv = sl.value().m(0, 0);
        check_finite(sdc_adv, "constrainer loss");
        opt_sdc.zero_grad();
        backward(sl);
        opt_sdc.step();
      }

      ++global_step;
      sum += bd.composite;
      ++count;
      log_line({{"gan", bd.gan},
                {"sdc", bd.sdc},
                {"cyc", bd.cyc},
                {"pattern", bd.pattern},
                {"ctpc", bd.ctpc},
                {"ctpc_skipped", bd.ctpc_skipped},
                {"l1", bd.l1},
                {"composite", bd.composite},
                {"disc", dl.value().m(0, 0)},
                {"sdc_adv", sdc_adv}});
    }
    ++epoch_in_phase;
    return sum / (double)count;
  }

  /// Runs all remaining epochs of both phases. When a directory is given,
  /// checkpoints at every phase boundary and, if checkpoint_every > 0, after
  /// every K-th epoch within a phase.
  void run(const std::filesystem::path& checkpoint_dir = {}) {
    auto due = [&](int total_epochs) {
      return !checkpoint_dir.empty() && cfg.checkpoint_every > 0 &&
             epoch_in_phase % cfg.checkpoint_every == 0 && epoch_in_phase < total_epochs;
    };
    if (phase == 0 && fal_enabled()) begin_phase1();
    if (phase == 1) {
      while (epoch_in_phase < cfg.epochs_phase1) {
        phase1_epoch();
        if (due(cfg.epochs_phase1)) save_checkpoint(checkpoint_dir);
      }
      if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir);
    }
    if (phase < 2) begin_phase2();
    if (phase == 2) {
      while (epoch_in_phase < cfg.epochs_phase2) {
        phase2_epoch();
        if (due(cfg.epochs_phase2)) save_checkpoint(checkpoint_dir);
      }
      phase = 3;
      if (!checkpoint_dir.empty()) save_checkpoint(checkpoint_dir);
    }
  }

  // --- checkpointing ---

  void save_checkpoint(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_params_blob(dir / "target_encoder.scfw", fal.target_encoder_params());
    save_params_blob(dir / "source_encoder.scfw", fal.source_encoder_params());
    save_params_blob(dir / "approximator.scfw", fal.approximator_params());
    save_params_blob(dir / "decoder.scfw", fal.decoder_params());
    save_params_blob(dir / "reverse_generator.scfw", reverse.params());
    save_params_blob(dir / "baseline_generator.scfw", baseline.params());
    save_params_blob(dir / "discriminator.scfw", disc.params());
    save_params_blob(dir / "sdc.scfw", sdc.params());
    if (phase == 1 || phase == 2) {
      save_adam(dir / "opt_gen.scfw", opt_gen);
      save_adam(dir / "opt_disc.scfw", opt_disc);
      if (!opt_sdc.params.empty()) save_adam(dir / "opt_sdc.scfw", opt_sdc);
    }
    nlohmann::json meta{{"format", 1},
                        {"phase", phase},
                        {"epoch_in_phase", epoch_in_phase},
                        {"global_step", global_step},
                        {"rng_state", rng.state()},
                        {"config", train_config_to_json(cfg)}};
    save_json(dir / "meta.json", meta);
  }

  /// Restores a trainer mid-run; classifier/pretrained-constrainer arguments
  /// must match what the original run was given.
  static Trainer load_checkpoint(const std::filesystem::path& dir, const DatasetManifest& m,
                                 std::optional<PatternClassifier<S>> classifier = std::nullopt,
                                 std::optional<StyleConstrainer<S>> pretrained_sdc = std::nullopt) {
    nlohmann::json meta = load_json(dir / "meta.json");
    if (!meta.contains("config")) throw Error("checkpoint: meta.json missing config");
    TrainConfig cfg = train_config_from_json(meta["config"]);
    Trainer t(cfg, m, std::move(classifier), std::move(pretrained_sdc));
    const int phase = meta.at("phase").get<int>();
    const int epoch = meta.at("epoch_in_phase").get<int>();
    if (phase == 1) {
      t.begin_phase1();
    } else if (phase >= 2) {
      if (t.fal_enabled()) {
        t.begin_phase1();
        t.epoch_in_phase = cfg.epochs_phase1;
      }
      t.begin_phase2();
    }
    load_params_into(dir / "target_encoder.scfw", t.fal.target_encoder_params());
    load_params_into(dir / "source_encoder.scfw", t.fal.source_encoder_params());
    load_params_into(dir / "approximator.scfw", t.fal.approximator_params());
    load_params_into(dir / "decoder.scfw", t.fal.decoder_params());
    load_params_into(dir / "reverse_generator.scfw", t.reverse.params());
    load_params_into(dir / "baseline_generator.scfw", t.baseline.params());
    load_params_into(dir / "discriminator.scfw", t.disc.params());
    load_params_into(dir / "sdc.scfw", t.sdc.params());
    if (phase == 1 || phase == 2) {
      load_adam_into(dir / "opt_gen.scfw", t.opt_gen);
      load_adam_into(dir / "opt_disc.scfw", t.opt_disc);
      if (!t.opt_sdc.params.empty()) load_adam_into(dir / "opt_sdc.scfw", t.opt_sdc);
    }
    t.phase = phase;
    t.epoch_in_phase = epoch;
    t.global_step = meta.at("global_step").get<long>();
    t.rng.set_state(meta.at("rng_state").get<std::string>());
    return t;
  }
};

}  // namespace scfa
