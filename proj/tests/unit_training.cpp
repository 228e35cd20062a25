#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "scfa/training.hpp"

using namespace scfa;
namespace fs = std::filesystem;

namespace {

const DatasetManifest& tiny_dataset() {
  static DatasetManifest m = [] {
    const fs::path dir = fs::temp_directory_path() / "scfa_train_fixture";
    fs::remove_all(dir);
    return generate_synthetic_dataset(8, 4, 32, 77, dir);
  }();
  return m;
}

TrainConfig tiny_config(const std::string& preset) {
  TrainConfig cfg;
  cfg.preset = preset;
  cfg.epochs_phase1 = 1;
  cfg.epochs_phase2 = 1;
  cfg.seed = 5;
  cfg.disc_width = 4;
  cfg.sdc.width = 4;
  cfg.generator.base_channels = 4;
  cfg.generator.image_size = 32;
  return cfg;
}

PatternClassifier<float> frozen_classifier() {
  // Weight quality is irrelevant for mechanics tests; a fixed random net
  // stands in for a pretrained one.
  return PatternClassifier<float>(4, 99);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("presets form the ablation chain") {
  auto flags = [](const std::string& name) {
    TrainConfig c;
    apply_preset(c, name);
    return c;
  };
  TrainConfig c = flags("baseline");
  CHECK(c.loss_weights.use_cycle);
  CHECK_FALSE(c.loss_weights.use_ctpc);
  CHECK_FALSE(c.loss_weights.use_sdc);
  CHECK_FALSE(c.loss_weights.use_pattern);
  CHECK_FALSE(c.generator.fal_enabled);

  c = flags("+ctpc");
  CHECK(c.loss_weights.use_cycle);
  CHECK(c.loss_weights.use_ctpc);
  CHECK_FALSE(c.loss_weights.use_sdc);

  c = flags("+ctpc+sdc");
  CHECK(c.loss_weights.use_sdc);
  CHECK_FALSE(c.generator.fal_enabled);
  CHECK_FALSE(c.loss_weights.use_pattern);

  c = flags("+ctpc+sdc+fal");
  CHECK(c.generator.fal_enabled);
  CHECK_FALSE(c.loss_weights.use_pattern);

  c = flags("full");
  CHECK(c.loss_weights.use_cycle);
  CHECK(c.loss_weights.use_ctpc);
  CHECK(c.loss_weights.use_sdc);
  CHECK(c.generator.fal_enabled);
  CHECK(c.loss_weights.use_pattern);

  // Each step only ever adds capability on top of the previous one.
  auto on_bits = [](const TrainConfig& cc) {
    return std::array<bool, 5>{cc.loss_weights.use_cycle, cc.loss_weights.use_ctpc,
                               cc.loss_weights.use_sdc, cc.generator.fal_enabled,
                               cc.loss_weights.use_pattern};
  };
  for (std::size_t i = 1; i < preset_names().size(); ++i) {
    auto prev = on_bits(flags(preset_names()[i - 1]));
    auto cur = on_bits(flags(preset_names()[i]));
    for (std::size_t b = 0; b < prev.size(); ++b)
      if (prev[b]) CHECK(cur[b]);
  }

  CHECK_THROWS_AS(flags("cyclegan"), Error);
}

TEST_CASE("train config json round-trips and rejects junk") {
  TrainConfig c = tiny_config("");
  c.lr = 3e-4;
  c.loss_weights.lambda_cyc = 7.0;
  c.loss_weights.gan_variant = GanVariant::bce;
  c.sdc.mode = SdcMode::pretrained;
  nlohmann::json j = train_config_to_json(c);
  TrainConfig back = train_config_from_json(j);
  CHECK(train_config_to_json(back) == j);
  CHECK(back.lr == 3e-4);
  CHECK(back.loss_weights.lambda_cyc == 7.0);
  CHECK(back.loss_weights.gan_variant == GanVariant::bce);
  CHECK(back.sdc.mode == SdcMode::pretrained);

  nlohmann::json bad = j;
  bad["learning_rate"] = 1.0;
  CHECK_THROWS_WITH_AS(train_config_from_json(bad), doctest::Contains("learning_rate"),
                       Error);
  bad = j;
  bad["loss_weights"]["lambda_q"] = 1.0;
  CHECK_THROWS_AS(train_config_from_json(bad), Error);
  bad = j;
  bad["sdc"]["modes"] = "x";
  CHECK_THROWS_AS(train_config_from_json(bad), Error);
  bad = j;
  bad["generator"]["depth"] = 9;
  CHECK_THROWS_AS(train_config_from_json(bad), Error);
  bad = j;
  bad["lr"] = "fast";
  CHECK_THROWS_WITH_AS(train_config_from_json(bad), doctest::Contains("lr"), Error);
  bad = j;
  bad["loss_weights"]["gan_variant"] = "hinge";
  CHECK_THROWS_AS(train_config_from_json(bad), Error);

  nlohmann::json preset_only{{"preset", "full"}};
  TrainConfig full = train_config_from_json(preset_only);
  CHECK(full.loss_weights.use_pattern);
  CHECK(full.generator.fal_enabled);
}

TEST_CASE("trainer construction guards") {
  const DatasetManifest& m = tiny_dataset();

  TrainConfig c = tiny_config("baseline");
  c.batch_size = 2;
  CHECK_THROWS_WITH_AS((Trainer<float>(c, m)), doctest::Contains("batch_size"), Error);

  c = tiny_config("full");
  CHECK_THROWS_WITH_AS((Trainer<float>(c, m)), doctest::Contains("classifier"), Error);

  c = tiny_config("");
  c.loss_weights.use_sdc = true;
  c.sdc.mode = SdcMode::pretrained;
  CHECK_THROWS_WITH_AS((Trainer<float>(c, m)), doctest::Contains("pretrained"), Error);

  c = tiny_config("baseline");
  c.generator.image_size = 64;
  CHECK_THROWS_WITH_AS((Trainer<float>(c, m)), doctest::Contains("64"), Error);
}

TEST_CASE("trainer phase gating") {
  const DatasetManifest& m = tiny_dataset();

  Trainer<float> t(tiny_config("full"), m, frozen_classifier());
  CHECK_THROWS_AS(t.phase2_epoch(), Error);
  CHECK_THROWS_AS(t.begin_phase2(), Error);  // fal path needs phase 1 first
  t.begin_phase1();
  CHECK_THROWS_AS(t.begin_phase1(), Error);
  CHECK_THROWS_AS(t.begin_phase2(), Error);  // phase 1 not finished
  t.phase1_epoch();
  t.begin_phase2();
  CHECK(t.phase == 2);

  Trainer<float> b(tiny_config("baseline"), m);
  CHECK_THROWS_AS(b.begin_phase1(), Error);  // no autoencoder stage without fal
  b.begin_phase2();
  CHECK(b.phase == 2);
}

TEST_CASE("phase boundaries leave the frozen stacks bit-identical") {
  const DatasetManifest& m = tiny_dataset();
  TrainConfig cfg = tiny_config("full");
  Trainer<float> t(cfg, m, frozen_classifier());

  const auto h_src_enc0 = hash_params(t.fal.source_encoder_params());
  const auto h_approx0 = hash_params(t.fal.approximator_params());
  const auto h_cls0 = hash_params(t.cls.params());

  t.begin_phase1();
  t.phase1_epoch();
  // The translation path must not move while the autoencoder trains.
  CHECK(hash_params(t.fal.source_encoder_params()) == h_src_enc0);
  CHECK(hash_params(t.fal.approximator_params()) == h_approx0);

  const auto h_dec1 = hash_params(t.fal.decoder_params());
  const auto h_trg_enc1 = hash_params(t.fal.target_encoder_params());
  CHECK(h_dec1 != hash_params(NamedParams<float>{}));

  t.begin_phase2();
  t.phase2_epoch();
  // The autoencoder halves stay frozen while the translator trains.
  CHECK(hash_params(t.fal.decoder_params()) == h_dec1);
  CHECK(hash_params(t.fal.target_encoder_params()) == h_trg_enc1);
  CHECK(hash_params(t.cls.params()) == h_cls0);
  // And the translator did actually move.
  CHECK(hash_params(t.fal.source_encoder_params()) != h_src_enc0);
  CHECK(hash_params(t.fal.approximator_params()) != h_approx0);
}

TEST_CASE("pretrained constrainer never moves; adversarial one does") {
  const DatasetManifest& m = tiny_dataset();

  TrainConfig cfg = tiny_config("+ctpc+sdc");
  cfg.sdc.mode = SdcMode::pretrained;
  StyleConstrainer<float> ref(4, 123);
  const auto h_ref = hash_params(ref.params());
  Trainer<float> t(cfg, m, frozen_classifier(), ref);
  t.begin_phase2();
  t.phase2_epoch();
  CHECK(hash_params(t.sdc.params()) == h_ref);

  cfg.sdc.mode = SdcMode::adversarial;
  Trainer<float> t2(cfg, m, frozen_classifier());
  const auto h_sdc0 = hash_params(t2.sdc.params());
  t2.begin_phase2();
  t2.phase2_epoch();
  CHECK(hash_params(t2.sdc.params()) != h_sdc0);
}

TEST_CASE("checkpoint save-load-save is byte-stable") {
  const DatasetManifest& m = tiny_dataset();
  const fs::path dir_a = fs::temp_directory_path() / "scfa_ckpt_a";
  const fs::path dir_b = fs::temp_directory_path() / "scfa_ckpt_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);

  TrainConfig cfg = tiny_config("full");
  Trainer<float> t(cfg, m, frozen_classifier());
  t.begin_phase1();
  t.phase1_epoch();
  t.begin_phase2();
  t.phase2_epoch();
  t.save_checkpoint(dir_a);

  Trainer<float> back = Trainer<float>::load_checkpoint(dir_a, m, frozen_classifier());
  back.save_checkpoint(dir_b);

  int files = 0;
  for (const auto& ent : fs::directory_iterator(dir_a)) {
    ++files;
    const fs::path other = dir_b / ent.path().filename();
    REQUIRE(fs::exists(other));
    CHECK_MESSAGE(slurp(ent.path()) == slurp(other), ent.path().filename().string());
  }
  CHECK(files >= 10);  // eight nets + two or three optimizers + meta
}

TEST_CASE("resume reproduces the continuing run step for step") {
  const DatasetManifest& m = tiny_dataset();
  const fs::path dir = fs::temp_directory_path() / "scfa_ckpt_resume";
  fs::remove_all(dir);

  TrainConfig cfg = tiny_config("full");
  cfg.epochs_phase2 = 2;

  Trainer<float> a(cfg, m, frozen_classifier());
  a.begin_phase1();
  a.phase1_epoch();
  a.begin_phase2();
  a.phase2_epoch();
  a.save_checkpoint(dir);

  std::ostringstream log_a;
  a.log = &log_a;
  a.phase2_epoch();

  Trainer<float> b = Trainer<float>::load_checkpoint(dir, m, frozen_classifier());
  CHECK(b.phase == 2);
  CHECK(b.epoch_in_phase == 1);
  CHECK(b.global_step == 16);
  std::ostringstream log_b;
  b.log = &log_b;
  b.phase2_epoch();

  CHECK(log_a.str() == log_b.str());
  CHECK(!log_a.str().empty());
}

TEST_CASE("non-finite losses abort with step context") {
  const DatasetManifest& m = tiny_dataset();
  Trainer<float> t(tiny_config("baseline"), m);
  t.begin_phase2();
  t.baseline.params()[0].second.value().m(0, 0) =
      std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(t.phase2_epoch(), doctest::Contains("non-finite"), Error);
}

TEST_CASE("jsonl log carries the per-step breakdown") {
  const DatasetManifest& m = tiny_dataset();
  Trainer<float> t(tiny_config("baseline"), m);
  std::ostringstream log;
  t.log = &log;
  t.begin_phase2();
  t.phase2_epoch();

  std::istringstream in(log.str());
  std::string line;
  long lines = 0, expect_step = 1;
  while (std::getline(in, line)) {
    ++lines;
    nlohmann::json j = nlohmann::json::parse(line);
    CHECK(j.at("phase").get<int>() == 2);
    CHECK(j.at("step").get<long>() == expect_step++);
    CHECK(j.contains("gan"));
    CHECK(j.contains("cyc"));
    CHECK(j.contains("composite"));
    CHECK(j.contains("disc"));
    CHECK(std::isfinite(j.at("composite").get<double>()));
  }
  CHECK(lines == 8);
}

TEST_CASE("run drives both phases to completion with checkpoints") {
  const DatasetManifest& m = tiny_dataset();
  const fs::path dir = fs::temp_directory_path() / "scfa_ckpt_run";
  fs::remove_all(dir);

  TrainConfig cfg = tiny_config("full");
  Trainer<float> t(cfg, m, frozen_classifier());
  t.run(dir);
  CHECK(t.phase == 3);
  CHECK(t.global_step == 16);
  CHECK(fs::exists(dir / "meta.json"));
  nlohmann::json meta = load_json(dir / "meta.json");
  CHECK(meta.at("phase").get<int>() == 3);

  // A finished checkpoint reloads and run() is a no-op on it.
  Trainer<float> done = Trainer<float>::load_checkpoint(dir, m, frozen_classifier());
  const auto h = hash_params(done.fal.source_side_params());
  done.run();
  CHECK(done.phase == 3);
  CHECK(hash_params(done.fal.source_side_params()) == h);
}
