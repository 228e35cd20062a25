#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "scfa/training.hpp"

// The one JSON document a whole experiment hangs off: where the data lives
// (or how to generate it), the training configuration, metric parameters,
// pretrained-critic locations, and the output directory. Unknown keys are
// rejected everywhere so typos fail loudly instead of silently reverting to
// defaults.

namespace scfa {

struct GenerateSpec {
  int train = 200;
  int test = 50;
  int size = 64;
  std::uint64_t seed = 1;
  std::filesystem::path out;
};

struct ExperimentConfig {
  std::filesystem::path manifest;  // existing dataset; empty => generate below
  std::optional<GenerateSpec> generate;
  TrainConfig train;
  double alpha = 1.0;
  double fod_threshold = 0.15;
  std::filesystem::path classifier_dir;  // pretrained-critic artifacts
  std::filesystem::path sdc_dir;
  std::filesystem::path out_dir;
};

inline ExperimentConfig experiment_config_from_json(nlohmann::json j) {
  ExperimentConfig c;
  if (auto it = j.find("data"); it != j.end()) {
    nlohmann::json data = *it;
    j.erase(it);
    std::string manifest;
    detail::take(data, "manifest", manifest);
    c.manifest = manifest;
    if (auto g = data.find("generate"); g != data.end()) {
      nlohmann::json gen = *g;
      data.erase(g);
      GenerateSpec spec;
      detail::take(gen, "train", spec.train);
      detail::take(gen, "test", spec.test);
      detail::take(gen, "size", spec.size);
      detail::take(gen, "seed", spec.seed);
      std::string out;
      detail::take(gen, "out", out);
      spec.out = out;
      detail::reject_unknown(gen, "data.generate");
      c.generate = spec;
    }
    detail::reject_unknown(data, "data");
  }
  if (auto it = j.find("train"); it != j.end()) {
    c.train = train_config_from_json(*it);
    j.erase(it);
  }
  if (auto it = j.find("metric"); it != j.end()) {
    nlohmann::json metric = *it;
    j.erase(it);
    detail::take(metric, "alpha", c.alpha);
    detail::take(metric, "fod_threshold", c.fod_threshold);
    detail::reject_unknown(metric, "metric");
  }
  std::string s;
  detail::take(j, "classifier", s);
  c.classifier_dir = s;
  s.clear();
  detail::take(j, "sdc", s);
  c.sdc_dir = s;
  s.clear();
  detail::take(j, "out_dir", s);
  c.out_dir = s;
  detail::reject_unknown(j, "experiment config");
  if (c.manifest.empty() && !c.generate)
    throw Error("config: data section needs either a manifest path or a generate block");
  if (c.alpha < 0) throw Error("config: metric.alpha must be >= 0");
  return c;
}

inline nlohmann::json experiment_config_to_json(const ExperimentConfig& c) {
  nlohmann::json data;
  if (!c.manifest.empty()) data["manifest"] = c.manifest.string();
  if (c.generate)
    data["generate"] = {{"train", c.generate->train},
                        {"test", c.generate->test},
                        {"size", c.generate->size},
                        {"seed", c.generate->seed},
                        {"out", c.generate->out.string()}};
  return {{"data", data},
          {"train", train_config_to_json(c.train)},
          {"metric", {{"alpha", c.alpha}, {"fod_threshold", c.fod_threshold}}},
          {"classifier", c.classifier_dir.string()},
          {"sdc", c.sdc_dir.string()},
          {"out_dir", c.out_dir.string()}};
}

/// Output paths resolve under $SCFANET_OUT_ROOT when it is set and the path
/// is relative; other paths are used as written.
inline std::filesystem::path resolve_out_path(const std::filesystem::path& p) {
  const char* root = std::getenv("SCFANET_OUT_ROOT");
  if (root && *root && p.is_relative()) return std::filesystem::path(root) / p;
  return p;
}

}  // namespace scfa
