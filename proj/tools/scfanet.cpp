#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "scfa/config.hpp"
#include "scfa/pipeline.hpp"
#include "scfa/report.hpp"

using namespace scfa;
namespace fs = std::filesystem;

// Exit codes: 0 all requested work done, 1 runtime failure, 2 bad config or
// schema, 3 missing checkpoint, 4 missing pretrained critic, 5 data/file IO.
enum ExitCode { kOk = 0, kRuntime = 1, kConfig = 2, kCheckpoint = 3, kPretrained = 4, kIo = 5 };

namespace {

int fail(int code, const std::string& msg) {
  std::cerr << "scfanet: " << msg << "\n";
  return code;
}

struct Loaded {
  ExperimentConfig cfg;
  DatasetManifest manifest;
};

/// Parses the experiment config and resolves its dataset, generating the
/// synthetic set first when the config asks for that. Returns an exit code,
/// 0 on success.
int load_experiment(const std::string& config_path, Loaded& out) {
  nlohmann::json j;
  try {
    j = load_json(config_path);
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  try {
    out.cfg = experiment_config_from_json(j);
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }
  try {
    if (!out.cfg.manifest.empty()) {
      out.manifest = load_manifest(out.cfg.manifest);
    } else {
      const GenerateSpec& g = *out.cfg.generate;
      out.manifest = generate_synthetic_dataset(g.train, g.test, g.size, g.seed,
                                                resolve_out_path(g.out));
    }
  } catch (const std::exception& e) {
    return fail(kIo, e.what());
  }
  return kOk;
}

int load_classifier_critic(const fs::path& dir, std::optional<PatternClassifier<float>>& out) {
  if (dir.empty()) return fail(kPretrained, "config has no pretrained-classifier path");
  try {
    out = load_pretrained_classifier<float>(dir);
  } catch (const std::exception& e) {
    return fail(kPretrained, std::string("cannot load classifier: ") + e.what());
  }
  return kOk;
}

int load_sdc_critic(const fs::path& dir, std::optional<StyleConstrainer<float>>& out) {
  if (dir.empty()) return fail(kPretrained, "config has no pretrained-constrainer path");
  try {
    out = load_pretrained_sdc<float>(dir);
  } catch (const std::exception& e) {
    return fail(kPretrained, std::string("cannot load constrainer: ") + e.what());
  }
  return kOk;
}

void print_aggregates(const std::string& tag, const MetricsReport& r) {
  std::cout << tag << " psnr " << r.mean_psnr << " ssim " << r.mean_ssim << " l_sdc " << r.l_sdc
            << " l1_od " << r.mean_l1_od << " acc " << r.acc << " auc "
            << (r.auc ? std::to_string(*r.auc) : std::string("n/a")) << " vif " << r.mean_vif
            << "\n";
}

// --- commands --------------------------------------------------------------

int cmd_gen_data(int train, int test, int size, std::uint64_t seed, const std::string& out) {
  try {
    const DatasetManifest m =
        generate_synthetic_dataset(train, test, size, seed, resolve_out_path(out));
    std::cout << (m.root / "manifest.jsonl").string() << "\n";
  } catch (const std::exception& e) {
    return fail(kIo, e.what());
  }
  return kOk;
}

int cmd_pretrain(bool classifier, const std::string& data, int epochs, std::uint64_t seed,
                 int width, double lr, const std::string& out, bool overwrite) {
  DatasetManifest m;
  try {
    m = load_manifest(data);
  } catch (const std::exception& e) {
    return fail(kIo, e.what());
  }
  const fs::path out_dir = resolve_out_path(out);
  if (fs::exists(out_dir / "meta.json") && !overwrite)
    return fail(kRuntime, out_dir.string() + " already holds an artifact (use --overwrite)");
  try {
    if (classifier) {
      auto r = pretrain_classifier<float>(m, epochs, seed, width, lr);
      save_pretrained_classifier(out_dir, r.classifier, r.holdout_accuracy);
      std::cout << "holdout_accuracy " << r.holdout_accuracy << "\n";
    } else {
      auto r = pretrain_sdc<float>(m, epochs, seed, width, lr);
      save_pretrained_sdc(out_dir, r.sdc, r.balanced_accuracy);
      std::cout << "balanced_accuracy " << r.balanced_accuracy << "\n";
    }
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  std::cout << out_dir.string() << "\n";
  return kOk;
}

int cmd_train(const std::string& config_path, const std::string& preset,
              const std::string& sdc_mode, std::int64_t seed, const std::string& out_flag,
              bool resume, bool overwrite) {
  Loaded x;
  if (int rc = load_experiment(config_path, x)) return rc;
  if (!preset.empty()) x.cfg.train.preset = preset;
  if (!sdc_mode.empty()) {
    if (sdc_mode != "adversarial" && sdc_mode != "pretrained")
      return fail(kConfig, "unknown --sdc-mode: " + sdc_mode);
    x.cfg.train.sdc.mode = sdc_mode == "pretrained" ? SdcMode::pretrained : SdcMode::adversarial;
  }
  if (seed >= 0) x.cfg.train.seed = std::uint64_t(seed);
  if (!out_flag.empty()) x.cfg.out_dir = out_flag;
  if (x.cfg.out_dir.empty()) return fail(kConfig, "no out_dir in the config and no --out flag");

  TrainConfig resolved = x.cfg.train;
  try {
    if (!resolved.preset.empty()) apply_preset(resolved, resolved.preset);
    resolved.validate();
  } catch (const std::exception& e) {
    return fail(kConfig, e.what());
  }

  std::optional<PatternClassifier<float>> cls;
  std::optional<StyleConstrainer<float>> pre_sdc;
  if (resolved.loss_weights.use_pattern || resolved.loss_weights.use_ctpc)
    if (int rc = load_classifier_critic(x.cfg.classifier_dir, cls)) return rc;
  if (resolved.loss_weights.use_sdc && resolved.sdc.mode == SdcMode::pretrained)
    if (int rc = load_sdc_critic(x.cfg.sdc_dir, pre_sdc)) return rc;

  const fs::path out = resolve_out_path(x.cfg.out_dir);
  const fs::path ckpt = out / "checkpoint";
  const bool have_ckpt = fs::exists(ckpt / "meta.json");
  if (resume && !have_ckpt) return fail(kCheckpoint, "nothing to resume in " + ckpt.string());
  if (!resume && have_ckpt && !overwrite)
    return fail(kRuntime, ckpt.string() + " exists (use --resume or --overwrite)");

  try {
    fs::create_directories(out);
    std::ofstream log(out / "train_log.jsonl",
                      resume ? std::ios::binary | std::ios::app : std::ios::binary);
    if (!log) return fail(kIo, "cannot open train log under " + out.string());
    if (resume) {
      Trainer<float> t = Trainer<float>::load_checkpoint(ckpt, x.manifest, std::move(cls),
                                                         std::move(pre_sdc));
      t.log = &log;
      t.run(ckpt);
    } else {
      save_json(out / "config.json", experiment_config_to_json(x.cfg));
      Trainer<float> t(x.cfg.train, x.manifest, std::move(cls), std::move(pre_sdc));
      save_json(out / "resolved_train_config.json", train_config_to_json(t.cfg));
      t.log = &log;
      t.run(ckpt);
    }
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  std::cout << ckpt.string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_flag,
             const std::string& out_flag) {
  Loaded x;
  if (int rc = load_experiment(config_path, x)) return rc;
  std::optional<PatternClassifier<float>> cls;
  std::optional<StyleConstrainer<float>> sdc;
  if (int rc = load_classifier_critic(x.cfg.classifier_dir, cls)) return rc;
  if (int rc = load_sdc_critic(x.cfg.sdc_dir, sdc)) return rc;
  const fs::path ckpt = ckpt_flag.empty() ? resolve_out_path(x.cfg.out_dir) / "checkpoint"
                                          : fs::path(ckpt_flag);
  if (!fs::exists(ckpt / "meta.json"))
    return fail(kCheckpoint, "no checkpoint at " + ckpt.string());
  const fs::path out =
      out_flag.empty() ? resolve_out_path(x.cfg.out_dir) : resolve_out_path(out_flag);
  try {
    const MetricsReport r =
        evaluate_suite(ckpt, x.manifest, *cls, *sdc, x.cfg.alpha, x.cfg.fod_threshold);
    write_report_files(out, r);
    print_aggregates("aggregates", r);
    std::cout << (out / "report.json").string() << "\n";
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  return kOk;
}

int cmd_ablate(const std::string& config_path, const std::string& chain, const std::string& grid,
               std::int64_t seed, bool overwrite) {
  if (!chain.empty() && !grid.empty()) return fail(kConfig, "--chain and --grid are exclusive");
  if (!chain.empty() && chain != "table1") return fail(kConfig, "unknown chain: " + chain);
  if (!grid.empty() && grid != "loss") return fail(kConfig, "unknown grid: " + grid);

  Loaded x;
  if (int rc = load_experiment(config_path, x)) return rc;
  if (seed >= 0) x.cfg.train.seed = std::uint64_t(seed);
  if (x.cfg.out_dir.empty()) return fail(kConfig, "no out_dir in the config");

  std::optional<PatternClassifier<float>> cls;
  std::optional<StyleConstrainer<float>> sdc;
  if (int rc = load_classifier_critic(x.cfg.classifier_dir, cls)) return rc;
  if (int rc = load_sdc_critic(x.cfg.sdc_dir, sdc)) return rc;

  const bool run_grid = !grid.empty();
  const fs::path out = resolve_out_path(x.cfg.out_dir) / (run_grid ? "loss_grid" : "ablation");
  const fs::path summary = out / (run_grid ? "grid_summary.json" : "chain_summary.json");
  if (fs::exists(summary) && !overwrite)
    return fail(kRuntime, summary.string() + " exists (use --overwrite)");

  try {
    if (run_grid) {
      const auto rows = run_loss_grid(x.cfg.train, x.manifest, *cls, *sdc, out, x.cfg.alpha,
                                      x.cfg.fod_threshold);
      for (const GridRow& row : rows) {
        if (row.report)
          print_aggregates(row.cell, *row.report);
        else
          std::cout << row.cell << " " << row.status << "\n";
      }
    } else {
      const auto rows = run_ablation_chain(x.cfg.train, x.manifest, *cls, *sdc, out, x.cfg.alpha,
                                           x.cfg.fod_threshold);
      for (const auto& [preset, report] : rows) print_aggregates(preset, report);
    }
    std::cout << summary.string() << "\n";
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  return kOk;
}

int cmd_report(const std::string& run, const std::string& out_flag) {
  const fs::path run_dir = resolve_out_path(run);
  if (!fs::exists(run_dir / "report.json"))
    return fail(kIo, "no report.json under " + run_dir.string());
  const fs::path out = out_flag.empty() ? run_dir / "plots" : resolve_out_path(out_flag);
  try {
    render_run_report(run_dir, out);
  } catch (const std::exception& e) {
    return fail(kRuntime, e.what());
  }
  std::cout << out.string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"weakly-paired H&E -> IHC stain translation toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  int g_train = 200, g_test = 50, g_size = 64;
  std::uint64_t g_seed = 1;
  std::string g_out;
  gen->add_option("--train", g_train, "training pairs");
  gen->add_option("--test", g_test, "test pairs");
  gen->add_option("--size", g_size, "image side in px");
  gen->add_option("--seed", g_seed, "dataset seed");
  gen->add_option("--out", g_out, "output directory")->required();

  std::string p_data, p_out;
  int p_epochs = 30, p_width = 16;
  std::uint64_t p_seed = 1;
  double p_lr = 1e-3;
  bool p_overwrite = false;
  auto add_pretrain_opts = [&](CLI::App* sub, int default_epochs) {
    sub->add_option("--data", p_data, "manifest path")->required();
    sub->add_option("--epochs", p_epochs, "training epochs")->default_val(default_epochs);
    sub->add_option("--seed", p_seed, "training seed");
    sub->add_option("--width", p_width, "base channel width");
    sub->add_option("--lr", p_lr, "learning rate");
    sub->add_option("--out", p_out, "artifact directory")->required();
    sub->add_flag("--overwrite", p_overwrite, "replace an existing artifact");
  };
  auto* pcls = app.add_subcommand("pretrain-classifier", "fit the grade classifier");
  add_pretrain_opts(pcls, 30);
  auto* psdc = app.add_subcommand("pretrain-sdc", "fit the reference style constrainer");
  add_pretrain_opts(psdc, 60);

  auto* train = app.add_subcommand("train", "run both training phases");
  std::string t_config, t_preset, t_sdc_mode, t_out;
  std::int64_t t_seed = -1;
  bool t_resume = false, t_overwrite = false;
  train->add_option("--config", t_config, "experiment config JSON")->required();
  train->add_option("--preset", t_preset, "ablation preset override");
  train->add_option("--sdc-mode", t_sdc_mode, "adversarial|pretrained override");
  train->add_option("--seed", t_seed, "seed override");
  train->add_option("--out", t_out, "output directory override");
  train->add_flag("--resume", t_resume, "continue from the saved checkpoint");
  train->add_flag("--overwrite", t_overwrite, "replace an existing checkpoint");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string e_config, e_ckpt, e_out;
  eval->add_option("--config", e_config, "experiment config JSON")->required();
  eval->add_option("--ckpt", e_ckpt, "checkpoint directory (default: out_dir/checkpoint)");
  eval->add_option("--out", e_out, "report directory (default: out_dir)");

  auto* ablate = app.add_subcommand("ablate", "run the preset chain or the loss grid");
  std::string a_config, a_chain, a_grid;
  std::int64_t a_seed = -1;
  bool a_overwrite = false;
  ablate->add_option("--config", a_config, "experiment config JSON")->required();
  ablate->add_option("--chain", a_chain, "preset chain name (table1)");
  ablate->add_option("--grid", a_grid, "grid name (loss)");
  ablate->add_option("--seed", a_seed, "seed override");
  ablate->add_flag("--overwrite", a_overwrite, "replace existing results");

  auto* report = app.add_subcommand("report", "render plots for a finished run");
  std::string r_run, r_out;
  report->add_option("--run", r_run, "run directory with report.json")->required();
  report->add_option("--out", r_out, "plot directory (default: run/plots)");

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) return cmd_gen_data(g_train, g_test, g_size, g_seed, g_out);
  if (pcls->parsed())
    return cmd_pretrain(true, p_data, p_epochs, p_seed, p_width, p_lr, p_out, p_overwrite);
  if (psdc->parsed())
    return cmd_pretrain(false, p_data, p_epochs, p_seed, p_width, p_lr, p_out, p_overwrite);
  if (train->parsed())
    return cmd_train(t_config, t_preset, t_sdc_mode, t_seed, t_out, t_resume, t_overwrite);
  if (eval->parsed()) return cmd_eval(e_config, e_ckpt, e_out);
  if (ablate->parsed()) return cmd_ablate(a_config, a_chain, a_grid, a_seed, a_overwrite);
  if (report->parsed()) return cmd_report(r_run, r_out);
  return kRuntime;
}
