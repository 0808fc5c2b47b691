// mvvae: multi-view VAE pipeline driver.
//
// Subcommands: synth, pretrain, train, eval, report. Every run is fully
// determined by (config file, seed); `--print-effective-config` dumps the
// resolved settings of any invocation. Exit codes: 1 config, 2 data,
// 3 training, 4 evaluation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mvvae/config.hpp"
#include "mvvae/data.hpp"
#include "mvvae/errors.hpp"
#include "mvvae/evaluation.hpp"
#include "mvvae/train.hpp"

namespace fs = std::filesystem;
using namespace mvvae;

namespace {

struct CommonOpts {
  std::string config_path;
  bool print_effective = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> views;
  std::optional<std::string> task;
  std::optional<std::string> mode;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_overrides = true) {
  cmd->add_option("--config", opts.config_path, "run configuration file");
  cmd->add_flag("--print-effective-config", opts.print_effective,
                "print all resolved settings and exit");
  if (with_overrides) {
    cmd->add_option("--seed", opts.seed, "override experiment.seeds with one seed");
    cmd->add_option("--views", opts.views, "override experiment.views (comma list)");
    cmd->add_option("--task", opts.task, "override experiment.task");
    cmd->add_option("--mode", opts.mode, "override experiment.mode");
  }
}

RunConfig load_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty()
                      ? parse_run_config_text("")
                      : parse_run_config_file(opts.config_path);
  if (opts.seed) cfg.experiment.seeds = {*opts.seed};
  if (opts.views) {
    cfg.experiment.views.clear();
    std::string name;
    for (char ch : *opts.views + ",") {
      if (ch == ',') {
        if (!name.empty()) cfg.experiment.views.push_back(data::view_from_name(name));
        name.clear();
      } else {
        name += ch;
      }
    }
  }
  if (opts.task) cfg.experiment.task = train::task_from_name(*opts.task);
  if (opts.mode) cfg.experiment.mode = train::mode_from_name(*opts.mode);
  cfg.validate();
  return cfg;
}

// Relative output paths resolve under MVVAE_OUT_ROOT when it is set.
std::string resolve_out(const std::string& out) {
  if (out.empty()) throw ConfigError("missing output directory");
  fs::path p(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("MVVAE_OUT_ROOT"))
      return (fs::path(root) / p).string();
  }
  return p.string();
}

bool maybe_print_config(const CommonOpts& opts, const RunConfig& cfg) {
  if (!opts.print_effective) return false;
  std::cout << effective_config_text(cfg);
  return true;
}

void write_config_copy(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config.copy");
  out << effective_config_text(cfg);
}

std::string vae_ckpt_path(const std::string& run_dir, std::uint64_t seed,
                          data::View view) {
  return (fs::path(run_dir) / ("seed_" + std::to_string(seed)) / "checkpoints" /
          ("vae_" + std::string(data::view_name(view)) + ".ckpt"))
      .string();
}

std::string clf_ckpt_path(const std::string& run_dir, std::uint64_t seed) {
  return (fs::path(run_dir) / ("seed_" + std::to_string(seed)) / "checkpoints" /
          "classifier.ckpt")
      .string();
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOpts& opts, std::uint64_t seed, std::string out) {
  RunConfig cfg = load_config(opts);
  if (maybe_print_config(opts, cfg)) return 0;
  if (out.empty()) out = cfg.out_dir.empty() ? "synth-out" : cfg.out_dir;
  out = resolve_out(out);
  const auto ds = data::generate_synthetic(cfg.generator, seed, out);
  write_config_copy(cfg, out);
  std::printf("synth: %zu studies (%d/%d/%d labeled by class), dev %zu, held-out %zu -> %s\n",
              ds.all.entries.size(), ds.all.class_counts[0], ds.all.class_counts[1],
              ds.all.class_counts[2], ds.dev.entries.size(),
              ds.heldout.entries.size(), out.c_str());
  return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data_dir,
                 std::string out) {
  RunConfig cfg = load_config(opts);
  if (maybe_print_config(opts, cfg)) return 0;
  if (cfg.experiment.mode == train::Mode::SupervisedBaseline)
    throw TrainError("pretrain: supervised-baseline has no pretraining stage");
  out = resolve_out(out);
  const auto manifest =
      data::load_manifest((fs::path(data_dir) / "manifest_dev.txt").string());
  const train::ClipStore store(manifest, cfg.encoder.input_hw);
  const train::TrainSetup setup = cfg.setup();

  write_config_copy(cfg, out);
  for (std::uint64_t seed : cfg.experiment.seeds) {
    auto result = train::pretrain_vaes(store, setup, seed);
    for (auto& [view, model] : result.models)
      train::save_vae_checkpoint(vae_ckpt_path(out, seed, view), model,
                                 setup.config_text, seed);
    const std::string log_dir =
        (fs::path(out) / ("seed_" + std::to_string(seed)) / "logs").string();
    for (const auto& log : result.logs)
      train::save_training_log(log, (fs::path(log_dir) / ("pretrain_" + log.name + ".jsonl")).string());
    std::printf("pretrain: seed %llu done (%zu views, %d studies skipped)\n",
                static_cast<unsigned long long>(seed), result.models.size(),
                result.skipped_studies);
  }
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir,
              const std::string& pretrained, std::string out) {
  RunConfig cfg = load_config(opts);
  if (maybe_print_config(opts, cfg)) return 0;
  out = resolve_out(out);
  const auto manifest =
      data::load_manifest((fs::path(data_dir) / "manifest_dev.txt").string());
  const train::ClipStore store(manifest, cfg.encoder.input_hw);
  const train::TrainSetup setup = cfg.setup();

  write_config_copy(cfg, out);
  for (std::uint64_t seed : cfg.experiment.seeds) {
    train::ClassifierModel model;
    if (cfg.experiment.mode == train::Mode::SupervisedBaseline) {
      model = train::supervised_baseline_train(store, setup, seed);
    } else {
      if (pretrained.empty())
        throw TrainError("train: --pretrained is required for mode " +
                         std::string(train::mode_name(cfg.experiment.mode)));
      std::map<data::View, nn::Encoder> encoders;
      for (auto view : cfg.experiment.views) {
        const std::string path = vae_ckpt_path(pretrained, seed, view);
        if (!fs::exists(path))
          throw TrainError("train: missing pretraining checkpoint: " + path);
        auto vae = train::load_vae_checkpoint(path);
        encoders.emplace(view, std::move(vae.encoder));
      }
      model = train::train_classifier(std::move(encoders), store, setup, seed);
    }
    train::save_classifier_checkpoint(clf_ckpt_path(out, seed), model,
                                      setup.config_text, seed);
    train::save_training_log(
        model.log, (fs::path(out) / ("seed_" + std::to_string(seed)) / "logs" /
                    "classifier.jsonl")
                       .string());
    std::printf("train: seed %llu done (%zu epochs logged)\n",
                static_cast<unsigned long long>(seed), model.log.records.size());
  }
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& data_dir,
             const std::string& run_dir, std::string out, bool protocol) {
  RunConfig cfg = load_config(opts);
  if (maybe_print_config(opts, cfg)) return 0;
  const auto heldout = data::load_manifest(
      (fs::path(data_dir) / "manifest_heldout.txt").string());
  const train::ClipStore heldout_store(heldout, cfg.encoder.input_hw);

  if (out.empty()) out = (fs::path(run_dir.empty() ? "." : run_dir) / "metrics").string();
  out = resolve_out(out);

  if (protocol) {
    // Full protocol: train from scratch per seed (and per fold when
    // configured), then score.
    const auto dev = data::load_manifest(
        (fs::path(data_dir) / "manifest_dev.txt").string());
    const train::ClipStore dev_store(dev, cfg.encoder.input_hw);
    const auto result = eval::run_protocol(dev_store, heldout_store, cfg.setup());
    eval::save_report(result.heldout, out);
    if (result.cv) {
      std::ofstream cvj(fs::path(out) / "metrics_cv.json");
      cvj << eval::report_to_json(*result.cv);
      std::ofstream cvt(fs::path(out) / "metrics_cv.txt");
      cvt << eval::report_to_table(*result.cv);
    }
    std::printf("eval: protocol metrics written to %s\n", out.c_str());
    return 0;
  }

  if (run_dir.empty()) throw EvalError("eval: --run directory is required");

  eval::MetricsReport report;
  report.seeds = cfg.experiment.seeds;
  report.fold_scheme = "heldout";
  report.config_hash = eval::content_hash(effective_config_text(cfg));

  std::vector<int> entries;
  for (int e = 0; e < static_cast<int>(heldout.entries.size()); ++e)
    if (heldout.entries[static_cast<std::size_t>(e)].label) entries.push_back(e);

  const std::string category =
      cfg.experiment.views.size() > 1 ? "multi-view" : "single-view";
  const std::string method = eval::method_name(
      cfg.experiment.mode, cfg.experiment.views.size(), cfg.experiment.aggregation);
  std::string view_label = "All views";
  if (cfg.experiment.views.size() < static_cast<std::size_t>(data::kNumViews)) {
    view_label.clear();
    for (auto v : cfg.experiment.views)
      view_label += (view_label.empty() ? "" : "+") + std::string(data::view_name(v));
  }
  const std::string task = train::task_name(cfg.experiment.task);

  for (std::uint64_t seed : cfg.experiment.seeds) {
    const std::string path = clf_ckpt_path(run_dir, seed);
    if (!fs::exists(path))
      throw EvalError("eval: missing classifier checkpoint: " + path);
    auto model = train::load_classifier_checkpoint(path);
    auto scores = train::score_studies(model, heldout_store, entries);
    const auto m = eval::score_metrics(scores, model.experiment.task);
    report.cell(category, method, view_label, task, "auroc").per_seed.push_back(m.auroc);
    report.cell(category, method, view_label, task, "f1").per_seed.push_back(m.f1);
    report.cell(category, method, view_label, task, "balanced_accuracy")
        .per_seed.push_back(m.balanced_acc);
  }
  eval::finalize_report(report);
  eval::save_report(report, out);
  std::printf("eval: metrics written to %s\n", out.c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, std::string out) {
  out = resolve_out(out);
  eval::MetricsReport merged;
  std::set<std::uint64_t> seeds;
  for (const auto& dir : run_dirs) {
    fs::path json_path = fs::path(dir) / "metrics" / "metrics.json";
    if (!fs::exists(json_path)) json_path = fs::path(dir) / "metrics.json";
    const auto part = eval::load_report_json(json_path.string());
    for (const auto& row : part.rows) {
      for (const auto& [task, metrics] : row.cells)
        for (const auto& [name, cell] : metrics) {
          auto& dst = merged.cell(row.category, row.method, row.view, task, name);
          dst.per_seed.insert(dst.per_seed.end(), cell.per_seed.begin(),
                              cell.per_seed.end());
        }
    }
    for (auto s : part.seeds) seeds.insert(s);
    if (merged.fold_scheme.empty()) merged.fold_scheme = part.fold_scheme;
    merged.config_hash = part.config_hash;
  }
  merged.seeds.assign(seeds.begin(), seeds.end());
  eval::finalize_report(merged);
  eval::save_report(merged, out);
  std::printf("report: merged %zu run(s) into %s\n", run_dirs.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-view VAE pipeline"};
  app.require_subcommand(1);

  CommonOpts synth_opts, pre_opts, train_opts, eval_opts;
  std::uint64_t synth_seed = 1;
  std::string synth_out, pre_data, pre_out, train_data, train_pre, train_out;
  std::string eval_data, eval_run, eval_out;
  bool eval_protocol = false;
  std::vector<std::string> report_dirs;
  std::string report_out;

  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark");
  add_common(synth, synth_opts, false);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output dataset directory");

  auto* pretrain = app.add_subcommand("pretrain", "stage A: VAE pretraining");
  add_common(pretrain, pre_opts);
  pretrain->add_option("--data", pre_data, "dataset directory")->required();
  pretrain->add_option("--out", pre_out, "run directory")->required();

  auto* train_cmd = app.add_subcommand("train", "stage B: classifier training");
  add_common(train_cmd, train_opts);
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--pretrained", train_pre, "pretraining run directory");
  train_cmd->add_option("--out", train_out, "run directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score held-out studies");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
  eval_cmd->add_option("--run", eval_run, "classifier run directory");
  eval_cmd->add_option("--out", eval_out, "metrics output directory");
  eval_cmd->add_flag("--protocol", eval_protocol,
                     "train from scratch per seed (and per fold) before scoring");

  auto* report = app.add_subcommand("report", "merge run metrics into one table");
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "merged output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (synth->parsed()) return cmd_synth(synth_opts, synth_seed, synth_out);
    if (pretrain->parsed()) return cmd_pretrain(pre_opts, pre_data, pre_out);
    if (train_cmd->parsed())
      return cmd_train(train_opts, train_data, train_pre, train_out);
    if (eval_cmd->parsed())
      return cmd_eval(eval_opts, eval_data, eval_run, eval_out, eval_protocol);
    if (report->parsed()) return cmd_report(report_dirs, report_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: code=1 stage=config message=\"%s\"\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "error: code=2 stage=data message=\"%s\"\n", e.what());
    return 2;
  } catch (const TrainError& e) {
    std::fprintf(stderr, "error: code=3 stage=training message=\"%s\"\n", e.what());
    return 3;
  } catch (const EvalError& e) {
    std::fprintf(stderr, "error: code=4 stage=evaluation message=\"%s\"\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: code=1 stage=config message=\"%s\"\n", e.what());
    return 1;
  }
  return 0;
}
