#include "mvvae/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "mvvae/errors.hpp"

namespace mvvae::eval {

using nlohmann::json;

double auroc_binary(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw EvalError("auroc: scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (int y : labels) {
    if (y == 1) ++pos;
    else if (y == 0) ++neg;
    else throw EvalError("auroc: binary labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0)
    throw EvalError("auroc: undefined, needs at least one positive and one negative");

  // Rank-sum (Mann-Whitney U) with averaged ranks for ties.
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  double rank_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (labels[idx[k]] == 1) rank_pos += avg_rank;
    i = j + 1;
  }
  const double u = rank_pos - 0.5 * static_cast<double>(pos) * (static_cast<double>(pos) + 1.0);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

double auroc_macro_ovr(const Tensor& probs, std::span<const int> labels,
                       int num_classes) {
  if (probs.shape.size() != 2 || probs.shape[1] != num_classes ||
      static_cast<std::size_t>(probs.shape[0]) != labels.size())
    throw EvalError("auroc: probability matrix shape mismatch");
  double acc = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> scores(labels.size());
    std::vector<int> ovr(labels.size());
    for (std::size_t r = 0; r < labels.size(); ++r) {
      scores[r] = probs[r * static_cast<std::size_t>(num_classes) +
                        static_cast<std::size_t>(c)];
      ovr[r] = labels[r] == c ? 1 : 0;
    }
    acc += auroc_binary(scores, ovr);
  }
  return acc / num_classes;
}

double balanced_accuracy(std::span<const int> preds, std::span<const int> labels,
                         int num_classes) {
  if (preds.size() != labels.size())
    throw EvalError("balanced_accuracy: length mismatch");
  std::vector<std::size_t> hits(static_cast<std::size_t>(num_classes), 0);
  std::vector<std::size_t> total(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes)
      throw EvalError("balanced_accuracy: label out of range");
    ++total[static_cast<std::size_t>(y)];
    if (preds[i] == y) ++hits[static_cast<std::size_t>(y)];
  }
  double acc = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    if (total[static_cast<std::size_t>(c)] == 0)
      throw EvalError("balanced_accuracy: class " + std::to_string(c) +
                      " absent from labels");
    acc += static_cast<double>(hits[static_cast<std::size_t>(c)]) /
           static_cast<double>(total[static_cast<std::size_t>(c)]);
  }
  return acc / num_classes;
}

double f1_macro(std::span<const int> preds, std::span<const int> labels,
                int num_classes) {
  if (preds.size() != labels.size()) throw EvalError("f1: length mismatch");
  double acc = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool is_c = labels[i] == c;
      const bool pred_c = preds[i] == c;
      support += is_c ? 1 : 0;
      if (pred_c && is_c) ++tp;
      else if (pred_c) ++fp;
      else if (is_c) ++fn;
    }
    if (support == 0)
      throw EvalError("f1: class " + std::to_string(c) + " absent from labels");
    // No predicted positives (or no true positives at all): F1 = 0.
    const double denom = static_cast<double>(2 * tp + fp + fn);
    acc += denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  }
  return acc / num_classes;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

MetricCell& MetricsReport::cell(const std::string& category,
                                const std::string& method,
                                const std::string& view, const std::string& task,
                                const std::string& metric) {
  for (auto& row : rows)
    if (row.category == category && row.method == method && row.view == view)
      return row.cells[task][metric];
  ReportRow row;
  row.category = category;
  row.method = method;
  row.view = view;
  rows.push_back(std::move(row));
  return rows.back().cells[task][metric];
}

void finalize_report(MetricsReport& report) {
  for (auto& row : report.rows)
    for (auto& [task, metrics] : row.cells)
      for (auto& [name, cell] : metrics) {
        const std::size_t n = cell.per_seed.size();
        if (n == 0) continue;
        double mean = 0.0;
        for (double v : cell.per_seed) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : cell.per_seed) var += (v - mean) * (v - mean);
        cell.mean = mean;
        cell.std_dev = n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0;
      }
}

std::string report_to_json(const MetricsReport& report) {
  json j;
  j["seeds"] = report.seeds;
  j["fold_scheme"] = report.fold_scheme;
  j["config_hash"] = report.config_hash;
  j["rows"] = json::array();
  for (const auto& row : report.rows) {
    json r;
    r["category"] = row.category;
    r["method"] = row.method;
    r["view"] = row.view;
    for (const auto& [task, metrics] : row.cells)
      for (const auto& [name, cell] : metrics) {
        json c;
        c["mean"] = cell.mean;
        c["std"] = cell.std_dev;
        c["per_seed"] = cell.per_seed;
        r["tasks"][task][name] = c;
      }
    j["rows"].push_back(r);
  }
  return j.dump(2) + "\n";
}

MetricsReport load_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw EvalError("report: missing file: " + path);
  json j = json::parse(in, nullptr, true);
  MetricsReport report;
  report.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  report.fold_scheme = j.value("fold_scheme", "");
  report.config_hash = j.value("config_hash", "");
  for (const auto& r : j.at("rows")) {
    ReportRow row;
    row.category = r.at("category");
    row.method = r.at("method");
    row.view = r.at("view");
    if (r.contains("tasks"))
      for (const auto& [task, metrics] : r.at("tasks").items())
        for (const auto& [name, c] : metrics.items()) {
          MetricCell cell;
          cell.mean = c.at("mean");
          cell.std_dev = c.at("std");
          cell.per_seed = c.at("per_seed").get<std::vector<double>>();
          row.cells[task][name] = cell;
        }
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string report_to_table(const MetricsReport& report) {
  // One aligned row per (category, method, view); two task column groups,
  // three metrics each, mean +/- std.
  const char* tasks[2] = {"binary", "severity"};
  const char* metrics[3] = {"auroc", "f1", "balanced_accuracy"};
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-12s %-10s | %-29s | %-29s\n",
                "Category", "Method", "View", "Binary PH Detection",
                "PH Severity Prediction");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-12s %-12s %-10s | %-9s %-9s %-9s | %-9s %-9s %-9s\n",
                "", "", "", "AUROC", "F1", "BalAcc", "AUROC", "F1", "BalAcc");
  out += buf;
  out += std::string(100, '-') + "\n";
  for (const auto& row : report.rows) {
    std::snprintf(buf, sizeof buf, "%-12s %-12s %-10s |", row.category.c_str(),
                  row.method.c_str(), row.view.c_str());
    out += buf;
    for (int t = 0; t < 2; ++t) {
      const auto ti = row.cells.find(tasks[t]);
      for (int m = 0; m < 3; ++m) {
        bool have = false;
        double mean = 0.0, sd = 0.0;
        if (ti != row.cells.end()) {
          const auto mi = ti->second.find(metrics[m]);
          if (mi != ti->second.end()) {
            have = true;
            mean = mi->second.mean;
            sd = mi->second.std_dev;
          }
        }
        if (have) {
          std::snprintf(buf, sizeof buf, " %.2f+-%.2f", mean, sd);
          out += buf;
        } else {
          out += "    -     ";
        }
      }
      out += t == 0 ? " |" : "";
    }
    out += "\n";
  }
  return out;
}

void save_report(const MetricsReport& report, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(std::filesystem::path(dir) / "metrics.json");
    out << report_to_json(report);
  }
  {
    std::ofstream out(std::filesystem::path(dir) / "metrics.txt");
    out << report_to_table(report);
  }
}

std::string content_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// protocol
// ---------------------------------------------------------------------------

std::string method_name(train::Mode mode, std::size_t n_views,
                        train::Aggregation aggregation) {
  switch (mode) {
    case train::Mode::SupervisedBaseline:
      return "Supervised";
    case train::Mode::MMVM:
      return "MMVM-VAE";
    case train::Mode::Independent:
      return n_views > 1 && aggregation == train::Aggregation::Concat
                 ? "Ind-VAE-FA"
                 : "Ind-VAE";
  }
  return "?";
}

TaskMetrics score_metrics(const train::StudyScores& scores, train::Task task) {
  const int classes = train::task_classes(task);
  TaskMetrics out;
  if (classes == 2) {
    std::vector<double> pos(scores.labels.size());
    for (std::size_t i = 0; i < pos.size(); ++i)
      pos[i] = scores.probs[i * 2 + 1];
    out.auroc = auroc_binary(pos, scores.labels);
  } else {
    out.auroc = auroc_macro_ovr(scores.probs, scores.labels, classes);
  }
  out.f1 = f1_macro(scores.preds, scores.labels, classes);
  out.balanced_acc = balanced_accuracy(scores.preds, scores.labels, classes);
  return out;
}

namespace {

std::vector<int> labeled_entries_of(const data::DatasetManifest& manifest) {
  std::vector<int> out;
  for (int e = 0; e < static_cast<int>(manifest.entries.size()); ++e)
    if (manifest.entries[static_cast<std::size_t>(e)].label) out.push_back(e);
  return out;
}

data::DatasetManifest manifest_subset(const data::DatasetManifest& manifest,
                                      const std::vector<int>& indices) {
  data::DatasetManifest sub;
  sub.schema_version = manifest.schema_version;
  sub.frame_h = manifest.frame_h;
  sub.frame_w = manifest.frame_w;
  sub.base_dir = manifest.base_dir;
  for (int idx : indices)
    sub.entries.push_back(manifest.entries[static_cast<std::size_t>(idx)]);
  sub.recount();
  return sub;
}

train::ClassifierModel fit_once(const train::ClipStore& store,
                                const train::TrainSetup& setup,
                                std::uint64_t seed) {
  if (setup.experiment.mode == train::Mode::SupervisedBaseline)
    return train::supervised_baseline_train(store, setup, seed);
  auto pre = train::pretrain_vaes(store, setup, seed);
  std::map<data::View, nn::Encoder> encoders;
  for (auto& [view, model] : pre.models)
    encoders.emplace(view, std::move(model.encoder));
  return train::train_classifier(std::move(encoders), store, setup, seed);
}

}  // namespace

ProtocolResult run_protocol(const train::ClipStore& dev_store,
                            const train::ClipStore& heldout_store,
                            const train::TrainSetup& setup) {
  const auto& exp = setup.experiment;
  exp.validate();
  const std::string category = exp.views.size() > 1 ? "multi-view" : "single-view";
  const std::string method = method_name(exp.mode, exp.views.size(), exp.aggregation);
  std::string view_label;
  if (exp.views.size() == static_cast<std::size_t>(data::kNumViews)) {
    view_label = "All views";
  } else {
    for (auto v : exp.views)
      view_label += (view_label.empty() ? "" : "+") + std::string(data::view_name(v));
  }
  const std::string task = train::task_name(exp.task);

  ProtocolResult result;
  result.heldout.seeds = exp.seeds;
  result.heldout.fold_scheme = "heldout";
  result.heldout.config_hash = content_hash(setup.config_text);

  const auto heldout_entries = labeled_entries_of(heldout_store.manifest());
  for (std::uint64_t seed : exp.seeds) {
    auto model = fit_once(dev_store, setup, seed);
    auto scores = train::score_studies(model, heldout_store, heldout_entries);
    const TaskMetrics m = score_metrics(scores, exp.task);
    result.heldout.cell(category, method, view_label, task, "auroc").per_seed.push_back(m.auroc);
    result.heldout.cell(category, method, view_label, task, "f1").per_seed.push_back(m.f1);
    result.heldout.cell(category, method, view_label, task, "balanced_accuracy")
        .per_seed.push_back(m.balanced_acc);
  }
  finalize_report(result.heldout);

  if (exp.cv_folds >= 2) {
    MetricsReport cv;
    cv.seeds = exp.seeds;
    cv.fold_scheme = std::to_string(exp.cv_folds) + "-fold-cv";
    cv.config_hash = result.heldout.config_hash;
    for (std::uint64_t seed : exp.seeds) {
      const auto folds = data::split_folds(dev_store.manifest(), exp.cv_folds, seed);
      for (const auto& fold : folds) {
        const auto train_manifest =
            manifest_subset(dev_store.manifest(), fold.train_indices);
        const auto val_manifest =
            manifest_subset(dev_store.manifest(), fold.val_indices);
        train::ClipStore train_store(train_manifest, dev_store.target_hw());
        train::ClipStore val_store(val_manifest, dev_store.target_hw());
        auto model = fit_once(train_store, setup, seed);
        auto scores = train::score_studies(model, val_store,
                                           labeled_entries_of(val_manifest));
        const TaskMetrics m = score_metrics(scores, exp.task);
        cv.cell(category, method, view_label, task, "auroc").per_seed.push_back(m.auroc);
        cv.cell(category, method, view_label, task, "f1").per_seed.push_back(m.f1);
        cv.cell(category, method, view_label, task, "balanced_accuracy")
            .per_seed.push_back(m.balanced_acc);
      }
    }
    finalize_report(cv);
    result.cv = std::move(cv);
  }
  return result;
}

}  // namespace mvvae::eval
