#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mvvae/tensor.hpp"
#include "mvvae/train.hpp"

namespace mvvae::eval {

// ---- metrics ---------------------------------------------------------------
// Binary AUROC: probability that a random positive outranks a random
// negative, ties counted one half. Labels are 0/1; throws EvalError unless
// both classes are present.
double auroc_binary(std::span<const double> scores, std::span<const int> labels);

// Macro one-vs-rest AUROC over per-class probability scores [N, C].
double auroc_macro_ovr(const Tensor& probs, std::span<const int> labels,
                       int num_classes);

// Unweighted mean of per-class recalls; every class must appear in labels.
double balanced_accuracy(std::span<const int> preds, std::span<const int> labels,
                         int num_classes);

// Macro-averaged F1; a class with no predicted positives scores 0.
double f1_macro(std::span<const int> preds, std::span<const int> labels,
                int num_classes);

// ---- report ----------------------------------------------------------------

struct MetricCell {
  std::vector<double> per_seed;
  double mean = 0.0;
  double std_dev = 0.0;  // 0 when a single seed
};

struct ReportRow {
  std::string category;  // "single-view" or "multi-view"
  std::string method;    // "Supervised", "Ind-VAE", "Ind-VAE-FA", "MMVM-VAE"
  std::string view;      // view name or "All views"
  // task name -> metric name -> cell. Tasks: "binary", "severity";
  // metrics: "auroc", "f1", "balanced_accuracy".
  std::map<std::string, std::map<std::string, MetricCell>> cells;
};

struct MetricsReport {
  std::vector<ReportRow> rows;
  std::vector<std::uint64_t> seeds;
  std::string fold_scheme;  // "heldout" or "5-fold-cv"
  std::string config_hash;

  MetricCell& cell(const std::string& category, const std::string& method,
                   const std::string& view, const std::string& task,
                   const std::string& metric);
};

// Fills mean/std from per_seed entries (sample std; 0 for one seed).
void finalize_report(MetricsReport& report);

std::string report_to_json(const MetricsReport& report);
std::string report_to_table(const MetricsReport& report);

// Writes metrics.json and metrics.txt under dir.
void save_report(const MetricsReport& report, const std::string& dir);
MetricsReport load_report_json(const std::string& path);

// Stable 64-bit FNV-1a content hash, hex-encoded; used to stamp reports with
// the configuration that produced them.
std::string content_hash(const std::string& text);

// ---- protocol ----------------------------------------------------------------

// Table row naming for a configured run.
std::string method_name(train::Mode mode, std::size_t n_views,
                        train::Aggregation aggregation);

struct ProtocolResult {
  MetricsReport heldout;              // train on full development, score held-out
  std::optional<MetricsReport> cv;    // optional k-fold protocol on development
};

// For each configured seed: pretrain (unless supervised), train the
// classifier on the full development split and score the held-out studies;
// optionally also run the k-fold cross-validation protocol on the
// development split. Deterministic in (manifests, setup).
ProtocolResult run_protocol(const train::ClipStore& dev_store,
                            const train::ClipStore& heldout_store,
                            const train::TrainSetup& setup);

// Metric triple for one scored study set.
struct TaskMetrics {
  double auroc = 0.0;
  double f1 = 0.0;
  double balanced_acc = 0.0;
};
TaskMetrics score_metrics(const train::StudyScores& scores, train::Task task);

}  // namespace mvvae::eval
