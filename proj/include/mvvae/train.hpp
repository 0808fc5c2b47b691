#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvvae/data.hpp"
#include "mvvae/nn.hpp"
#include "mvvae/preprocess.hpp"
#include "mvvae/tensor.hpp"

namespace mvvae::train {

enum class Mode { Independent, MMVM, SupervisedBaseline };
enum class Task { Binary, Severity };
enum class Aggregation { Concat, SharedMean };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& name);  // throws ConfigError
const char* task_name(Task t);
Task task_from_name(const std::string& name);
const char* aggregation_name(Aggregation a);
Aggregation aggregation_from_name(const std::string& name);

int task_classes(Task t);
// Severity labels map to (0,1,1) for the binary task.
int task_label(Task t, data::PhClass c);

struct ExperimentConfig {
  Mode mode = Mode::MMVM;
  std::vector<data::View> views = data::all_views();
  Task task = Task::Binary;
  Aggregation aggregation = Aggregation::SharedMean;
  int batch_size = 30;        // classifier stage, class-balanced
  int pretrain_batch = 16;    // (study, frame) items per VAE step
  double pretrain_lr = 1e-4;
  double classifier_lr = 1e-4;
  int pretrain_epochs = 10;
  int classifier_epochs = 10;
  int frames_per_item = 0;    // frames sampled per study per pretrain epoch; 0 = all
  int classifier_frames = 0;  // frames per clip in the classifier stage; 0 = all
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  double val_fraction = 0.15;  // patient fraction held for early stopping
  int patience = 10;           // epochs without improvement; 0 disables
  int cv_folds = 0;            // 0 = held-out protocol only
  bool freeze_encoders = false;

  void validate() const;  // throws ConfigError
};

// Everything the two training stages need besides the data.
struct TrainSetup {
  ExperimentConfig experiment;
  nn::EncoderConfig encoder;
  std::array<int, 2> classifier_hidden = {128, 64};
  aug::AugmentParams augment;
  std::string config_text;  // effective run config, embedded in checkpoints
};

struct EpochRecord {
  int epoch = 0;
  double objective = 0.0;                 // mean per-item objective (nats) or CE
  std::optional<double> val_metric;       // validation ELBO / balanced accuracy
  double wall_s = 0.0;
  std::uint64_t seed = 0;
};

struct TrainingLog {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> records;
};

// One line-delimited JSON record per epoch.
void save_training_log(const TrainingLog& log, const std::string& path);

// ---------------------------------------------------------------------------
// In-memory preprocessed dataset: clips resized to the encoder input and
// histogram-equalized once, stored as float32.
// ---------------------------------------------------------------------------

class ClipStore {
 public:
  ClipStore(const data::DatasetManifest& manifest, int target_hw);

  const data::DatasetManifest& manifest() const { return manifest_; }
  int target_hw() const { return hw_; }

  bool has(int entry, data::View view) const;
  int frames(int entry, data::View view) const;
  // One preprocessed frame as [H, W].
  Tensor frame(int entry, data::View view, int t) const;
  // The whole preprocessed clip as [T, H, W].
  Tensor clip(int entry, data::View view) const;

 private:
  data::DatasetManifest manifest_;
  int hw_;
  std::map<std::pair<int, int>, std::vector<float>> cache_;
  std::map<std::pair<int, int>, int> nframes_;
};

// ---------------------------------------------------------------------------
// Models and checkpoints
// ---------------------------------------------------------------------------

struct VaeModel {
  data::View view = data::View::PLAX;
  nn::Encoder encoder;
  nn::Decoder decoder;
};

struct PretrainResult {
  std::map<data::View, VaeModel> models;
  std::vector<TrainingLog> logs;  // one per independent view, or one joint log
  int skipped_studies = 0;
};

struct ClassifierModel {
  nn::Classifier classifier;
  std::map<data::View, nn::Encoder> encoders;
  ExperimentConfig experiment;
  TrainingLog log;
};

void save_vae_checkpoint(const std::string& path, VaeModel& model,
                         const std::string& config_text, std::uint64_t seed);
VaeModel load_vae_checkpoint(const std::string& path);

void save_classifier_checkpoint(const std::string& path, ClassifierModel& model,
                                const std::string& config_text,
                                std::uint64_t seed);
ClassifierModel load_classifier_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Stage A: VAE pretraining (labeled + unlabeled studies)
// ---------------------------------------------------------------------------

PretrainResult pretrain_vaes(const ClipStore& store, const TrainSetup& setup,
                             std::uint64_t seed);

// ---------------------------------------------------------------------------
// Representations
// ---------------------------------------------------------------------------

// Per view: every frame encoded in eval mode, posterior means averaged over
// frames. Single view returns that clip latent; Concat concatenates in the
// configured view order; SharedMean averages.
std::vector<double> study_representation(
    std::map<data::View, nn::Encoder>& encoders, const ClipStore& store,
    int entry, const std::vector<data::View>& views, Aggregation aggregation);

// Mean over studies of the mean pairwise distance between per-view clip
// latents; the cross-view alignment statistic.
double cross_view_alignment(std::map<data::View, nn::Encoder>& encoders,
                            const ClipStore& store,
                            const std::vector<int>& entries,
                            const std::vector<data::View>& views);

// ---------------------------------------------------------------------------
// Stage B: classifier training with encoder fine-tuning
// ---------------------------------------------------------------------------

ClassifierModel train_classifier(std::map<data::View, nn::Encoder> encoders,
                                 const ClipStore& store, const TrainSetup& setup,
                                 std::uint64_t seed);

// Same backbone and classifier trained end-to-end from random init.
ClassifierModel supervised_baseline_train(const ClipStore& store,
                                          const TrainSetup& setup,
                                          std::uint64_t seed);

// Eval-mode study scores for the model's task.
struct StudyScores {
  std::vector<int> entries;
  Tensor probs;             // [N, C]
  std::vector<int> preds;   // argmax
  std::vector<int> labels;  // task labels
};
StudyScores score_studies(ClassifierModel& model, const ClipStore& store,
                          const std::vector<int>& entries);

}  // namespace mvvae::train
