#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mvvae/tensor.hpp"

namespace mvvae::data {

// The five standard heart views; also the multi-view learning modalities.
enum class View { PLAX = 0, A4C = 1, PSAX_P = 2, PSAX_S = 3, PSAX_A = 4 };
inline constexpr int kNumViews = 5;

const char* view_name(View v);
View view_from_name(const std::string& name);  // throws DataError
std::vector<View> all_views();

enum class PhClass { None = 0, Mild = 1, ModerateSevere = 2 };
inline constexpr int kNumClasses = 3;
const char* class_name(PhClass c);
PhClass class_from_name(const std::string& name);  // throws DataError

// A grayscale frame sequence for one view. frames is [T, H, W] in [0, 1].
struct ViewClip {
  View view = View::PLAX;
  Tensor frames;
  double fps = 25.0;

  int t() const { return frames.shape.empty() ? 0 : frames.shape[0]; }
  void validate() const;  // throws DataError on range/shape violations
};

// One manifest row: a subject's study with its per-view clip files.
struct StudyEntry {
  std::string study_id;
  std::string patient_id;
  std::optional<PhClass> label;
  std::optional<double> factor;  // synthetic ground-truth flattening factor
  std::map<View, std::string> clip_paths;  // relative to the manifest dir
};

struct DatasetManifest {
  int schema_version = 1;
  int frame_h = 128, frame_w = 128;
  std::string base_dir;  // set when loaded or saved
  std::vector<StudyEntry> entries;
  std::array<int, kNumClasses> class_counts{};  // labeled entries per class

  void recount();  // recompute class_counts from entries
};

inline constexpr int kManifestVersion = 1;

// ---- clip files -------------------------------------------------------------
// Layout: eight little-endian u32 values (magic 'MVCL', version, T, H, W,
// fps numerator, fps denominator, reserved 0) followed by T*H*W float32
// pixels in [0, 1], row-major [t][y][x].
inline constexpr std::uint32_t kClipMagic = 0x4C43564D;
inline constexpr std::uint32_t kClipVersion = 1;

void save_clip(const std::string& path, const ViewClip& clip);
ViewClip load_clip(const std::string& path, View view);  // throws DataError

struct ClipHeader {
  int t = 0, h = 0, w = 0;
  double fps = 0.0;
};
ClipHeader read_clip_header(const std::string& path);  // throws DataError

// ---- manifest files ----------------------------------------------------------
void save_manifest(const DatasetManifest& manifest, const std::string& path);
// Loads and verifies: schema version, per-entry clip files exist and their
// headers match the declared frame size. Errors name the offending path.
DatasetManifest load_manifest(const std::string& path);

// Resolves the relative clip path and loads the clip.
ViewClip load_study_clip(const DatasetManifest& manifest,
                         const StudyEntry& entry, View view);

// ---- synthetic benchmark ------------------------------------------------------

struct GeneratorConfig {
  int patients = 200;
  std::array<double, 3> class_proportions = {0.65, 0.17, 0.18};
  int frames_per_clip = 8;
  int frame_hw = 128;
  double unlabeled_fraction = 0.0;  // applied to the development split only
  double heldout_fraction = 0.25;
  double speckle = 0.15;

  void validate() const;  // throws ConfigError
};

struct SyntheticDataset {
  DatasetManifest all;      // every study, for bookkeeping
  DatasetManifest dev;      // development split (labeled + unlabeled)
  DatasetManifest heldout;  // held-out test split (always labeled)
};

// Renders the pulsating two-chamber scene for every patient and view, writes
// clip files and the three manifests under out_dir, and returns them.
// Deterministic: the same (cfg, seed) produces byte-identical files.
SyntheticDataset generate_synthetic(const GeneratorConfig& cfg,
                                    std::uint64_t seed,
                                    const std::string& out_dir);

// Class-conditional flattening-factor ranges (inclusive lower bounds).
std::pair<double, double> factor_range(PhClass c);
PhClass class_of_factor(double f);

// ---- patient-level stratified folds -------------------------------------------

struct FoldSplit {
  std::vector<int> train_indices;  // manifest entry indices
  std::vector<int> val_indices;
};

// Patient-level, class-stratified k-fold split. No patient crosses folds,
// fold sizes differ by at most one patient, per-fold class counts stay within
// one of the stratified ideal.
std::vector<FoldSplit> split_folds(const DatasetManifest& manifest, int k,
                                   std::uint64_t seed);

// ---- class-balanced batches -----------------------------------------------------

struct BatchItem {
  int index;                  // position in the caller's item list
  std::uint64_t augment_seed; // fresh per resampled instance
};
using Batch = std::vector<BatchItem>;

// Emits one epoch of class-balanced batches for items with the given task
// labels (0 .. num_classes-1). Every batch holds the same number of items
// per class; the majority class is consumed exactly once without
// replacement while minority classes are resampled (cycled over reshuffled
// orders, so within a class appearance counts differ by at most one). When
// the majority count is not divisible by the per-class quota the final batch
// is a shorter, still perfectly uniform batch.
std::vector<Batch> balanced_batches(const std::vector<int>& labels,
                                    int num_classes, int batch_size,
                                    std::uint64_t seed);

}  // namespace mvvae::data
