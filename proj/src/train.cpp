#include "mvvae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "mvvae/checkpoint.hpp"
#include "mvvae/core.hpp"
#include "mvvae/errors.hpp"
#include "mvvae/kernels.hpp"
#include "mvvae/kvfile.hpp"
#include "mvvae/rng.hpp"

namespace mvvae::train {

namespace fs = std::filesystem;
using nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

// Seed-stream tags.
enum : std::uint64_t {
  kTagOrder = 0x06de6,
  kTagFrames = 0xf6a3e5,
  kTagNoise = 0x4015e,
  kTagVal = 0x7a1,
  kTagValNoise = 0x7a17,
  kTagBalance = 0xba1a7ce,
  kTagClipFrames = 0xcf6a3e5,
};
}  // namespace

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Independent: return "independent";
    case Mode::MMVM: return "mmvm";
    case Mode::SupervisedBaseline: return "supervised-baseline";
  }
  return "?";
}

Mode mode_from_name(const std::string& name) {
  if (name == "independent") return Mode::Independent;
  if (name == "mmvm") return Mode::MMVM;
  if (name == "supervised-baseline") return Mode::SupervisedBaseline;
  throw ConfigError("unknown mode: " + name);
}

const char* task_name(Task t) {
  return t == Task::Binary ? "binary" : "severity";
}

Task task_from_name(const std::string& name) {
  if (name == "binary") return Task::Binary;
  if (name == "severity") return Task::Severity;
  throw ConfigError("unknown task: " + name);
}

const char* aggregation_name(Aggregation a) {
  return a == Aggregation::Concat ? "concat" : "shared-mean";
}

Aggregation aggregation_from_name(const std::string& name) {
  if (name == "concat") return Aggregation::Concat;
  if (name == "shared-mean") return Aggregation::SharedMean;
  throw ConfigError("unknown aggregation: " + name);
}

int task_classes(Task t) { return t == Task::Binary ? 2 : 3; }

int task_label(Task t, data::PhClass c) {
  if (t == Task::Severity) return static_cast<int>(c);
  return c == data::PhClass::None ? 0 : 1;
}

void ExperimentConfig::validate() const {
  if (views.empty()) throw ConfigError("experiment: empty view list");
  std::set<data::View> uniq(views.begin(), views.end());
  if (uniq.size() != views.size())
    throw ConfigError("experiment: duplicate views");
  if (batch_size < 1 || pretrain_batch < 1)
    throw ConfigError("experiment: batch sizes must be >= 1");
  if (pretrain_lr <= 0.0 || classifier_lr <= 0.0)
    throw ConfigError("experiment: learning rates must be > 0");
  if (pretrain_epochs < 0 || classifier_epochs < 0)
    throw ConfigError("experiment: negative epoch counts");
  if (frames_per_item < 0 || classifier_frames < 0)
    throw ConfigError("experiment: negative frame counts");
  if (seeds.empty()) throw ConfigError("experiment: need at least one seed");
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw ConfigError("experiment: val_fraction must be in [0, 1)");
  if (patience < 0 || cv_folds < 0)
    throw ConfigError("experiment: negative patience or fold count");
  if (cv_folds == 1) throw ConfigError("experiment: cv_folds must be 0 or >= 2");
}

void save_training_log(const TrainingLog& log, const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out.good()) throw TrainError("training log: cannot write: " + path);
  for (const auto& rec : log.records) {
    json j;
    j["name"] = log.name;
    j["seed"] = log.seed;
    j["epoch"] = rec.epoch;
    j["objective"] = rec.objective;
    if (rec.val_metric) j["val_metric"] = *rec.val_metric;
    j["wall_s"] = rec.wall_s;
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// ClipStore
// ---------------------------------------------------------------------------

ClipStore::ClipStore(const data::DatasetManifest& manifest, int target_hw)
    : manifest_(manifest), hw_(target_hw) {
  for (int e = 0; e < static_cast<int>(manifest_.entries.size()); ++e) {
    const auto& entry = manifest_.entries[static_cast<std::size_t>(e)];
    for (const auto& [view, rel] : entry.clip_paths) {
      data::ViewClip clip = data::load_study_clip(manifest_, entry, view);
      const int t = clip.t();
      const int h = clip.frames.shape[1], w = clip.frames.shape[2];
      std::vector<float> buf(static_cast<std::size_t>(t) * hw_ * hw_);
      for (int f = 0; f < t; ++f) {
        Tensor frame({h, w});
        std::copy_n(clip.frames.data() + static_cast<std::size_t>(f) * h * w,
                    static_cast<std::size_t>(h) * w, frame.data());
        if (h != hw_ || w != hw_) frame = aug::resize_bicubic(frame, hw_);
        frame = aug::histogram_equalize(frame);
        for (std::size_t i = 0; i < frame.size(); ++i)
          buf[static_cast<std::size_t>(f) * hw_ * hw_ + i] =
              static_cast<float>(frame[i]);
      }
      const auto key = std::make_pair(e, static_cast<int>(view));
      cache_[key] = std::move(buf);
      nframes_[key] = t;
    }
  }
}

bool ClipStore::has(int entry, data::View view) const {
  return cache_.count({entry, static_cast<int>(view)}) > 0;
}

int ClipStore::frames(int entry, data::View view) const {
  const auto it = nframes_.find({entry, static_cast<int>(view)});
  if (it == nframes_.end())
    throw DataError("clip store: study lacks view " +
                    std::string(data::view_name(view)));
  return it->second;
}

Tensor ClipStore::frame(int entry, data::View view, int t) const {
  const auto it = cache_.find({entry, static_cast<int>(view)});
  if (it == cache_.end())
    throw DataError("clip store: study lacks view " +
                    std::string(data::view_name(view)));
  const int nt = nframes_.at({entry, static_cast<int>(view)});
  if (t < 0 || t >= nt) throw DataError("clip store: frame index out of range");
  Tensor frame({hw_, hw_});
  const std::size_t plane = static_cast<std::size_t>(hw_) * hw_;
  const float* src = it->second.data() + static_cast<std::size_t>(t) * plane;
  for (std::size_t i = 0; i < plane; ++i) frame[i] = static_cast<double>(src[i]);
  return frame;
}

Tensor ClipStore::clip(int entry, data::View view) const {
  const auto it = cache_.find({entry, static_cast<int>(view)});
  if (it == cache_.end())
    throw DataError("clip store: study lacks view " +
                    std::string(data::view_name(view)));
  const int nt = nframes_.at({entry, static_cast<int>(view)});
  Tensor clip({nt, hw_, hw_});
  for (std::size_t i = 0; i < clip.size(); ++i)
    clip[i] = static_cast<double>(it->second[i]);
  return clip;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

namespace {

class Adam {
 public:
  explicit Adam(double lr) : lr_(lr) {}

  void attach(std::vector<nn::ParamRef> refs) {
    refs_ = std::move(refs);
    m_.clear();
    v_.clear();
    for (const auto& r : refs_) {
      m_.emplace_back(r.value->shape);
      v_.emplace_back(r.value->shape);
    }
  }

  void step() {
    ++t_;
    const double b1c = 1.0 - std::pow(beta1_, t_);
    const double b2c = 1.0 - std::pow(beta2_, t_);
    for (std::size_t p = 0; p < refs_.size(); ++p) {
      Tensor& w = *refs_[p].value;
      const Tensor& g = *refs_[p].grad;
      Tensor& m = m_[p];
      Tensor& v = v_[p];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        w[i] -= lr_ * (m[i] / b1c) / (std::sqrt(v[i] / b2c) + eps_);
      }
    }
  }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<nn::ParamRef> refs_;
  std::vector<Tensor> m_, v_;
};

std::vector<nn::ParamRef> prefixed(const std::string& prefix,
                                   std::vector<nn::ParamRef> refs) {
  for (auto& r : refs) r.name = prefix + r.name;
  return refs;
}

struct ParamSnapshot {
  std::vector<Tensor> values;
  std::vector<Tensor> buffers;

  static ParamSnapshot take(std::vector<nn::ParamRef> refs,
                            std::vector<nn::BufferRef> bufs) {
    ParamSnapshot s;
    for (auto& r : refs) s.values.push_back(*r.value);
    for (auto& b : bufs) s.buffers.push_back(*b.value);
    return s;
  }
  void restore(std::vector<nn::ParamRef> refs,
               std::vector<nn::BufferRef> bufs) const {
    for (std::size_t i = 0; i < refs.size(); ++i) *refs[i].value = values[i];
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i].value = buffers[i];
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

void copy_into_checkpoint(Checkpoint& ckpt, const std::string& prefix,
                          std::vector<nn::ParamRef> refs,
                          std::vector<nn::BufferRef> bufs) {
  for (auto& r : refs) ckpt.arrays[prefix + r.name] = *r.value;
  for (auto& b : bufs) ckpt.arrays[prefix + b.name] = *b.value;
}

void copy_from_checkpoint(const Checkpoint& ckpt, const std::string& prefix,
                          std::vector<nn::ParamRef> refs,
                          std::vector<nn::BufferRef> bufs,
                          const std::string& path) {
  for (auto& r : refs) {
    const auto it = ckpt.arrays.find(prefix + r.name);
    if (it == ckpt.arrays.end())
      throw DataError("checkpoint: missing array " + prefix + r.name + ": " + path);
    if (it->second.shape != r.value->shape)
      throw DataError("checkpoint: shape mismatch for " + prefix + r.name + ": " + path);
    *r.value = it->second;
  }
  for (auto& b : bufs) {
    const auto it = ckpt.arrays.find(prefix + b.name);
    if (it == ckpt.arrays.end())
      throw DataError("checkpoint: missing array " + prefix + b.name + ": " + path);
    *b.value = it->second;
  }
}

nn::EncoderConfig encoder_config_from_text(KeyValueFile& kv) {
  nn::EncoderConfig cfg;
  cfg.input_hw = kv.get_int("encoder.input_hw", cfg.input_hw);
  const auto ch = kv.get_int_list("encoder.channels",
                                  {cfg.channels[0], cfg.channels[1],
                                   cfg.channels[2], cfg.channels[3]});
  if (ch.size() != 4) throw DataError("checkpoint: bad encoder.channels");
  for (int i = 0; i < 4; ++i)
    cfg.channels[static_cast<std::size_t>(i)] = ch[static_cast<std::size_t>(i)];
  cfg.latent_dim = kv.get_int("encoder.latent_dim", cfg.latent_dim);
  return cfg;
}

}  // namespace

void save_vae_checkpoint(const std::string& path, VaeModel& model,
                         const std::string& config_text, std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.seed = seed;
  ckpt.config_text = config_text + "checkpoint.kind = vae\ncheckpoint.view = " +
                     data::view_name(model.view) + "\n";
  copy_into_checkpoint(ckpt, "enc/", model.encoder.params(), model.encoder.buffers());
  copy_into_checkpoint(ckpt, "dec/", model.decoder.params(), model.decoder.buffers());
  save_checkpoint(path, ckpt);
}

VaeModel load_vae_checkpoint(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  KeyValueFile kv = KeyValueFile::parse_text(ckpt.config_text);
  if (kv.get_string("checkpoint.kind", "") != "vae")
    throw DataError("checkpoint: not a VAE checkpoint: " + path);
  VaeModel model;
  model.view = data::view_from_name(kv.get_string("checkpoint.view", ""));
  const nn::EncoderConfig cfg = encoder_config_from_text(kv);
  model.encoder = nn::Encoder(cfg, ckpt.seed);
  model.decoder = nn::Decoder(nn::DecoderConfig::mirror_of(cfg), ckpt.seed);
  copy_from_checkpoint(ckpt, "enc/", model.encoder.params(),
                       model.encoder.buffers(), path);
  copy_from_checkpoint(ckpt, "dec/", model.decoder.params(),
                       model.decoder.buffers(), path);
  return model;
}

void save_classifier_checkpoint(const std::string& path, ClassifierModel& model,
                                const std::string& config_text,
                                std::uint64_t seed) {
  Checkpoint ckpt;
  ckpt.seed = seed;
  std::string views;
  for (auto v : model.experiment.views)
    views += (views.empty() ? "" : ",") + std::string(data::view_name(v));
  ckpt.config_text = config_text +
                     "checkpoint.kind = classifier\n"
                     "checkpoint.views = " + views + "\n" +
                     "checkpoint.task = " + task_name(model.experiment.task) + "\n" +
                     "checkpoint.aggregation = " +
                     aggregation_name(model.experiment.aggregation) + "\n" +
                     "checkpoint.mode = " + mode_name(model.experiment.mode) + "\n";
  copy_into_checkpoint(ckpt, "clf/", model.classifier.params(),
                       model.classifier.buffers());
  for (auto& [view, enc] : model.encoders)
    copy_into_checkpoint(ckpt, "enc/" + std::string(data::view_name(view)) + "/",
                         enc.params(), enc.buffers());
  save_checkpoint(path, ckpt);
}

ClassifierModel load_classifier_checkpoint(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  KeyValueFile kv = KeyValueFile::parse_text(ckpt.config_text);
  if (kv.get_string("checkpoint.kind", "") != "classifier")
    throw DataError("checkpoint: not a classifier checkpoint: " + path);

  ClassifierModel model;
  model.experiment.views.clear();
  for (const auto& name : kv.get_string_list("checkpoint.views", {}))
    model.experiment.views.push_back(data::view_from_name(name));
  if (model.experiment.views.empty())
    throw DataError("checkpoint: classifier has no views: " + path);
  model.experiment.task = task_from_name(kv.get_string("checkpoint.task", "binary"));
  model.experiment.aggregation =
      aggregation_from_name(kv.get_string("checkpoint.aggregation", "concat"));
  model.experiment.mode = mode_from_name(kv.get_string("checkpoint.mode", "mmvm"));

  const nn::EncoderConfig enc_cfg = encoder_config_from_text(kv);
  const auto hidden = kv.get_int_list("classifier.hidden", {128, 64});
  if (hidden.size() != 2) throw DataError("checkpoint: bad classifier.hidden");

  const int n_views = static_cast<int>(model.experiment.views.size());
  nn::ClassifierConfig clf_cfg;
  clf_cfg.input_dim = model.experiment.aggregation == Aggregation::Concat && n_views > 1
                          ? enc_cfg.latent_dim * n_views
                          : enc_cfg.latent_dim;
  clf_cfg.hidden = {hidden[0], hidden[1]};
  clf_cfg.num_classes = task_classes(model.experiment.task);
  model.classifier = nn::Classifier(clf_cfg, ckpt.seed);
  copy_from_checkpoint(ckpt, "clf/", model.classifier.params(),
                       model.classifier.buffers(), path);
  for (auto view : model.experiment.views) {
    model.encoders.emplace(view, nn::Encoder(enc_cfg, ckpt.seed));
    copy_from_checkpoint(ckpt, "enc/" + std::string(data::view_name(view)) + "/",
                         model.encoders.at(view).params(),
                         model.encoders.at(view).buffers(), path);
  }
  return model;
}

// ---------------------------------------------------------------------------
// pretraining
// ---------------------------------------------------------------------------

namespace {

struct EpochItem {
  int entry = 0;        // manifest entry index
  int frame = 0;        // reference frame index (mod per-view length)
  int stream_pos = 0;   // stable position used for noise derivation
};

// Deterministic epoch item stream over (entry, frame) pairs.
std::vector<EpochItem> epoch_items(const ClipStore& store,
                                   const std::vector<int>& entries,
                                   const std::vector<data::View>& views,
                                   int frames_per_item, std::uint64_t seed,
                                   int epoch) {
  std::vector<EpochItem> items;
  for (int entry : entries) {
    int t_ref = 0;
    for (auto v : views)
      if (store.has(entry, v)) t_ref = std::max(t_ref, store.frames(entry, v));
    std::vector<int> frame_idx;
    if (frames_per_item <= 0 || frames_per_item >= t_ref) {
      for (int t = 0; t < t_ref; ++t) frame_idx.push_back(t);
    } else {
      std::vector<int> all(static_cast<std::size_t>(t_ref));
      for (int t = 0; t < t_ref; ++t) all[static_cast<std::size_t>(t)] = t;
      Rng rng(derive_seed(seed, kTagFrames, static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(entry)));
      rng.shuffle(all);
      frame_idx.assign(all.begin(), all.begin() + frames_per_item);
    }
    for (int t : frame_idx) items.push_back({entry, t, 0});
  }
  Rng rng(derive_seed(seed, kTagOrder, static_cast<std::uint64_t>(epoch)));
  rng.shuffle(items);
  for (int i = 0; i < static_cast<int>(items.size()); ++i)
    items[static_cast<std::size_t>(i)].stream_pos = i;
  return items;
}

// One joint VAE step or evaluation pass over a batch of items. views.size()
// == 1 uses the standard-normal prior (the M = 1 degenerate case); otherwise
// the mixture over the batch item's per-view posteriors.
struct VaeBatchResult {
  double objective_sum = 0.0;  // sum over items of the per-item objective
};

VaeBatchResult vae_batch(std::map<data::View, VaeModel>& models,
                         const ClipStore& store,
                         const std::vector<data::View>& views,
                         const std::vector<EpochItem>& items, std::size_t lo,
                         std::size_t hi, std::uint64_t seed, int epoch,
                         std::uint64_t noise_tag, bool update) {
  const int B = static_cast<int>(hi - lo);
  const int hw = store.target_hw();
  const int d = models.begin()->second.encoder.config().latent_dim;
  const int M = static_cast<int>(views.size());
  const double pix = static_cast<double>(hw) * hw;
  const std::size_t plane = static_cast<std::size_t>(hw) * hw;

  // Per-view forward passes.
  std::map<data::View, Tensor> xs, mus, stds, zs, epss, xhats;
  for (auto view : views) {
    Tensor x({B, 1, hw, hw});
    for (int i = 0; i < B; ++i) {
      const auto& item = items[lo + static_cast<std::size_t>(i)];
      const int tv = item.frame % store.frames(item.entry, view);
      Tensor frame = store.frame(item.entry, view, tv);
      std::copy_n(frame.data(), plane, x.data() + static_cast<std::size_t>(i) * plane);
    }
    auto& model = models.at(view);
    const auto out = model.encoder.forward(x, update);
    Tensor eps({B, d}), z({B, d});
    const int vpos = static_cast<int>(std::find(views.begin(), views.end(), view) -
                                      views.begin());
    for (int i = 0; i < B; ++i) {
      Rng rng(derive_seed(seed, noise_tag, static_cast<std::uint64_t>(epoch),
                          static_cast<std::uint64_t>(
                              items[lo + static_cast<std::size_t>(i)].stream_pos),
                          static_cast<std::uint64_t>(vpos)));
      for (int j = 0; j < d; ++j) {
        const std::size_t k = static_cast<std::size_t>(i) * d + j;
        eps[k] = rng.normal();
        z[k] = out.mu[k] + out.std[k] * eps[k];
      }
    }
    Tensor xhat = model.decoder.forward(z, update);
    xs[view] = std::move(x);
    mus[view] = out.mu;
    stds[view] = out.std;
    zs[view] = std::move(z);
    epss[view] = std::move(eps);
    xhats[view] = std::move(xhat);
  }

  // Reconstruction log-likelihoods (unit-variance Gaussian over pixels).
  std::map<data::View, std::vector<double>> recons;
  for (auto view : views) {
    std::vector<double> r(static_cast<std::size_t>(B));
    for (int i = 0; i < B; ++i) {
      const double sq = kernels::sum_squared_diff(
          xs[view].data() + static_cast<std::size_t>(i) * plane,
          xhats[view].data() + static_cast<std::size_t>(i) * plane, plane);
      r[static_cast<std::size_t>(i)] = -0.5 * sq - 0.5 * pix * 2.0 * kHalfLog2Pi;
    }
    recons[view] = std::move(r);
  }

  // Regularizer and its gradients, item by item.
  VaeBatchResult result;
  std::map<data::View, Tensor> dmu, dstd, dz_reg;
  for (auto view : views) {
    dmu[view] = Tensor({B, d});
    dstd[view] = Tensor({B, d});
    dz_reg[view] = Tensor({B, d});
  }

  core::GaussianPosterior std_normal;
  std_normal.mean.assign(static_cast<std::size_t>(d), 0.0);
  std_normal.std.assign(static_cast<std::size_t>(d), 1.0);

  for (int i = 0; i < B; ++i) {
    // Assemble the item's posteriors.
    std::vector<core::GaussianPosterior> posts(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
      const auto view = views[static_cast<std::size_t>(m)];
      auto& p = posts[static_cast<std::size_t>(m)];
      p.mean.resize(static_cast<std::size_t>(d));
      p.std.resize(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j) {
        p.mean[static_cast<std::size_t>(j)] =
            mus[view][static_cast<std::size_t>(i) * d + j];
        p.std[static_cast<std::size_t>(j)] =
            stds[view][static_cast<std::size_t>(i) * d + j];
      }
    }
    core::MixturePrior prior;
    if (M >= 2) prior.components = posts;
    else prior.components = {std_normal};

    double obj = 0.0;
    std::vector<std::vector<double>> gm(prior.components.size(),
                                        std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<std::vector<double>> gs(prior.components.size(),
                                        std::vector<double>(static_cast<std::size_t>(d), 0.0));
    std::vector<std::vector<double>> dz_h(static_cast<std::size_t>(M));
    std::vector<std::vector<double>> dz_q(static_cast<std::size_t>(M));
    std::vector<std::vector<double>> gq_m(static_cast<std::size_t>(M));
    std::vector<std::vector<double>> gq_s(static_cast<std::size_t>(M));

    for (int m = 0; m < M; ++m) {
      const auto view = views[static_cast<std::size_t>(m)];
      std::vector<double> z(static_cast<std::size_t>(d));
      for (int j = 0; j < d; ++j)
        z[static_cast<std::size_t>(j)] = zs[view][static_cast<std::size_t>(i) * d + j];

      dz_h[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(d), 0.0);
      const double logh = core::mixture_log_prob_grad(
          z, prior, dz_h[static_cast<std::size_t>(m)], gm, gs);

      dz_q[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(d), 0.0);
      gq_m[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(d), 0.0);
      gq_s[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(d), 0.0);
      core::gaussian_log_prob_grad(z, posts[static_cast<std::size_t>(m)],
                                   dz_q[static_cast<std::size_t>(m)],
                                   gq_m[static_cast<std::size_t>(m)],
                                   gq_s[static_cast<std::size_t>(m)]);
      const double logq = core::gaussian_log_prob(z, posts[static_cast<std::size_t>(m)]);

      obj += recons[view][static_cast<std::size_t>(i)] + logh - logq;
    }
    result.objective_sum += obj;

    if (update) {
      for (int m = 0; m < M; ++m) {
        const auto view = views[static_cast<std::size_t>(m)];
        for (int j = 0; j < d; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * d + j;
          // d(-obj)/dz, and direct parameter terms. Mixture components map to
          // views only when M >= 2.
          dz_reg[view][k] = -(dz_h[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)] -
                              dz_q[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
          double gmu = -(-gq_m[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
          double gsd = -(-gq_s[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
          if (M >= 2) {
            gmu += -(gm[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
            gsd += -(gs[static_cast<std::size_t>(m)][static_cast<std::size_t>(j)]);
          }
          dmu[view][k] = gmu;
          dstd[view][k] = gsd;
        }
      }
    }
  }

  if (!update) return result;

  // Backward passes and the shared scale 1/B (loss is the batch mean of the
  // negated objective).
  const double inv_b = 1.0 / static_cast<double>(B);
  for (auto view : views) {
    auto& model = models.at(view);
    Tensor dxhat(xhats[view].shape);
    for (std::size_t k = 0; k < dxhat.size(); ++k)
      dxhat[k] = (xhats[view][k] - xs[view][k]) * inv_b;
    Tensor dz_dec = model.decoder.backward(dxhat);

    Tensor dmu_total({B, d}), dstd_total({B, d});
    for (std::size_t k = 0; k < dmu_total.size(); ++k) {
      const double dz_total = dz_dec[k] + dz_reg[view][k] * inv_b;
      dmu_total[k] = dz_total + dmu[view][k] * inv_b;
      dstd_total[k] = dz_total * epss[view][k] + dstd[view][k] * inv_b;
    }
    model.encoder.backward(dmu_total, dstd_total);
  }
  return result;
}

}  // namespace

PretrainResult pretrain_vaes(const ClipStore& store, const TrainSetup& setup,
                             std::uint64_t seed) {
  const auto& exp = setup.experiment;
  exp.validate();
  if (exp.mode != Mode::Independent && exp.mode != Mode::MMVM)
    throw TrainError("pretrain: mode must be independent or mmvm");
  const auto& manifest = store.manifest();
  const auto& views = exp.views;

  PretrainResult result;
  for (auto view : views) {
    VaeModel model;
    model.view = view;
    const std::uint64_t vseed =
        derive_seed(seed, 0xE4C, static_cast<std::uint64_t>(view));
    model.encoder = nn::Encoder(setup.encoder, vseed);
    model.decoder =
        nn::Decoder(nn::DecoderConfig::mirror_of(setup.encoder), vseed);
    result.models.emplace(view, std::move(model));
  }

  // Usable studies. Joint training needs every requested view present.
  std::vector<int> joint_entries, any_entries;
  for (int e = 0; e < static_cast<int>(manifest.entries.size()); ++e) {
    bool all = true, any = false;
    for (auto view : views) {
      if (store.has(e, view)) any = true;
      else all = false;
    }
    if (all) joint_entries.push_back(e);
    if (any) any_entries.push_back(e);
  }

  const bool joint = exp.mode == Mode::MMVM;
  if (joint) {
    result.skipped_studies =
        static_cast<int>(manifest.entries.size() - joint_entries.size());
    if (joint_entries.empty())
      throw TrainError(
          "pretrain: no study carries all requested views for joint training");
  } else {
    result.skipped_studies =
        static_cast<int>(manifest.entries.size() - any_entries.size());
  }

  // Optional validation split by patient for early stopping.
  auto split_validation = [&](const std::vector<int>& entries,
                              std::vector<int>& train_out,
                              std::vector<int>& val_out) {
    if (exp.patience <= 0 || exp.val_fraction <= 0.0 ||
        static_cast<int>(entries.size()) < 4) {
      train_out = entries;
      return;
    }
    std::vector<std::string> patients;
    std::set<std::string> seen;
    for (int e : entries) {
      const auto& pid = manifest.entries[static_cast<std::size_t>(e)].patient_id;
      if (seen.insert(pid).second) patients.push_back(pid);
    }
    Rng rng(derive_seed(seed, kTagVal));
    rng.shuffle(patients);
    const int n_val = std::max(
        1, static_cast<int>(std::lround(patients.size() * exp.val_fraction)));
    std::set<std::string> val_patients(patients.begin(), patients.begin() + n_val);
    for (int e : entries)
      (val_patients.count(manifest.entries[static_cast<std::size_t>(e)].patient_id)
           ? val_out
           : train_out)
          .push_back(e);
  };

  // One training pass covers both modes: joint mode trains all views in a
  // single stream; independent mode runs the same loop per view.
  auto run_stream = [&](const std::vector<data::View>& stream_views,
                        const std::vector<int>& entries, const std::string& name) {
    std::vector<int> train_entries, val_entries;
    split_validation(entries, train_entries, val_entries);

    Adam adam(exp.pretrain_lr);
    std::vector<nn::ParamRef> refs;
    for (auto view : stream_views) {
      auto& model = result.models.at(view);
      for (auto& r : model.encoder.params()) refs.push_back(r);
      for (auto& r : model.decoder.params()) refs.push_back(r);
    }
    adam.attach(refs);

    TrainingLog log;
    log.name = name;
    log.seed = seed;

    double best_val = -1e300;
    int best_epoch = -1;
    ParamSnapshot best;
    auto snapshot_refs = [&]() {
      std::vector<nn::ParamRef> rs;
      std::vector<nn::BufferRef> bs;
      for (auto view : stream_views) {
        auto& model = result.models.at(view);
        for (auto& r : model.encoder.params()) rs.push_back(r);
        for (auto& r : model.decoder.params()) rs.push_back(r);
        for (auto& b : model.encoder.buffers()) bs.push_back(b);
        for (auto& b : model.decoder.buffers()) bs.push_back(b);
      }
      return std::make_pair(rs, bs);
    };

    for (int epoch = 0; epoch < exp.pretrain_epochs; ++epoch) {
      const auto t0 = clock_type::now();
      const auto items = epoch_items(store, train_entries, stream_views,
                                     exp.frames_per_item, seed, epoch);
      double obj_sum = 0.0;
      for (std::size_t lo = 0; lo < items.size(); lo += exp.pretrain_batch) {
        const std::size_t hi =
            std::min(items.size(), lo + static_cast<std::size_t>(exp.pretrain_batch));
        obj_sum += vae_batch(result.models, store, stream_views, items, lo, hi,
                             seed, epoch, kTagNoise, true)
                       .objective_sum;
        adam.step();
      }

      EpochRecord rec;
      rec.epoch = epoch;
      rec.seed = seed;
      rec.objective = items.empty() ? 0.0 : obj_sum / static_cast<double>(items.size());

      if (!val_entries.empty()) {
        const auto vitems =
            epoch_items(store, val_entries, stream_views, 0, seed, 0);
        double vsum = 0.0;
        for (std::size_t lo = 0; lo < vitems.size(); lo += exp.pretrain_batch) {
          const std::size_t hi = std::min(
              vitems.size(), lo + static_cast<std::size_t>(exp.pretrain_batch));
          vsum += vae_batch(result.models, store, stream_views, vitems, lo, hi,
                            seed, 0, kTagValNoise, false)
                      .objective_sum;
        }
        rec.val_metric = vsum / static_cast<double>(vitems.size());
        if (*rec.val_metric > best_val) {
          best_val = *rec.val_metric;
          best_epoch = epoch;
          auto [rs, bs] = snapshot_refs();
          best = ParamSnapshot::take(rs, bs);
        }
      }
      rec.wall_s = std::chrono::duration<double>(clock_type::now() - t0).count();
      log.records.push_back(rec);

      if (!val_entries.empty() && exp.patience > 0 &&
          epoch - best_epoch >= exp.patience)
        break;
    }
    if (best_epoch >= 0 && !best.values.empty()) {
      auto [rs, bs] = snapshot_refs();
      best.restore(rs, bs);
    }
    result.logs.push_back(std::move(log));
  };

  if (joint) {
    run_stream(views, joint_entries, "mmvm");
  } else {
    for (auto view : views) {
      std::vector<int> entries;
      for (int e = 0; e < static_cast<int>(manifest.entries.size()); ++e)
        if (store.has(e, view)) entries.push_back(e);
      if (entries.empty())
        throw TrainError(std::string("pretrain: no study carries view ") +
                         data::view_name(view));
      run_stream({view}, entries, std::string("independent_") + data::view_name(view));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// representations
// ---------------------------------------------------------------------------

namespace {

std::vector<double> clip_latent(nn::Encoder& encoder, const ClipStore& store,
                                int entry, data::View view) {
  const Tensor clip = store.clip(entry, view);
  const int t = clip.shape[0], hw = clip.shape[1];
  Tensor x;
  x.shape = {t, 1, hw, hw};
  x.v = clip.v;
  const auto out = encoder.forward(x, false);
  const int d = out.mu.shape[1];
  std::vector<double> latent(static_cast<std::size_t>(d), 0.0);
  for (int f = 0; f < t; ++f)
    for (int j = 0; j < d; ++j)
      latent[static_cast<std::size_t>(j)] += out.mu[static_cast<std::size_t>(f) * d + j];
  for (auto& v : latent) v /= static_cast<double>(t);
  return latent;
}

}  // namespace

std::vector<double> study_representation(
    std::map<data::View, nn::Encoder>& encoders, const ClipStore& store,
    int entry, const std::vector<data::View>& views, Aggregation aggregation) {
  if (views.empty()) throw DataError("study_representation: no views");
  std::vector<std::vector<double>> latents;
  for (auto view : views) {
    if (!store.has(entry, view))
      throw DataError(std::string("study_representation: study lacks view ") +
                      data::view_name(view));
    if (!encoders.count(view))
      throw DataError(std::string("study_representation: no encoder for view ") +
                      data::view_name(view));
    latents.push_back(clip_latent(encoders.at(view), store, entry, view));
  }
  if (views.size() == 1) return latents[0];
  if (aggregation == Aggregation::Concat) {
    std::vector<double> out;
    for (const auto& l : latents) out.insert(out.end(), l.begin(), l.end());
    return out;
  }
  std::vector<double> out(latents[0].size(), 0.0);
  for (const auto& l : latents)
    for (std::size_t j = 0; j < l.size(); ++j) out[j] += l[j];
  for (auto& v : out) v /= static_cast<double>(latents.size());
  return out;
}

double cross_view_alignment(std::map<data::View, nn::Encoder>& encoders,
                            const ClipStore& store,
                            const std::vector<int>& entries,
                            const std::vector<data::View>& views) {
  if (views.size() < 2)
    throw DataError("cross_view_alignment: needs at least two views");
  double total = 0.0;
  int used = 0;
  for (int entry : entries) {
    bool ok = true;
    for (auto view : views)
      if (!store.has(entry, view)) ok = false;
    if (!ok) continue;
    std::vector<std::vector<double>> latents;
    for (auto view : views)
      latents.push_back(clip_latent(encoders.at(view), store, entry, view));
    double dist = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < latents.size(); ++a)
      for (std::size_t b = a + 1; b < latents.size(); ++b) {
        double sq = 0.0;
        for (std::size_t j = 0; j < latents[a].size(); ++j) {
          const double diff = latents[a][j] - latents[b][j];
          sq += diff * diff;
        }
        dist += std::sqrt(sq);
        ++pairs;
      }
    total += dist / pairs;
    ++used;
  }
  if (used == 0) throw DataError("cross_view_alignment: no usable studies");
  return total / used;
}

// ---------------------------------------------------------------------------
// classifier stage
// ---------------------------------------------------------------------------

namespace {

struct LabeledSet {
  std::vector<int> entries;  // manifest entry indices
  std::vector<int> labels;   // task labels
};

LabeledSet labeled_entries(const ClipStore& store,
                           const std::vector<data::View>& views, Task task) {
  LabeledSet set;
  const auto& manifest = store.manifest();
  for (int e = 0; e < static_cast<int>(manifest.entries.size()); ++e) {
    const auto& entry = manifest.entries[static_cast<std::size_t>(e)];
    if (!entry.label) continue;
    bool all = true;
    for (auto view : views)
      if (!store.has(e, view)) all = false;
    if (!all) continue;
    set.entries.push_back(e);
    set.labels.push_back(task_label(task, *entry.label));
  }
  return set;
}

double balanced_accuracy_of(const std::vector<int>& preds,
                            const std::vector<int>& labels, int classes) {
  std::vector<int> hits(static_cast<std::size_t>(classes), 0);
  std::vector<int> total(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++total[static_cast<std::size_t>(labels[i])];
    if (preds[i] == labels[i]) ++hits[static_cast<std::size_t>(labels[i])];
  }
  double acc = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (total[static_cast<std::size_t>(c)] == 0) continue;
    acc += static_cast<double>(hits[static_cast<std::size_t>(c)]) /
           total[static_cast<std::size_t>(c)];
    ++present;
  }
  return present > 0 ? acc / present : 0.0;
}

ClassifierModel train_classifier_impl(std::map<data::View, nn::Encoder> encoders,
                                      const ClipStore& store,
                                      const TrainSetup& setup, std::uint64_t seed,
                                      const std::string& log_name) {
  const auto& exp = setup.experiment;
  exp.validate();
  const auto& views = exp.views;
  const int classes = task_classes(exp.task);
  const int d = setup.encoder.latent_dim;
  const int hw = store.target_hw();

  const LabeledSet all = labeled_entries(store, views, exp.task);
  for (int c = 0; c < classes; ++c)
    if (std::count(all.labels.begin(), all.labels.end(), c) == 0)
      throw TrainError("classifier: class " + std::to_string(c) +
                       " absent from training labels");

  // Patient-level validation split, stratified by task label.
  std::vector<int> train_pos, val_pos;
  if (exp.patience > 0 && exp.val_fraction > 0.0 &&
      static_cast<int>(all.entries.size()) >= 4 * classes) {
    const auto& manifest = store.manifest();
    std::map<std::string, int> patient_label;
    std::vector<std::string> patients;
    for (std::size_t i = 0; i < all.entries.size(); ++i) {
      const auto& pid =
          manifest.entries[static_cast<std::size_t>(all.entries[i])].patient_id;
      if (!patient_label.count(pid)) patients.push_back(pid);
      patient_label[pid] = all.labels[i];
    }
    std::set<std::string> val_patients;
    for (int c = 0; c < classes; ++c) {
      std::vector<std::string> members;
      for (const auto& pid : patients)
        if (patient_label[pid] == c) members.push_back(pid);
      Rng rng(derive_seed(seed, kTagVal, static_cast<std::uint64_t>(c)));
      rng.shuffle(members);
      const int n_val = std::max(
          1, static_cast<int>(std::lround(members.size() * exp.val_fraction)));
      for (int i = 0; i < n_val && i < static_cast<int>(members.size()) - 1; ++i)
        val_patients.insert(members[static_cast<std::size_t>(i)]);
    }
    for (std::size_t i = 0; i < all.entries.size(); ++i) {
      const auto& pid =
          manifest.entries[static_cast<std::size_t>(all.entries[i])].patient_id;
      (val_patients.count(pid) ? val_pos : train_pos).push_back(static_cast<int>(i));
    }
  } else {
    for (std::size_t i = 0; i < all.entries.size(); ++i)
      train_pos.push_back(static_cast<int>(i));
  }
  std::vector<int> train_labels;
  for (int p : train_pos) train_labels.push_back(all.labels[static_cast<std::size_t>(p)]);
  for (int c = 0; c < classes; ++c)
    if (std::count(train_labels.begin(), train_labels.end(), c) == 0)
      throw TrainError("classifier: class " + std::to_string(c) +
                       " absent from the training split");

  ClassifierModel model;
  model.experiment = exp;
  model.encoders = std::move(encoders);
  nn::ClassifierConfig clf_cfg;
  clf_cfg.input_dim = exp.aggregation == Aggregation::Concat && views.size() > 1
                          ? d * static_cast<int>(views.size())
                          : d;
  clf_cfg.hidden = {setup.classifier_hidden[0], setup.classifier_hidden[1]};
  clf_cfg.num_classes = classes;
  model.classifier = nn::Classifier(clf_cfg, derive_seed(seed, 0xC1f));

  Adam adam(exp.classifier_lr);
  {
    std::vector<nn::ParamRef> refs = model.classifier.params();
    if (!exp.freeze_encoders)
      for (auto& [view, enc] : model.encoders)
        for (auto& r : enc.params()) refs.push_back(r);
    adam.attach(refs);
  }

  model.log.name = log_name;
  model.log.seed = seed;

  const bool concat = exp.aggregation == Aggregation::Concat && views.size() > 1;
  const int in_dim = clf_cfg.input_dim;

  double best_val = -1e300;
  int best_epoch = -1;
  ParamSnapshot best;
  auto snapshot_refs = [&]() {
    std::vector<nn::ParamRef> rs = model.classifier.params();
    std::vector<nn::BufferRef> bs = model.classifier.buffers();
    for (auto& [view, enc] : model.encoders) {
      for (auto& r : enc.params()) rs.push_back(r);
      for (auto& b : enc.buffers()) bs.push_back(b);
    }
    return std::make_pair(rs, bs);
  };

  for (int epoch = 0; epoch < exp.classifier_epochs; ++epoch) {
    const auto t0 = clock_type::now();
    const auto batches = data::balanced_batches(
        train_labels, classes, exp.batch_size,
        derive_seed(seed, kTagBalance, static_cast<std::uint64_t>(epoch)));

    double ce_sum = 0.0;
    std::size_t items_seen = 0;
    for (const auto& batch : batches) {
      const int B = static_cast<int>(batch.size() / static_cast<std::size_t>(classes) *
                                     static_cast<std::size_t>(classes));
      // Per view: stack the augmented frames of every item.
      std::map<data::View, Tensor> frames;       // [sumF, 1, hw, hw]
      std::map<data::View, std::vector<int>> item_frames;  // frames per item
      for (std::size_t vpos = 0; vpos < views.size(); ++vpos) {
        const auto view = views[vpos];
        std::vector<Tensor> stacked;
        std::vector<int> counts;
        for (const auto& bi : batch) {
          const int entry = all.entries[static_cast<std::size_t>(
              train_pos[static_cast<std::size_t>(bi.index)])];
          Tensor clip = store.clip(entry, view);
          const int t_all = clip.shape[0];
          int f_use = exp.classifier_frames > 0
                          ? std::min(exp.classifier_frames, t_all)
                          : t_all;
          Tensor sub;
          if (f_use == t_all) {
            sub = std::move(clip);
          } else {
            std::vector<int> idx(static_cast<std::size_t>(t_all));
            for (int t = 0; t < t_all; ++t) idx[static_cast<std::size_t>(t)] = t;
            Rng rng(derive_seed(bi.augment_seed, kTagClipFrames,
                                static_cast<std::uint64_t>(vpos)));
            rng.shuffle(idx);
            sub = Tensor({f_use, hw, hw});
            const std::size_t plane = static_cast<std::size_t>(hw) * hw;
            for (int t = 0; t < f_use; ++t)
              std::copy_n(clip.data() +
                              static_cast<std::size_t>(idx[static_cast<std::size_t>(t)]) * plane,
                          plane, sub.data() + static_cast<std::size_t>(t) * plane);
          }
          // Fresh augmentation per oversampled instance and view.
          sub = aug::augment_clip(sub, setup.augment,
                                  derive_seed(bi.augment_seed, 0xA06,
                                              static_cast<std::uint64_t>(vpos)));
          counts.push_back(f_use);
          stacked.push_back(std::move(sub));
        }
        int total_f = 0;
        for (int c : counts) total_f += c;
        Tensor x({total_f, 1, hw, hw});
        const std::size_t plane = static_cast<std::size_t>(hw) * hw;
        std::size_t off = 0;
        for (const auto& s : stacked) {
          std::copy_n(s.data(), s.size(), x.data() + off);
          off += s.size();
        }
        frames[view] = std::move(x);
        item_frames[view] = std::move(counts);
      }

      // Encode, pool frames to clip latents, aggregate views.
      std::map<data::View, Tensor> mus;
      Tensor input({B, in_dim});
      for (std::size_t vpos = 0; vpos < views.size(); ++vpos) {
        const auto view = views[vpos];
        const auto out = model.encoders.at(view).forward(frames[view], true);
        mus[view] = out.mu;
        int row = 0;
        for (int i = 0; i < B; ++i) {
          const int f_use = item_frames[view][static_cast<std::size_t>(i)];
          for (int j = 0; j < d; ++j) {
            double acc = 0.0;
            for (int f = 0; f < f_use; ++f)
              acc += out.mu[static_cast<std::size_t>(row + f) * d + j];
            acc /= static_cast<double>(f_use);
            if (concat)
              input[static_cast<std::size_t>(i) * in_dim + vpos * static_cast<std::size_t>(d) + j] = acc;
            else
              input[static_cast<std::size_t>(i) * in_dim + j] +=
                  acc / (views.size() > 1 ? static_cast<double>(views.size()) : 1.0);
          }
          row += f_use;
        }
      }

      const auto out = model.classifier.forward(input, true);
      Tensor dlogits({B, classes});
      for (int i = 0; i < B; ++i) {
        const int y = train_labels[static_cast<std::size_t>(
            batch[static_cast<std::size_t>(i)].index)];
        ce_sum += -std::log(std::max(
            out.probs[static_cast<std::size_t>(i) * classes + y], 1e-300));
        for (int c = 0; c < classes; ++c)
          dlogits[static_cast<std::size_t>(i) * classes + c] =
              (out.probs[static_cast<std::size_t>(i) * classes + c] -
               (c == y ? 1.0 : 0.0)) /
              static_cast<double>(B);
      }
      items_seen += static_cast<std::size_t>(B);

      const Tensor dinput = model.classifier.backward(dlogits);
      if (!exp.freeze_encoders) {
        for (std::size_t vpos = 0; vpos < views.size(); ++vpos) {
          const auto view = views[vpos];
          Tensor dmu(mus[view].shape);
          int row = 0;
          for (int i = 0; i < B; ++i) {
            const int f_use = item_frames[view][static_cast<std::size_t>(i)];
            for (int j = 0; j < d; ++j) {
              double g;
              if (concat)
                g = dinput[static_cast<std::size_t>(i) * in_dim +
                           vpos * static_cast<std::size_t>(d) + j];
              else
                g = dinput[static_cast<std::size_t>(i) * in_dim + j] /
                    (views.size() > 1 ? static_cast<double>(views.size()) : 1.0);
              g /= static_cast<double>(f_use);
              for (int f = 0; f < f_use; ++f)
                dmu[static_cast<std::size_t>(row + f) * d + j] = g;
            }
            row += f_use;
          }
          Tensor dstd(mus[view].shape);  // posterior means only feed the head
          model.encoders.at(view).backward(dmu, dstd);
        }
      }
      adam.step();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.seed = seed;
    rec.objective = items_seen ? ce_sum / static_cast<double>(items_seen) : 0.0;

    if (!val_pos.empty()) {
      std::vector<int> val_entries, val_labels;
      for (int p : val_pos) {
        val_entries.push_back(all.entries[static_cast<std::size_t>(p)]);
        val_labels.push_back(all.labels[static_cast<std::size_t>(p)]);
      }
      std::vector<int> preds;
      for (int entry : val_entries) {
        auto rep = study_representation(model.encoders, store, entry, views,
                                        exp.aggregation);
        Tensor x({1, in_dim});
        std::copy(rep.begin(), rep.end(), x.data());
        const auto o = model.classifier.forward(x, false);
        int arg = 0;
        for (int c = 1; c < classes; ++c)
          if (o.probs[static_cast<std::size_t>(c)] >
              o.probs[static_cast<std::size_t>(arg)])
            arg = c;
        preds.push_back(arg);
      }
      rec.val_metric = balanced_accuracy_of(preds, val_labels, classes);
      if (*rec.val_metric > best_val) {
        best_val = *rec.val_metric;
        best_epoch = epoch;
        auto [rs, bs] = snapshot_refs();
        best = ParamSnapshot::take(rs, bs);
      }
    }
    rec.wall_s = std::chrono::duration<double>(clock_type::now() - t0).count();
    model.log.records.push_back(rec);

    if (!val_pos.empty() && exp.patience > 0 && epoch - best_epoch >= exp.patience)
      break;
  }
  if (best_epoch >= 0 && !best.values.empty()) {
    auto [rs, bs] = snapshot_refs();
    best.restore(rs, bs);
  }
  return model;
}

}  // namespace

ClassifierModel train_classifier(std::map<data::View, nn::Encoder> encoders,
                                 const ClipStore& store, const TrainSetup& setup,
                                 std::uint64_t seed) {
  for (auto view : setup.experiment.views)
    if (!encoders.count(view))
      throw TrainError(std::string("classifier: missing encoder for view ") +
                       data::view_name(view));
  return train_classifier_impl(std::move(encoders), store, setup, seed,
                               "classifier");
}

ClassifierModel supervised_baseline_train(const ClipStore& store,
                                          const TrainSetup& setup,
                                          std::uint64_t seed) {
  std::map<data::View, nn::Encoder> encoders;
  for (auto view : setup.experiment.views)
    encoders.emplace(view,
                     nn::Encoder(setup.encoder,
                                 derive_seed(seed, 0x5B, static_cast<std::uint64_t>(view))));
  return train_classifier_impl(std::move(encoders), store, setup, seed,
                               "supervised-baseline");
}

StudyScores score_studies(ClassifierModel& model, const ClipStore& store,
                          const std::vector<int>& entries) {
  const auto& exp = model.experiment;
  const int classes = task_classes(exp.task);
  StudyScores scores;
  scores.probs = Tensor({static_cast<int>(entries.size()), classes});
  int row = 0;
  for (int entry : entries) {
    const auto& e = store.manifest().entries[static_cast<std::size_t>(entry)];
    auto rep = study_representation(model.encoders, store, entry, exp.views,
                                    exp.aggregation);
    Tensor x({1, static_cast<int>(rep.size())});
    std::copy(rep.begin(), rep.end(), x.data());
    const auto out = model.classifier.forward(x, false);
    int arg = 0;
    for (int c = 0; c < classes; ++c) {
      scores.probs[static_cast<std::size_t>(row) * classes + c] =
          out.probs[static_cast<std::size_t>(c)];
      if (out.probs[static_cast<std::size_t>(c)] >
          out.probs[static_cast<std::size_t>(arg)])
        arg = c;
    }
    scores.entries.push_back(entry);
    scores.preds.push_back(arg);
    scores.labels.push_back(e.label ? task_label(exp.task, *e.label) : -1);
    ++row;
  }
  return scores;
}

}  // namespace mvvae::train
