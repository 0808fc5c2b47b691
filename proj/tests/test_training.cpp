#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "mvvae/checkpoint.hpp"
#include "mvvae/config.hpp"
#include "mvvae/core.hpp"
#include "mvvae/data.hpp"
#include "mvvae/errors.hpp"
#include "mvvae/kernels.hpp"
#include "mvvae/train.hpp"

using namespace mvvae;
using namespace mvvae::train;
namespace fs = std::filesystem;

namespace {

const char* kTmp = "/tmp/mvvae_test_train";

// One tiny synthetic dataset shared by the training tests.
const data::SyntheticDataset& dataset() {
  static data::SyntheticDataset ds = [] {
    fs::remove_all(kTmp);
    data::GeneratorConfig cfg;
    cfg.patients = 24;
    cfg.frames_per_clip = 2;
    cfg.frame_hw = 32;
    cfg.heldout_fraction = 0.25;
    cfg.class_proportions = {0.5, 0.25, 0.25};
    return data::generate_synthetic(cfg, 2024, kTmp);
  }();
  return ds;
}

const ClipStore& dev_store() {
  static ClipStore store(dataset().dev, 32);
  return store;
}

TrainSetup tiny_setup() {
  TrainSetup setup;
  setup.encoder.input_hw = 32;
  setup.encoder.channels = {2, 3, 4, 4};
  setup.encoder.latent_dim = 8;
  setup.experiment.views = {data::View::A4C};
  setup.experiment.pretrain_batch = 8;
  setup.experiment.pretrain_epochs = 2;
  setup.experiment.pretrain_lr = 1e-3;
  setup.experiment.classifier_epochs = 2;
  setup.experiment.classifier_lr = 1e-3;
  setup.experiment.batch_size = 6;
  setup.experiment.val_fraction = 0.0;
  setup.experiment.patience = 0;
  setup.config_text = "encoder.input_hw = 32\nencoder.channels = 2,3,4,4\n"
                      "encoder.latent_dim = 8\nclassifier.hidden = 128,64\n";
  // Identity augmentation keeps the capacity oracles sharp.
  setup.augment.jitter_lo = setup.augment.jitter_hi = 1.0;
  setup.augment.blur_prob = 0.0;
  setup.augment.saltpepper_threshold = 0.0;
  setup.augment.gauss_noise_std = 0.0;
  setup.augment.rotation_deg = 0.0;
  setup.augment.translate_frac = 0.0;
  setup.augment.scale_lo = setup.augment.scale_hi = 1.0;
  return setup;
}

std::vector<int> labeled_dev_entries() {
  std::vector<int> entries;
  const auto& m = dataset().dev;
  for (int e = 0; e < static_cast<int>(m.entries.size()); ++e)
    if (m.entries[static_cast<std::size_t>(e)].label) entries.push_back(e);
  return entries;
}

}  // namespace

TEST_CASE("task label mapping merges mild and moderate-severe for binary") {
  CHECK(task_label(Task::Binary, data::PhClass::None) == 0);
  CHECK(task_label(Task::Binary, data::PhClass::Mild) == 1);
  CHECK(task_label(Task::Binary, data::PhClass::ModerateSevere) == 1);
  CHECK(task_label(Task::Severity, data::PhClass::None) == 0);
  CHECK(task_label(Task::Severity, data::PhClass::Mild) == 1);
  CHECK(task_label(Task::Severity, data::PhClass::ModerateSevere) == 2);
  CHECK(task_classes(Task::Binary) == 2);
  CHECK(task_classes(Task::Severity) == 3);
}

TEST_CASE("pretraining is deterministic in (data, config, seed)") {
  auto setup = tiny_setup();
  auto r1 = pretrain_vaes(dev_store(), setup, 42);
  auto r2 = pretrain_vaes(dev_store(), setup, 42);
  REQUIRE(r1.logs.size() == r2.logs.size());
  for (std::size_t i = 0; i < r1.logs.size(); ++i) {
    REQUIRE(r1.logs[i].records.size() == r2.logs[i].records.size());
    for (std::size_t e = 0; e < r1.logs[i].records.size(); ++e)
      CHECK(r1.logs[i].records[e].objective == r2.logs[i].records[e].objective);
  }
  auto r3 = pretrain_vaes(dev_store(), setup, 43);
  CHECK(r1.logs[0].records[0].objective != r3.logs[0].records[0].objective);
}

TEST_CASE("mmvm with one view equals independent mode step for step") {
  auto setup = tiny_setup();
  setup.experiment.pretrain_epochs = 3;
  // One batch per epoch so each logged value is a single objective evaluation.
  setup.experiment.pretrain_batch = 1000;

  setup.experiment.mode = Mode::Independent;
  auto ind = pretrain_vaes(dev_store(), setup, 7);
  setup.experiment.mode = Mode::MMVM;
  auto mm = pretrain_vaes(dev_store(), setup, 7);

  REQUIRE(ind.logs.size() == 1);
  REQUIRE(mm.logs.size() == 1);
  REQUIRE(ind.logs[0].records.size() == mm.logs[0].records.size());
  for (std::size_t e = 0; e < ind.logs[0].records.size(); ++e)
    CHECK(std::abs(ind.logs[0].records[e].objective -
                   mm.logs[0].records[e].objective) < 1e-6);
}

TEST_CASE("epoch-mean objective improves during a short pretraining run") {
  // Six epochs on the small development set: the mean objective must be
  // nondecreasing in at least four of the five transitions.
  auto setup = tiny_setup();
  setup.experiment.mode = Mode::MMVM;
  setup.experiment.views = {data::View::A4C, data::View::PSAX_P};
  setup.experiment.pretrain_epochs = 6;
  setup.experiment.pretrain_lr = 2e-3;

  auto result = pretrain_vaes(dev_store(), setup, 11);
  REQUIRE(result.logs.size() == 1);
  const auto& recs = result.logs[0].records;
  REQUIRE(recs.size() == 6);
  int nondecreasing = 0;
  for (std::size_t e = 1; e < recs.size(); ++e)
    if (recs[e].objective >= recs[e - 1].objective) ++nondecreasing;
  CHECK(nondecreasing >= 4);
}

TEST_CASE("pretrain rejects joint training without common views") {
  auto manifest = dataset().dev;
  for (auto& e : manifest.entries) {
    auto plax = e.clip_paths.at(data::View::PLAX);
    e.clip_paths.clear();
    e.clip_paths[data::View::PLAX] = plax;
  }
  ClipStore store(manifest, 32);
  auto setup = tiny_setup();
  setup.experiment.mode = Mode::MMVM;
  setup.experiment.views = {data::View::PLAX, data::View::A4C};
  CHECK_THROWS_AS(pretrain_vaes(store, setup, 1), TrainError);
}

TEST_CASE("vae checkpoint round-trips bit-exactly and preserves the ELBO") {
  auto setup = tiny_setup();
  auto result = pretrain_vaes(dev_store(), setup, 5);
  auto& model = result.models.at(data::View::A4C);

  const std::string path = std::string(kTmp) + "/ckpt/vae_A4C.ckpt";
  save_vae_checkpoint(path, model, setup.config_text, 5);
  auto loaded = load_vae_checkpoint(path);
  CHECK(loaded.view == data::View::A4C);

  // Identical evaluation ELBO on a handful of frames, exactly.
  const auto entries = labeled_dev_entries();
  for (int k = 0; k < 3; ++k) {
    const int entry = entries[static_cast<std::size_t>(k)];
    Tensor frame = dev_store().frame(entry, data::View::A4C, 0);
    Tensor x;
    x.shape = {1, 1, 32, 32};
    x.v = frame.v;
    auto o1 = model.encoder.forward(x, false);
    auto o2 = loaded.encoder.forward(x, false);
    CHECK(o1.mu.v == o2.mu.v);
    CHECK(o1.std.v == o2.std.v);

    core::GaussianPosterior post{
        {o1.mu.v.begin(), o1.mu.v.end()}, {o1.std.v.begin(), o1.std.v.end()}};
    Rng nrng(derive_seed(5, 0xE1B0, static_cast<std::uint64_t>(k)));
    std::vector<double> noise(post.mean.size());
    for (auto& n : noise) n = nrng.normal();
    const auto z = core::reparameterize(post, noise);
    Tensor zt({1, static_cast<int>(z.size())});
    std::copy(z.begin(), z.end(), zt.data());
    auto x1 = model.decoder.forward(zt, false);
    auto x2 = loaded.decoder.forward(zt, false);
    CHECK(x1.v == x2.v);

    const double recon1 = -0.5 * kernels::sum_squared_diff(x.data(), x1.data(), x.size());
    const double recon2 = -0.5 * kernels::sum_squared_diff(x.data(), x2.data(), x.size());
    const auto elbo1 = core::elbo_independent_mc(recon1, post, z);
    const auto elbo2 = core::elbo_independent_mc(recon2, post, z);
    CHECK(elbo1.total == elbo2.total);
  }
}

TEST_CASE("study representations: pooling, concatenation, shared mean") {
  auto setup = tiny_setup();
  setup.experiment.views = {data::View::A4C, data::View::PLAX};
  setup.experiment.mode = Mode::MMVM;
  setup.experiment.pretrain_epochs = 1;
  auto result = pretrain_vaes(dev_store(), setup, 9);

  std::map<data::View, nn::Encoder> encoders;
  for (auto& [view, model] : result.models)
    encoders.emplace(view, std::move(model.encoder));

  const int entry = 0;
  const std::vector<data::View> both = {data::View::A4C, data::View::PLAX};
  auto rep_a = study_representation(encoders, dev_store(), entry,
                                    {data::View::A4C}, Aggregation::Concat);
  auto rep_p = study_representation(encoders, dev_store(), entry,
                                    {data::View::PLAX}, Aggregation::Concat);
  CHECK(rep_a.size() == 8);

  // Concat slices match the per-view outputs in order.
  auto cat = study_representation(encoders, dev_store(), entry, both,
                                  Aggregation::Concat);
  REQUIRE(cat.size() == 16);
  for (int j = 0; j < 8; ++j) {
    CHECK(cat[static_cast<std::size_t>(j)] == rep_a[static_cast<std::size_t>(j)]);
    CHECK(cat[static_cast<std::size_t>(8 + j)] == rep_p[static_cast<std::size_t>(j)]);
  }

  // Shared-mean is the average of the per-view latents.
  auto mean = study_representation(encoders, dev_store(), entry, both,
                                   Aggregation::SharedMean);
  REQUIRE(mean.size() == 8);
  for (int j = 0; j < 8; ++j)
    CHECK(mean[static_cast<std::size_t>(j)] ==
          doctest::Approx(0.5 * (rep_a[static_cast<std::size_t>(j)] +
                                 rep_p[static_cast<std::size_t>(j)]))
              .epsilon(1e-12));

  // Clip latents are the frame-mean of posterior means.
  auto clip = dev_store().clip(entry, data::View::A4C);
  Tensor xc;
  xc.shape = {2, 1, 32, 32};
  xc.v = clip.v;
  auto oc = encoders.at(data::View::A4C).forward(xc, false);
  for (int j = 0; j < 8; ++j)
    CHECK(rep_a[static_cast<std::size_t>(j)] ==
          doctest::Approx(0.5 * (oc.mu[static_cast<std::size_t>(j)] +
                                 oc.mu[static_cast<std::size_t>(8 + j)]))
              .epsilon(1e-9));

  CHECK_THROWS_AS(study_representation(encoders, dev_store(), entry,
                                       {data::View::PSAX_S}, Aggregation::Concat),
                  DataError);
}

TEST_CASE("classifier overfits a small labeled subset") {
  auto setup = tiny_setup();
  setup.experiment.views = {data::View::A4C};
  setup.experiment.mode = Mode::MMVM;
  setup.experiment.pretrain_epochs = 2;
  setup.experiment.task = Task::Binary;
  setup.experiment.classifier_epochs = 60;
  setup.experiment.classifier_lr = 3e-3;
  setup.experiment.batch_size = 8;

  auto pre = pretrain_vaes(dev_store(), setup, 13);
  std::map<data::View, nn::Encoder> encoders;
  for (auto& [view, model] : pre.models)
    encoders.emplace(view, std::move(model.encoder));

  auto clf = train_classifier(std::move(encoders), dev_store(), setup, 13);

  const auto entries = labeled_dev_entries();
  auto scores = score_studies(clf, dev_store(), entries);
  std::array<int, 2> hits{}, totals{};
  for (std::size_t i = 0; i < scores.labels.size(); ++i) {
    ++totals[static_cast<std::size_t>(scores.labels[i])];
    if (scores.preds[i] == scores.labels[i])
      ++hits[static_cast<std::size_t>(scores.labels[i])];
  }
  const double bal = 0.5 * (static_cast<double>(hits[0]) / totals[0] +
                            static_cast<double>(hits[1]) / totals[1]);
  CHECK(bal == doctest::Approx(1.0));
}

TEST_CASE("freezing encoders keeps their parameters bit-identical") {
  auto setup = tiny_setup();
  setup.experiment.task = Task::Binary;
  setup.experiment.classifier_epochs = 2;

  auto pre = pretrain_vaes(dev_store(), setup, 17);
  std::map<data::View, nn::Encoder> frozen_src, tuned_src;
  for (auto& [view, model] : pre.models) {
    frozen_src.emplace(view, model.encoder);
    tuned_src.emplace(view, model.encoder);
  }
  auto before = pre.models.at(data::View::A4C).encoder.params();
  std::vector<Tensor> saved;
  for (auto& r : before) saved.push_back(*r.value);

  setup.experiment.freeze_encoders = true;
  auto frozen = train_classifier(std::move(frozen_src), dev_store(), setup, 17);
  auto frozen_params = frozen.encoders.at(data::View::A4C).params();
  for (std::size_t i = 0; i < frozen_params.size(); ++i)
    CHECK(frozen_params[i].value->v == saved[i].v);

  setup.experiment.freeze_encoders = false;
  auto tuned = train_classifier(std::move(tuned_src), dev_store(), setup, 17);
  auto tuned_params = tuned.encoders.at(data::View::A4C).params();
  double delta = 0.0;
  for (std::size_t i = 0; i < tuned_params.size(); ++i)
    for (std::size_t j = 0; j < tuned_params[i].value->size(); ++j)
      delta += std::abs((*tuned_params[i].value)[j] - saved[i][j]);
  CHECK(delta > 0.0);
}

TEST_CASE("supervised baseline emits no decoder arrays and starts at chance") {
  auto setup = tiny_setup();
  setup.experiment.mode = Mode::SupervisedBaseline;
  setup.experiment.task = Task::Binary;
  setup.experiment.views = {data::View::A4C, data::View::PLAX};
  setup.experiment.aggregation = Aggregation::Concat;
  setup.experiment.classifier_epochs = 1;

  auto model = supervised_baseline_train(dev_store(), setup, 19);
  const std::string path = std::string(kTmp) + "/ckpt/supervised.ckpt";
  save_classifier_checkpoint(path, model, setup.config_text, 19);
  const auto ckpt = load_checkpoint(path);
  for (const auto& [name, t] : ckpt.arrays)
    CHECK(name.substr(0, 4) != "dec/");
  CHECK(ckpt.arrays.count("clf/fc1.w") == 1);
  CHECK(ckpt.arrays.count("enc/A4C/fc_mean.w") == 1);

  // Zero training steps: predictions sit at chance level over 3 seeds.
  setup.experiment.classifier_epochs = 0;
  const auto entries = labeled_dev_entries();
  double mean_bal = 0.0;
  for (std::uint64_t seed : {100ULL, 101ULL, 102ULL}) {
    auto untrained = supervised_baseline_train(dev_store(), setup, seed);
    auto scores = score_studies(untrained, dev_store(), entries);
    std::array<int, 2> hits{}, totals{};
    for (std::size_t i = 0; i < scores.labels.size(); ++i) {
      ++totals[static_cast<std::size_t>(scores.labels[i])];
      if (scores.preds[i] == scores.labels[i])
        ++hits[static_cast<std::size_t>(scores.labels[i])];
    }
    mean_bal += 0.5 * (static_cast<double>(hits[0]) / std::max(totals[0], 1) +
                       static_cast<double>(hits[1]) / std::max(totals[1], 1));
  }
  mean_bal /= 3.0;
  CHECK(mean_bal > 0.5 - 0.15);
  CHECK(mean_bal < 0.5 + 0.15);
}

TEST_CASE("classifier checkpoint round-trips and reproduces scores") {
  auto setup = tiny_setup();
  setup.experiment.task = Task::Severity;
  setup.experiment.classifier_epochs = 3;
  setup.experiment.views = {data::View::A4C, data::View::PSAX_P};
  setup.experiment.aggregation = Aggregation::SharedMean;

  auto pre = pretrain_vaes(dev_store(), setup, 23);
  std::map<data::View, nn::Encoder> encoders;
  for (auto& [view, model] : pre.models)
    encoders.emplace(view, std::move(model.encoder));
  auto clf = train_classifier(std::move(encoders), dev_store(), setup, 23);

  const auto entries = labeled_dev_entries();
  auto s1 = score_studies(clf, dev_store(), entries);

  const std::string path = std::string(kTmp) + "/ckpt/clf.ckpt";
  save_classifier_checkpoint(path, clf, setup.config_text, 23);
  auto loaded = load_classifier_checkpoint(path);
  auto s2 = score_studies(loaded, dev_store(), entries);
  CHECK(s1.probs.v == s2.probs.v);
  CHECK(s1.preds == s2.preds);

  // Missing class in the labels is an explicit training error.
  auto setup_bad = setup;
  data::DatasetManifest crippled = dataset().dev;
  for (auto& e : crippled.entries)
    if (e.label && *e.label == data::PhClass::ModerateSevere)
      e.label = data::PhClass::Mild;
  crippled.recount();
  ClipStore bad_store(crippled, 32);
  std::map<data::View, nn::Encoder> enc2;
  for (auto view : setup_bad.experiment.views)
    enc2.emplace(view, nn::Encoder(setup_bad.encoder, 1));
  CHECK_THROWS_AS(train_classifier(std::move(enc2), bad_store, setup_bad, 1),
                  TrainError);
}

TEST_CASE("training log file is line-delimited json") {
  TrainingLog log;
  log.name = "mmvm";
  log.seed = 7;
  log.records.push_back({0, -100.5, 0.5, 1.25, 7});
  log.records.push_back({1, -90.25, std::nullopt, 1.5, 7});
  const std::string path = std::string(kTmp) + "/logs/train.jsonl";
  save_training_log(log, path);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    CHECK(line.front() == '{');
    CHECK(line.find("\"epoch\"") != std::string::npos);
  }
  CHECK(lines == 2);
}
