#include "mvvae/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mvvae/errors.hpp"
#include "mvvae/kvfile.hpp"

namespace mvvae {

// ---------------------------------------------------------------------------
// KeyValueFile
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  const std::string last = trim(cur);
  if (!last.empty() || !out.empty()) out.push_back(last);
  return out;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

KeyValueFile KeyValueFile::parse_text(const std::string& text) {
  KeyValueFile kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected 'key = value': " + t);
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (kv.values_.count(key))
      throw ConfigError("config: duplicate key '" + key + "'");
    kv.values_[key] = value;
  }
  return kv;
}

KeyValueFile KeyValueFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("config: cannot read file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

bool KeyValueFile::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string KeyValueFile::get_string(const std::string& key,
                                     const std::string& fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueFile::get_double(const std::string& key, double fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not a number: " + it->second);
  }
}

int KeyValueFile::get_int(const std::string& key, int fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const int v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' is not an integer: " + it->second);
  }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config: key '" + key + "' is not a boolean: " + it->second);
}

std::vector<int> KeyValueFile::get_int_list(const std::string& key,
                                            std::vector<int> fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<int> out;
  for (const auto& tok : split_commas(it->second)) {
    try {
      out.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' has a bad integer: " + tok);
    }
  }
  return out;
}

std::vector<double> KeyValueFile::get_double_list(const std::string& key,
                                                  std::vector<double> fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  for (const auto& tok : split_commas(it->second)) {
    try {
      out.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' has a bad number: " + tok);
    }
  }
  return out;
}

std::vector<std::string> KeyValueFile::get_string_list(
    const std::string& key, std::vector<std::string> fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  return split_commas(it->second);
}

std::vector<std::uint64_t> KeyValueFile::get_u64_list(
    const std::string& key, std::vector<std::uint64_t> fallback) {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<std::uint64_t> out;
  for (const auto& tok : split_commas(it->second)) {
    try {
      out.push_back(std::stoull(tok));
    } catch (const std::exception&) {
      throw ConfigError("config: key '" + key + "' has a bad seed: " + tok);
    }
  }
  return out;
}

void KeyValueFile::finish() const {
  std::string unknown;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
  if (!unknown.empty())
    throw ConfigError("config: unknown keys: " + unknown);
}

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  generator.validate();
  augment.validate();
  encoder.validate();
  experiment.validate();
  if (classifier_hidden[0] < 1 || classifier_hidden[1] < 1)
    throw ConfigError("classifier: hidden sizes must be >= 1");
}

train::TrainSetup RunConfig::setup() const {
  train::TrainSetup s;
  s.experiment = experiment;
  s.encoder = encoder;
  s.classifier_hidden = classifier_hidden;
  s.augment = augment;
  s.config_text = effective_config_text(*this);
  return s;
}

RunConfig parse_run_config_text(const std::string& text) {
  KeyValueFile kv = KeyValueFile::parse_text(text);
  RunConfig cfg;

  cfg.generator.patients = kv.get_int("generator.patients", cfg.generator.patients);
  {
    auto props = kv.get_double_list(
        "generator.class_proportions",
        {cfg.generator.class_proportions[0], cfg.generator.class_proportions[1],
         cfg.generator.class_proportions[2]});
    if (props.size() != 3)
      throw ConfigError("generator.class_proportions needs 3 values");
    for (int i = 0; i < 3; ++i)
      cfg.generator.class_proportions[static_cast<std::size_t>(i)] =
          props[static_cast<std::size_t>(i)];
  }
  cfg.generator.frames_per_clip =
      kv.get_int("generator.frames_per_clip", cfg.generator.frames_per_clip);
  cfg.generator.frame_hw = kv.get_int("generator.frame_hw", cfg.generator.frame_hw);
  cfg.generator.unlabeled_fraction =
      kv.get_double("generator.unlabeled_fraction", cfg.generator.unlabeled_fraction);
  cfg.generator.heldout_fraction =
      kv.get_double("generator.heldout_fraction", cfg.generator.heldout_fraction);
  cfg.generator.speckle = kv.get_double("generator.speckle", cfg.generator.speckle);

  {
    auto j = kv.get_double_list("augment.jitter",
                                {cfg.augment.jitter_lo, cfg.augment.jitter_hi});
    if (j.size() != 2) throw ConfigError("augment.jitter needs 2 values");
    cfg.augment.jitter_lo = j[0];
    cfg.augment.jitter_hi = j[1];
  }
  cfg.augment.blur_kernel = kv.get_int("augment.blur_kernel", cfg.augment.blur_kernel);
  cfg.augment.blur_sigma = kv.get_double("augment.blur_sigma", cfg.augment.blur_sigma);
  cfg.augment.blur_prob = kv.get_double("augment.blur_prob", cfg.augment.blur_prob);
  cfg.augment.saltpepper_threshold = kv.get_double(
      "augment.saltpepper_threshold", cfg.augment.saltpepper_threshold);
  cfg.augment.gauss_noise_std =
      kv.get_double("augment.gauss_noise_std", cfg.augment.gauss_noise_std);
  cfg.augment.rotation_deg =
      kv.get_double("augment.rotation_deg", cfg.augment.rotation_deg);
  cfg.augment.translate_frac =
      kv.get_double("augment.translate_frac", cfg.augment.translate_frac);
  // Accepted for config compatibility; identity on grayscale frames.
  kv.get_double("augment.saturation", 1.0);
  kv.get_double("augment.hue", 1.0);
  {
    auto s = kv.get_double_list("augment.scale",
                                {cfg.augment.scale_lo, cfg.augment.scale_hi});
    if (s.size() != 2) throw ConfigError("augment.scale needs 2 values");
    cfg.augment.scale_lo = s[0];
    cfg.augment.scale_hi = s[1];
  }

  cfg.encoder.input_hw = kv.get_int("encoder.input_hw", cfg.encoder.input_hw);
  {
    auto ch = kv.get_int_list("encoder.channels",
                              {cfg.encoder.channels[0], cfg.encoder.channels[1],
                               cfg.encoder.channels[2], cfg.encoder.channels[3]});
    if (ch.size() != 4) throw ConfigError("encoder.channels needs 4 values");
    for (int i = 0; i < 4; ++i)
      cfg.encoder.channels[static_cast<std::size_t>(i)] =
          ch[static_cast<std::size_t>(i)];
  }
  cfg.encoder.latent_dim = kv.get_int("encoder.latent_dim", cfg.encoder.latent_dim);

  {
    auto h = kv.get_int_list("classifier.hidden",
                             {cfg.classifier_hidden[0], cfg.classifier_hidden[1]});
    if (h.size() != 2) throw ConfigError("classifier.hidden needs 2 values");
    cfg.classifier_hidden[0] = h[0];
    cfg.classifier_hidden[1] = h[1];
  }

  cfg.experiment.mode = train::mode_from_name(
      kv.get_string("experiment.mode", train::mode_name(cfg.experiment.mode)));
  {
    std::vector<std::string> defaults;
    for (auto v : cfg.experiment.views) defaults.push_back(data::view_name(v));
    auto names = kv.get_string_list("experiment.views", defaults);
    cfg.experiment.views.clear();
    for (const auto& n : names) cfg.experiment.views.push_back(data::view_from_name(n));
  }
  cfg.experiment.task = train::task_from_name(
      kv.get_string("experiment.task", train::task_name(cfg.experiment.task)));
  cfg.experiment.aggregation = train::aggregation_from_name(kv.get_string(
      "experiment.aggregation", train::aggregation_name(cfg.experiment.aggregation)));
  cfg.experiment.batch_size =
      kv.get_int("experiment.batch_size", cfg.experiment.batch_size);
  cfg.experiment.pretrain_batch =
      kv.get_int("experiment.pretrain_batch", cfg.experiment.pretrain_batch);
  cfg.experiment.pretrain_lr =
      kv.get_double("experiment.pretrain_lr", cfg.experiment.pretrain_lr);
  cfg.experiment.classifier_lr =
      kv.get_double("experiment.classifier_lr", cfg.experiment.classifier_lr);
  cfg.experiment.pretrain_epochs =
      kv.get_int("experiment.pretrain_epochs", cfg.experiment.pretrain_epochs);
  cfg.experiment.classifier_epochs =
      kv.get_int("experiment.classifier_epochs", cfg.experiment.classifier_epochs);
  cfg.experiment.frames_per_item =
      kv.get_int("experiment.frames_per_item", cfg.experiment.frames_per_item);
  cfg.experiment.classifier_frames =
      kv.get_int("experiment.classifier_frames", cfg.experiment.classifier_frames);
  cfg.experiment.seeds = kv.get_u64_list("experiment.seeds", cfg.experiment.seeds);
  cfg.experiment.val_fraction =
      kv.get_double("experiment.val_fraction", cfg.experiment.val_fraction);
  cfg.experiment.patience = kv.get_int("experiment.patience", cfg.experiment.patience);
  cfg.experiment.cv_folds = kv.get_int("experiment.cv_folds", cfg.experiment.cv_folds);
  cfg.experiment.freeze_encoders =
      kv.get_bool("experiment.freeze_encoders", cfg.experiment.freeze_encoders);

  cfg.out_dir = kv.get_string("output.dir", cfg.out_dir);

  kv.finish();
  cfg.validate();
  return cfg;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("config: cannot read file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

std::string effective_config_text(const RunConfig& cfg) {
  std::string out;
  auto kv = [&out](const std::string& key, const std::string& value) {
    out += key + " = " + value + "\n";
  };
  kv("generator.patients", std::to_string(cfg.generator.patients));
  kv("generator.class_proportions",
     format_double(cfg.generator.class_proportions[0]) + "," +
         format_double(cfg.generator.class_proportions[1]) + "," +
         format_double(cfg.generator.class_proportions[2]));
  kv("generator.frames_per_clip", std::to_string(cfg.generator.frames_per_clip));
  kv("generator.frame_hw", std::to_string(cfg.generator.frame_hw));
  kv("generator.unlabeled_fraction", format_double(cfg.generator.unlabeled_fraction));
  kv("generator.heldout_fraction", format_double(cfg.generator.heldout_fraction));
  kv("generator.speckle", format_double(cfg.generator.speckle));
  kv("augment.jitter", format_double(cfg.augment.jitter_lo) + "," +
                           format_double(cfg.augment.jitter_hi));
  kv("augment.blur_kernel", std::to_string(cfg.augment.blur_kernel));
  kv("augment.blur_sigma", format_double(cfg.augment.blur_sigma));
  kv("augment.blur_prob", format_double(cfg.augment.blur_prob));
  kv("augment.saltpepper_threshold", format_double(cfg.augment.saltpepper_threshold));
  kv("augment.gauss_noise_std", format_double(cfg.augment.gauss_noise_std));
  kv("augment.rotation_deg", format_double(cfg.augment.rotation_deg));
  kv("augment.translate_frac", format_double(cfg.augment.translate_frac));
  kv("augment.scale", format_double(cfg.augment.scale_lo) + "," +
                          format_double(cfg.augment.scale_hi));
  kv("encoder.input_hw", std::to_string(cfg.encoder.input_hw));
  kv("encoder.channels", std::to_string(cfg.encoder.channels[0]) + "," +
                             std::to_string(cfg.encoder.channels[1]) + "," +
                             std::to_string(cfg.encoder.channels[2]) + "," +
                             std::to_string(cfg.encoder.channels[3]));
  kv("encoder.latent_dim", std::to_string(cfg.encoder.latent_dim));
  kv("classifier.hidden", std::to_string(cfg.classifier_hidden[0]) + "," +
                              std::to_string(cfg.classifier_hidden[1]));
  kv("experiment.mode", train::mode_name(cfg.experiment.mode));
  {
    std::string names;
    for (auto v : cfg.experiment.views)
      names += (names.empty() ? "" : ",") + std::string(data::view_name(v));
    kv("experiment.views", names);
  }
  kv("experiment.task", train::task_name(cfg.experiment.task));
  kv("experiment.aggregation", train::aggregation_name(cfg.experiment.aggregation));
  kv("experiment.batch_size", std::to_string(cfg.experiment.batch_size));
  kv("experiment.pretrain_batch", std::to_string(cfg.experiment.pretrain_batch));
  kv("experiment.pretrain_lr", format_double(cfg.experiment.pretrain_lr));
  kv("experiment.classifier_lr", format_double(cfg.experiment.classifier_lr));
  kv("experiment.pretrain_epochs", std::to_string(cfg.experiment.pretrain_epochs));
  kv("experiment.classifier_epochs", std::to_string(cfg.experiment.classifier_epochs));
  kv("experiment.frames_per_item", std::to_string(cfg.experiment.frames_per_item));
  kv("experiment.classifier_frames", std::to_string(cfg.experiment.classifier_frames));
  {
    std::string seeds;
    for (auto s : cfg.experiment.seeds)
      seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
    kv("experiment.seeds", seeds);
  }
  kv("experiment.val_fraction", format_double(cfg.experiment.val_fraction));
  kv("experiment.patience", std::to_string(cfg.experiment.patience));
  kv("experiment.cv_folds", std::to_string(cfg.experiment.cv_folds));
  kv("experiment.freeze_encoders", cfg.experiment.freeze_encoders ? "true" : "false");
  if (!cfg.out_dir.empty()) kv("output.dir", cfg.out_dir);
  return out;
}

}  // namespace mvvae
