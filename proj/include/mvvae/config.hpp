#pragma once

#include <array>
#include <string>

#include "mvvae/data.hpp"
#include "mvvae/nn.hpp"
#include "mvvae/preprocess.hpp"
#include "mvvae/train.hpp"

namespace mvvae {

// One plain-text run configuration covering the generator, augmentation,
// architectures and experiment settings. Every default matches the
// pipeline's operating values; unknown keys are rejected at parse time.
struct RunConfig {
  data::GeneratorConfig generator;
  aug::AugmentParams augment;
  nn::EncoderConfig encoder;
  std::array<int, 2> classifier_hidden = {128, 64};
  train::ExperimentConfig experiment;
  std::string out_dir;

  void validate() const;  // throws ConfigError

  // TrainSetup view of this config (embeds the effective text).
  train::TrainSetup setup() const;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config_file(const std::string& path);

// Every resolved value in a stable order; parseable by parse_run_config_text.
std::string effective_config_text(const RunConfig& cfg);

}  // namespace mvvae
