#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvvae/rng.hpp"
#include "mvvae/tensor.hpp"

namespace mvvae::nn {

// Named view of one parameter tensor and its gradient buffer.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// Non-trainable state that still belongs in checkpoints (BN running stats).
struct BufferRef {
  std::string name;
  Tensor* value;
};

// ---------------------------------------------------------------------------
// Layers. Each forward caches what its backward needs; backward fills the
// layer's gradient buffers and returns the gradient w.r.t. its input.
// ---------------------------------------------------------------------------

struct Conv2d {
  int cin = 0, cout = 0, k = 3;
  Tensor w, b, gw, gb;
  Tensor x_cache;

  Conv2d() = default;
  Conv2d(int cin_, int cout_, int k_ = 3);
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy, bool need_dx = true);
};

struct ConvTranspose2d {
  int cin = 0, cout = 0, k = 3, stride = 1, pad = 1, out_pad = 0;
  Tensor w, b, gw, gb;
  Tensor x_cache;

  ConvTranspose2d() = default;
  ConvTranspose2d(int cin_, int cout_, int stride_, int k_ = 3);
  void init(Rng& rng);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy, bool need_dx = true);
};

struct Linear {
  int in = 0, out = 0;
  Tensor w, b, gw, gb;
  Tensor x_cache;

  Linear() = default;
  Linear(int in_, int out_);
  void init(Rng& rng);
  void init_orthogonal(std::uint64_t seed);
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy, bool need_dx = true);
};

struct BatchNorm {
  int c = 0;
  double momentum = 0.1, eps = 1e-5;
  Tensor gamma, beta, ggamma, gbeta;
  Tensor run_mean, run_var;
  Tensor x_cache, mean_cache, var_cache;
  bool trained_forward = false;

  BatchNorm() = default;
  explicit BatchNorm(int c_);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
};

struct ReLU {
  Tensor y_cache;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
};

struct MaxPool2 {
  std::vector<std::int32_t> argmax;
  std::vector<int> in_shape;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
};

struct Sigmoid {
  Tensor y_cache;
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& dy) const;
};

// Orthogonal matrix [rows x cols]: orthonormal rows when rows <= cols,
// orthonormal columns otherwise. Deterministic in the seed.
Tensor orthogonal_matrix(int rows, int cols, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

struct EncoderConfig {
  int input_hw = 128;  // square single-channel input
  std::array<int, 4> channels = {32, 64, 128, 256};
  int latent_dim = 64;

  void validate() const;  // throws ConfigError
  int feature_hw() const { return input_hw / 16; }
  int flat_dim() const { return channels[3] * feature_hw() * feature_hw(); }
};

struct DecoderConfig {
  int output_hw = 128;
  std::array<int, 4> channels = {32, 64, 128, 256};  // encoder order
  int latent_dim = 64;

  static DecoderConfig mirror_of(const EncoderConfig& enc);
  void validate() const;
  void validate_against(const EncoderConfig& enc) const;
};

struct ClassifierConfig {
  int input_dim = 64;
  std::array<int, 2> hidden = {128, 64};
  int num_classes = 2;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

// Four conv blocks (three same-padded 3x3 convs, batch norm, ReLU, 2x2 max
// pool), then parallel fully connected heads for the posterior mean and the
// raw log-std. std = exp(raw) floored at core::kStdFloor.
class Encoder {
 public:
  struct Output {
    Tensor mu;   // [N, d]
    Tensor std;  // [N, d], strictly positive
  };

  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::uint64_t seed);

  Output forward(const Tensor& x, bool train);
  // dmu/dstd: gradients of the maximized objective w.r.t. mu and std.
  void backward(const Tensor& dmu, const Tensor& dstd);

  const EncoderConfig& config() const { return cfg_; }
  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  std::vector<std::string> structure() const;
  std::size_t param_count();

 private:
  struct Block {
    Conv2d c1, c2, c3;
    BatchNorm bn;
    ReLU relu;
    MaxPool2 pool;
  };
  EncoderConfig cfg_;
  std::array<Block, 4> blocks_;
  Linear fc_mean_, fc_logstd_;
  Tensor std_cache_;
  std::vector<int> pre_flat_shape_;
};

// Fully connected lift to the coarse grid, four transposed-conv blocks (the
// stride-2 transposed conv doubles the spatial size and steps down the
// channel schedule, two stride-1 transposed convs refine, then batch norm and
// ReLU), and a final 1-channel projection through a sigmoid.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const DecoderConfig& cfg, std::uint64_t seed);

  Tensor forward(const Tensor& z, bool train);  // [N, 1, H, W] in [0, 1]
  Tensor backward(const Tensor& dxhat);         // returns dz

  const DecoderConfig& config() const { return cfg_; }
  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  std::vector<std::string> structure() const;
  std::size_t param_count();

 private:
  struct Block {
    ConvTranspose2d up, t2, t3;
    BatchNorm bn;
    ReLU relu;
  };
  DecoderConfig cfg_;
  Linear fc_;
  std::array<Block, 4> blocks_;
  ConvTranspose2d proj_;
  Sigmoid sigmoid_;
  std::vector<int> grid_shape_;
};

// Three fully connected layers with batch norm + ReLU after each hidden
// layer; orthogonally initialized weights; softmax output.
class Classifier {
 public:
  struct Output {
    Tensor logits;  // [N, C]
    Tensor probs;   // [N, C], rows sum to 1
  };

  Classifier() = default;
  Classifier(const ClassifierConfig& cfg, std::uint64_t seed);

  Output forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dlogits);  // returns dx

  const ClassifierConfig& config() const { return cfg_; }
  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
  std::vector<std::string> structure() const;
  std::size_t param_count();

 private:
  ClassifierConfig cfg_;
  Linear fc1_, fc2_, fc3_;
  BatchNorm bn1_, bn2_;
  ReLU relu1_, relu2_;
};

Tensor softmax_rows(const Tensor& logits);

std::size_t count_params(const std::vector<ParamRef>& refs);

}  // namespace mvvae::nn
