#include "mvvae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mvvae/core.hpp"
#include "mvvae/errors.hpp"
#include "mvvae/kernels.hpp"

namespace mvvae::nn {

namespace K = mvvae::kernels;

namespace {

void he_uniform(Tensor& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.v) v = rng.uniform(-bound, bound);
}

// Interprets an activation tensor as [N, C, L] for batch norm.
void bn_dims(const Tensor& x, int c_expected, int& n, int& l) {
  if (x.shape.size() == 4) {
    if (x.shape[1] != c_expected) throw std::invalid_argument("batchnorm: channel mismatch");
    n = x.shape[0];
    l = x.shape[2] * x.shape[3];
  } else if (x.shape.size() == 2) {
    if (x.shape[1] != c_expected) throw std::invalid_argument("batchnorm: feature mismatch");
    n = x.shape[0];
    l = 1;
  } else {
    throw std::invalid_argument("batchnorm: rank must be 2 or 4");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2d::Conv2d(int cin_, int cout_, int k_)
    : cin(cin_), cout(cout_), k(k_),
      w({cout_, cin_, k_, k_}), b({cout_}),
      gw({cout_, cin_, k_, k_}), gb({cout_}) {}

void Conv2d::init(Rng& rng) { he_uniform(w, cin * k * k, rng); b.zero(); }

Tensor Conv2d::forward(const Tensor& x) {
  x_cache = x;
  const int n = x.shape[0], h = x.shape[2], wd = x.shape[3];
  Tensor y({n, cout, h, wd});
  K::conv2d_forward(x.data(), n, cin, h, wd, w.data(), cout, k, b.data(), y.data());
  return y;
}

Tensor Conv2d::backward(const Tensor& dy, bool need_dx) {
  const int n = x_cache.shape[0], h = x_cache.shape[2], wd = x_cache.shape[3];
  K::conv2d_backward_params(x_cache.data(), dy.data(), n, cin, cout, h, wd, k,
                            gw.data(), gb.data());
  Tensor dx;
  if (need_dx) {
    dx = Tensor(x_cache.shape);
    K::conv2d_backward_input(dy.data(), n, cout, h, wd, w.data(), cin, k, dx.data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ConvTranspose2d
// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(int cin_, int cout_, int stride_, int k_)
    : cin(cin_), cout(cout_), k(k_), stride(stride_), pad((k_ - 1) / 2),
      out_pad(stride_ - 1),
      w({cin_, cout_, k_, k_}), b({cout_}),
      gw({cin_, cout_, k_, k_}), gb({cout_}) {}

void ConvTranspose2d::init(Rng& rng) { he_uniform(w, cin * k * k, rng); b.zero(); }

Tensor ConvTranspose2d::forward(const Tensor& x) {
  x_cache = x;
  const int n = x.shape[0], h = x.shape[2], wd = x.shape[3];
  const int ho = K::conv_transpose2d_out_size(h, k, stride, pad, out_pad);
  const int wo = K::conv_transpose2d_out_size(wd, k, stride, pad, out_pad);
  Tensor y({n, cout, ho, wo});
  K::conv_transpose2d_forward(x.data(), n, cin, h, wd, w.data(), cout, k,
                              stride, pad, out_pad, b.data(), y.data());
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& dy, bool need_dx) {
  const int n = x_cache.shape[0], h = x_cache.shape[2], wd = x_cache.shape[3];
  const int ho = dy.shape[2], wo = dy.shape[3];
  K::conv_transpose2d_backward_params(x_cache.data(), dy.data(), n, cin, cout,
                                      h, wd, k, stride, pad, ho, wo, gw.data(),
                                      gb.data());
  Tensor dx;
  if (need_dx) {
    dx = Tensor(x_cache.shape);
    K::conv_transpose2d_backward_input(dy.data(), n, cout, ho, wo, w.data(),
                                       cin, k, stride, pad, h, wd, dx.data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

Linear::Linear(int in_, int out_)
    : in(in_), out(out_), w({out_, in_}), b({out_}), gw({out_, in_}), gb({out_}) {}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& v : w.v) v = rng.uniform(-bound, bound);
  b.zero();
}

void Linear::init_orthogonal(std::uint64_t seed) {
  w = orthogonal_matrix(out, in, seed);
  b.zero();
}

Tensor Linear::forward(const Tensor& x) {
  x_cache = x;
  const int n = x.shape[0];
  Tensor y({n, out});
  K::linear_forward(x.data(), n, in, w.data(), out, b.data(), y.data());
  return y;
}

Tensor Linear::backward(const Tensor& dy, bool need_dx) {
  const int n = x_cache.shape[0];
  K::linear_backward_params(x_cache.data(), dy.data(), n, in, out, gw.data(), gb.data());
  Tensor dx;
  if (need_dx) {
    dx = Tensor(x_cache.shape);
    K::linear_backward_input(dy.data(), n, out, w.data(), in, dx.data());
  }
  return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int c_)
    : c(c_), gamma({c_}), beta({c_}), ggamma({c_}), gbeta({c_}),
      run_mean({c_}), run_var({c_}), mean_cache({c_}), var_cache({c_}) {
  gamma.fill(1.0);
  run_var.fill(1.0);
}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  int n = 0, l = 0;
  bn_dims(x, c, n, l);
  Tensor y(x.shape);
  trained_forward = train;
  if (train) {
    x_cache = x;
    K::batchnorm_forward_train(x.data(), n, c, l, gamma.data(), beta.data(),
                               eps, y.data(), mean_cache.data(), var_cache.data());
    const double m = static_cast<double>(n) * l;
    const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
    for (int ch = 0; ch < c; ++ch) {
      run_mean[ch] = (1.0 - momentum) * run_mean[ch] + momentum * mean_cache[ch];
      run_var[ch] = (1.0 - momentum) * run_var[ch] + momentum * var_cache[ch] * unbias;
    }
  } else {
    K::batchnorm_forward_eval(x.data(), n, c, l, gamma.data(), beta.data(),
                              run_mean.data(), run_var.data(), eps, y.data());
  }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  Tensor dx(dy.shape);
  int n = 0, l = 0;
  bn_dims(dy, c, n, l);
  if (trained_forward) {
    K::batchnorm_backward(x_cache.data(), dy.data(), n, c, l, gamma.data(),
                          mean_cache.data(), var_cache.data(), eps, dx.data(),
                          ggamma.data(), gbeta.data());
  } else {
    // Eval mode: the running statistics are constants.
    ggamma.zero();
    gbeta.zero();
    for (int in = 0; in < n; ++in)
      for (int ch = 0; ch < c; ++ch) {
        const double g = gamma[ch] / std::sqrt(run_var[ch] + eps);
        const std::size_t base = (static_cast<std::size_t>(in) * c + ch) * l;
        for (int i = 0; i < l; ++i) dx[base + i] = dy[base + i] * g;
      }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU / MaxPool2 / Sigmoid
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  y_cache = y;
  return y;
}

Tensor ReLU::backward(const Tensor& dy) const {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx[i] = y_cache[i] > 0.0 ? dy[i] : 0.0;
  return dx;
}

Tensor MaxPool2::forward(const Tensor& x) {
  const int n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h % 2 != 0 || w % 2 != 0)
    throw std::invalid_argument("maxpool2: spatial dims must be even");
  in_shape = x.shape;
  Tensor y({n, c, h / 2, w / 2});
  argmax.resize(y.size());
  K::maxpool2_forward(x.data(), n, c, h, w, y.data(), argmax.data());
  return y;
}

Tensor MaxPool2::backward(const Tensor& dy) const {
  Tensor dx(in_shape);
  K::maxpool2_backward(dy.data(), in_shape[0], in_shape[1], in_shape[2],
                       in_shape[3], argmax.data(), dx.data());
  return dx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
  y_cache = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& dy) const {
  Tensor dx(dy.shape);
  for (std::size_t i = 0; i < dy.size(); ++i)
    dx[i] = dy[i] * y_cache[i] * (1.0 - y_cache[i]);
  return dx;
}

// ---------------------------------------------------------------------------
// Orthogonal init
// ---------------------------------------------------------------------------

Tensor orthogonal_matrix(int rows, int cols, std::uint64_t seed) {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("orthogonal_matrix: non-positive size");
  const int n = std::max(rows, cols);
  const int m = std::min(rows, cols);
  Rng rng(derive_seed(seed, 0x0497A11));

  // Gaussian n x m, then modified Gram-Schmidt with one re-orthogonalization
  // pass. Columns of q come out orthonormal.
  std::vector<double> q(static_cast<std::size_t>(n) * m);
  for (auto& v : q) v = rng.normal();
  for (int j = 0; j < m; ++j) {
    for (int pass = 0; pass < 2; ++pass)
      for (int i = 0; i < j; ++i) {
        double dot = 0.0;
        for (int r = 0; r < n; ++r)
          dot += q[static_cast<std::size_t>(r) * m + i] *
                 q[static_cast<std::size_t>(r) * m + j];
        for (int r = 0; r < n; ++r)
          q[static_cast<std::size_t>(r) * m + j] -=
              dot * q[static_cast<std::size_t>(r) * m + i];
      }
    double norm = 0.0;
    for (int r = 0; r < n; ++r) {
      const double v = q[static_cast<std::size_t>(r) * m + j];
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (int r = 0; r < n; ++r) q[static_cast<std::size_t>(r) * m + j] /= norm;
  }

  Tensor w({rows, cols});
  if (rows <= cols) {
    // w = q^T so the rows are orthonormal.
    for (int r = 0; r < rows; ++r)
      for (int cl = 0; cl < cols; ++cl)
        w[static_cast<std::size_t>(r) * cols + cl] =
            q[static_cast<std::size_t>(cl) * m + r];
  } else {
    for (int r = 0; r < rows; ++r)
      for (int cl = 0; cl < cols; ++cl)
        w[static_cast<std::size_t>(r) * cols + cl] =
            q[static_cast<std::size_t>(r) * m + cl];
  }
  return w;
}

// ---------------------------------------------------------------------------
// Configs
// ---------------------------------------------------------------------------

void EncoderConfig::validate() const {
  if (input_hw < 16 || input_hw % 16 != 0)
    throw ConfigError("encoder: input size must be a positive multiple of 16");
  if (latent_dim < 1) throw ConfigError("encoder: latent_dim must be >= 1");
  for (std::size_t i = 0; i < channels.size(); ++i) {
    if (channels[i] < 1) throw ConfigError("encoder: channels must be >= 1");
    if (i > 0 && channels[i] < channels[i - 1])
      throw ConfigError("encoder: channel schedule must be nondecreasing");
  }
}

DecoderConfig DecoderConfig::mirror_of(const EncoderConfig& enc) {
  DecoderConfig dec;
  dec.output_hw = enc.input_hw;
  dec.channels = enc.channels;
  dec.latent_dim = enc.latent_dim;
  return dec;
}

void DecoderConfig::validate() const {
  EncoderConfig enc;
  enc.input_hw = output_hw;
  enc.channels = channels;
  enc.latent_dim = latent_dim;
  enc.validate();
}

void DecoderConfig::validate_against(const EncoderConfig& enc) const {
  validate();
  if (output_hw != enc.input_hw || channels != enc.channels ||
      latent_dim != enc.latent_dim)
    throw ConfigError("decoder: config does not mirror the paired encoder");
}

void ClassifierConfig::validate() const {
  if (input_dim < 1) throw ConfigError("classifier: input_dim must be >= 1");
  if (hidden[0] < 1 || hidden[1] < 1)
    throw ConfigError("classifier: hidden sizes must be >= 1");
  if (num_classes < 2) throw ConfigError("classifier: need at least 2 classes");
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0xE4C0DE));
  int prev = 1;
  for (int bi = 0; bi < 4; ++bi) {
    const int ch = cfg_.channels[bi];
    blocks_[bi].c1 = Conv2d(prev, ch);
    blocks_[bi].c2 = Conv2d(ch, ch);
    blocks_[bi].c3 = Conv2d(ch, ch);
    blocks_[bi].bn = BatchNorm(ch);
    blocks_[bi].c1.init(rng);
    blocks_[bi].c2.init(rng);
    blocks_[bi].c3.init(rng);
    prev = ch;
  }
  fc_mean_ = Linear(cfg_.flat_dim(), cfg_.latent_dim);
  fc_logstd_ = Linear(cfg_.flat_dim(), cfg_.latent_dim);
  fc_mean_.init(rng);
  fc_logstd_.init(rng);
}

Encoder::Output Encoder::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 4 || x.shape[1] != 1 || x.shape[2] != cfg_.input_hw ||
      x.shape[3] != cfg_.input_hw)
    throw std::invalid_argument("encoder: input must be [N,1,H,W] at the configured size");
  Tensor h = x;
  for (auto& blk : blocks_) {
    h = blk.c1.forward(h);
    h = blk.c2.forward(h);
    h = blk.c3.forward(h);
    h = blk.bn.forward(h, train);
    h = blk.relu.forward(h);
    h = blk.pool.forward(h);
  }
  pre_flat_shape_ = h.shape;
  Tensor flat;
  flat.shape = {h.shape[0], cfg_.flat_dim()};
  flat.v = std::move(h.v);

  Output out;
  out.mu = fc_mean_.forward(flat);
  Tensor raw = fc_logstd_.forward(flat);
  out.std = Tensor(raw.shape);
  for (std::size_t i = 0; i < raw.size(); ++i)
    out.std[i] = std::max(std::exp(raw[i]), core::kStdFloor);
  std_cache_ = out.std;
  return out;
}

void Encoder::backward(const Tensor& dmu, const Tensor& dstd) {
  // Chain through std = exp(raw); the floor has zero derivative below it.
  Tensor draw(dstd.shape);
  for (std::size_t i = 0; i < dstd.size(); ++i)
    draw[i] = std_cache_[i] > core::kStdFloor ? dstd[i] * std_cache_[i] : 0.0;

  Tensor dflat = fc_mean_.backward(dmu);
  Tensor dflat2 = fc_logstd_.backward(draw);
  for (std::size_t i = 0; i < dflat.size(); ++i) dflat[i] += dflat2[i];

  Tensor dh;
  dh.shape = pre_flat_shape_;
  dh.v = std::move(dflat.v);
  for (int bi = 3; bi >= 0; --bi) {
    auto& blk = blocks_[bi];
    dh = blk.pool.backward(dh);
    dh = blk.relu.backward(dh);
    dh = blk.bn.backward(dh);
    dh = blk.c3.backward(dh);
    dh = blk.c2.backward(dh);
    dh = blk.c1.backward(dh, bi != 0);
  }
}

std::vector<ParamRef> Encoder::params() {
  std::vector<ParamRef> refs;
  for (int bi = 0; bi < 4; ++bi) {
    auto& blk = blocks_[bi];
    const std::string p = "block" + std::to_string(bi) + ".";
    refs.push_back({p + "conv1.w", &blk.c1.w, &blk.c1.gw});
    refs.push_back({p + "conv1.b", &blk.c1.b, &blk.c1.gb});
    refs.push_back({p + "conv2.w", &blk.c2.w, &blk.c2.gw});
    refs.push_back({p + "conv2.b", &blk.c2.b, &blk.c2.gb});
    refs.push_back({p + "conv3.w", &blk.c3.w, &blk.c3.gw});
    refs.push_back({p + "conv3.b", &blk.c3.b, &blk.c3.gb});
    refs.push_back({p + "bn.gamma", &blk.bn.gamma, &blk.bn.ggamma});
    refs.push_back({p + "bn.beta", &blk.bn.beta, &blk.bn.gbeta});
  }
  refs.push_back({"fc_mean.w", &fc_mean_.w, &fc_mean_.gw});
  refs.push_back({"fc_mean.b", &fc_mean_.b, &fc_mean_.gb});
  refs.push_back({"fc_logstd.w", &fc_logstd_.w, &fc_logstd_.gw});
  refs.push_back({"fc_logstd.b", &fc_logstd_.b, &fc_logstd_.gb});
  return refs;
}

std::vector<BufferRef> Encoder::buffers() {
  std::vector<BufferRef> refs;
  for (int bi = 0; bi < 4; ++bi) {
    const std::string p = "block" + std::to_string(bi) + ".bn.";
    refs.push_back({p + "run_mean", &blocks_[bi].bn.run_mean});
    refs.push_back({p + "run_var", &blocks_[bi].bn.run_var});
  }
  return refs;
}

std::vector<std::string> Encoder::structure() const {
  std::vector<std::string> s;
  int prev = 1;
  for (int bi = 0; bi < 4; ++bi) {
    const int ch = cfg_.channels[bi];
    s.push_back("conv(" + std::to_string(prev) + "->" + std::to_string(ch) + ")");
    s.push_back("conv(" + std::to_string(ch) + "->" + std::to_string(ch) + ")");
    s.push_back("conv(" + std::to_string(ch) + "->" + std::to_string(ch) + ")");
    s.push_back("batchnorm(" + std::to_string(ch) + ")");
    s.push_back("relu");
    s.push_back("maxpool2");
    prev = ch;
  }
  s.push_back("flatten");
  s.push_back("linear-mean(" + std::to_string(cfg_.flat_dim()) + "->" +
              std::to_string(cfg_.latent_dim) + ")");
  s.push_back("linear-logstd(" + std::to_string(cfg_.flat_dim()) + "->" +
              std::to_string(cfg_.latent_dim) + ")");
  s.push_back("exp");
  return s;
}

std::size_t Encoder::param_count() { return count_params(params()); }

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

Decoder::Decoder(const DecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(seed, 0xDEC0DE));
  const int g = cfg_.output_hw / 16;
  const auto& ch = cfg_.channels;
  fc_ = Linear(cfg_.latent_dim, ch[3] * g * g);
  fc_.init(rng);
  // Channel path: ch[3] -> ch[2] -> ch[1] -> ch[0] -> ch[0], then 1.
  const int ins[4] = {ch[3], ch[2], ch[1], ch[0]};
  const int outs[4] = {ch[2], ch[1], ch[0], ch[0]};
  for (int bi = 0; bi < 4; ++bi) {
    blocks_[bi].up = ConvTranspose2d(ins[bi], outs[bi], 2);
    blocks_[bi].t2 = ConvTranspose2d(outs[bi], outs[bi], 1);
    blocks_[bi].t3 = ConvTranspose2d(outs[bi], outs[bi], 1);
    blocks_[bi].bn = BatchNorm(outs[bi]);
    blocks_[bi].up.init(rng);
    blocks_[bi].t2.init(rng);
    blocks_[bi].t3.init(rng);
  }
  proj_ = ConvTranspose2d(ch[0], 1, 1);
  proj_.init(rng);
}

Tensor Decoder::forward(const Tensor& z, bool train) {
  if (z.shape.size() != 2 || z.shape[1] != cfg_.latent_dim)
    throw std::invalid_argument("decoder: latent must be [N, latent_dim]");
  const int g = cfg_.output_hw / 16;
  Tensor h = fc_.forward(z);
  grid_shape_ = {z.shape[0], cfg_.channels[3], g, g};
  Tensor grid;
  grid.shape = grid_shape_;
  grid.v = std::move(h.v);
  for (auto& blk : blocks_) {
    grid = blk.up.forward(grid);
    grid = blk.t2.forward(grid);
    grid = blk.t3.forward(grid);
    grid = blk.bn.forward(grid, train);
    grid = blk.relu.forward(grid);
  }
  grid = proj_.forward(grid);
  return sigmoid_.forward(grid);
}

Tensor Decoder::backward(const Tensor& dxhat) {
  Tensor dh = sigmoid_.backward(dxhat);
  dh = proj_.backward(dh);
  for (int bi = 3; bi >= 0; --bi) {
    auto& blk = blocks_[bi];
    dh = blk.relu.backward(dh);
    dh = blk.bn.backward(dh);
    dh = blk.t3.backward(dh);
    dh = blk.t2.backward(dh);
    dh = blk.up.backward(dh);
  }
  Tensor dflat;
  dflat.shape = {dh.shape[0], cfg_.channels[3] * (cfg_.output_hw / 16) *
                                  (cfg_.output_hw / 16)};
  dflat.v = std::move(dh.v);
  return fc_.backward(dflat);
}

std::vector<ParamRef> Decoder::params() {
  std::vector<ParamRef> refs;
  refs.push_back({"fc.w", &fc_.w, &fc_.gw});
  refs.push_back({"fc.b", &fc_.b, &fc_.gb});
  for (int bi = 0; bi < 4; ++bi) {
    auto& blk = blocks_[bi];
    const std::string p = "block" + std::to_string(bi) + ".";
    refs.push_back({p + "up.w", &blk.up.w, &blk.up.gw});
    refs.push_back({p + "up.b", &blk.up.b, &blk.up.gb});
    refs.push_back({p + "t2.w", &blk.t2.w, &blk.t2.gw});
    refs.push_back({p + "t2.b", &blk.t2.b, &blk.t2.gb});
    refs.push_back({p + "t3.w", &blk.t3.w, &blk.t3.gw});
    refs.push_back({p + "t3.b", &blk.t3.b, &blk.t3.gb});
    refs.push_back({p + "bn.gamma", &blk.bn.gamma, &blk.bn.ggamma});
    refs.push_back({p + "bn.beta", &blk.bn.beta, &blk.bn.gbeta});
  }
  refs.push_back({"proj.w", &proj_.w, &proj_.gw});
  refs.push_back({"proj.b", &proj_.b, &proj_.gb});
  return refs;
}

std::vector<BufferRef> Decoder::buffers() {
  std::vector<BufferRef> refs;
  for (int bi = 0; bi < 4; ++bi) {
    const std::string p = "block" + std::to_string(bi) + ".bn.";
    refs.push_back({p + "run_mean", &blocks_[bi].bn.run_mean});
    refs.push_back({p + "run_var", &blocks_[bi].bn.run_var});
  }
  return refs;
}

std::vector<std::string> Decoder::structure() const {
  std::vector<std::string> s;
  const int g = cfg_.output_hw / 16;
  s.push_back("linear(" + std::to_string(cfg_.latent_dim) + "->" +
              std::to_string(cfg_.channels[3] * g * g) + ")");
  s.push_back("reshape");
  const auto& ch = cfg_.channels;
  const int ins[4] = {ch[3], ch[2], ch[1], ch[0]};
  const int outs[4] = {ch[2], ch[1], ch[0], ch[0]};
  for (int bi = 0; bi < 4; ++bi) {
    s.push_back("tconv_up(" + std::to_string(ins[bi]) + "->" +
                std::to_string(outs[bi]) + ")");
    s.push_back("tconv(" + std::to_string(outs[bi]) + "->" +
                std::to_string(outs[bi]) + ")");
    s.push_back("tconv(" + std::to_string(outs[bi]) + "->" +
                std::to_string(outs[bi]) + ")");
    s.push_back("batchnorm(" + std::to_string(outs[bi]) + ")");
    s.push_back("relu");
  }
  s.push_back("tconv(" + std::to_string(ch[0]) + "->1)");
  s.push_back("sigmoid");
  return s;
}

std::size_t Decoder::param_count() { return count_params(params()); }

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

Classifier::Classifier(const ClassifierConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  fc1_ = Linear(cfg_.input_dim, cfg_.hidden[0]);
  fc2_ = Linear(cfg_.hidden[0], cfg_.hidden[1]);
  fc3_ = Linear(cfg_.hidden[1], cfg_.num_classes);
  fc1_.init_orthogonal(derive_seed(seed, 0xC1A55, 1));
  fc2_.init_orthogonal(derive_seed(seed, 0xC1A55, 2));
  fc3_.init_orthogonal(derive_seed(seed, 0xC1A55, 3));
  bn1_ = BatchNorm(cfg_.hidden[0]);
  bn2_ = BatchNorm(cfg_.hidden[1]);
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor probs(logits.shape);
  const int n = logits.shape[0], c = logits.shape[1];
  for (int r = 0; r < n; ++r) {
    const double* lr = logits.data() + static_cast<std::size_t>(r) * c;
    double mx = lr[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, lr[i]);
    double s = 0.0;
    for (int i = 0; i < c; ++i) s += std::exp(lr[i] - mx);
    for (int i = 0; i < c; ++i)
      probs[static_cast<std::size_t>(r) * c + i] = std::exp(lr[i] - mx) / s;
  }
  return probs;
}

Classifier::Output Classifier::forward(const Tensor& x, bool train) {
  Tensor h = fc1_.forward(x);
  h = bn1_.forward(h, train);
  h = relu1_.forward(h);
  h = fc2_.forward(h);
  h = bn2_.forward(h, train);
  h = relu2_.forward(h);
  Output out;
  out.logits = fc3_.forward(h);
  out.probs = softmax_rows(out.logits);
  return out;
}

Tensor Classifier::backward(const Tensor& dlogits) {
  Tensor dh = fc3_.backward(dlogits);
  dh = relu2_.backward(dh);
  dh = bn2_.backward(dh);
  dh = fc2_.backward(dh);
  dh = relu1_.backward(dh);
  dh = bn1_.backward(dh);
  return fc1_.backward(dh);
}

std::vector<ParamRef> Classifier::params() {
  return {
      {"fc1.w", &fc1_.w, &fc1_.gw},
      {"fc1.b", &fc1_.b, &fc1_.gb},
      {"bn1.gamma", &bn1_.gamma, &bn1_.ggamma},
      {"bn1.beta", &bn1_.beta, &bn1_.gbeta},
      {"fc2.w", &fc2_.w, &fc2_.gw},
      {"fc2.b", &fc2_.b, &fc2_.gb},
      {"bn2.gamma", &bn2_.gamma, &bn2_.ggamma},
      {"bn2.beta", &bn2_.beta, &bn2_.gbeta},
      {"fc3.w", &fc3_.w, &fc3_.gw},
      {"fc3.b", &fc3_.b, &fc3_.gb},
  };
}

std::vector<BufferRef> Classifier::buffers() {
  return {
      {"bn1.run_mean", &bn1_.run_mean},
      {"bn1.run_var", &bn1_.run_var},
      {"bn2.run_mean", &bn2_.run_mean},
      {"bn2.run_var", &bn2_.run_var},
  };
}

std::vector<std::string> Classifier::structure() const {
  return {
      "linear(" + std::to_string(cfg_.input_dim) + "->" + std::to_string(cfg_.hidden[0]) + ")",
      "batchnorm(" + std::to_string(cfg_.hidden[0]) + ")",
      "relu",
      "linear(" + std::to_string(cfg_.hidden[0]) + "->" + std::to_string(cfg_.hidden[1]) + ")",
      "batchnorm(" + std::to_string(cfg_.hidden[1]) + ")",
      "relu",
      "linear(" + std::to_string(cfg_.hidden[1]) + "->" + std::to_string(cfg_.num_classes) + ")",
      "softmax",
  };
}

std::size_t Classifier::param_count() { return count_params(params()); }

std::size_t count_params(const std::vector<ParamRef>& refs) {
  std::size_t n = 0;
  for (const auto& r : refs) n += r.value->size();
  return n;
}

}  // namespace mvvae::nn
