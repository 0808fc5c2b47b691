#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "mvvae/checkpoint.hpp"
#include "mvvae/errors.hpp"
#include "mvvae/nn.hpp"
#include "mvvae/rng.hpp"

using namespace mvvae;
using namespace mvvae::nn;

namespace {

Tensor random_image(Rng& rng, int n, int hw) {
  Tensor x({n, 1, hw, hw});
  for (auto& v : x.v) v = rng.uniform(0.0, 1.0);
  return x;
}

double det4(const Tensor& m) {
  // Gaussian elimination with partial pivoting on a 4x4 copy.
  double a[4][4];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a[r][c] = m[static_cast<std::size_t>(r) * 4 + c];
  double det = 1.0;
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (piv != col) {
      for (int c = 0; c < 4; ++c) std::swap(a[piv][c], a[col][c]);
      det = -det;
    }
    det *= a[col][col];
    for (int r = col + 1; r < 4; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
    }
  }
  return det;
}

}  // namespace

TEST_CASE("orthogonal_matrix properties") {
  const Tensor sq = orthogonal_matrix(4, 4, 7);
  CHECK(std::abs(std::abs(det4(sq)) - 1.0) < 1e-6);

  const Tensor wide = orthogonal_matrix(2, 5, 8);
  for (int r = 0; r < 2; ++r)
    for (int r2 = 0; r2 < 2; ++r2) {
      double dot = 0.0;
      for (int c = 0; c < 5; ++c)
        dot += wide[static_cast<std::size_t>(r) * 5 + c] *
               wide[static_cast<std::size_t>(r2) * 5 + c];
      CHECK(std::abs(dot - (r == r2 ? 1.0 : 0.0)) < 1e-6);
    }

  const Tensor tall = orthogonal_matrix(6, 3, 9);
  for (int c = 0; c < 3; ++c)
    for (int c2 = 0; c2 < 3; ++c2) {
      double dot = 0.0;
      for (int r = 0; r < 6; ++r)
        dot += tall[static_cast<std::size_t>(r) * 3 + c] *
               tall[static_cast<std::size_t>(r) * 3 + c2];
      CHECK(std::abs(dot - (c == c2 ? 1.0 : 0.0)) < 1e-6);
    }

  const Tensor again = orthogonal_matrix(4, 4, 7);
  CHECK(sq.v == again.v);
  const Tensor other = orthogonal_matrix(4, 4, 8);
  CHECK(sq.v != other.v);

  CHECK_THROWS(orthogonal_matrix(0, 3, 1));
}

TEST_CASE("encoder shape contract and std positivity") {
  EncoderConfig cfg;  // defaults: 128, [32,64,128,256], latent 64
  CHECK(cfg.feature_hw() == 8);
  CHECK(cfg.flat_dim() == 256 * 8 * 8);

  EncoderConfig small;
  small.input_hw = 32;
  small.channels = {2, 3, 4, 5};
  small.latent_dim = 6;
  Encoder enc(small, 42);
  Rng rng(1);
  auto x = random_image(rng, 3, 32);
  auto out = enc.forward(x, true);
  CHECK(out.mu.shape == std::vector<int>{3, 6});
  CHECK(out.std.shape == std::vector<int>{3, 6});
  for (double s : out.std.v) CHECK(s > 0.0);
}

TEST_CASE("encoder seeded determinism") {
  EncoderConfig cfg;
  cfg.input_hw = 32;
  cfg.channels = {2, 2, 2, 2};
  cfg.latent_dim = 4;
  Encoder a(cfg, 99), b(cfg, 99), c(cfg, 100);
  auto pa = a.params(), pb = b.params(), pc = c.params();
  bool all_equal = true, any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].value->v != pb[i].value->v) all_equal = false;
    if (pa[i].value->v != pc[i].value->v) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}

TEST_CASE("encoder and decoder structure follows the block recipe") {
  EncoderConfig ecfg;
  Encoder enc(ecfg, 1);
  const auto es = enc.structure();
  // Four blocks of conv,conv,conv,batchnorm,relu,maxpool2.
  REQUIRE(es.size() == 4 * 6 + 4);
  for (int bi = 0; bi < 4; ++bi) {
    CHECK(es[bi * 6 + 0].substr(0, 5) == "conv(");
    CHECK(es[bi * 6 + 1].substr(0, 5) == "conv(");
    CHECK(es[bi * 6 + 2].substr(0, 5) == "conv(");
    CHECK(es[bi * 6 + 3].substr(0, 10) == "batchnorm(");
    CHECK(es[bi * 6 + 4] == "relu");
    CHECK(es[bi * 6 + 5] == "maxpool2");
  }
  CHECK(es[24] == "flatten");
  CHECK(es[25] == "linear-mean(16384->64)");
  CHECK(es[26] == "linear-logstd(16384->64)");
  CHECK(es[27] == "exp");
  CHECK(es[0] == "conv(1->32)");
  CHECK(es[6] == "conv(32->64)");

  Decoder dec(DecoderConfig::mirror_of(ecfg), 1);
  const auto ds = dec.structure();
  REQUIRE(ds.size() == 2 + 4 * 5 + 2);
  CHECK(ds[0] == "linear(64->16384)");
  CHECK(ds[1] == "reshape");
  for (int bi = 0; bi < 4; ++bi) {
    CHECK(ds[2 + bi * 5 + 0].substr(0, 9) == "tconv_up(");
    CHECK(ds[2 + bi * 5 + 1].substr(0, 6) == "tconv(");
    CHECK(ds[2 + bi * 5 + 2].substr(0, 6) == "tconv(");
    CHECK(ds[2 + bi * 5 + 3].substr(0, 10) == "batchnorm(");
    CHECK(ds[2 + bi * 5 + 4] == "relu");
  }
  CHECK(ds[2 + 20] == "tconv(32->1)");
  CHECK(ds.back() == "sigmoid");

  Classifier clf(ClassifierConfig{64, {128, 64}, 3}, 1);
  const auto cs = clf.structure();
  const std::vector<std::string> want = {
      "linear(64->128)", "batchnorm(128)", "relu",     "linear(128->64)",
      "batchnorm(64)",   "relu",           "linear(64->3)", "softmax"};
  CHECK(cs == want);
}

TEST_CASE("decoder output shape, range and determinism") {
  EncoderConfig ecfg;
  ecfg.input_hw = 64;
  ecfg.channels = {2, 3, 4, 4};
  ecfg.latent_dim = 5;
  Decoder dec(DecoderConfig::mirror_of(ecfg), 3);
  Tensor z({2, 5});
  Rng rng(4);
  for (auto& v : z.v) v = rng.normal();
  auto y1 = dec.forward(z, false);
  CHECK(y1.shape == std::vector<int>{2, 1, 64, 64});
  for (double v : y1.v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  auto y2 = dec.forward(z, false);
  CHECK(y1.v == y2.v);
}

TEST_CASE("encoder/decoder round-trip shape identity across supported sizes") {
  for (int hw : {32, 64, 128}) {
    EncoderConfig ecfg;
    ecfg.input_hw = hw;
    ecfg.channels = {2, 2, 3, 3};
    ecfg.latent_dim = 4;
    Encoder enc(ecfg, 5);
    Decoder dec(DecoderConfig::mirror_of(ecfg), 6);
    Rng rng(7);
    auto x = random_image(rng, 2, hw);
    auto post = enc.forward(x, true);
    auto xhat = dec.forward(post.mu, true);
    CHECK(xhat.shape == x.shape);
  }
}

TEST_CASE("parameter counts are pinned for the default configs") {
  EncoderConfig ecfg;
  Encoder enc(ecfg, 1);
  // Per block: conv(prev->c) + 2x conv(c->c) + bn, each conv has c biases.
  auto conv_params = [](int cin, int cout) { return cout * cin * 9 + cout; };
  std::size_t want = 0;
  int prev = 1;
  for (int c : {32, 64, 128, 256}) {
    want += conv_params(prev, c) + 2 * conv_params(c, c) + 2 * c;
    prev = c;
  }
  want += 2 * (16384 * 64 + 64);  // mean and logstd heads
  CHECK(enc.param_count() == want);
  CHECK(enc.param_count() == 4053760);

  Decoder dec(DecoderConfig::mirror_of(ecfg), 1);
  auto tconv_params = [](int cin, int cout) { return cin * cout * 9 + cout; };
  std::size_t dwant = 64 * 16384 + 16384;
  const int ins[4] = {256, 128, 64, 32};
  const int outs[4] = {128, 64, 32, 32};
  for (int bi = 0; bi < 4; ++bi)
    dwant += tconv_params(ins[bi], outs[bi]) + 2 * tconv_params(outs[bi], outs[bi]) +
             2 * outs[bi];
  dwant += tconv_params(32, 1);
  CHECK(dec.param_count() == dwant);

  Classifier clf(ClassifierConfig{64, {128, 64}, 3}, 1);
  CHECK(clf.param_count() ==
        static_cast<std::size_t>(64 * 128 + 128 + 2 * 128 + 128 * 64 + 64 +
                                 2 * 64 + 64 * 3 + 3));
}

TEST_CASE("classifier probabilities form a distribution and init is orthogonal") {
  ClassifierConfig cfg{64, {128, 64}, 3};
  Classifier clf(cfg, 11);
  Rng rng(12);
  Tensor x({5, 64});
  for (auto& v : x.v) v = rng.uniform(-2.0, 2.0);
  auto out = clf.forward(x, true);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double p = out.probs[static_cast<std::size_t>(r) * 3 + c];
      CHECK(p >= 0.0);
      s += p;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }

  // A hidden weight matrix with rows <= cols has orthonormal rows at init.
  ClassifierConfig wide{256, {128, 64}, 2};
  Classifier wclf(wide, 13);
  auto refs = wclf.params();
  const Tensor& w1 = *refs[0].value;  // fc1.w is [128, 256]
  REQUIRE(w1.shape == std::vector<int>{128, 256});
  double worst = 0.0;
  for (int r = 0; r < 128; ++r)
    for (int r2 = 0; r2 < 128; ++r2) {
      double dot = 0.0;
      for (int c = 0; c < 256; ++c)
        dot += w1[static_cast<std::size_t>(r) * 256 + c] *
               w1[static_cast<std::size_t>(r2) * 256 + c];
      worst = std::max(worst, std::abs(dot - (r == r2 ? 1.0 : 0.0)));
    }
  CHECK(worst < 1e-5);
}

TEST_CASE("classifier logits stay finite for large inputs") {
  Classifier clf(ClassifierConfig{8, {16, 8}, 3}, 21);
  Tensor x({4, 8});
  Rng rng(22);
  for (auto& v : x.v) v = rng.uniform(-1000.0, 1000.0);
  auto out = clf.forward(x, true);
  for (double v : out.logits.v) CHECK(std::isfinite(v));
}

TEST_CASE("config invariant violations are construction errors") {
  EncoderConfig bad;
  bad.channels = {32, 16, 64, 128};  // decreasing step
  CHECK_THROWS_AS(Encoder(bad, 1), ConfigError);

  EncoderConfig bad2;
  bad2.input_hw = 100;  // not a multiple of 16
  CHECK_THROWS_AS(Encoder(bad2, 1), ConfigError);

  CHECK_THROWS_AS(Classifier(ClassifierConfig{8, {16, 8}, 1}, 1), ConfigError);

  EncoderConfig enc_cfg;
  DecoderConfig mism = DecoderConfig::mirror_of(enc_cfg);
  mism.latent_dim += 1;
  CHECK_THROWS_AS(mism.validate_against(enc_cfg), ConfigError);
}

TEST_CASE("encoder backward matches finite differences on a tiny model") {
  EncoderConfig cfg;
  cfg.input_hw = 16;
  cfg.channels = {1, 1, 2, 2};
  cfg.latent_dim = 2;
  Encoder enc(cfg, 31);
  Rng rng(32);
  auto x = random_image(rng, 2, 16);

  // Loss = sum(a * mu) + sum(b * std).
  Tensor a({2, 2}), b({2, 2});
  for (auto& v : a.v) v = rng.uniform(-1.0, 1.0);
  for (auto& v : b.v) v = rng.uniform(-1.0, 1.0);

  auto loss = [&]() {
    auto out = enc.forward(x, true);
    double s = 0.0;
    for (std::size_t i = 0; i < out.mu.size(); ++i)
      s += a[i] * out.mu[i] + b[i] * out.std[i];
    return s;
  };

  loss();
  enc.backward(a, b);

  auto refs = enc.params();
  const double h = 1e-5;
  int checked = 0;
  for (auto& ref : refs) {
    const std::size_t stride = std::max<std::size_t>(1, ref.value->size() / 3);
    for (std::size_t i = 0; i < ref.value->size(); i += stride) {
      const double save = (*ref.value)[i];
      (*ref.value)[i] = save + h;
      const double lp = loss();
      (*ref.value)[i] = save - h;
      const double lm = loss();
      (*ref.value)[i] = save;
      const double num = (lp - lm) / (2 * h);
      const double ana = (*ref.grad)[i];
      const double scale = std::max({std::abs(num), std::abs(ana), 1e-4});
      CHECK(std::abs(num - ana) / scale < 2e-3);
      ++checked;
    }
  }
  CHECK(checked > 20);
}

TEST_CASE("decoder backward matches finite differences on a tiny model") {
  EncoderConfig ecfg;
  ecfg.input_hw = 16;
  ecfg.channels = {1, 1, 2, 2};
  ecfg.latent_dim = 2;
  Decoder dec(DecoderConfig::mirror_of(ecfg), 41);
  Rng rng(42);
  Tensor z({2, 2});
  for (auto& v : z.v) v = rng.normal();
  Tensor c;

  auto loss = [&]() {
    auto y = dec.forward(z, true);
    if (c.size() == 0) {
      c = Tensor(y.shape);
      Rng crng(43);
      for (auto& v : c.v) v = crng.uniform(-1.0, 1.0);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
    return s;
  };

  loss();
  Tensor dz = dec.backward(c);

  const double h = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double save = z[i];
    z[i] = save + h;
    const double lp = loss();
    z[i] = save - h;
    const double lm = loss();
    z[i] = save;
    const double num = (lp - lm) / (2 * h);
    const double scale = std::max({std::abs(num), std::abs(dz[i]), 1e-4});
    CHECK(std::abs(num - dz[i]) / scale < 2e-3);
  }

  auto refs = dec.params();
  int checked = 0;
  for (auto& ref : refs) {
    const std::size_t stride = std::max<std::size_t>(1, ref.value->size() / 2);
    for (std::size_t i = 0; i < ref.value->size(); i += stride) {
      const double save = (*ref.value)[i];
      (*ref.value)[i] = save + h;
      const double lp = loss();
      (*ref.value)[i] = save - h;
      const double lm = loss();
      (*ref.value)[i] = save;
      const double num = (lp - lm) / (2 * h);
      const double ana = (*ref.grad)[i];
      const double scale = std::max({std::abs(num), std::abs(ana), 1e-4});
      CHECK(std::abs(num - ana) / scale < 2e-3);
      ++checked;
    }
  }
  CHECK(checked > 15);
}

TEST_CASE("classifier backward matches finite differences") {
  ClassifierConfig cfg{6, {8, 4}, 3};
  Classifier clf(cfg, 51);
  Rng rng(52);
  Tensor x({4, 6});
  for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
  Tensor d({4, 3});
  for (auto& v : d.v) v = rng.uniform(-1.0, 1.0);

  auto loss = [&]() {
    auto out = clf.forward(x, true);
    double s = 0.0;
    for (std::size_t i = 0; i < out.logits.size(); ++i) s += d[i] * out.logits[i];
    return s;
  };
  loss();
  Tensor dx = clf.backward(d);

  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); i += 5) {
    const double save = x[i];
    x[i] = save + h;
    const double lp = loss();
    x[i] = save - h;
    const double lm = loss();
    x[i] = save;
    const double num = (lp - lm) / (2 * h);
    const double scale = std::max({std::abs(num), std::abs(dx[i]), 1e-4});
    CHECK(std::abs(num - dx[i]) / scale < 2e-3);
  }
}

TEST_CASE("checkpoint round-trip preserves arrays, seed and config") {
  Checkpoint ckpt;
  ckpt.seed = 1234567890123456789ULL;
  ckpt.config_text = "experiment.mode = mmvm\n";
  Rng rng(61);
  Tensor t1({3, 4});
  for (auto& v : t1.v) v = rng.normal();
  Tensor t2({2, 2, 3, 3});
  for (auto& v : t2.v) v = rng.normal();
  ckpt.arrays["enc/w"] = t1;
  ckpt.arrays["dec/w"] = t2;

  const std::string path = "/tmp/mvvae_test_ckpt/model.ckpt";
  std::filesystem::remove_all("/tmp/mvvae_test_ckpt");
  save_checkpoint(path, ckpt);
  auto loaded = load_checkpoint(path);
  CHECK(loaded.seed == ckpt.seed);
  CHECK(loaded.config_text == ckpt.config_text);
  REQUIRE(loaded.arrays.size() == 2);
  CHECK(loaded.arrays.at("enc/w").v == t1.v);
  CHECK(loaded.arrays.at("enc/w").shape == t1.shape);
  CHECK(loaded.arrays.at("dec/w").v == t2.v);

  CHECK_THROWS_AS(load_checkpoint("/tmp/mvvae_test_ckpt/nope.ckpt"), DataError);
}
