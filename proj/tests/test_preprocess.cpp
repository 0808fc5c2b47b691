#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "mvvae/errors.hpp"
#include "mvvae/preprocess.hpp"
#include "mvvae/rng.hpp"

using namespace mvvae;
using namespace mvvae::aug;

namespace {

Tensor constant_frame(int hw, double v) {
  Tensor f({hw, hw});
  f.fill(v);
  return f;
}

Tensor random_frame(Rng& rng, int h, int w) {
  Tensor f({h, w});
  for (auto& v : f.v) v = rng.uniform(0.0, 1.0);
  return f;
}

// Independent non-separable bicubic evaluation at one output pixel, used as
// the oracle for spot checks.
double reference_bicubic_at(const Tensor& src, int out_hw, int oy, int ox) {
  const int h = src.shape[0], w = src.shape[1];
  const double sx = static_cast<double>(w) / out_hw;
  const double sy = static_cast<double>(h) / out_hw;
  const double fx = (ox + 0.5) * sx - 0.5;
  const double fy = (oy + 0.5) * sy - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  auto kernel = [](double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
    return 0.0;
  };
  double acc = 0.0;
  for (int j = -1; j <= 2; ++j)
    for (int i = -1; i <= 2; ++i) {
      const int yy = std::clamp(y0 + j, 0, h - 1);
      const int xx = std::clamp(x0 + i, 0, w - 1);
      acc += kernel(fy - (y0 + j)) * kernel(fx - (x0 + i)) *
             src[static_cast<std::size_t>(yy) * w + xx];
    }
  return std::clamp(acc, 0.0, 1.0);
}

AugmentParams identity_params() {
  AugmentParams p;
  p.jitter_lo = p.jitter_hi = 1.0;
  p.blur_prob = 0.0;
  p.saltpepper_threshold = 0.0;
  p.gauss_noise_std = 0.0;
  p.rotation_deg = 0.0;
  p.translate_frac = 0.0;
  p.scale_lo = p.scale_hi = 1.0;
  return p;
}

}  // namespace

TEST_CASE("resize_bicubic preserves constants and the identity") {
  auto c = constant_frame(64, 0.37);
  auto r = resize_bicubic(c, 128);
  for (double v : r.v) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  Rng rng(1);
  auto f = random_frame(rng, 128, 128);
  auto same = resize_bicubic(f, 128);
  for (std::size_t i = 0; i < f.size(); ++i)
    CHECK(std::abs(same[i] - f[i]) < 1e-6);

  CHECK_THROWS(resize_bicubic(random_frame(rng, 3, 8), 128));
}

TEST_CASE("resize_bicubic matches a direct kernel evaluation on a checkerboard") {
  Tensor board({256, 256});
  for (int y = 0; y < 256; ++y)
    for (int x = 0; x < 256; ++x)
      board[static_cast<std::size_t>(y) * 256 + x] =
          ((x / 16 + y / 16) % 2 == 0) ? 1.0 : 0.0;
  auto out = resize_bicubic(board, 128);
  const int spots[9][2] = {{0, 0},   {3, 90},  {17, 40}, {64, 64}, {90, 3},
                           {100, 100}, {127, 127}, {55, 80}, {80, 55}};
  for (const auto& s : spots) {
    const double want = reference_bicubic_at(board, 128, s[0], s[1]);
    const double got = out[static_cast<std::size_t>(s[0]) * 128 + s[1]];
    CHECK(std::abs(got - want) < 1e-3);
  }
}

TEST_CASE("histogram_equalize degenerate and two-level behavior") {
  auto c = constant_frame(32, 0.42);
  auto ce = histogram_equalize(c);
  CHECK(ce.v == c.v);

  // 40% of pixels at 0.2, 60% at 0.8.
  Tensor f({10, 10});
  for (int i = 0; i < 100; ++i) f[static_cast<std::size_t>(i)] = i < 40 ? 0.2 : 0.8;
  auto e = histogram_equalize(f);
  const double low = (256.0 * 0.4 - 1.0) / 255.0;   // 0.4 - epsilon
  const double high = (256.0 * 1.0 - 1.0) / 255.0;  // exactly 1
  for (int i = 0; i < 100; ++i) {
    const double want = i < 40 ? low : high;
    CHECK(e[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
  }
  CHECK(high == 1.0);
  CHECK(low < 0.4);
  CHECK(low > 0.39);
}

TEST_CASE("histogram_equalize output is near-uniform for rich inputs") {
  Rng rng(2);
  auto f = random_frame(rng, 64, 64);
  // Skew the values so equalization has work to do, keeping every histogram
  // bin well below the 5% Kolmogorov budget.
  for (auto& v : f.v) v = 0.5 * (v + v * v);
  auto e = histogram_equalize(f);
  for (double v : e.v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  // Kolmogorov distance between the empirical CDF and the uniform CDF.
  std::vector<double> sorted(e.v);
  std::sort(sorted.begin(), sorted.end());
  double ks = 0.0;
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double emp_hi = (i + 1) / n;
    const double emp_lo = i / n;
    ks = std::max(ks, std::abs(emp_hi - sorted[i]));
    ks = std::max(ks, std::abs(emp_lo - sorted[i]));
  }
  CHECK(ks < 0.05);
}

TEST_CASE("augment_clip identity parameters are a bit-exact passthrough") {
  Rng rng(3);
  Tensor clip({4, 32, 32});
  for (auto& v : clip.v) v = rng.uniform(0.0, 1.0);
  auto out = augment_clip(clip, identity_params(), 77);
  CHECK(out.v == clip.v);
  CHECK(out.shape == clip.shape);
}

TEST_CASE("augment_clip shape, range and determinism") {
  Rng rng(4);
  Tensor clip({3, 64, 64});
  for (auto& v : clip.v) v = rng.uniform(0.0, 1.0);
  AugmentParams p;
  auto a = augment_clip(clip, p, 1234);
  CHECK(a.shape == clip.shape);
  for (double v : a.v) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  auto b = augment_clip(clip, p, 1234);
  CHECK(a.v == b.v);
  auto c = augment_clip(clip, p, 1235);
  CHECK(a.v != c.v);
}

TEST_CASE("spatial transform is shared by all frames of a clip") {
  Rng rng(5);
  Tensor clip({5, 48, 48});
  for (auto& v : clip.v) v = rng.uniform(0.0, 1.0);
  AugmentParams p;
  p.blur_prob = 0.0;
  p.saltpepper_threshold = 0.0;
  p.gauss_noise_std = 0.0;
  p.jitter_lo = p.jitter_hi = 1.0;

  const std::uint64_t seed = 99;
  const AugmentDraw draw = draw_augment_params(p, seed);
  auto out = augment_clip(clip, p, seed);

  // Re-applying the stored spatial parameters frame by frame reproduces the
  // clip exactly (only the spatial stage is active here).
  const std::size_t plane = 48 * 48;
  for (int f = 0; f < 5; ++f) {
    Tensor frame({48, 48});
    std::copy_n(clip.data() + f * plane, plane, frame.data());
    auto warped = apply_affine(frame, draw.angle_deg, draw.tx_frac,
                               draw.ty_frac, draw.scale);
    for (std::size_t i = 0; i < plane; ++i)
      CHECK(out[f * plane + i] == doctest::Approx(warped[i]).epsilon(1e-12));
  }
}

TEST_CASE("salt-and-pepper saturates the expected pixel fraction") {
  Tensor frame({100, 100});
  frame.fill(0.5);
  Rng rng(6);
  apply_salt_pepper(frame, 0.05, rng);
  std::size_t saturated = 0;
  for (double v : frame.v)
    if (v == 0.0 || v == 1.0) ++saturated;
  const double frac = static_cast<double>(saturated) / frame.size();
  CHECK(frac > 0.04);
  CHECK(frac < 0.06);
}

TEST_CASE("gaussian noise stage has the configured standard deviation") {
  Tensor frame({100, 100});
  frame.fill(0.5);
  Tensor noisy = frame;
  Rng rng(7);
  apply_gauss_noise(noisy, 0.2, rng);
  double mean = 0.0;
  for (std::size_t i = 0; i < frame.size(); ++i) mean += noisy[i] - frame[i];
  mean /= frame.size();
  double var = 0.0;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double d = noisy[i] - frame[i] - mean;
    var += d * d;
  }
  var /= frame.size() - 1;
  const double sd = std::sqrt(var);
  CHECK(sd > 0.19);
  CHECK(sd < 0.21);
}

TEST_CASE("blur fires at its configured probability") {
  AugmentParams p;
  int fired = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i)
    if (draw_augment_params(p, 1000 + i).blur_on) ++fired;
  const double rate = static_cast<double>(fired) / n;
  CHECK(rate > 0.52);
  CHECK(rate < 0.58);
}

TEST_CASE("blur smooths but preserves constants") {
  auto c = constant_frame(32, 0.6);
  auto b = apply_blur(c, 5, 3.5);
  for (double v : b.v) CHECK(v == doctest::Approx(0.6).epsilon(1e-12));

  Rng rng(8);
  auto f = random_frame(rng, 32, 32);
  auto bf = apply_blur(f, 5, 3.5);
  double var_in = 0.0, var_out = 0.0, m_in = 0.0, m_out = 0.0;
  for (double v : f.v) m_in += v;
  for (double v : bf.v) m_out += v;
  m_in /= f.size();
  m_out /= f.size();
  for (double v : f.v) var_in += (v - m_in) * (v - m_in);
  for (double v : bf.v) var_out += (v - m_out) * (v - m_out);
  CHECK(var_out < var_in);
}

TEST_CASE("augment parameter validation") {
  AugmentParams p;
  p.blur_prob = 1.5;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  AugmentParams q;
  q.scale_lo = 1.3;
  q.scale_hi = 0.7;
  CHECK_THROWS_AS(q.validate(), ConfigError);
}
