#include "mvvae/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "mvvae/errors.hpp"

namespace mvvae::aug {

namespace {

constexpr double kPi = 3.14159265358979323846;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

// Catmull-Rom kernel (bicubic with a = -0.5).
double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace

void AugmentParams::validate() const {
  if (jitter_lo > jitter_hi || scale_lo > scale_hi)
    throw ConfigError("augment: empty parameter interval");
  if (blur_prob < 0.0 || blur_prob > 1.0)
    throw ConfigError("augment: blur_prob outside [0,1]");
  if (saltpepper_threshold < 0.0 || saltpepper_threshold > 1.0)
    throw ConfigError("augment: salt-and-pepper threshold outside [0,1]");
  if (gauss_noise_std < 0.0) throw ConfigError("augment: negative noise std");
  if (rotation_deg < 0.0 || translate_frac < 0.0)
    throw ConfigError("augment: negative spatial range");
  if (blur_kernel < 1 || blur_kernel % 2 == 0)
    throw ConfigError("augment: blur kernel must be odd and positive");
  if (blur_sigma <= 0.0) throw ConfigError("augment: blur sigma must be > 0");
}

AugmentDraw draw_augment_params(const AugmentParams& params, std::uint64_t seed) {
  params.validate();
  Rng rng(derive_seed(seed, 0xA06));
  AugmentDraw d;
  d.brightness = rng.uniform(params.jitter_lo, params.jitter_hi);
  d.contrast = rng.uniform(params.jitter_lo, params.jitter_hi);
  d.saturation = rng.uniform(params.jitter_lo, params.jitter_hi);
  d.hue = rng.uniform(params.jitter_lo, params.jitter_hi);
  d.blur_on = rng.uniform() < params.blur_prob;
  d.angle_deg = rng.uniform(-params.rotation_deg, params.rotation_deg);
  d.tx_frac = rng.uniform(-params.translate_frac, params.translate_frac);
  d.ty_frac = rng.uniform(-params.translate_frac, params.translate_frac);
  d.scale = rng.uniform(params.scale_lo, params.scale_hi);
  return d;
}

Tensor resize_bicubic(const Tensor& frame, int out_hw) {
  if (frame.shape.size() != 2)
    throw std::invalid_argument("resize_bicubic: frame must be [H, W]");
  const int h = frame.shape[0], w = frame.shape[1];
  if (h < 4 || w < 4)
    throw std::invalid_argument("resize_bicubic: input must be at least 4x4");
  if (out_hw < 1) throw std::invalid_argument("resize_bicubic: bad output size");

  // Horizontal pass to [h, out_hw], then vertical to [out_hw, out_hw].
  const double sx = static_cast<double>(w) / out_hw;
  const double sy = static_cast<double>(h) / out_hw;

  Tensor mid({h, out_hw});
  for (int y = 0; y < h; ++y) {
    const double* row = frame.data() + static_cast<std::size_t>(y) * w;
    for (int ox = 0; ox < out_hw; ++ox) {
      const double src = (ox + 0.5) * sx - 0.5;
      const int x0 = static_cast<int>(std::floor(src));
      const double t = src - x0;
      double acc = 0.0;
      for (int k = -1; k <= 2; ++k)
        acc += cubic_weight(t - k) * row[clamp_index(x0 + k, w)];
      mid[static_cast<std::size_t>(y) * out_hw + ox] = acc;
    }
  }
  Tensor out({out_hw, out_hw});
  for (int oy = 0; oy < out_hw; ++oy) {
    const double src = (oy + 0.5) * sy - 0.5;
    const int y0 = static_cast<int>(std::floor(src));
    const double t = src - y0;
    for (int ox = 0; ox < out_hw; ++ox) {
      double acc = 0.0;
      for (int k = -1; k <= 2; ++k)
        acc += cubic_weight(t - k) *
               mid[static_cast<std::size_t>(clamp_index(y0 + k, h)) * out_hw + ox];
      out[static_cast<std::size_t>(oy) * out_hw + ox] = clamp01(acc);
    }
  }
  return out;
}

Tensor histogram_equalize(const Tensor& frame) {
  if (frame.shape.size() != 2)
    throw std::invalid_argument("histogram_equalize: frame must be [H, W]");
  constexpr int kBins = 256;
  std::array<std::size_t, kBins> hist{};
  for (double v : frame.v) {
    int b = static_cast<int>(clamp01(v) * kBins);
    if (b >= kBins) b = kBins - 1;
    ++hist[static_cast<std::size_t>(b)];
  }
  int occupied = 0;
  for (auto c : hist) occupied += c > 0 ? 1 : 0;
  if (occupied <= 1) return frame;  // constant frame passes through

  const double n = static_cast<double>(frame.size());
  std::array<double, kBins> remap{};
  std::size_t cum = 0;
  for (int b = 0; b < kBins; ++b) {
    cum += hist[static_cast<std::size_t>(b)];
    const double cdf = static_cast<double>(cum) / n;
    remap[static_cast<std::size_t>(b)] = clamp01((kBins * cdf - 1.0) / (kBins - 1.0));
  }
  Tensor out(frame.shape);
  for (std::size_t i = 0; i < frame.size(); ++i) {
    int b = static_cast<int>(clamp01(frame[i]) * kBins);
    if (b >= kBins) b = kBins - 1;
    out[i] = remap[static_cast<std::size_t>(b)];
  }
  return out;
}

Tensor apply_affine(const Tensor& frame, double angle_deg, double tx_frac,
                    double ty_frac, double scale) {
  if (angle_deg == 0.0 && tx_frac == 0.0 && ty_frac == 0.0 && scale == 1.0)
    return frame;  // bit-exact passthrough
  const int h = frame.shape[0], w = frame.shape[1];
  const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
  const double rad = angle_deg * kPi / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double tx = tx_frac * w, ty = ty_frac * h;

  // Destination -> source: undo translation, then the inverse of scale*R.
  Tensor out(frame.shape);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx - tx;
      const double dy = y - cy - ty;
      const double sxf = (ca * dx + sa * dy) / scale + cx;
      const double syf = (-sa * dx + ca * dy) / scale + cy;
      double v = 0.0;
      const int x0 = static_cast<int>(std::floor(sxf));
      const int y0 = static_cast<int>(std::floor(syf));
      if (x0 >= -1 && x0 < w && y0 >= -1 && y0 < h) {
        const double fx = sxf - x0;
        const double fy = syf - y0;
        auto at = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
          return frame[static_cast<std::size_t>(yy) * w + xx];
        };
        v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
            fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      }
      out[static_cast<std::size_t>(y) * w + x] = v;
    }
  return out;
}

Tensor apply_jitter(const Tensor& frame, double brightness, double contrast,
                    double mean) {
  Tensor out = frame;
  if (brightness != 1.0)
    for (auto& v : out.v) v *= brightness;
  if (contrast != 1.0) {
    const double m = mean * brightness;
    for (auto& v : out.v) v = m + (v - m) * contrast;
  }
  return out;
}

Tensor apply_blur(const Tensor& frame, int kernel, double sigma) {
  const int h = frame.shape[0], w = frame.shape[1];
  const int r = kernel / 2;
  std::vector<double> kw(static_cast<std::size_t>(kernel));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    kw[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kw[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : kw) v /= sum;

  Tensor mid(frame.shape), out(frame.shape);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += kw[static_cast<std::size_t>(i + r)] *
               frame[static_cast<std::size_t>(y) * w + clamp_index(x + i, w)];
      mid[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i)
        acc += kw[static_cast<std::size_t>(i + r)] *
               mid[static_cast<std::size_t>(clamp_index(y + i, h)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

void apply_salt_pepper(Tensor& frame, double threshold, Rng& rng) {
  if (threshold == 0.0) return;
  const double half = 0.5 * threshold;
  for (auto& v : frame.v) {
    const double u = rng.uniform();
    if (u < half)
      v = 0.0;
    else if (u > 1.0 - half)
      v = 1.0;
  }
}

void apply_gauss_noise(Tensor& frame, double std, Rng& rng) {
  if (std == 0.0) return;
  for (auto& v : frame.v) v += std * rng.normal();
}

Tensor augment_clip_with_draw(const Tensor& clip, const AugmentParams& params,
                              const AugmentDraw& draw, std::uint64_t seed) {
  if (clip.shape.size() != 3)
    throw std::invalid_argument("augment_clip: clip must be [T, H, W]");
  const int t = clip.shape[0], h = clip.shape[1], w = clip.shape[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  Tensor out = clip;
  const bool spatial_identity = draw.angle_deg == 0.0 && draw.tx_frac == 0.0 &&
                                draw.ty_frac == 0.0 && draw.scale == 1.0;
  for (int f = 0; f < t; ++f) {
    Tensor frame({h, w});
    std::copy_n(clip.data() + f * plane, plane, frame.data());
    if (!spatial_identity)
      frame = apply_affine(frame, draw.angle_deg, draw.tx_frac, draw.ty_frac,
                           draw.scale);
    std::copy_n(frame.data(), plane, out.data() + f * plane);
  }

  // Contrast mixes around the clip mean after the spatial stage, so the
  // photometric transform is shared by all frames.
  double mean = 0.0;
  for (double v : out.v) mean += v;
  mean /= static_cast<double>(out.size());

  for (int f = 0; f < t; ++f) {
    Tensor frame({h, w});
    std::copy_n(out.data() + f * plane, plane, frame.data());
    frame = apply_jitter(frame, draw.brightness, draw.contrast, mean);
    if (draw.blur_on) frame = apply_blur(frame, params.blur_kernel, params.blur_sigma);
    Rng sp_rng(derive_seed(seed, 0x5A17, static_cast<std::uint64_t>(f)));
    apply_salt_pepper(frame, params.saltpepper_threshold, sp_rng);
    Rng gn_rng(derive_seed(seed, 0x6A55, static_cast<std::uint64_t>(f)));
    apply_gauss_noise(frame, params.gauss_noise_std, gn_rng);
    std::copy_n(frame.data(), plane, out.data() + f * plane);
  }
  for (auto& v : out.v) v = clamp01(v);
  return out;
}

Tensor augment_clip(const Tensor& clip, const AugmentParams& params,
                    std::uint64_t seed) {
  const AugmentDraw draw = draw_augment_params(params, seed);
  return augment_clip_with_draw(clip, params, draw, seed);
}

}  // namespace mvvae::aug
