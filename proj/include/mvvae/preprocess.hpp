#pragma once

#include <cstdint>

#include "mvvae/rng.hpp"
#include "mvvae/tensor.hpp"

namespace mvvae::aug {

// Training-time augmentation parameters. Defaults are the pipeline's
// operating values; saturation and hue are accepted for config compatibility
// but act as the identity on single-channel frames.
struct AugmentParams {
  double jitter_lo = 0.3, jitter_hi = 1.7;
  int blur_kernel = 5;
  double blur_sigma = 3.5;
  double blur_prob = 0.55;
  double saltpepper_threshold = 0.05;
  double gauss_noise_std = 0.2;
  double rotation_deg = 20.0;    // drawn from [-rotation_deg, rotation_deg]
  double translate_frac = 0.14;  // per axis, fraction of the image size
  double scale_lo = 0.7, scale_hi = 1.2;

  void validate() const;  // throws ConfigError
};

// One per-clip draw: the same spatial and photometric parameters apply to
// every frame, so apparent motion is preserved.
struct AugmentDraw {
  double brightness = 1.0;
  double contrast = 1.0;
  double saturation = 1.0;  // identity on grayscale
  double hue = 1.0;         // identity on grayscale
  bool blur_on = false;
  double angle_deg = 0.0;
  double tx_frac = 0.0, ty_frac = 0.0;
  double scale = 1.0;
};

AugmentDraw draw_augment_params(const AugmentParams& params, std::uint64_t seed);

// ---- deterministic preprocessing -------------------------------------------

// Bicubic (Catmull-Rom) resampling of an [H, W] frame to out_hw x out_hw,
// clamped to [0, 1]. Requires H, W >= 4.
Tensor resize_bicubic(const Tensor& frame, int out_hw = 128);

// 256-bin CDF remap; constant frames pass through unchanged.
Tensor histogram_equalize(const Tensor& frame);

// ---- augmentation stages ----------------------------------------------------
// Stages are exposed separately so their statistics can be tested; each one
// short-circuits to an exact copy when its parameters are the identity.

// Rotation (degrees, counterclockwise) about the center, then translation,
// with uniform scaling. Bilinear sampling, zero fill outside the frame.
Tensor apply_affine(const Tensor& frame, double angle_deg, double tx_frac,
                    double ty_frac, double scale);

// Brightness multiplies; contrast mixes with the supplied mean.
Tensor apply_jitter(const Tensor& frame, double brightness, double contrast,
                    double mean);

// Separable Gaussian blur with replicated borders.
Tensor apply_blur(const Tensor& frame, int kernel, double sigma);

// Per pixel: below threshold/2 -> 0, above 1 - threshold/2 -> 1.
void apply_salt_pepper(Tensor& frame, double threshold, Rng& rng);

// Additive Gaussian noise; no clamping here.
void apply_gauss_noise(Tensor& frame, double std, Rng& rng);

// ---- full clip pipeline -----------------------------------------------------
// clip is [T, H, W]. One parameter draw per clip; spatial transform, then
// intensity jitter, blur (with its drawn on/off coin), salt-and-pepper and
// Gaussian noise; the result is clamped to [0, 1]. Noise realizations are
// fresh per frame but fully determined by (seed, frame index).
Tensor augment_clip(const Tensor& clip, const AugmentParams& params,
                    std::uint64_t seed);

// The pipeline above with an externally supplied draw (used by tests to pin
// the spatial transform).
Tensor augment_clip_with_draw(const Tensor& clip, const AugmentParams& params,
                              const AugmentDraw& draw, std::uint64_t seed);

}  // namespace mvvae::aug
