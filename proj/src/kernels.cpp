#include "mvvae/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace mvvae::kernels {

namespace {
Backend g_backend = Backend::OpenMP;

inline std::int64_t i64(std::size_t x) { return static_cast<std::int64_t>(x); }

// Dot product with eight independent accumulators. The summation tree is
// fixed, so results are deterministic, and the lanes vectorize without
// -ffast-math.
inline double dot8(const double* a, const double* b, int n) {
  double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0;
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7))) + tail;
}
}  // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

std::size_t reduction_blocks(std::size_t n) {
  // Fixed-size blocks of 8192 elements, capped so tiny loops stay serial.
  if (n <= 8192) return 1;
  std::size_t nb = (n + 8191) / 8192;
  return nb > 256 ? 256 : nb;
}

double sum_elements(const double* x, std::size_t n) {
  return blocked_sum(n, [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += x[i];
    return s;
  });
}

double sum_squared_diff(const double* a, const double* b, std::size_t n) {
  return blocked_sum(n, [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) {
      const double d = a[i] - b[i];
      s += d * d;
    }
    return s;
  });
}

// ===========================================================================
// conv2d, stride 1, same padding
// ===========================================================================

namespace {

void conv2d_forward_serial(const double* x, int n, int ci, int h, int w_,
                           const double* w, int co, int k, const double* bias,
                           double* y) {
  const int p = (k - 1) / 2;
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w_; ++ox) {
          double acc = bias ? bias[oc] : 0.0;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy + ky - p;
                const int ix = ox + kx - p;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w_) continue;
                acc += x[((static_cast<std::size_t>(in) * ci + ic) * h + iy) * w_ + ix] *
                       w[((static_cast<std::size_t>(oc) * ci + ic) * k + ky) * k + kx];
              }
          y[((static_cast<std::size_t>(in) * co + oc) * h + oy) * w_ + ox] = acc;
        }
}

void conv2d_forward_omp(const double* x, int n, int ci, int h, int w_,
                        const double* w, int co, int k, const double* bias,
                        double* y) {
  const int p = (k - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w_;
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < i64(static_cast<std::size_t>(n) * co); ++nc) {
    const int in = static_cast<int>(nc / co);
    const int oc = static_cast<int>(nc % co);
    double* yp = y + (static_cast<std::size_t>(in) * co + oc) * plane;
    const double bv = bias ? bias[oc] : 0.0;
    for (std::size_t i = 0; i < plane; ++i) yp[i] = bv;
    for (int ic = 0; ic < ci; ++ic) {
      const double* xp = x + (static_cast<std::size_t>(in) * ci + ic) * plane;
      const double* wp = w + (static_cast<std::size_t>(oc) * ci + ic) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wp[ky * k + kx];
          const int dy_ = ky - p;
          const int dx_ = kx - p;
          const int oy_lo = std::max(0, -dy_);
          const int oy_hi = std::min(h, h - dy_);
          const int ox_lo = std::max(0, -dx_);
          const int ox_hi = std::min(w_, w_ - dx_);
          for (int oy = oy_lo; oy < oy_hi; ++oy) {
            double* yrow = yp + static_cast<std::size_t>(oy) * w_;
            const double* xrow =
                xp + static_cast<std::size_t>(oy + dy_) * w_ + dx_;
            for (int ox = ox_lo; ox < ox_hi; ++ox) yrow[ox] += wv * xrow[ox];
          }
        }
    }
  }
}

void conv2d_backward_input_serial(const double* dy, int n, int co, int h,
                                  int w_, const double* w, int ci, int k,
                                  double* dx) {
  const int p = (k - 1) / 2;
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < ci; ++ic)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w_; ++ix) {
          double acc = 0.0;
          for (int oc = 0; oc < co; ++oc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy - ky + p;
                const int ox = ix - kx + p;
                if (oy < 0 || oy >= h || ox < 0 || ox >= w_) continue;
                acc += dy[((static_cast<std::size_t>(in) * co + oc) * h + oy) * w_ + ox] *
                       w[((static_cast<std::size_t>(oc) * ci + ic) * k + ky) * k + kx];
              }
          dx[((static_cast<std::size_t>(in) * ci + ic) * h + iy) * w_ + ix] = acc;
        }
}

void conv2d_backward_input_omp(const double* dy, int n, int co, int h, int w_,
                               const double* w, int ci, int k, double* dx) {
  const int p = (k - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w_;
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < i64(static_cast<std::size_t>(n) * ci); ++nc) {
    const int in = static_cast<int>(nc / ci);
    const int ic = static_cast<int>(nc % ci);
    double* dxp = dx + (static_cast<std::size_t>(in) * ci + ic) * plane;
    std::memset(dxp, 0, plane * sizeof(double));
    for (int oc = 0; oc < co; ++oc) {
      const double* dyp = dy + (static_cast<std::size_t>(in) * co + oc) * plane;
      const double* wp = w + (static_cast<std::size_t>(oc) * ci + ic) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wp[ky * k + kx];
          const int dy_ = p - ky;  // oy = iy + dy_
          const int dx_ = p - kx;
          const int iy_lo = std::max(0, -dy_);
          const int iy_hi = std::min(h, h - dy_);
          const int ix_lo = std::max(0, -dx_);
          const int ix_hi = std::min(w_, w_ - dx_);
          for (int iy = iy_lo; iy < iy_hi; ++iy) {
            double* dxrow = dxp + static_cast<std::size_t>(iy) * w_;
            const double* dyrow =
                dyp + static_cast<std::size_t>(iy + dy_) * w_ + dx_;
            for (int ix = ix_lo; ix < ix_hi; ++ix) dxrow[ix] += wv * dyrow[ix];
          }
        }
    }
  }
}

void conv2d_backward_params_serial(const double* x, const double* dy, int n,
                                   int ci, int co, int h, int w_, int k,
                                   double* dw, double* db) {
  const int p = (k - 1) / 2;
  std::fill(dw, dw + static_cast<std::size_t>(co) * ci * k * k, 0.0);
  if (db) std::fill(db, db + co, 0.0);
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < h; ++oy)
        for (int ox = 0; ox < w_; ++ox) {
          const double g =
              dy[((static_cast<std::size_t>(in) * co + oc) * h + oy) * w_ + ox];
          if (db) db[oc] += g;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy + ky - p;
                const int ix = ox + kx - p;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w_) continue;
                dw[((static_cast<std::size_t>(oc) * ci + ic) * k + ky) * k + kx] +=
                    g * x[((static_cast<std::size_t>(in) * ci + ic) * h + iy) * w_ + ix];
              }
        }
}

void conv2d_backward_params_omp(const double* x, const double* dy, int n,
                                int ci, int co, int h, int w_, int k,
                                double* dw, double* db) {
  const int p = (k - 1) / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w_;
#pragma omp parallel for schedule(static)
  for (std::int64_t oc = 0; oc < i64(co); ++oc) {
    double* dwc = dw + static_cast<std::size_t>(oc) * ci * k * k;
    std::fill(dwc, dwc + static_cast<std::size_t>(ci) * k * k, 0.0);
    double dbacc = 0.0;
    for (int in = 0; in < n; ++in) {
      const double* dyp = dy + (static_cast<std::size_t>(in) * co + oc) * plane;
      for (std::size_t i = 0; i < plane; ++i) dbacc += dyp[i];
      for (int ic = 0; ic < ci; ++ic) {
        const double* xp = x + (static_cast<std::size_t>(in) * ci + ic) * plane;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int dy_ = ky - p;
            const int dx_ = kx - p;
            const int oy_lo = std::max(0, -dy_);
            const int oy_hi = std::min(h, h - dy_);
            const int ox_lo = std::max(0, -dx_);
            const int ox_hi = std::min(w_, w_ - dx_);
            double acc = 0.0;
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const double* dyrow = dyp + static_cast<std::size_t>(oy) * w_;
              const double* xrow =
                  xp + static_cast<std::size_t>(oy + dy_) * w_ + dx_;
              acc += dot8(dyrow + ox_lo, xrow + ox_lo, ox_hi - ox_lo);
            }
            dwc[(static_cast<std::size_t>(ic) * k + ky) * k + kx] += acc;
          }
      }
    }
    if (db) db[oc] = dbacc;
  }
}

}  // namespace

void conv2d_forward(const double* x, int n, int ci, int h, int w_,
                    const double* w, int co, int k, const double* bias,
                    double* y) {
  if (g_backend == Backend::OpenMP)
    conv2d_forward_omp(x, n, ci, h, w_, w, co, k, bias, y);
  else
    conv2d_forward_serial(x, n, ci, h, w_, w, co, k, bias, y);
}

void conv2d_backward_input(const double* dy, int n, int co, int h, int w_,
                           const double* w, int ci, int k, double* dx) {
  if (g_backend == Backend::OpenMP)
    conv2d_backward_input_omp(dy, n, co, h, w_, w, ci, k, dx);
  else
    conv2d_backward_input_serial(dy, n, co, h, w_, w, ci, k, dx);
}

void conv2d_backward_params(const double* x, const double* dy, int n, int ci,
                            int co, int h, int w_, int k, double* dw,
                            double* db) {
  if (g_backend == Backend::OpenMP)
    conv2d_backward_params_omp(x, dy, n, ci, co, h, w_, k, dw, db);
  else
    conv2d_backward_params_serial(x, dy, n, ci, co, h, w_, k, dw, db);
}

// ===========================================================================
// conv_transpose2d
// ===========================================================================

int conv_transpose2d_out_size(int in, int k, int stride, int pad, int out_pad) {
  return (in - 1) * stride - 2 * pad + k + out_pad;
}

namespace {

void conv_transpose2d_forward_serial(const double* x, int n, int ci, int h,
                                     int w_, const double* w, int co, int k,
                                     int stride, int pad, int out_pad,
                                     const double* bias, double* y) {
  const int ho = conv_transpose2d_out_size(h, k, stride, pad, out_pad);
  const int wo = conv_transpose2d_out_size(w_, k, stride, pad, out_pad);
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = bias ? bias[oc] : 0.0;
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int ty = oy + pad - ky;
                const int tx = ox + pad - kx;
                if (ty % stride != 0 || tx % stride != 0) continue;
                if (ty < 0 || tx < 0) continue;
                const int iy = ty / stride;
                const int ix = tx / stride;
                if (iy >= h || ix >= w_) continue;
                acc += x[((static_cast<std::size_t>(in) * ci + ic) * h + iy) * w_ + ix] *
                       w[((static_cast<std::size_t>(ic) * co + oc) * k + ky) * k + kx];
              }
          y[((static_cast<std::size_t>(in) * co + oc) * ho + oy) * wo + ox] = acc;
        }
}

void conv_transpose2d_forward_omp(const double* x, int n, int ci, int h,
                                  int w_, const double* w, int co, int k,
                                  int stride, int pad, int out_pad,
                                  const double* bias, double* y) {
  const int ho = conv_transpose2d_out_size(h, k, stride, pad, out_pad);
  const int wo = conv_transpose2d_out_size(w_, k, stride, pad, out_pad);
  const std::size_t iplane = static_cast<std::size_t>(h) * w_;
  const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < i64(static_cast<std::size_t>(n) * co); ++nc) {
    const int in = static_cast<int>(nc / co);
    const int oc = static_cast<int>(nc % co);
    double* yp = y + (static_cast<std::size_t>(in) * co + oc) * oplane;
    const double bv = bias ? bias[oc] : 0.0;
    for (std::size_t i = 0; i < oplane; ++i) yp[i] = bv;
    for (int ic = 0; ic < ci; ++ic) {
      const double* xp = x + (static_cast<std::size_t>(in) * ci + ic) * iplane;
      const double* wp = w + (static_cast<std::size_t>(ic) * co + oc) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wp[ky * k + kx];
          for (int iy = 0; iy < h; ++iy) {
            const int oy = iy * stride + ky - pad;
            if (oy < 0 || oy >= ho) continue;
            double* yrow = yp + static_cast<std::size_t>(oy) * wo;
            const double* xrow = xp + static_cast<std::size_t>(iy) * w_;
            for (int ix = 0; ix < w_; ++ix) {
              const int ox = ix * stride + kx - pad;
              if (ox < 0 || ox >= wo) continue;
              yrow[ox] += wv * xrow[ix];
            }
          }
        }
    }
  }
}

void conv_transpose2d_backward_input_serial(const double* dy, int n, int co,
                                            int ho, int wo, const double* w,
                                            int ci, int k, int stride, int pad,
                                            int h, int w_, double* dx) {
  for (int in = 0; in < n; ++in)
    for (int ic = 0; ic < ci; ++ic)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w_; ++ix) {
          double acc = 0.0;
          for (int oc = 0; oc < co; ++oc)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * stride + ky - pad;
                const int ox = ix * stride + kx - pad;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                acc += dy[((static_cast<std::size_t>(in) * co + oc) * ho + oy) * wo + ox] *
                       w[((static_cast<std::size_t>(ic) * co + oc) * k + ky) * k + kx];
              }
          dx[((static_cast<std::size_t>(in) * ci + ic) * h + iy) * w_ + ix] = acc;
        }
}

void conv_transpose2d_backward_input_omp(const double* dy, int n, int co,
                                         int ho, int wo, const double* w,
                                         int ci, int k, int stride, int pad,
                                         int h, int w_, double* dx) {
  const std::size_t iplane = static_cast<std::size_t>(h) * w_;
  const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < i64(static_cast<std::size_t>(n) * ci); ++nc) {
    const int in = static_cast<int>(nc / ci);
    const int ic = static_cast<int>(nc % ci);
    double* dxp = dx + (static_cast<std::size_t>(in) * ci + ic) * iplane;
    std::memset(dxp, 0, iplane * sizeof(double));
    for (int oc = 0; oc < co; ++oc) {
      const double* dyp = dy + (static_cast<std::size_t>(in) * co + oc) * oplane;
      const double* wp = w + (static_cast<std::size_t>(ic) * co + oc) * k * k;
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const double wv = wp[ky * k + kx];
          for (int iy = 0; iy < h; ++iy) {
            const int oy = iy * stride + ky - pad;
            if (oy < 0 || oy >= ho) continue;
            double* dxrow = dxp + static_cast<std::size_t>(iy) * w_;
            const double* dyrow = dyp + static_cast<std::size_t>(oy) * wo;
            for (int ix = 0; ix < w_; ++ix) {
              const int ox = ix * stride + kx - pad;
              if (ox < 0 || ox >= wo) continue;
              dxrow[ix] += wv * dyrow[ox];
            }
          }
        }
    }
  }
}

void conv_transpose2d_backward_params_serial(const double* x, const double* dy,
                                             int n, int ci, int co, int h,
                                             int w_, int k, int stride, int pad,
                                             int ho, int wo, double* dw,
                                             double* db) {
  std::fill(dw, dw + static_cast<std::size_t>(ci) * co * k * k, 0.0);
  if (db) std::fill(db, db + co, 0.0);
  for (int in = 0; in < n; ++in) {
    for (int oc = 0; oc < co; ++oc) {
      if (db)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            db[oc] +=
                dy[((static_cast<std::size_t>(in) * co + oc) * ho + oy) * wo + ox];
      for (int ic = 0; ic < ci; ++ic)
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int iy = 0; iy < h; ++iy)
              for (int ix = 0; ix < w_; ++ix) {
                const int oy = iy * stride + ky - pad;
                const int ox = ix * stride + kx - pad;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                dw[((static_cast<std::size_t>(ic) * co + oc) * k + ky) * k + kx] +=
                    x[((static_cast<std::size_t>(in) * ci + ic) * h + iy) * w_ + ix] *
                    dy[((static_cast<std::size_t>(in) * co + oc) * ho + oy) * wo + ox];
              }
    }
  }
}

void conv_transpose2d_backward_params_omp(const double* x, const double* dy,
                                          int n, int ci, int co, int h, int w_,
                                          int k, int stride, int pad, int ho,
                                          int wo, double* dw, double* db) {
  const std::size_t iplane = static_cast<std::size_t>(h) * w_;
  const std::size_t oplane = static_cast<std::size_t>(ho) * wo;
#pragma omp parallel for schedule(static)
  for (std::int64_t ic = 0; ic < i64(ci); ++ic) {
    double* dwc = dw + static_cast<std::size_t>(ic) * co * k * k;
    std::fill(dwc, dwc + static_cast<std::size_t>(co) * k * k, 0.0);
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * ci + ic) * iplane;
      for (int oc = 0; oc < co; ++oc) {
        const double* dyp =
            dy + (static_cast<std::size_t>(in) * co + oc) * oplane;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            double acc = 0.0;
            for (int iy = 0; iy < h; ++iy) {
              const int oy = iy * stride + ky - pad;
              if (oy < 0 || oy >= ho) continue;
              const double* xrow = xp + static_cast<std::size_t>(iy) * w_;
              const double* dyrow = dyp + static_cast<std::size_t>(oy) * wo;
              for (int ix = 0; ix < w_; ++ix) {
                const int ox = ix * stride + kx - pad;
                if (ox < 0 || ox >= wo) continue;
                acc += xrow[ix] * dyrow[ox];
              }
            }
            dwc[(static_cast<std::size_t>(oc) * k + ky) * k + kx] += acc;
          }
      }
    }
  }
  if (db) {
#pragma omp parallel for schedule(static)
    for (std::int64_t oc = 0; oc < i64(co); ++oc) {
      double acc = 0.0;
      for (int in = 0; in < n; ++in) {
        const double* dyp =
            dy + (static_cast<std::size_t>(in) * co + oc) * oplane;
        for (std::size_t i = 0; i < oplane; ++i) acc += dyp[i];
      }
      db[oc] = acc;
    }
  }
}

}  // namespace

void conv_transpose2d_forward(const double* x, int n, int ci, int h, int w_,
                              const double* w, int co, int k, int stride,
                              int pad, int out_pad, const double* bias,
                              double* y) {
  if (g_backend == Backend::OpenMP)
    conv_transpose2d_forward_omp(x, n, ci, h, w_, w, co, k, stride, pad,
                                 out_pad, bias, y);
  else
    conv_transpose2d_forward_serial(x, n, ci, h, w_, w, co, k, stride, pad,
                                    out_pad, bias, y);
}

void conv_transpose2d_backward_input(const double* dy, int n, int co, int ho,
                                     int wo, const double* w, int ci, int k,
                                     int stride, int pad, int h, int w_,
                                     double* dx) {
  if (g_backend == Backend::OpenMP)
    conv_transpose2d_backward_input_omp(dy, n, co, ho, wo, w, ci, k, stride,
                                        pad, h, w_, dx);
  else
    conv_transpose2d_backward_input_serial(dy, n, co, ho, wo, w, ci, k, stride,
                                           pad, h, w_, dx);
}

void conv_transpose2d_backward_params(const double* x, const double* dy, int n,
                                      int ci, int co, int h, int w_, int k,
                                      int stride, int pad, int ho, int wo,
                                      double* dw, double* db) {
  if (g_backend == Backend::OpenMP)
    conv_transpose2d_backward_params_omp(x, dy, n, ci, co, h, w_, k, stride,
                                         pad, ho, wo, dw, db);
  else
    conv_transpose2d_backward_params_serial(x, dy, n, ci, co, h, w_, k, stride,
                                            pad, ho, wo, dw, db);
}

// ===========================================================================
// linear
// ===========================================================================

namespace {

void linear_forward_serial(const double* x, int n, int in, const double* w,
                           int out, const double* bias, double* y) {
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out; ++o) {
      double acc = bias ? bias[o] : 0.0;
      for (int i = 0; i < in; ++i)
        acc += x[static_cast<std::size_t>(r) * in + i] *
               w[static_cast<std::size_t>(o) * in + i];
      y[static_cast<std::size_t>(r) * out + o] = acc;
    }
}

void linear_forward_omp(const double* x, int n, int in, const double* w,
                        int out, const double* bias, double* y) {
#pragma omp parallel for schedule(static)
  for (std::int64_t ro = 0; ro < i64(static_cast<std::size_t>(n) * out); ++ro) {
    const int r = static_cast<int>(ro / out);
    const int o = static_cast<int>(ro % out);
    const double* xr = x + static_cast<std::size_t>(r) * in;
    const double* wr = w + static_cast<std::size_t>(o) * in;
    const double acc = (bias ? bias[o] : 0.0) + dot8(xr, wr, in);
    y[static_cast<std::size_t>(r) * out + o] = acc;
  }
}

void linear_backward_input_serial(const double* dy, int n, int out,
                                  const double* w, int in, double* dx) {
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < in; ++i) {
      double acc = 0.0;
      for (int o = 0; o < out; ++o)
        acc += dy[static_cast<std::size_t>(r) * out + o] *
               w[static_cast<std::size_t>(o) * in + i];
      dx[static_cast<std::size_t>(r) * in + i] = acc;
    }
}

void linear_backward_input_omp(const double* dy, int n, int out,
                               const double* w, int in, double* dx) {
#pragma omp parallel for schedule(static)
  for (std::int64_t r = 0; r < i64(n); ++r) {
    double* dxr = dx + static_cast<std::size_t>(r) * in;
    const double* dyr = dy + static_cast<std::size_t>(r) * out;
    std::memset(dxr, 0, static_cast<std::size_t>(in) * sizeof(double));
    for (int o = 0; o < out; ++o) {
      const double g = dyr[o];
      const double* wr = w + static_cast<std::size_t>(o) * in;
      for (int i = 0; i < in; ++i) dxr[i] += g * wr[i];
    }
  }
}

void linear_backward_params_serial(const double* x, const double* dy, int n,
                                   int in, int out, double* dw, double* db) {
  std::fill(dw, dw + static_cast<std::size_t>(out) * in, 0.0);
  if (db) std::fill(db, db + out, 0.0);
  for (int r = 0; r < n; ++r)
    for (int o = 0; o < out; ++o) {
      const double g = dy[static_cast<std::size_t>(r) * out + o];
      if (db) db[o] += g;
      for (int i = 0; i < in; ++i)
        dw[static_cast<std::size_t>(o) * in + i] +=
            g * x[static_cast<std::size_t>(r) * in + i];
    }
}

void linear_backward_params_omp(const double* x, const double* dy, int n,
                                int in, int out, double* dw, double* db) {
#pragma omp parallel for schedule(static)
  for (std::int64_t o = 0; o < i64(out); ++o) {
    double* dwo = dw + static_cast<std::size_t>(o) * in;
    std::memset(dwo, 0, static_cast<std::size_t>(in) * sizeof(double));
    double dbacc = 0.0;
    for (int r = 0; r < n; ++r) {
      const double g = dy[static_cast<std::size_t>(r) * out + o];
      dbacc += g;
      const double* xr = x + static_cast<std::size_t>(r) * in;
      for (int i = 0; i < in; ++i) dwo[i] += g * xr[i];
    }
    if (db) db[o] = dbacc;
  }
}

}  // namespace

void linear_forward(const double* x, int n, int in, const double* w, int out,
                    const double* bias, double* y) {
  if (g_backend == Backend::OpenMP)
    linear_forward_omp(x, n, in, w, out, bias, y);
  else
    linear_forward_serial(x, n, in, w, out, bias, y);
}

void linear_backward_input(const double* dy, int n, int out, const double* w,
                           int in, double* dx) {
  if (g_backend == Backend::OpenMP)
    linear_backward_input_omp(dy, n, out, w, in, dx);
  else
    linear_backward_input_serial(dy, n, out, w, in, dx);
}

void linear_backward_params(const double* x, const double* dy, int n, int in,
                            int out, double* dw, double* db) {
  if (g_backend == Backend::OpenMP)
    linear_backward_params_omp(x, dy, n, in, out, dw, db);
  else
    linear_backward_params_serial(x, dy, n, in, out, dw, db);
}

// ===========================================================================
// 2x2 max pooling
// ===========================================================================

namespace {

void maxpool2_forward_serial(const double* x, int n, int c, int h, int w_,
                             double* y, std::int32_t* argmax) {
  const int ho = h / 2;
  const int wo = w_ / 2;
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(in) * c + ch) *
                               static_cast<std::size_t>(h) * w_;
      const std::size_t obase = (static_cast<std::size_t>(in) * c + ch) *
                                static_cast<std::size_t>(ho) * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::int32_t bi = 0;
          for (int sy = 0; sy < 2; ++sy)
            for (int sx = 0; sx < 2; ++sx) {
              const std::size_t idx =
                  base + static_cast<std::size_t>(oy * 2 + sy) * w_ + ox * 2 + sx;
              if (x[idx] > best) {
                best = x[idx];
                bi = static_cast<std::int32_t>(idx - base);
              }
            }
          y[obase + static_cast<std::size_t>(oy) * wo + ox] = best;
          argmax[obase + static_cast<std::size_t>(oy) * wo + ox] = bi;
        }
    }
}

void maxpool2_forward_omp(const double* x, int n, int c, int h, int w_,
                          double* y, std::int32_t* argmax) {
  const int ho = h / 2;
  const int wo = w_ / 2;
#pragma omp parallel for schedule(static)
  for (std::int64_t nc = 0; nc < i64(static_cast<std::size_t>(n) * c); ++nc) {
    const double* xp = x + static_cast<std::size_t>(nc) * h * w_;
    double* yp = y + static_cast<std::size_t>(nc) * ho * wo;
    std::int32_t* ap = argmax + static_cast<std::size_t>(nc) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      const double* r0 = xp + static_cast<std::size_t>(oy * 2) * w_;
      const double* r1 = r0 + w_;
      for (int ox = 0; ox < wo; ++ox) {
        const int x0 = ox * 2;
        double best = r0[x0];
        std::int32_t bi = oy * 2 * w_ + x0;
        if (r0[x0 + 1] > best) { best = r0[x0 + 1]; bi = oy * 2 * w_ + x0 + 1; }
        if (r1[x0] > best) { best = r1[x0]; bi = (oy * 2 + 1) * w_ + x0; }
        if (r1[x0 + 1] > best) { best = r1[x0 + 1]; bi = (oy * 2 + 1) * w_ + x0 + 1; }
        yp[static_cast<std::size_t>(oy) * wo + ox] = best;
        ap[static_cast<std::size_t>(oy) * wo + ox] = bi;
      }
    }
  }
}

}  // namespace

void maxpool2_forward(const double* x, int n, int c, int h, int w_, double* y,
                      std::int32_t* argmax) {
  if (g_backend == Backend::OpenMP)
    maxpool2_forward_omp(x, n, c, h, w_, y, argmax);
  else
    maxpool2_forward_serial(x, n, c, h, w_, y, argmax);
}

void maxpool2_backward(const double* dy, int n, int c, int h, int w_,
                       const std::int32_t* argmax, double* dx) {
  const int ho = h / 2;
  const int wo = w_ / 2;
  const std::size_t total = static_cast<std::size_t>(n) * c;
  // Pool windows are disjoint, so the scatter below writes disjoint slots.
#pragma omp parallel for schedule(static) if (g_backend == Backend::OpenMP)
  for (std::int64_t nc = 0; nc < i64(total); ++nc) {
    double* dxp = dx + static_cast<std::size_t>(nc) * h * w_;
    const double* dyp = dy + static_cast<std::size_t>(nc) * ho * wo;
    const std::int32_t* ap = argmax + static_cast<std::size_t>(nc) * ho * wo;
    std::memset(dxp, 0, static_cast<std::size_t>(h) * w_ * sizeof(double));
    for (std::size_t i = 0; i < static_cast<std::size_t>(ho) * wo; ++i)
      dxp[ap[i]] += dyp[i];
  }
}

// ===========================================================================
// batch normalization
// ===========================================================================

namespace {

void batchnorm_forward_train_serial(const double* x, int n, int c, int l,
                                    const double* gamma, const double* beta,
                                    double eps, double* y, double* mean,
                                    double* var) {
  const double m = static_cast<double>(n) * l;
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) s += xp[i];
    }
    const double mu = s / m;
    double sq = 0.0;
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) sq += (xp[i] - mu) * (xp[i] - mu);
    }
    const double v = sq / m;
    mean[ch] = mu;
    var[ch] = v;
    const double inv = 1.0 / std::sqrt(v + eps);
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      double* yp = y + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i)
        yp[i] = gamma[ch] * (xp[i] - mu) * inv + beta[ch];
    }
  }
}

void batchnorm_forward_train_omp(const double* x, int n, int c, int l,
                                 const double* gamma, const double* beta,
                                 double eps, double* y, double* mean,
                                 double* var) {
  const double m = static_cast<double>(n) * l;
#pragma omp parallel for schedule(static)
  for (std::int64_t ch = 0; ch < i64(c); ++ch) {
    double s = 0.0;
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) s += xp[i];
    }
    const double mu = s / m;
    double sq = 0.0;
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) sq += (xp[i] - mu) * (xp[i] - mu);
    }
    const double v = sq / m;
    mean[ch] = mu;
    var[ch] = v;
    const double inv = 1.0 / std::sqrt(v + eps);
    const double g = gamma[ch];
    const double b = beta[ch];
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      double* yp = y + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) yp[i] = g * (xp[i] - mu) * inv + b;
    }
  }
}

}  // namespace

void batchnorm_forward_train(const double* x, int n, int c, int l,
                             const double* gamma, const double* beta,
                             double eps, double* y, double* mean, double* var) {
  if (g_backend == Backend::OpenMP)
    batchnorm_forward_train_omp(x, n, c, l, gamma, beta, eps, y, mean, var);
  else
    batchnorm_forward_train_serial(x, n, c, l, gamma, beta, eps, y, mean, var);
}

void batchnorm_forward_eval(const double* x, int n, int c, int l,
                            const double* gamma, const double* beta,
                            const double* run_mean, const double* run_var,
                            double eps, double* y) {
#pragma omp parallel for schedule(static) if (g_backend == Backend::OpenMP)
  for (std::int64_t ch = 0; ch < i64(c); ++ch) {
    const double inv = 1.0 / std::sqrt(run_var[ch] + eps);
    const double g = gamma[ch];
    const double b = beta[ch];
    const double mu = run_mean[ch];
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      double* yp = y + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) yp[i] = g * (xp[i] - mu) * inv + b;
    }
  }
}

void batchnorm_backward(const double* x, const double* dy, int n, int c, int l,
                        const double* gamma, const double* mean,
                        const double* var, double eps, double* dx,
                        double* dgamma, double* dbeta) {
  const double m = static_cast<double>(n) * l;
#pragma omp parallel for schedule(static) if (g_backend == Backend::OpenMP)
  for (std::int64_t ch = 0; ch < i64(c); ++ch) {
    const double mu = mean[ch];
    const double inv = 1.0 / std::sqrt(var[ch] + eps);
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      const double* dyp = dy + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) {
        sum_dy += dyp[i];
        sum_dy_xhat += dyp[i] * (xp[i] - mu) * inv;
      }
    }
    dgamma[ch] = sum_dy_xhat;
    dbeta[ch] = sum_dy;
    const double g = gamma[ch];
    for (int in = 0; in < n; ++in) {
      const double* xp = x + (static_cast<std::size_t>(in) * c + ch) * l;
      const double* dyp = dy + (static_cast<std::size_t>(in) * c + ch) * l;
      double* dxp = dx + (static_cast<std::size_t>(in) * c + ch) * l;
      for (int i = 0; i < l; ++i) {
        const double xhat = (xp[i] - mu) * inv;
        dxp[i] = g * inv * (dyp[i] - sum_dy / m - xhat * sum_dy_xhat / m);
      }
    }
  }
}

}  // namespace mvvae::kernels
