#pragma once

#include <cstdint>
#include <vector>

namespace mvvae::kernels {

// Every heavy kernel below has two implementations: a naive serial reference
// (readable, used as the oracle in tests) and an OpenMP version with
// restructured loops. The dispatcher picks one via the process-wide backend.
//
// Parallel results are bit-deterministic regardless of thread count: loops
// parallelize over disjoint output slices, and reductions accumulate into a
// fixed block grid that is summed serially in index order.
enum class Backend { Serial, OpenMP };

Backend backend();
void set_backend(Backend b);

// ---- deterministic reduction helpers -------------------------------------

// Number of reduction blocks for a loop of length n. Pure function of n so
// the summation tree is identical for any thread count.
std::size_t reduction_blocks(std::size_t n);

template <class F>
inline double blocked_sum(std::size_t n, F&& partial) {
  // `partial(lo, hi)` returns the serial sum over [lo, hi).
  const std::size_t nb = reduction_blocks(n);
  if (nb <= 1) return partial(std::size_t{0}, n);
  std::vector<double> parts(nb);
  const std::size_t chunk = (n + nb - 1) / nb;
#pragma omp parallel for schedule(static)
  for (std::int64_t b = 0; b < static_cast<std::int64_t>(nb); ++b) {
    const std::size_t lo = static_cast<std::size_t>(b) * chunk;
    const std::size_t hi = lo + chunk < n ? lo + chunk : n;
    parts[static_cast<std::size_t>(b)] = lo < hi ? partial(lo, hi) : 0.0;
  }
  double total = 0.0;
  for (double p : parts) total += p;
  return total;
}

// Sum of f(i) over [0, n); deterministic for both backends.
double sum_elements(const double* x, std::size_t n);
double sum_squared_diff(const double* a, const double* b, std::size_t n);

// ---- conv2d (stride 1, same padding) --------------------------------------
// x: [N, Ci, H, W], w: [Co, Ci, k, k], b: [Co] or nullptr, y: [N, Co, H, W].
// Requires k odd and pad = (k - 1) / 2.
void conv2d_forward(const double* x, int n, int ci, int h, int w_,
                    const double* w, int co, int k, const double* bias,
                    double* y);
void conv2d_backward_input(const double* dy, int n, int co, int h, int w_,
                           const double* w, int ci, int k, double* dx);
void conv2d_backward_params(const double* x, const double* dy, int n, int ci,
                            int co, int h, int w_, int k, double* dw,
                            double* db);

// ---- conv_transpose2d ------------------------------------------------------
// x: [N, Ci, H, W], w: [Ci, Co, k, k], y: [N, Co, Ho, Wo] with
// Ho = (H - 1) * stride - 2 * pad + k + out_pad (and likewise Wo).
int conv_transpose2d_out_size(int in, int k, int stride, int pad, int out_pad);
void conv_transpose2d_forward(const double* x, int n, int ci, int h, int w_,
                              const double* w, int co, int k, int stride,
                              int pad, int out_pad, const double* bias,
                              double* y);
void conv_transpose2d_backward_input(const double* dy, int n, int co, int ho,
                                     int wo, const double* w, int ci, int k,
                                     int stride, int pad, int h, int w_,
                                     double* dx);
void conv_transpose2d_backward_params(const double* x, const double* dy, int n,
                                      int ci, int co, int h, int w_, int k,
                                      int stride, int pad, int ho, int wo,
                                      double* dw, double* db);

// ---- linear ----------------------------------------------------------------
// x: [N, In], w: [Out, In], b: [Out] or nullptr, y: [N, Out].
void linear_forward(const double* x, int n, int in, const double* w, int out,
                    const double* bias, double* y);
void linear_backward_input(const double* dy, int n, int out, const double* w,
                           int in, double* dx);
void linear_backward_params(const double* x, const double* dy, int n, int in,
                            int out, double* dw, double* db);

// ---- 2x2 max pooling (stride 2) --------------------------------------------
// argmax stores the flat input offset of each output's maximum.
void maxpool2_forward(const double* x, int n, int c, int h, int w_, double* y,
                      std::int32_t* argmax);
void maxpool2_backward(const double* dy, int n, int c, int h, int w_,
                       const std::int32_t* argmax, double* dx);

// ---- batch normalization ----------------------------------------------------
// Layout [N, C, L]: per-channel statistics over N * L items (L = H * W for
// 2-d feature maps, L = 1 for fully connected activations).
void batchnorm_forward_train(const double* x, int n, int c, int l,
                             const double* gamma, const double* beta,
                             double eps, double* y, double* mean, double* var);
void batchnorm_forward_eval(const double* x, int n, int c, int l,
                            const double* gamma, const double* beta,
                            const double* run_mean, const double* run_var,
                            double eps, double* y);
void batchnorm_backward(const double* x, const double* dy, int n, int c, int l,
                        const double* gamma, const double* mean,
                        const double* var, double eps, double* dx,
                        double* dgamma, double* dbeta);

}  // namespace mvvae::kernels
