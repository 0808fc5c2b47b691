// Timing comparison between the serial reference kernels and the OpenMP
// versions, on shapes representative of the training workload.
//
//   ./bench_kernels [repeats]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "mvvae/kernels.hpp"
#include "mvvae/rng.hpp"

using namespace mvvae;
namespace K = mvvae::kernels;
using clk = std::chrono::steady_clock;

namespace {

double time_ms(int repeats, const std::function<void()>& fn) {
  fn();  // warmup
  const auto t0 = clk::now();
  for (int r = 0; r < repeats; ++r) fn();
  const auto t1 = clk::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / repeats;
}

void report(const char* name, int repeats, const std::function<void()>& fn) {
  K::set_backend(K::Backend::Serial);
  const double ser = time_ms(repeats, fn);
  K::set_backend(K::Backend::OpenMP);
  const double omp = time_ms(repeats, fn);
  std::printf("%-28s serial %9.3f ms   openmp %9.3f ms   speedup %5.2fx\n",
              name, ser, omp, ser / omp);
}

}  // namespace

int main(int argc, char** argv) {
  const int repeats = argc > 1 ? std::atoi(argv[1]) : 5;
  Rng rng(7);

  // Shapes: a mid-pipeline conv block and the model's fully connected heads.
  const int n = 8, ci = 8, co = 8, h = 64, w = 64, k = 3;
  std::vector<double> x(static_cast<std::size_t>(n) * ci * h * w);
  std::vector<double> wts(static_cast<std::size_t>(co) * ci * k * k);
  std::vector<double> bias(co);
  std::vector<double> y(static_cast<std::size_t>(n) * co * h * w);
  std::vector<double> dx(x.size()), dw(wts.size()), db(co);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  for (auto& v : wts) v = rng.uniform(-0.3, 0.3);
  for (auto& v : bias) v = rng.uniform(-0.1, 0.1);

  report("conv2d forward", repeats, [&] {
    K::conv2d_forward(x.data(), n, ci, h, w, wts.data(), co, k, bias.data(), y.data());
  });
  report("conv2d backward input", repeats, [&] {
    K::conv2d_backward_input(y.data(), n, co, h, w, wts.data(), ci, k, dx.data());
  });
  report("conv2d backward params", repeats, [&] {
    K::conv2d_backward_params(x.data(), y.data(), n, ci, co, h, w, k, dw.data(), db.data());
  });

  const int stride = 2, pad = 1, out_pad = 1;
  const int ho = K::conv_transpose2d_out_size(h, k, stride, pad, out_pad);
  const int wo = ho;
  std::vector<double> wt(static_cast<std::size_t>(ci) * co * k * k);
  for (auto& v : wt) v = rng.uniform(-0.3, 0.3);
  std::vector<double> yt(static_cast<std::size_t>(n) * co * ho * wo);
  report("conv_transpose2d forward", repeats, [&] {
    K::conv_transpose2d_forward(x.data(), n, ci, h, w, wt.data(), co, k,
                                stride, pad, out_pad, bias.data(), yt.data());
  });

  const int rows = 64, in_f = 2048, out_f = 256;
  std::vector<double> xl(static_cast<std::size_t>(rows) * in_f);
  std::vector<double> wl(static_cast<std::size_t>(out_f) * in_f);
  std::vector<double> bl(out_f);
  std::vector<double> yl(static_cast<std::size_t>(rows) * out_f);
  for (auto& v : xl) v = rng.uniform(-1.0, 1.0);
  for (auto& v : wl) v = rng.uniform(-0.1, 0.1);
  report("linear forward", repeats, [&] {
    K::linear_forward(xl.data(), rows, in_f, wl.data(), out_f, bl.data(), yl.data());
  });

  std::vector<double> gamma(ci, 1.0), beta(ci, 0.0), mu(ci), va(ci);
  std::vector<double> yb(x.size());
  report("batchnorm forward (train)", repeats, [&] {
    K::batchnorm_forward_train(x.data(), n, ci, h * w, gamma.data(),
                               beta.data(), 1e-5, yb.data(), mu.data(), va.data());
  });
  return 0;
}
