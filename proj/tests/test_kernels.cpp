#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mvvae/kernels.hpp"
#include "mvvae/rng.hpp"

using namespace mvvae;
namespace K = mvvae::kernels;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0,
                               double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b,
                 double tol = 1e-12) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), 1.0});
    CHECK(std::abs(a[i] - b[i]) <= tol * scale);
  }
}

struct BackendGuard {
  K::Backend saved = K::backend();
  ~BackendGuard() { K::set_backend(saved); }
};

}  // namespace

TEST_CASE("conv2d serial and OpenMP agree") {
  BackendGuard guard;
  Rng rng(101);
  const int n = 2, ci = 3, co = 4, h = 13, w = 11, k = 3;
  auto x = random_vec(rng, static_cast<std::size_t>(n) * ci * h * w);
  auto wts = random_vec(rng, static_cast<std::size_t>(co) * ci * k * k);
  auto bias = random_vec(rng, co);
  auto dy = random_vec(rng, static_cast<std::size_t>(n) * co * h * w);

  std::vector<double> y1(dy.size()), y2(dy.size());
  std::vector<double> dx1(x.size()), dx2(x.size());
  std::vector<double> dw1(wts.size()), dw2(wts.size());
  std::vector<double> db1(co), db2(co);

  K::set_backend(K::Backend::Serial);
  K::conv2d_forward(x.data(), n, ci, h, w, wts.data(), co, k, bias.data(), y1.data());
  K::conv2d_backward_input(dy.data(), n, co, h, w, wts.data(), ci, k, dx1.data());
  K::conv2d_backward_params(x.data(), dy.data(), n, ci, co, h, w, k, dw1.data(), db1.data());

  K::set_backend(K::Backend::OpenMP);
  K::conv2d_forward(x.data(), n, ci, h, w, wts.data(), co, k, bias.data(), y2.data());
  K::conv2d_backward_input(dy.data(), n, co, h, w, wts.data(), ci, k, dx2.data());
  K::conv2d_backward_params(x.data(), dy.data(), n, ci, co, h, w, k, dw2.data(), db2.data());

  check_close(y1, y2);
  check_close(dx1, dx2);
  check_close(dw1, dw2);
  check_close(db1, db2);
}

TEST_CASE("conv2d gradients match finite differences") {
  BackendGuard guard;
  K::set_backend(K::Backend::OpenMP);
  Rng rng(102);
  const int n = 1, ci = 2, co = 2, h = 5, w = 4, k = 3;
  auto x = random_vec(rng, static_cast<std::size_t>(n) * ci * h * w);
  auto wts = random_vec(rng, static_cast<std::size_t>(co) * ci * k * k);
  auto bias = random_vec(rng, co);

  // Loss = 1/2 sum(y^2), so dL/dy = y.
  auto loss = [&](const std::vector<double>& xv, const std::vector<double>& wv,
                  const std::vector<double>& bv) {
    std::vector<double> y(static_cast<std::size_t>(n) * co * h * w);
    K::conv2d_forward(xv.data(), n, ci, h, w, wv.data(), co, k, bv.data(), y.data());
    double s = 0.0;
    for (double v : y) s += 0.5 * v * v;
    return s;
  };

  std::vector<double> y(static_cast<std::size_t>(n) * co * h * w);
  K::conv2d_forward(x.data(), n, ci, h, w, wts.data(), co, k, bias.data(), y.data());
  std::vector<double> dx(x.size()), dw(wts.size()), db(co);
  K::conv2d_backward_input(y.data(), n, co, h, w, wts.data(), ci, k, dx.data());
  K::conv2d_backward_params(x.data(), y.data(), n, ci, co, h, w, k, dw.data(), db.data());

  const double step = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 7) {
    auto xp = x; auto xm = x;
    xp[i] += step; xm[i] -= step;
    const double num = (loss(xp, wts, bias) - loss(xm, wts, bias)) / (2 * step);
    CHECK(dx[i] == doctest::Approx(num).epsilon(1e-5));
  }
  for (std::size_t i = 0; i < wts.size(); i += 5) {
    auto wp = wts; auto wm = wts;
    wp[i] += step; wm[i] -= step;
    const double num = (loss(x, wp, bias) - loss(x, wm, bias)) / (2 * step);
    CHECK(dw[i] == doctest::Approx(num).epsilon(1e-5));
  }
  for (int i = 0; i < co; ++i) {
    auto bp = bias; auto bm = bias;
    bp[i] += step; bm[i] -= step;
    const double num = (loss(x, wts, bp) - loss(x, wts, bm)) / (2 * step);
    CHECK(db[i] == doctest::Approx(num).epsilon(1e-5));
  }
}

TEST_CASE("conv_transpose2d output sizes") {
  CHECK(K::conv_transpose2d_out_size(8, 3, 2, 1, 1) == 16);
  CHECK(K::conv_transpose2d_out_size(16, 3, 1, 1, 0) == 16);
  CHECK(K::conv_transpose2d_out_size(64, 3, 2, 1, 1) == 128);
}

TEST_CASE("conv_transpose2d serial and OpenMP agree") {
  BackendGuard guard;
  Rng rng(103);
  for (int stride : {1, 2}) {
    const int n = 2, ci = 3, co = 2, h = 6, w = 5, k = 3, pad = 1;
    const int out_pad = stride - 1;
    const int ho = K::conv_transpose2d_out_size(h, k, stride, pad, out_pad);
    const int wo = K::conv_transpose2d_out_size(w, k, stride, pad, out_pad);
    auto x = random_vec(rng, static_cast<std::size_t>(n) * ci * h * w);
    auto wts = random_vec(rng, static_cast<std::size_t>(ci) * co * k * k);
    auto bias = random_vec(rng, co);
    auto dy = random_vec(rng, static_cast<std::size_t>(n) * co * ho * wo);

    std::vector<double> y1(dy.size()), y2(dy.size());
    std::vector<double> dx1(x.size()), dx2(x.size());
    std::vector<double> dw1(wts.size()), dw2(wts.size());
    std::vector<double> db1(co), db2(co);

    K::set_backend(K::Backend::Serial);
    K::conv_transpose2d_forward(x.data(), n, ci, h, w, wts.data(), co, k,
                                stride, pad, out_pad, bias.data(), y1.data());
    K::conv_transpose2d_backward_input(dy.data(), n, co, ho, wo, wts.data(),
                                       ci, k, stride, pad, h, w, dx1.data());
    K::conv_transpose2d_backward_params(x.data(), dy.data(), n, ci, co, h, w,
                                        k, stride, pad, ho, wo, dw1.data(),
                                        db1.data());

    K::set_backend(K::Backend::OpenMP);
    K::conv_transpose2d_forward(x.data(), n, ci, h, w, wts.data(), co, k,
                                stride, pad, out_pad, bias.data(), y2.data());
    K::conv_transpose2d_backward_input(dy.data(), n, co, ho, wo, wts.data(),
                                       ci, k, stride, pad, h, w, dx2.data());
    K::conv_transpose2d_backward_params(x.data(), dy.data(), n, ci, co, h, w,
                                        k, stride, pad, ho, wo, dw2.data(),
                                        db2.data());

    check_close(y1, y2);
    check_close(dx1, dx2);
    check_close(dw1, dw2);
    check_close(db1, db2);
  }
}

TEST_CASE("conv_transpose2d gradients match finite differences") {
  BackendGuard guard;
  K::set_backend(K::Backend::OpenMP);
  Rng rng(104);
  const int n = 1, ci = 2, co = 2, h = 4, w = 3, k = 3, stride = 2, pad = 1,
            out_pad = 1;
  const int ho = K::conv_transpose2d_out_size(h, k, stride, pad, out_pad);
  const int wo = K::conv_transpose2d_out_size(w, k, stride, pad, out_pad);
  auto x = random_vec(rng, static_cast<std::size_t>(n) * ci * h * w);
  auto wts = random_vec(rng, static_cast<std::size_t>(ci) * co * k * k);
  auto bias = random_vec(rng, co);

  auto loss = [&](const std::vector<double>& xv, const std::vector<double>& wv) {
    std::vector<double> y(static_cast<std::size_t>(n) * co * ho * wo);
    K::conv_transpose2d_forward(xv.data(), n, ci, h, w, wv.data(), co, k,
                                stride, pad, out_pad, bias.data(), y.data());
    double s = 0.0;
    for (double v : y) s += 0.5 * v * v;
    return s;
  };

  std::vector<double> y(static_cast<std::size_t>(n) * co * ho * wo);
  K::conv_transpose2d_forward(x.data(), n, ci, h, w, wts.data(), co, k, stride,
                              pad, out_pad, bias.data(), y.data());
  std::vector<double> dx(x.size()), dw(wts.size()), db(co);
  K::conv_transpose2d_backward_input(y.data(), n, co, ho, wo, wts.data(), ci,
                                     k, stride, pad, h, w, dx.data());
  K::conv_transpose2d_backward_params(x.data(), y.data(), n, ci, co, h, w, k,
                                      stride, pad, ho, wo, dw.data(), db.data());

  const double step = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 3) {
    auto xp = x; auto xm = x;
    xp[i] += step; xm[i] -= step;
    CHECK(dx[i] == doctest::Approx((loss(xp, wts) - loss(xm, wts)) / (2 * step))
                       .epsilon(1e-5));
  }
  for (std::size_t i = 0; i < wts.size(); i += 4) {
    auto wp = wts; auto wm = wts;
    wp[i] += step; wm[i] -= step;
    CHECK(dw[i] == doctest::Approx((loss(x, wp) - loss(x, wm)) / (2 * step))
                       .epsilon(1e-5));
  }
}

TEST_CASE("linear serial and OpenMP agree, gradients correct") {
  BackendGuard guard;
  Rng rng(105);
  const int n = 4, in = 7, out = 5;
  auto x = random_vec(rng, static_cast<std::size_t>(n) * in);
  auto wts = random_vec(rng, static_cast<std::size_t>(out) * in);
  auto bias = random_vec(rng, out);
  auto dy = random_vec(rng, static_cast<std::size_t>(n) * out);

  std::vector<double> y1(dy.size()), y2(dy.size()), dx1(x.size()), dx2(x.size());
  std::vector<double> dw1(wts.size()), dw2(wts.size()), db1(out), db2(out);

  K::set_backend(K::Backend::Serial);
  K::linear_forward(x.data(), n, in, wts.data(), out, bias.data(), y1.data());
  K::linear_backward_input(dy.data(), n, out, wts.data(), in, dx1.data());
  K::linear_backward_params(x.data(), dy.data(), n, in, out, dw1.data(), db1.data());
  K::set_backend(K::Backend::OpenMP);
  K::linear_forward(x.data(), n, in, wts.data(), out, bias.data(), y2.data());
  K::linear_backward_input(dy.data(), n, out, wts.data(), in, dx2.data());
  K::linear_backward_params(x.data(), dy.data(), n, in, out, dw2.data(), db2.data());

  check_close(y1, y2);
  check_close(dx1, dx2);
  check_close(dw1, dw2);
  check_close(db1, db2);

  // Spot finite-difference check on the weight gradient.
  auto loss = [&](const std::vector<double>& wv) {
    std::vector<double> y(static_cast<std::size_t>(n) * out);
    K::linear_forward(x.data(), n, in, wv.data(), out, bias.data(), y.data());
    double s = 0.0;
    for (double v : y) s += 0.5 * v * v;
    return s;
  };
  std::vector<double> ybase(static_cast<std::size_t>(n) * out);
  K::linear_forward(x.data(), n, in, wts.data(), out, bias.data(), ybase.data());
  std::vector<double> dw(wts.size()), db(out);
  K::linear_backward_params(x.data(), ybase.data(), n, in, out, dw.data(), db.data());
  const double step = 1e-6;
  for (std::size_t i = 0; i < wts.size(); i += 6) {
    auto wp = wts; auto wm = wts;
    wp[i] += step; wm[i] -= step;
    CHECK(dw[i] == doctest::Approx((loss(wp) - loss(wm)) / (2 * step)).epsilon(1e-6));
  }
}

TEST_CASE("maxpool2 forward/backward") {
  BackendGuard guard;
  Rng rng(106);
  const int n = 2, c = 3, h = 8, w = 6;
  auto x = random_vec(rng, static_cast<std::size_t>(n) * c * h * w);
  const std::size_t osize = static_cast<std::size_t>(n) * c * (h / 2) * (w / 2);

  std::vector<double> y1(osize), y2(osize);
  std::vector<std::int32_t> a1(osize), a2(osize);
  K::set_backend(K::Backend::Serial);
  K::maxpool2_forward(x.data(), n, c, h, w, y1.data(), a1.data());
  K::set_backend(K::Backend::OpenMP);
  K::maxpool2_forward(x.data(), n, c, h, w, y2.data(), a2.data());
  check_close(y1, y2);
  for (std::size_t i = 0; i < osize; ++i) CHECK(a1[i] == a2[i]);

  // Backward routes each output gradient to its argmax slot.
  auto dy = random_vec(rng, osize);
  std::vector<double> dx(x.size());
  K::maxpool2_backward(dy.data(), n, c, h, w, a2.data(), dx.data());
  double sum_dy = 0.0, sum_dx = 0.0;
  for (double v : dy) sum_dy += v;
  for (double v : dx) sum_dx += v;
  CHECK(sum_dx == doctest::Approx(sum_dy).epsilon(1e-12));
}

TEST_CASE("batchnorm statistics, normalization and gradients") {
  BackendGuard guard;
  Rng rng(107);
  const int n = 4, c = 3, l = 6;
  const double eps = 1e-5;
  auto x = random_vec(rng, static_cast<std::size_t>(n) * c * l, -2.0, 2.0);
  auto gamma = random_vec(rng, c, 0.5, 1.5);
  auto beta = random_vec(rng, c, -0.5, 0.5);

  std::vector<double> y1(x.size()), y2(x.size()), mean1(c), var1(c), mean2(c), var2(c);
  K::set_backend(K::Backend::Serial);
  K::batchnorm_forward_train(x.data(), n, c, l, gamma.data(), beta.data(), eps,
                             y1.data(), mean1.data(), var1.data());
  K::set_backend(K::Backend::OpenMP);
  K::batchnorm_forward_train(x.data(), n, c, l, gamma.data(), beta.data(), eps,
                             y2.data(), mean2.data(), var2.data());
  check_close(y1, y2);
  check_close(mean1, mean2);
  check_close(var1, var2);

  // Statistics against a direct computation.
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int in = 0; in < n; ++in)
      for (int i = 0; i < l; ++i)
        s += x[(static_cast<std::size_t>(in) * c + ch) * l + i];
    CHECK(mean2[ch] == doctest::Approx(s / (n * l)).epsilon(1e-12));
  }

  // Gradient check through the batch statistics.
  auto dy = random_vec(rng, x.size());
  std::vector<double> dx(x.size()), dgamma(c), dbeta(c);
  K::batchnorm_backward(x.data(), dy.data(), n, c, l, gamma.data(),
                        mean2.data(), var2.data(), eps, dx.data(),
                        dgamma.data(), dbeta.data());
  auto loss = [&](const std::vector<double>& xv) {
    std::vector<double> y(x.size()), mu(c), va(c);
    K::batchnorm_forward_train(xv.data(), n, c, l, gamma.data(), beta.data(),
                               eps, y.data(), mu.data(), va.data());
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += dy[i] * y[i];
    return s;
  };
  const double step = 1e-6;
  for (std::size_t i = 0; i < x.size(); i += 11) {
    auto xp = x; auto xm = x;
    xp[i] += step; xm[i] -= step;
    CHECK(dx[i] == doctest::Approx((loss(xp) - loss(xm)) / (2 * step)).epsilon(1e-4));
  }

  // Eval mode is a pure affine map of the running statistics.
  std::vector<double> run_mean(c, 0.1), run_var(c, 1.3), ye(x.size());
  K::batchnorm_forward_eval(x.data(), n, c, l, gamma.data(), beta.data(),
                            run_mean.data(), run_var.data(), eps, ye.data());
  const double inv = 1.0 / std::sqrt(1.3 + eps);
  CHECK(ye[0] == doctest::Approx(gamma[0] * (x[0] - 0.1) * inv + beta[0]).epsilon(1e-12));
}

TEST_CASE("blocked reductions are identical across backends") {
  BackendGuard guard;
  Rng rng(108);
  auto x = random_vec(rng, 100000);
  auto y = random_vec(rng, 100000);
  K::set_backend(K::Backend::Serial);
  const double s1 = K::sum_elements(x.data(), x.size());
  const double d1 = K::sum_squared_diff(x.data(), y.data(), x.size());
  K::set_backend(K::Backend::OpenMP);
  const double s2 = K::sum_elements(x.data(), x.size());
  const double d2 = K::sum_squared_diff(x.data(), y.data(), x.size());
  CHECK(s1 == s2);
  CHECK(d1 == d2);
}
