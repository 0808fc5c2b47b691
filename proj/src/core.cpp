#include "mvvae/core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvvae::core {

namespace {
constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;  // ln(2*pi)/2

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}
}  // namespace

void GaussianPosterior::validate() const {
  require(mean.size() == std.size(),
          "GaussianPosterior: mean and std lengths differ");
  for (double s : std) require(s > 0.0, "GaussianPosterior: std must be > 0");
}

void MixturePrior::validate() const {
  require(!components.empty(), "MixturePrior: empty component list");
  const std::size_t d = components.front().mean.size();
  for (const auto& comp : components) {
    comp.validate();
    require(comp.mean.size() == d,
            "MixturePrior: components must share the latent dimension");
  }
}

double gaussian_log_prob(std::span<const double> x,
                         const GaussianPosterior& post) {
  post.validate();
  require(x.size() == post.mean.size(), "gaussian_log_prob: dimension mismatch");
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - post.mean[i]) / post.std[i];
    lp += -kHalfLog2Pi - std::log(post.std[i]) - 0.5 * z * z;
  }
  return lp;
}

std::vector<double> reparameterize(const GaussianPosterior& post,
                                   std::span<const double> noise) {
  post.validate();
  require(noise.size() == post.mean.size(), "reparameterize: dimension mismatch");
  std::vector<double> z(noise.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = post.mean[i] + post.std[i] * noise[i];
  return z;
}

double kl_to_standard_normal(const GaussianPosterior& post) {
  post.validate();
  double kl = 0.0;
  for (std::size_t i = 0; i < post.mean.size(); ++i) {
    const double m = post.mean[i];
    const double s = post.std[i];
    kl += 0.5 * (m * m + s * s - 1.0) - std::log(s);
  }
  return kl;
}

double mixture_log_prob(std::span<const double> z, const MixturePrior& prior) {
  prior.validate();
  require(static_cast<int>(z.size()) == prior.components.front().dim(),
          "mixture_log_prob: dimension mismatch");
  std::vector<double> lps(prior.components.size());
  for (std::size_t m = 0; m < lps.size(); ++m)
    lps[m] = gaussian_log_prob(z, prior.components[m]);
  // Sorted accumulation makes the result independent of component order.
  std::sort(lps.begin(), lps.end());
  const double mx = lps.back();
  double s = 0.0;
  for (double lp : lps) s += std::exp(lp - mx);
  return mx + std::log(s) - std::log(static_cast<double>(lps.size()));
}

ElboTerms elbo_independent(std::span<const double> recon_logliks,
                           std::span<const GaussianPosterior> posteriors) {
  require(recon_logliks.size() == posteriors.size(),
          "elbo_independent: list length mismatch");
  ElboTerms t;
  for (std::size_t m = 0; m < posteriors.size(); ++m) {
    t.recon_loglik += recon_logliks[m];
    t.regularizer -= kl_to_standard_normal(posteriors[m]);
  }
  t.total = t.recon_loglik + t.regularizer;
  return t;
}

namespace {
GaussianPosterior standard_normal(int d) {
  GaussianPosterior p;
  p.mean.assign(static_cast<std::size_t>(d), 0.0);
  p.std.assign(static_cast<std::size_t>(d), 1.0);
  return p;
}
}  // namespace

ElboTerms elbo_independent_mc(double recon_loglik,
                              const GaussianPosterior& post,
                              std::span<const double> sample) {
  ElboTerms t;
  t.recon_loglik = recon_loglik;
  t.regularizer = gaussian_log_prob(sample, standard_normal(post.dim())) -
                  gaussian_log_prob(sample, post);
  t.total = t.recon_loglik + t.regularizer;
  return t;
}

ElboTerms mmvm_objective(std::span<const double> recon_logliks,
                         std::span<const GaussianPosterior> posteriors,
                         std::span<const std::vector<double>> samples) {
  require(recon_logliks.size() == posteriors.size() &&
              samples.size() == posteriors.size(),
          "mmvm_objective: list length mismatch");
  require(!posteriors.empty(), "mmvm_objective: no views");

  ElboTerms t;
  for (double r : recon_logliks) t.recon_loglik += r;

  if (posteriors.size() == 1) {
    const ElboTerms one =
        elbo_independent_mc(recon_logliks[0], posteriors[0], samples[0]);
    t.regularizer = one.regularizer;
    t.total = t.recon_loglik + t.regularizer;
    return t;
  }

  MixturePrior prior;
  prior.components.assign(posteriors.begin(), posteriors.end());
  for (std::size_t m = 0; m < posteriors.size(); ++m) {
    t.regularizer += mixture_log_prob(samples[m], prior) -
                     gaussian_log_prob(samples[m], posteriors[m]);
  }
  t.total = t.recon_loglik + t.regularizer;
  return t;
}

void kl_to_standard_normal_grad(const GaussianPosterior& post,
                                std::span<double> dmean,
                                std::span<double> dstd) {
  post.validate();
  require(dmean.size() == post.mean.size() && dstd.size() == post.std.size(),
          "kl grad: dimension mismatch");
  for (std::size_t i = 0; i < post.mean.size(); ++i) {
    dmean[i] = post.mean[i];
    dstd[i] = post.std[i] - 1.0 / post.std[i];
  }
}

void gaussian_log_prob_grad(std::span<const double> z,
                            const GaussianPosterior& post, std::span<double> dz,
                            std::span<double> dmean, std::span<double> dstd) {
  post.validate();
  require(z.size() == post.mean.size(), "gaussian grad: dimension mismatch");
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s = post.std[i];
    const double r = (z[i] - post.mean[i]) / s;
    dz[i] = -r / s;
    dmean[i] = r / s;
    dstd[i] = (r * r - 1.0) / s;
  }
}

double mixture_log_prob_grad(std::span<const double> z,
                             const MixturePrior& prior, std::span<double> dz,
                             std::vector<std::vector<double>>& dmean,
                             std::vector<std::vector<double>>& dstd) {
  prior.validate();
  const int M = prior.size();
  const std::size_t d = z.size();
  require(static_cast<int>(dmean.size()) == M &&
              static_cast<int>(dstd.size()) == M,
          "mixture grad: component count mismatch");

  std::vector<double> lps(M);
  for (int m = 0; m < M; ++m)
    lps[m] = gaussian_log_prob(z, prior.components[m]);
  const double mx = *std::max_element(lps.begin(), lps.end());
  double denom = 0.0;
  for (double lp : lps) denom += std::exp(lp - mx);
  const double logh = mx + std::log(denom) - std::log(static_cast<double>(M));

  std::fill(dz.begin(), dz.end(), 0.0);
  for (int m = 0; m < M; ++m) {
    const double resp = std::exp(lps[m] - mx) / denom;  // softmax weight
    const auto& comp = prior.components[m];
    for (std::size_t i = 0; i < d; ++i) {
      const double s = comp.std[i];
      const double r = (z[i] - comp.mean[i]) / s;
      dz[i] += resp * (-r / s);
      dmean[m][i] += resp * (r / s);
      dstd[m][i] += resp * ((r * r - 1.0) / s);
    }
  }
  return logh;
}

}  // namespace mvvae::core
