#pragma once

#include <span>
#include <vector>

namespace mvvae::core {

// Diagonal-Gaussian posterior parameters for one view's latent code.
// Standard deviations are produced as exp() of a raw network output and are
// floored at kStdFloor, so positivity is structural.
struct GaussianPosterior {
  std::vector<double> mean;
  std::vector<double> std;

  int dim() const { return static_cast<int>(mean.size()); }
  void validate() const;
};

inline constexpr double kStdFloor = 1e-6;

// Uniform mixture of the per-view posteriors; the data-dependent prior.
struct MixturePrior {
  std::vector<GaussianPosterior> components;

  int size() const { return static_cast<int>(components.size()); }
  void validate() const;
};

// One objective evaluation, split into its reconstruction and regularizer
// parts. `total == recon_loglik + regularizer` exactly.
struct ElboTerms {
  double recon_loglik = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
};

// log N(x; mean, diag(std^2)) in nats.
double gaussian_log_prob(std::span<const double> x, const GaussianPosterior& post);

// mean + std * noise.
std::vector<double> reparameterize(const GaussianPosterior& post,
                                   std::span<const double> noise);

// Closed-form KL(q || N(0, I)) = 1/2 * sum(mean^2 + std^2 - 1 - 2 ln std).
double kl_to_standard_normal(const GaussianPosterior& post);

// log of the uniform mixture density at z. Log-sum-exp with max shift;
// component log-densities are summed in sorted order so the result is
// bitwise invariant under component permutation.
double mixture_log_prob(std::span<const double> z, const MixturePrior& prior);

// Sum over views of [recon_m - KL(q_m || N(0, I))].
ElboTerms elbo_independent(std::span<const double> recon_logliks,
                           std::span<const GaussianPosterior> posteriors);

// Single-sample Monte-Carlo form of the independent ELBO for one view:
// recon + log N(z; 0, I) - log q(z).
ElboTerms elbo_independent_mc(double recon_loglik, const GaussianPosterior& post,
                              std::span<const double> sample);

// Mixture-prior objective: sum over views of recon_m plus the Monte-Carlo
// term [log h(z_m | all posteriors) - log q_m(z_m)], evaluated at each view's
// own reparameterized sample. With a single view there is no cross-view
// mixture to form; the prior falls back to the standard normal, which makes
// the objective coincide with the MC independent ELBO.
ElboTerms mmvm_objective(std::span<const double> recon_logliks,
                         std::span<const GaussianPosterior> posteriors,
                         std::span<const std::vector<double>> samples);

// ---- analytic gradients (used by the training loop) -----------------------

// d KL(q || N(0,I)) / d mean = mean, / d std = std - 1/std.
void kl_to_standard_normal_grad(const GaussianPosterior& post,
                                std::span<double> dmean, std::span<double> dstd);

// Gradients of log q(z; mean, std) with respect to z, mean and std.
void gaussian_log_prob_grad(std::span<const double> z,
                            const GaussianPosterior& post, std::span<double> dz,
                            std::span<double> dmean, std::span<double> dstd);

// Gradients of log h(z) with respect to z and to every component's
// parameters. dmean/dstd are indexed [component][dim] and are accumulated
// into (+=), so callers can fold several views' contributions together.
double mixture_log_prob_grad(std::span<const double> z,
                             const MixturePrior& prior, std::span<double> dz,
                             std::vector<std::vector<double>>& dmean,
                             std::vector<std::vector<double>>& dstd);

}  // namespace mvvae::core
