// Mean-field latent distributions (diagonal Gaussian / Bernoulli vector),
// their closed-form central moments, sampling, and KL to the fixed prior.

#ifndef SILENTGRAD_LATENT_HPP
#define SILENTGRAD_LATENT_HPP

#include <cstddef>

#include "silentgrad/ndcore.hpp"

namespace silentgrad {

enum class LatentKind { DiagGaussian, Bernoulli };

// Per-dimension factorized latent distribution. Components are independent.
struct LatentDistribution {
  LatentKind kind = LatentKind::DiagGaussian;
  DenseVector mean;  // Gaussian only
  DenseVector var;   // Gaussian only, entries >= 0
  DenseVector prob;  // Bernoulli only, entries in [0, 1]

  static LatentDistribution diag_gaussian(DenseVector mean, DenseVector var);
  static LatentDistribution bernoulli(DenseVector prob);

  std::size_t dim() const {
    return kind == LatentKind::DiagGaussian ? mean.size() : prob.size();
  }

  // E[z_i] and Var(z_i) regardless of kind.
  double component_mean(std::size_t i) const;
  double component_var(std::size_t i) const;
};

// Central moments E[(z_i - E[z_i])^k] for k = 2, 3, 4 (k = 1 is identically 0).
struct CentralMoments {
  DenseVector m2;
  DenseVector m3;
  DenseVector m4;
};

// Gaussian: (sigma^2, 0, 3 sigma^4). Bernoulli: closed-form polynomials of p.
CentralMoments central_moments(const LatentDistribution& dist);

// Appends one deterministic dimension with mean 1 and all central moments 0
// (Gaussian: var = 0; Bernoulli: p = 1). Plays the role of a decoder bias.
LatentDistribution augment_with_bias(const LatentDistribution& dist);

// Gaussian: mean + sqrt(var) * eps. Bernoulli: hard {0,1} coin flips.
DenseVector sample(const LatentDistribution& dist, RngStream& rng);

// KL(q || prior) with prior N(0, I) resp. Bern(0.5) per dimension.
// Throws std::domain_error when a Gaussian variance is zero.
double kl_to_prior(const LatentDistribution& dist);

// Gradient of kl_to_prior with respect to the distribution's natural
// parameters: Gaussian -> [d/dmean..., d/dlogvar...] (2d), Bernoulli ->
// [d/dlogit...] (d).
DenseVector kl_to_prior_grad_natural(const LatentDistribution& dist);

}  // namespace silentgrad

#endif  // SILENTGRAD_LATENT_HPP
