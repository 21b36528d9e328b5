// Closed-form expectation engine for linear decoders over a mean-field
// latent: exact expected reconstruction log-likelihood (fixed variance and
// learnable precision), the covariance-of-products decompositions, the
// second-order log surrogate, and hand-derived gradients of all of these.
//
// Every quantity is a finite composition of +, *, / and one log, evaluated
// in a fixed order: repeated calls are bitwise identical and the gradients
// carry zero estimation variance.

#ifndef SILENTGRAD_ANALYTIC_HPP
#define SILENTGRAD_ANALYTIC_HPP

#include <optional>

#include "silentgrad/latent.hpp"
#include "silentgrad/ndcore.hpp"

namespace silentgrad {

// Linear decoder over the bias-augmented latent: mean head w_mu (k x (d+1)),
// optional precision head w_alpha (k x (d+1)) for learnable-precision mode.
struct LinearDecoder {
  DenseMatrix w_mu;
  std::optional<DenseMatrix> w_alpha;

  bool learnable() const { return w_alpha.has_value(); }
};

// Gradient with respect to the latent distribution's parameters.
// Gaussian: wrt_mean/wrt_var populated; Bernoulli: wrt_prob populated.
struct DistributionGrad {
  DenseVector wrt_mean;
  DenseVector wrt_var;
  DenseVector wrt_prob;
};

struct AnalyticRecon {
  double value = 0.0;                       // E[log p(x|z)]
  DistributionGrad grad_stats;              // d value / d distribution params
  DenseMatrix grad_w_mu;                    // d value / d W_mu
  std::optional<DenseMatrix> grad_w_alpha;  // d value / d W_alpha (learnable)
};

// E[||W z||^2] = ||W E[z]||^2 + sum_i ||w_i||^2 Var(z_i), in O(k d).
double expected_sq_norm(const DenseMatrix& w, const LatentDistribution& dist);

// Per-output-dimension version: entry j is E[(W z)_j^2]; sums to the above.
DenseVector expected_sq_norm_per_dim(const DenseMatrix& w, const LatentDistribution& dist);

// Entry j is Cov((W_mu z)_j, (W_alpha z)_j^2).
DenseVector cov_lin_sqnorm(const DenseMatrix& w_mu, const DenseMatrix& w_alpha,
                           const LatentDistribution& dist);

// Entry j is Cov((W_mu z)_j^2, (W_alpha z)_j^2), a linear combination of the
// second through fourth central moments.
DenseVector cov_sqnorm_sqnorm(const DenseMatrix& w_mu, const DenseMatrix& w_alpha,
                              const LatentDistribution& dist);

// Expected Gaussian log-likelihood with fixed scalar variance sigma2:
//   -(1 / 2 sigma2) [ ||x - W_mu E[z]||^2 + sum_i ||w_i||^2 Var(z_i) ]
//   - (k/2) log(2 pi sigma2),
// with exact gradients w.r.t. the distribution parameters and W_mu.
AnalyticRecon expected_recon_fixed(const DenseVector& x, const LinearDecoder& dec,
                                   const LatentDistribution& dist, double sigma2);

// Second-order surrogate for E[log Q]: log(mean_q) - var_q / (2 mean_q^2).
// Throws std::domain_error for mean_q <= 0.
double taylor_log_expect(double mean_q, double var_q);

// Expected log-likelihood for the learnable-precision decoder
// (mu(z) = W_mu z, alpha(z) = W_alpha z, per-pixel variance 1/alpha^2),
// assembled per output dimension from the covariance decompositions with the
// log term replaced by the second-order surrogate. Exact gradients w.r.t.
// distribution parameters, W_mu and W_alpha.
AnalyticRecon expected_recon_learnable(const DenseVector& x, const LinearDecoder& dec,
                                       const LatentDistribution& dist);

}  // namespace silentgrad

#endif  // SILENTGRAD_ANALYTIC_HPP
