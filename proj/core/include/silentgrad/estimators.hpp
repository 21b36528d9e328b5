// Gradient estimators for the reconstruction term behind one interface:
// reparameterization (Gaussian), binary Gumbel-Softmax and REINFORCE with a
// running-average baseline (Bernoulli), and the noise-free estimator that
// wraps the analytic engine. All gradients are with respect to the encoder
// distribution's natural parameters (Gaussian: mean and log-variance;
// Bernoulli: logits).

#ifndef SILENTGRAD_ESTIMATORS_HPP
#define SILENTGRAD_ESTIMATORS_HPP

#include <functional>

#include "silentgrad/analytic.hpp"
#include "silentgrad/latent.hpp"
#include "silentgrad/ndcore.hpp"

namespace silentgrad {

struct EstimatorOutput {
  double loss = 0.0;            // negative reconstruction log-likelihood
  DenseVector grad_stats;       // 2d (Gaussian) or d (Bernoulli) entries
  DenseVector relaxed_sample;   // Gumbel-Softmax only
};

// Differentiable decoder evaluation at a latent point.
struct DecoderEval {
  double loglik = 0.0;
  DenseVector dloglik_dz;
};
using DecoderEvalFn = std::function<DecoderEval(const DenseVector&)>;
using DecoderLoglikFn = std::function<double(const DenseVector&)>;

struct ReinforceState {
  double running_baseline = 0.0;
  double momentum = 0.9;  // in [0, 1)
};

struct ReconMode {
  bool is_fixed = true;
  double sigma2 = 1.0;

  static ReconMode fixed(double sigma2) { return {true, sigma2}; }
  static ReconMode learnable() { return {false, 0.0}; }
};

// z = mean + sqrt(var) * eps, gradient through z by the chain rule.
EstimatorOutput reparam_grad(const DecoderEvalFn& decoder, const LatentDistribution& dist,
                             RngStream& rng);
// Deterministic-noise variant (noise has d entries); the sampling version
// draws noise from the stream and forwards here.
EstimatorOutput reparam_grad_with_noise(const DecoderEvalFn& decoder,
                                        const LatentDistribution& dist,
                                        const DenseVector& noise);

// Binary-concrete relaxation: s_i = sigmoid((logit(p_i) + g_i) / tau) with
// logistic noise g. Biased by construction; gradient through s.
EstimatorOutput gumbel_softmax_grad(const DecoderEvalFn& decoder,
                                    const LatentDistribution& dist, double temperature,
                                    RngStream& rng);
EstimatorOutput gumbel_softmax_grad_with_noise(const DecoderEvalFn& decoder,
                                               const LatentDistribution& dist,
                                               double temperature,
                                               const DenseVector& noise);

// Score-function estimator on a hard sample with the running-average
// baseline; the baseline is read before the update.
EstimatorOutput reinforce_grad(const DecoderLoglikFn& decoder_loglik,
                               const LatentDistribution& dist, ReinforceState& state,
                               RngStream& rng);

// Noise-free estimator: loss and gradient from the closed-form expected
// reconstruction of the linear decoder. dist is the raw (unaugmented)
// encoder output; the bias dimension is appended internally.
EstimatorOutput silent_grad(const DenseVector& x, const LinearDecoder& dec,
                            const LatentDistribution& dist, const ReconMode& mode);

// silent_grad plus the loss gradients w.r.t. the decoder weights (what the
// training loop steps the linear decoder with).
struct SilentEval {
  EstimatorOutput out;
  DenseMatrix grad_w_mu;
  std::optional<DenseMatrix> grad_w_alpha;
};
SilentEval silent_grad_full(const DenseVector& x, const LinearDecoder& dec,
                            const LatentDistribution& dist, const ReconMode& mode);

// Decoder evaluation closures for the linear decoder (z unaugmented; the
// bias entry is appended before applying the weights).
DecoderEvalFn make_linear_fixed_eval(DenseVector x, const LinearDecoder& dec, double sigma2);
DecoderEvalFn make_linear_learnable_eval(DenseVector x, const LinearDecoder& dec);

}  // namespace silentgrad

#endif  // SILENTGRAD_ESTIMATORS_HPP
