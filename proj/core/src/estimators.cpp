#include "silentgrad/estimators.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace silentgrad {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logit(double p) { return std::log(p) - std::log1p(-p); }

DenseVector append_bias(const DenseVector& z) {
  DenseVector out = z;
  out.push_back(1.0);
  return out;
}

}  // namespace

EstimatorOutput reparam_grad_with_noise(const DecoderEvalFn& decoder,
                                        const LatentDistribution& dist,
                                        const DenseVector& noise) {
  if (dist.kind != LatentKind::DiagGaussian) {
    throw std::invalid_argument("reparam_grad: requires a diagonal Gaussian latent");
  }
  const std::size_t d = dist.dim();
  if (noise.size() != d) {
    throw std::invalid_argument("reparam_grad: noise length mismatch");
  }
  DenseVector z(d), sd(d);
  for (std::size_t i = 0; i < d; ++i) {
    sd[i] = std::sqrt(dist.var[i]);
    z[i] = dist.mean[i] + sd[i] * noise[i];
  }
  const DecoderEval eval = decoder(z);
  EstimatorOutput out;
  out.loss = -eval.loglik;
  out.grad_stats.resize(2 * d);
  for (std::size_t i = 0; i < d; ++i) {
    const double dloss_dz = -eval.dloglik_dz[i];
    out.grad_stats[i] = dloss_dz;                                // d/dmean
    out.grad_stats[d + i] = dloss_dz * 0.5 * sd[i] * noise[i];   // d/dlogvar
  }
  return out;
}

EstimatorOutput reparam_grad(const DecoderEvalFn& decoder, const LatentDistribution& dist,
                             RngStream& rng) {
  return reparam_grad_with_noise(decoder, dist, gauss_sample(rng, dist.dim()));
}

EstimatorOutput gumbel_softmax_grad_with_noise(const DecoderEvalFn& decoder,
                                               const LatentDistribution& dist,
                                               double temperature,
                                               const DenseVector& noise) {
  if (dist.kind != LatentKind::Bernoulli) {
    throw std::invalid_argument("gumbel_softmax_grad: requires a Bernoulli latent");
  }
  if (temperature <= 0.0) {
    throw std::invalid_argument("gumbel_softmax_grad: temperature must be positive");
  }
  const std::size_t d = dist.dim();
  if (noise.size() != d) {
    throw std::invalid_argument("gumbel_softmax_grad: noise length mismatch");
  }
  DenseVector s(d);
  for (std::size_t i = 0; i < d; ++i) {
    s[i] = sigmoid((logit(dist.prob[i]) + noise[i]) / temperature);
  }
  const DecoderEval eval = decoder(s);
  EstimatorOutput out;
  out.loss = -eval.loglik;
  out.grad_stats.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    // ds/dlogit = s (1 - s) / tau.
    out.grad_stats[i] = -eval.dloglik_dz[i] * s[i] * (1.0 - s[i]) / temperature;
  }
  out.relaxed_sample = std::move(s);
  return out;
}

EstimatorOutput gumbel_softmax_grad(const DecoderEvalFn& decoder,
                                    const LatentDistribution& dist, double temperature,
                                    RngStream& rng) {
  DenseVector noise(dist.dim());
  for (double& g : noise) {
    const double u = rng.next_uniform();
    // Logistic noise: difference of two standard Gumbels.
    g = std::log(u + 1e-300) - std::log1p(-u);
  }
  return gumbel_softmax_grad_with_noise(decoder, dist, temperature, noise);
}

EstimatorOutput reinforce_grad(const DecoderLoglikFn& decoder_loglik,
                               const LatentDistribution& dist, ReinforceState& state,
                               RngStream& rng) {
  if (dist.kind != LatentKind::Bernoulli) {
    throw std::invalid_argument("reinforce_grad: requires a Bernoulli latent");
  }
  const std::size_t d = dist.dim();
  const DenseVector z = sample(dist, rng);
  EstimatorOutput out;
  out.loss = -decoder_loglik(z);
  const double advantage = out.loss - state.running_baseline;
  out.grad_stats.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    // d log q(z) / d logit_i = z_i - p_i.
    out.grad_stats[i] = advantage * (z[i] - dist.prob[i]);
  }
  state.running_baseline =
      state.momentum * state.running_baseline + (1.0 - state.momentum) * out.loss;
  return out;
}

SilentEval silent_grad_full(const DenseVector& x, const LinearDecoder& dec,
                            const LatentDistribution& dist, const ReconMode& mode) {
  const LatentDistribution aug = augment_with_bias(dist);
  const AnalyticRecon recon = mode.is_fixed
                                  ? expected_recon_fixed(x, dec, aug, mode.sigma2)
                                  : expected_recon_learnable(x, dec, aug);
  const std::size_t d = dist.dim();
  SilentEval eval;
  eval.out.loss = -recon.value;
  if (dist.kind == LatentKind::DiagGaussian) {
    eval.out.grad_stats.resize(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
      eval.out.grad_stats[i] = -recon.grad_stats.wrt_mean[i];
      eval.out.grad_stats[d + i] = -recon.grad_stats.wrt_var[i] * dist.var[i];
    }
  } else {
    eval.out.grad_stats.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double p = dist.prob[i];
      eval.out.grad_stats[i] = -recon.grad_stats.wrt_prob[i] * p * (1.0 - p);
    }
  }
  eval.grad_w_mu = recon.grad_w_mu;
  for (double& g : eval.grad_w_mu.data()) g = -g;
  if (recon.grad_w_alpha) {
    eval.grad_w_alpha = *recon.grad_w_alpha;
    for (double& g : eval.grad_w_alpha->data()) g = -g;
  }
  return eval;
}

EstimatorOutput silent_grad(const DenseVector& x, const LinearDecoder& dec,
                            const LatentDistribution& dist, const ReconMode& mode) {
  return silent_grad_full(x, dec, dist, mode).out;
}

DecoderEvalFn make_linear_fixed_eval(DenseVector x, const LinearDecoder& dec,
                                     double sigma2) {
  if (sigma2 <= 0.0) {
    throw std::invalid_argument("make_linear_fixed_eval: sigma2 must be positive");
  }
  const DenseMatrix w = dec.w_mu;
  const double log_norm =
      -0.5 * static_cast<double>(w.rows()) * std::log(2.0 * std::numbers::pi * sigma2);
  return [x = std::move(x), w, sigma2, log_norm](const DenseVector& z) {
    const DenseVector za = append_bias(z);
    const DenseVector y = matvec(w, za);
    double sq = 0.0;
    DenseVector r(y.size());
    for (std::size_t j = 0; j < y.size(); ++j) {
      r[j] = x[j] - y[j];
      sq += r[j] * r[j];
    }
    DecoderEval eval;
    eval.loglik = -0.5 * sq / sigma2 + log_norm;
    const DenseVector wt_r = matvec_transpose(w, r);
    eval.dloglik_dz.assign(wt_r.begin(), wt_r.end() - 1);  // drop the bias entry
    for (double& g : eval.dloglik_dz) g /= sigma2;
    return eval;
  };
}

DecoderEvalFn make_linear_learnable_eval(DenseVector x, const LinearDecoder& dec) {
  if (!dec.w_alpha) {
    throw std::invalid_argument("make_linear_learnable_eval: decoder has no precision head");
  }
  const DenseMatrix wm = dec.w_mu;
  const DenseMatrix wa = *dec.w_alpha;
  return [x = std::move(x), wm, wa](const DenseVector& z) {
    const DenseVector za = append_bias(z);
    const DenseVector mu = matvec(wm, za);
    const DenseVector alpha = matvec(wa, za);
    const std::size_t k = mu.size();
    DecoderEval eval;
    eval.loglik = -0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi);
    DenseVector dl_dmu(k), dl_dalpha(k);
    for (std::size_t j = 0; j < k; ++j) {
      const double r = x[j] - mu[j];
      const double a = alpha[j];
      eval.loglik += 0.5 * std::log(a * a) - 0.5 * r * r * a * a;
      dl_dmu[j] = r * a * a;
      dl_dalpha[j] = 1.0 / a - r * r * a;
    }
    DenseVector gz = matvec_transpose(wm, dl_dmu);
    const DenseVector gza = matvec_transpose(wa, dl_dalpha);
    for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += gza[i];
    eval.dloglik_dz.assign(gz.begin(), gz.end() - 1);
    return eval;
  };
}

}  // namespace silentgrad
