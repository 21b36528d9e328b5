#include "silentgrad/latent.hpp"

#include <cmath>
#include <stdexcept>

namespace silentgrad {

namespace {

void require_finite(const DenseVector& v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

}  // namespace

LatentDistribution LatentDistribution::diag_gaussian(DenseVector mean, DenseVector var) {
  if (mean.size() != var.size()) {
    throw std::invalid_argument("diag_gaussian: mean/var length mismatch");
  }
  require_finite(mean, "diag_gaussian mean");
  require_finite(var, "diag_gaussian var");
  for (double v : var) {
    if (v < 0.0) throw std::invalid_argument("diag_gaussian: negative variance");
  }
  LatentDistribution d;
  d.kind = LatentKind::DiagGaussian;
  d.mean = std::move(mean);
  d.var = std::move(var);
  return d;
}

LatentDistribution LatentDistribution::bernoulli(DenseVector prob) {
  require_finite(prob, "bernoulli prob");
  for (double p : prob) {
    if (p < 0.0 || p > 1.0) throw std::invalid_argument("bernoulli: p outside [0, 1]");
  }
  LatentDistribution d;
  d.kind = LatentKind::Bernoulli;
  d.prob = std::move(prob);
  return d;
}

double LatentDistribution::component_mean(std::size_t i) const {
  return kind == LatentKind::DiagGaussian ? mean[i] : prob[i];
}

double LatentDistribution::component_var(std::size_t i) const {
  return kind == LatentKind::DiagGaussian ? var[i] : prob[i] * (1.0 - prob[i]);
}

CentralMoments central_moments(const LatentDistribution& dist) {
  const std::size_t d = dist.dim();
  CentralMoments cm{DenseVector(d), DenseVector(d), DenseVector(d)};
  if (dist.kind == LatentKind::DiagGaussian) {
    for (std::size_t i = 0; i < d; ++i) {
      const double s2 = dist.var[i];
      cm.m2[i] = s2;
      cm.m3[i] = 0.0;
      cm.m4[i] = 3.0 * s2 * s2;
    }
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      const double p = dist.prob[i];
      const double pq = p * (1.0 - p);
      cm.m2[i] = pq;
      cm.m3[i] = pq * (1.0 - 2.0 * p);
      cm.m4[i] = pq * (1.0 - 3.0 * p + 3.0 * p * p);
    }
  }
  return cm;
}

LatentDistribution augment_with_bias(const LatentDistribution& dist) {
  LatentDistribution out = dist;
  if (dist.kind == LatentKind::DiagGaussian) {
    out.mean.push_back(1.0);
    out.var.push_back(0.0);
  } else {
    out.prob.push_back(1.0);
  }
  return out;
}

DenseVector sample(const LatentDistribution& dist, RngStream& rng) {
  const std::size_t d = dist.dim();
  DenseVector z(d);
  if (dist.kind == LatentKind::DiagGaussian) {
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = dist.mean[i] + std::sqrt(dist.var[i]) * rng.next_gauss();
    }
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      z[i] = rng.next_uniform() < dist.prob[i] ? 1.0 : 0.0;
    }
  }
  return z;
}

double kl_to_prior(const LatentDistribution& dist) {
  const std::size_t d = dist.dim();
  double kl = 0.0;
  if (dist.kind == LatentKind::DiagGaussian) {
    for (std::size_t i = 0; i < d; ++i) {
      const double s2 = dist.var[i];
      if (s2 == 0.0) {
        throw std::domain_error("kl_to_prior: KL to N(0, I) undefined at zero variance");
      }
      const double mu = dist.mean[i];
      kl += 0.5 * (s2 + mu * mu - 1.0 - std::log(s2));
    }
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      const double p = dist.prob[i];
      // 0 * log 0 := 0.
      if (p > 0.0) kl += p * std::log(2.0 * p);
      if (p < 1.0) kl += (1.0 - p) * std::log(2.0 * (1.0 - p));
    }
  }
  return kl;
}

DenseVector kl_to_prior_grad_natural(const LatentDistribution& dist) {
  const std::size_t d = dist.dim();
  if (dist.kind == LatentKind::DiagGaussian) {
    DenseVector g(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
      const double s2 = dist.var[i];
      if (s2 == 0.0) {
        throw std::domain_error("kl_to_prior_grad_natural: zero variance");
      }
      g[i] = dist.mean[i];             // d/dmean
      g[d + i] = 0.5 * (s2 - 1.0);     // d/dlogvar = (dKL/dvar) * var
    }
    return g;
  }
  DenseVector g(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double p = dist.prob[i];
    // dKL/dp = logit(p); chained through p = sigmoid(l) gives p(1-p) logit(p).
    if (p <= 0.0 || p >= 1.0) {
      g[i] = 0.0;  // limit of p(1-p) log(p/(1-p)) at the boundary
    } else {
      g[i] = p * (1.0 - p) * std::log(p / (1.0 - p));
    }
  }
  return g;
}

}  // namespace silentgrad
