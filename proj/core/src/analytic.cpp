#include "silentgrad/analytic.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace silentgrad {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112353;  // log(2*pi)

void require_dims(const DenseMatrix& w, const LatentDistribution& dist, const char* op) {
  if (w.cols() != dist.dim()) {
    throw std::invalid_argument(std::string(op) + ": matrix has " +
                                std::to_string(w.cols()) + " cols but distribution has " +
                                std::to_string(dist.dim()) + " dims");
  }
}

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": w_mu and w_alpha shapes differ");
  }
}

// Chain rule from (mean, m2, m3, m4) accumulators back to the distribution's
// own parameters.
DistributionGrad moments_to_param_grad(const LatentDistribution& dist,
                                       const DenseVector& g_mean, const DenseVector& g_m2,
                                       const DenseVector& g_m3, const DenseVector& g_m4) {
  const std::size_t d = dist.dim();
  DistributionGrad grad;
  if (dist.kind == LatentKind::DiagGaussian) {
    grad.wrt_mean = g_mean;
    grad.wrt_var.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      // m2 = v, m3 = 0, m4 = 3 v^2.
      grad.wrt_var[i] = g_m2[i] + 6.0 * dist.var[i] * g_m4[i];
    }
  } else {
    grad.wrt_prob.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double p = dist.prob[i];
      const double dm2 = 1.0 - 2.0 * p;
      const double dm3 = 1.0 - 6.0 * p + 6.0 * p * p;
      const double dm4 = 1.0 - 8.0 * p + 18.0 * p * p - 12.0 * p * p * p;
      grad.wrt_prob[i] = g_mean[i] + dm2 * g_m2[i] + dm3 * g_m3[i] + dm4 * g_m4[i];
    }
  }
  return grad;
}

}  // namespace

DenseVector expected_sq_norm_per_dim(const DenseMatrix& w, const LatentDistribution& dist) {
  require_dims(w, dist, "expected_sq_norm_per_dim");
  const std::size_t k = w.rows();
  const std::size_t d = w.cols();
  DenseVector out(k);
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0.0;
    double v = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double wj = w(j, i);
      m += wj * dist.component_mean(i);
      v += wj * wj * dist.component_var(i);
    }
    out[j] = m * m + v;
  }
  return out;
}

double expected_sq_norm(const DenseMatrix& w, const LatentDistribution& dist) {
  require_dims(w, dist, "expected_sq_norm");
  const std::size_t k = w.rows();
  const std::size_t d = w.cols();
  double mean_part = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += w(j, i) * dist.component_mean(i);
    mean_part += m * m;
  }
  double var_part = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double col_sq = 0.0;
    for (std::size_t j = 0; j < k; ++j) col_sq += w(j, i) * w(j, i);
    var_part += col_sq * dist.component_var(i);
  }
  return mean_part + var_part;
}

DenseVector cov_lin_sqnorm(const DenseMatrix& w_mu, const DenseMatrix& w_alpha,
                           const LatentDistribution& dist) {
  require_same_shape(w_mu, w_alpha, "cov_lin_sqnorm");
  require_dims(w_mu, dist, "cov_lin_sqnorm");
  const CentralMoments cm = central_moments(dist);
  const std::size_t k = w_mu.rows();
  const std::size_t d = w_mu.cols();
  DenseVector out(k);
  for (std::size_t j = 0; j < k; ++j) {
    double av = 0.0;   // E[(W_alpha z)_j]
    double c = 0.0;    // Cov((W_mu z)_j, (W_alpha z)_j)
    double t = 0.0;    // E[du dv^2] third-moment term
    for (std::size_t i = 0; i < d; ++i) {
      const double a = w_mu(j, i);
      const double b = w_alpha(j, i);
      av += b * dist.component_mean(i);
      c += a * b * cm.m2[i];
      t += a * b * b * cm.m3[i];
    }
    out[j] = 2.0 * av * c + t;
  }
  return out;
}

DenseVector cov_sqnorm_sqnorm(const DenseMatrix& w_mu, const DenseMatrix& w_alpha,
                              const LatentDistribution& dist) {
  require_same_shape(w_mu, w_alpha, "cov_sqnorm_sqnorm");
  require_dims(w_mu, dist, "cov_sqnorm_sqnorm");
  const CentralMoments cm = central_moments(dist);
  const std::size_t k = w_mu.rows();
  const std::size_t d = w_mu.cols();
  DenseVector out(k);
  for (std::size_t j = 0; j < k; ++j) {
    double mu = 0.0, av = 0.0, c = 0.0;
    double t_a = 0.0, t_b = 0.0;       // E[du dv^2], E[du^2 dv]
    double q = 0.0, s_ab2 = 0.0;       // fourth-moment term, collapsed i=j=k=l overlap
    for (std::size_t i = 0; i < d; ++i) {
      const double a = w_mu(j, i);
      const double b = w_alpha(j, i);
      const double me = dist.component_mean(i);
      mu += a * me;
      av += b * me;
      const double ab_m2 = a * b * cm.m2[i];
      c += ab_m2;
      t_a += a * b * b * cm.m3[i];
      t_b += a * a * b * cm.m3[i];
      q += a * a * b * b * cm.m4[i];
      s_ab2 += ab_m2 * ab_m2;
    }
    // Cov(u^2, v^2) = 4 E[u]E[v]Cov(u,v) + 2 Cov(u,v)^2
    //   + sum_i a^2 b^2 m4 - 3 sum_i (a b m2)^2
    //   + 2 E[u] E[du dv^2] + 2 E[v] E[du^2 dv].
    // The Var(u)Var(v) cross term of the i=j!=k=l case cancels against
    // -Cov(u,u)Cov(v,v) from the product-covariance formula.
    out[j] = 4.0 * mu * av * c + 2.0 * c * c + q - 3.0 * s_ab2 +
             2.0 * mu * t_a + 2.0 * av * t_b;
  }
  return out;
}

AnalyticRecon expected_recon_fixed(const DenseVector& x, const LinearDecoder& dec,
                                   const LatentDistribution& dist, double sigma2) {
  if (sigma2 <= 0.0) {
    throw std::invalid_argument("expected_recon_fixed: sigma2 must be positive");
  }
  const DenseMatrix& w = dec.w_mu;
  require_dims(w, dist, "expected_recon_fixed");
  if (x.size() != w.rows()) {
    throw std::invalid_argument("expected_recon_fixed: x length does not match decoder rows");
  }
  const std::size_t k = w.rows();
  const std::size_t d = w.cols();
  const double inv_s2 = 1.0 / sigma2;

  DenseVector residual(k);  // r = x - W E[z]
  for (std::size_t j = 0; j < k; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < d; ++i) m += w(j, i) * dist.component_mean(i);
    residual[j] = x[j] - m;
  }

  double sq_residual = 0.0;
  for (std::size_t j = 0; j < k; ++j) sq_residual += residual[j] * residual[j];

  DenseVector col_sq(d, 0.0);
  double var_term = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double cs = 0.0;
    for (std::size_t j = 0; j < k; ++j) cs += w(j, i) * w(j, i);
    col_sq[i] = cs;
    var_term += cs * dist.component_var(i);
  }

  AnalyticRecon out;
  out.value = -0.5 * inv_s2 * (sq_residual + var_term) -
              0.5 * static_cast<double>(k) * (kLog2Pi + std::log(sigma2));

  // d value / d mean_i = (W^T r)_i / sigma2 ; d value / d var_i = -||w_i||^2 / (2 sigma2).
  DenseVector wt_r = matvec_transpose(w, residual);
  DenseVector g_mean(d), g_var(d);
  for (std::size_t i = 0; i < d; ++i) {
    g_mean[i] = inv_s2 * wt_r[i];
    g_var[i] = -0.5 * inv_s2 * col_sq[i];
  }
  if (dist.kind == LatentKind::DiagGaussian) {
    out.grad_stats.wrt_mean = std::move(g_mean);
    out.grad_stats.wrt_var = std::move(g_var);
  } else {
    // Both the mean path (E[z_i] = p) and the variance path (Var = p(1-p)).
    out.grad_stats.wrt_prob.resize(d);
    for (std::size_t i = 0; i < d; ++i) {
      out.grad_stats.wrt_prob[i] = g_mean[i] + g_var[i] * (1.0 - 2.0 * dist.prob[i]);
    }
  }

  out.grad_w_mu = DenseMatrix(k, d);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < d; ++i) {
      out.grad_w_mu(j, i) =
          inv_s2 * (residual[j] * dist.component_mean(i) - w(j, i) * dist.component_var(i));
    }
  }
  return out;
}

double taylor_log_expect(double mean_q, double var_q) {
  if (mean_q <= 0.0) {
    throw std::domain_error("taylor_log_expect: mean must be positive");
  }
  return std::log(mean_q) - var_q / (2.0 * mean_q * mean_q);
}

AnalyticRecon expected_recon_learnable(const DenseVector& x, const LinearDecoder& dec,
                                       const LatentDistribution& dist) {
  if (!dec.w_alpha) {
    throw std::invalid_argument("expected_recon_learnable: decoder has no precision head");
  }
  const DenseMatrix& wa = *dec.w_alpha;
  const DenseMatrix& wm = dec.w_mu;
  require_same_shape(wm, wa, "expected_recon_learnable");
  require_dims(wm, dist, "expected_recon_learnable");
  if (x.size() != wm.rows()) {
    throw std::invalid_argument("expected_recon_learnable: x length does not match decoder rows");
  }

  const std::size_t k = wm.rows();
  const std::size_t d = wm.cols();
  const CentralMoments cm = central_moments(dist);

  AnalyticRecon out;
  out.grad_w_mu = DenseMatrix(k, d);
  out.grad_w_alpha = DenseMatrix(k, d);
  DenseVector g_mean(d, 0.0), g_m2(d, 0.0), g_m3(d, 0.0), g_m4(d, 0.0);

  double value = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double xj = x[j];

    // Forward sums over the latent index.
    double mu = 0.0, av = 0.0;            // E[u], E[v]
    double vu = 0.0, vv = 0.0, c = 0.0;   // Var(u), Var(v), Cov(u, v)
    double t_a = 0.0, t_b = 0.0, t_bb = 0.0;   // E[du dv^2], E[du^2 dv], E[dv^3]
    double q_a = 0.0, q_bb = 0.0;              // 4th-moment sums
    double s_ab2 = 0.0, s_bb2 = 0.0;           // collapsed-overlap sums
    for (std::size_t i = 0; i < d; ++i) {
      const double a = wm(j, i);
      const double b = wa(j, i);
      const double me = dist.component_mean(i);
      const double m2 = cm.m2[i];
      const double m3 = cm.m3[i];
      const double m4 = cm.m4[i];
      mu += a * me;
      av += b * me;
      vu += a * a * m2;
      vv += b * b * m2;
      c += a * b * m2;
      t_a += a * b * b * m3;
      t_b += a * a * b * m3;
      t_bb += b * b * b * m3;
      q_a += a * a * b * b * m4;
      q_bb += b * b * b * b * m4;
      s_ab2 += a * a * b * b * m2 * m2;
      s_bb2 += b * b * b * b * m2 * m2;
    }

    const double sv = av * av + vv;  // E[v^2] = E[(W_alpha z)_j^2]
    if (sv <= 0.0) {
      throw std::domain_error(
          "expected_recon_learnable: E[(W_alpha z)^2] vanished at output dim " +
          std::to_string(j) + " (degenerate precision row)");
    }
    const double su = mu * mu + vu;  // E[u^2]
    const double cov_l = 2.0 * av * c + t_a;
    const double cov_q =
        4.0 * mu * av * c + 2.0 * c * c + q_a - 3.0 * s_ab2 + 2.0 * mu * t_a + 2.0 * av * t_b;
    const double var_q =
        4.0 * av * av * vv + 2.0 * vv * vv + q_bb - 3.0 * s_bb2 + 4.0 * av * t_bb;

    // E[(x_j - u)^2 v^2] assembled from the covariance decompositions.
    const double e_sq =
        xj * xj * sv - 2.0 * xj * (mu * sv + cov_l) + su * sv + cov_q;
    const double log_term = std::log(sv) - var_q / (2.0 * sv * sv);

    value += -0.5 * e_sq + 0.5 * log_term;

    // Reverse pass (adjoints of the scalars above; d value / d scalar).
    const double g_e = -0.5;
    const double g_log = 0.5;
    const double g_sv = g_log * (1.0 / sv + var_q / (sv * sv * sv)) +
                        g_e * (xj * xj - 2.0 * xj * mu + su);
    const double g_varq = g_log * (-0.5 / (sv * sv));
    const double g_covq = g_e;
    const double g_su = g_e * sv;
    const double g_covl = g_e * (-2.0 * xj);
    const double g_mu = g_e * (-2.0 * xj * sv) + g_covq * (4.0 * av * c + 2.0 * t_a) +
                        g_su * 2.0 * mu;
    const double g_av = g_sv * 2.0 * av + g_covl * 2.0 * c +
                        g_covq * (4.0 * mu * c + 2.0 * t_b) +
                        g_varq * (8.0 * av * vv + 4.0 * t_bb);
    const double g_vu = g_su;
    const double g_vv = g_sv + g_varq * (4.0 * av * av + 4.0 * vv);
    const double g_c = g_covl * 2.0 * av + g_covq * (4.0 * mu * av + 4.0 * c);
    const double g_ta = g_covl + g_covq * 2.0 * mu;
    const double g_tb = g_covq * 2.0 * av;
    const double g_tbb = g_varq * 4.0 * av;
    const double g_qa = g_covq;
    const double g_qbb = g_varq;
    const double g_sab2 = -3.0 * g_covq;
    const double g_sbb2 = -3.0 * g_varq;

    for (std::size_t i = 0; i < d; ++i) {
      const double a = wm(j, i);
      const double b = wa(j, i);
      const double me = dist.component_mean(i);
      const double m2 = cm.m2[i];
      const double m3 = cm.m3[i];
      const double m4 = cm.m4[i];

      g_mean[i] += g_mu * a + g_av * b;
      g_m2[i] += g_vu * a * a + g_vv * b * b + g_c * a * b +
                 g_sab2 * 2.0 * a * a * b * b * m2 + g_sbb2 * 2.0 * b * b * b * b * m2;
      g_m3[i] += g_ta * a * b * b + g_tb * a * a * b + g_tbb * b * b * b;
      g_m4[i] += g_qa * a * a * b * b + g_qbb * b * b * b * b;

      out.grad_w_mu(j, i) += g_mu * me + g_vu * 2.0 * a * m2 + g_c * b * m2 +
                             g_ta * b * b * m3 + g_tb * 2.0 * a * b * m3 +
                             g_qa * 2.0 * a * b * b * m4 + g_sab2 * 2.0 * a * b * b * m2 * m2;
      (*out.grad_w_alpha)(j, i) +=
          g_av * me + g_vv * 2.0 * b * m2 + g_c * a * m2 + g_ta * 2.0 * a * b * m3 +
          g_tb * a * a * m3 + g_tbb * 3.0 * b * b * m3 + g_qa * 2.0 * a * a * b * m4 +
          g_qbb * 4.0 * b * b * b * m4 + g_sab2 * 2.0 * a * a * b * m2 * m2 +
          g_sbb2 * 4.0 * b * b * b * m2 * m2;
    }
  }

  out.value = value - 0.5 * static_cast<double>(k) * kLog2Pi;
  out.grad_stats = moments_to_param_grad(dist, g_mean, g_m2, g_m3, g_m4);
  return out;
}

}  // namespace silentgrad
