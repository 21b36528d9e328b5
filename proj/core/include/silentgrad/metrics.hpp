// Evaluation metrics: bits per dimension (with the dequantization
// correction for quantized pixels) and mean squared error.

#ifndef SILENTGRAD_METRICS_HPP
#define SILENTGRAD_METRICS_HPP

#include <cstddef>
#include <string>

#include "silentgrad/ndcore.hpp"

namespace silentgrad {

struct MetricReport {
  double bpd = 0.0;
  double mse = 0.0;
  std::size_t n_items = 0;
};

// BPD of quantized data from the continuous per-item log-likelihood:
//   BPD = -(E[log p(y)] - k log 256) / (k log 2).
// The subtraction keeps log P(x_int) >= E[log p(y)] - k log 256 a valid
// lower bound; the exact-uniform density (log p = 0) scores exactly 8.0.
double bpd(double cont_loglik_per_item, std::size_t k);

// Continuous data carries no dequantization correction.
double bpd_continuous(double loglik_per_item, std::size_t k);

// Mean squared difference over dimensions; throws on length mismatch.
double mse(const DenseVector& x, const DenseVector& recon_mean);

std::string metric_report_json(const MetricReport& report);

}  // namespace silentgrad

#endif  // SILENTGRAD_METRICS_HPP
