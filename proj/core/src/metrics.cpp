#include "silentgrad/metrics.hpp"

#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace silentgrad {

namespace {

// 8 ln 2 exactly scales ln 2, so the uniform-density anchor divides out to
// exactly 8.0.
constexpr double kLn2 = std::numbers::ln2;
constexpr double kLn256 = 8.0 * std::numbers::ln2;

}  // namespace

double bpd(double cont_loglik_per_item, std::size_t k) {
  if (k == 0) throw std::invalid_argument("bpd: dimension must be positive");
  const double kd = static_cast<double>(k);
  return -(cont_loglik_per_item - kd * kLn256) / (kd * kLn2);
}

double bpd_continuous(double loglik_per_item, std::size_t k) {
  if (k == 0) throw std::invalid_argument("bpd_continuous: dimension must be positive");
  const double kd = static_cast<double>(k);
  return -loglik_per_item / (kd * kLn2);
}

double mse(const DenseVector& x, const DenseVector& recon_mean) {
  if (x.size() != recon_mean.size()) {
    throw std::invalid_argument("mse: length mismatch");
  }
  if (x.empty()) throw std::invalid_argument("mse: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - recon_mean[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.size());
}

std::string metric_report_json(const MetricReport& report) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "{\"bpd\": %.17g, \"mse\": %.17g, \"n_items\": %zu}\n",
                report.bpd, report.mse, report.n_items);
  return buf;
}

}  // namespace silentgrad
