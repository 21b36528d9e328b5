// ELBO assembly and the dual-decoder training dynamic: annealed mixing of
// the analytic (noise-free) encoder gradient with a stochastic estimator,
// encoder freezing at a cutoff epoch, per-component AdamW optimizers, and
// the gradient-variance measurement protocol.

#ifndef SILENTGRAD_TRAIN_HPP
#define SILENTGRAD_TRAIN_HPP

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "silentgrad/analytic.hpp"
#include "silentgrad/data.hpp"
#include "silentgrad/estimators.hpp"
#include "silentgrad/latent.hpp"
#include "silentgrad/metrics.hpp"
#include "silentgrad/nets.hpp"

namespace silentgrad {

enum class EstimatorKind {
  Silent,
  Reparam,
  Gumbel,
  Reinforce,
  SilentReparam,
  SilentGumbel,
  SilentReinforce,
};

enum class NoisyDecoderKind { Linear, Mlp };

enum class DataSourceKind { Synthetic, Blobs, Idx };

struct DataSourceConfig {
  DataSourceKind kind = DataSourceKind::Synthetic;
  std::size_t n_items = 256;
  std::size_t data_dim = 16;             // synthetic only
  std::size_t synthetic_latent_dim = 4;  // synthetic only
  double synthetic_noise = 0.1;          // synthetic only
  std::uint64_t matrix_seed = 7;         // synthetic only
  std::string idx_path;                  // idx only
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  EstimatorKind estimator = EstimatorKind::Silent;
  LatentKind latent_kind = LatentKind::DiagGaussian;
  std::size_t latent_dim = 16;
  bool learnable_precision = false;
  double sigma2 = 0.01;
  std::size_t cutoff_epoch = 0;  // 0 disables encoder freezing
  double anneal_rate = 0.0;
  std::size_t max_epochs = 50;
  std::size_t batch_size = 64;
  double lr_encoder = 1e-3;
  double lr_decoder_nl = 1e-3;
  double lr_decoder_mu = 1e-3;
  double lr_decoder_alpha = 1e-3;
  std::uint64_t seed = 1;
  double gumbel_temperature = 1.0;
  double reinforce_momentum = 0.9;
  NoisyDecoderKind noisy_decoder = NoisyDecoderKind::Mlp;
  std::vector<std::size_t> encoder_hidden = {128, 64};
  std::vector<std::size_t> decoder_hidden = {64, 128};
  double weight_decay = 0.01;
  bool csv_wall_time = false;  // CSV stays byte-reproducible by default
  DataSourceConfig data;

  bool uses_silent_path() const;
  // The stochastic component, if any (the X of silent+X, or the pure kind).
  std::optional<EstimatorKind> noisy_part() const;

  void validate() const;  // throws ConfigError

  // Identifies the (dataset, seed) pair for comparison runs.
  std::string data_signature() const;
};

// Flat key=value file; unknown keys are an error listing every offender.
TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text, const std::string& origin);

// w_lin = max(0, 1 - epoch * lambda); w_nl = 1 - w_lin.
std::pair<double, double> anneal_weights(std::size_t epoch, double lambda);

// loss = -recon + beta * KL with beta fixed at 1.
double elbo_loss(double recon_loglik, double kl);

struct EpochReport {
  std::size_t epoch = 0;
  double total_loss = 0.0;
  double recon_loss = 0.0;
  double kl = 0.0;
  double w_lin = 0.0;
  double bpd = 0.0;
  double seconds = 0.0;  // wall time; written to CSV only when configured
};

struct GradVarianceReport {
  double total_variance = 0.0;  // per-parameter variances summed
  std::size_t n_params = 0;
  std::size_t n_samples = 0;
};

struct TrainResult {
  std::vector<EpochReport> epochs;
  bool diverged = false;
  std::string message;
};

struct DivergenceError : std::runtime_error {
  EpochReport last_report;
  DivergenceError(const std::string& msg, EpochReport report)
      : std::runtime_error(msg), last_report(std::move(report)) {}
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);        // dataset built from cfg.data
  Trainer(TrainConfig cfg, Dataset data);   // externally supplied dataset

  // One pass over the shuffled dataset; throws DivergenceError on blowup.
  EpochReport run_epoch();

  // All epochs with the divergence guard folded into the result.
  TrainResult run();

  // Table-1 protocol: one encoder pass fixes the latent distributions on the
  // first batch, then n_samples reconstruction gradients w.r.t. the encoder
  // parameters are drawn; their per-parameter variances are summed.
  // estimator_override measures a different estimator at the current state.
  GradVarianceReport measure_gradient_variance(
      std::size_t n_samples,
      std::optional<EstimatorKind> estimator_override = std::nullopt);

  // Exact expected total loss (analytic reconstruction + KL) over the raw
  // dataset; available for linear-decoder models only.
  double exact_expected_loss();

  // Deterministic end-of-training metrics over the dataset.
  MetricReport evaluate();

  void save_state(const std::string& path) const;

  const TrainConfig& config() const { return cfg_; }
  const Dataset& dataset() const { return dataset_; }
  const Mlp& encoder() const { return encoder_; }
  DenseVector encoder_params() const { return flatten_params(encoder_); }
  std::size_t epochs_run() const { return epoch_; }
  bool encoder_frozen() const { return frozen_; }

 private:
  struct NoisyEval;

  LatentDistribution stats_from_raw(const DenseVector& raw) const;
  DenseVector item_input(std::size_t index, RngStream& dequant);
  NoisyEval eval_noisy(const DenseVector& x, const LatentDistribution& dist,
                       EstimatorKind kind, RngStream& rng, ReinforceState& reinforce);

  TrainConfig cfg_;
  Dataset dataset_;
  Mlp encoder_;
  std::optional<Mlp> nl_decoder_;
  std::optional<LinearDecoder> lin_decoder_;
  AdamW opt_encoder_;
  AdamW opt_nl_;
  AdamW opt_mu_;
  AdamW opt_alpha_;
  ReinforceState reinforce_state_;
  std::size_t epoch_ = 0;
  bool frozen_ = false;
  std::uint64_t variance_calls_ = 0;
};

// CSV with header epoch,total_loss,recon_loss,kl,w_lin,bpd,seconds (LF endings).
void write_epoch_csv(const std::string& path, const std::vector<EpochReport>& reports,
                     bool wall_time);

}  // namespace silentgrad

#endif  // SILENTGRAD_TRAIN_HPP
