#include "silentgrad/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <tuple>

namespace silentgrad {

namespace {

// Stream ids derived from the master seed. Each consumer owns a split so
// adding or removing one component never shifts another's draws.
enum StreamId : std::uint64_t {
  kStreamData = 0,
  kStreamEncoderInit = 1,
  kStreamLinInit = 2,
  kStreamNlInit = 3,
  kStreamShuffle = 4,
  kStreamNoisy = 5,
  kStreamDequant = 6,
  kStreamVariance = 7,
  kStreamEval = 8,
};

constexpr double kDivergenceLimit = 1e8;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void axpy(DenseVector& y, double a, const DenseVector& x) {
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

bool is_combined(EstimatorKind kind) {
  return kind == EstimatorKind::SilentReparam || kind == EstimatorKind::SilentGumbel ||
         kind == EstimatorKind::SilentReinforce;
}

}  // namespace

bool TrainConfig::uses_silent_path() const {
  return estimator == EstimatorKind::Silent || is_combined(estimator);
}

std::optional<EstimatorKind> TrainConfig::noisy_part() const {
  switch (estimator) {
    case EstimatorKind::Silent:
      return std::nullopt;
    case EstimatorKind::Reparam:
    case EstimatorKind::SilentReparam:
      return EstimatorKind::Reparam;
    case EstimatorKind::Gumbel:
    case EstimatorKind::SilentGumbel:
      return EstimatorKind::Gumbel;
    case EstimatorKind::Reinforce:
    case EstimatorKind::SilentReinforce:
      return EstimatorKind::Reinforce;
  }
  return std::nullopt;
}

void TrainConfig::validate() const {
  if (latent_dim == 0) throw ConfigError("latent_dim must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (anneal_rate < 0.0) throw ConfigError("anneal_rate must be non-negative");
  if (anneal_rate > 0.0 && !is_combined(estimator)) {
    throw ConfigError("anneal_rate requires a combined (silent+X) estimator");
  }
  if (cutoff_epoch > max_epochs) {
    throw ConfigError("cutoff_epoch must not exceed max_epochs");
  }
  if (!learnable_precision && sigma2 <= 0.0) {
    throw ConfigError("sigma2 must be positive in fixed-variance mode");
  }
  if (lr_encoder <= 0.0 || lr_decoder_nl <= 0.0 || lr_decoder_mu <= 0.0 ||
      lr_decoder_alpha <= 0.0) {
    throw ConfigError("learning rates must be positive");
  }
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (gumbel_temperature <= 0.0) throw ConfigError("gumbel_temperature must be positive");
  if (reinforce_momentum < 0.0 || reinforce_momentum >= 1.0) {
    throw ConfigError("reinforce_momentum must be in [0, 1)");
  }
  const auto noisy = noisy_part();
  if (noisy == EstimatorKind::Reparam && latent_kind != LatentKind::DiagGaussian) {
    throw ConfigError("reparameterization requires a Gaussian latent");
  }
  if ((noisy == EstimatorKind::Gumbel || noisy == EstimatorKind::Reinforce) &&
      latent_kind != LatentKind::Bernoulli) {
    throw ConfigError("Gumbel-Softmax and REINFORCE require a Bernoulli latent");
  }
  if (data.n_items == 0) throw ConfigError("n_items must be at least 1");
  if (data.kind == DataSourceKind::Synthetic &&
      data.synthetic_latent_dim > data.data_dim) {
    throw ConfigError("synthetic_latent_dim must not exceed data_dim");
  }
  if (data.kind == DataSourceKind::Idx && data.idx_path.empty()) {
    throw ConfigError("idx dataset requires idx_path");
  }
}

std::string TrainConfig::data_signature() const {
  std::ostringstream sig;
  sig << "seed=" << seed << ";dataset=";
  switch (data.kind) {
    case DataSourceKind::Synthetic:
      sig << "synthetic;n=" << data.n_items << ";k=" << data.data_dim
          << ";d=" << data.synthetic_latent_dim << ";noise=" << data.synthetic_noise
          << ";mseed=" << data.matrix_seed;
      break;
    case DataSourceKind::Blobs:
      sig << "blobs;n=" << data.n_items;
      break;
    case DataSourceKind::Idx:
      sig << "idx;path=" << data.idx_path;
      break;
  }
  return sig.str();
}

std::pair<double, double> anneal_weights(std::size_t epoch, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("anneal_weights: negative rate");
  const double w_lin = std::max(0.0, 1.0 - static_cast<double>(epoch) * lambda);
  return {w_lin, 1.0 - w_lin};
}

double elbo_loss(double recon_loglik, double kl) { return -recon_loglik + kl; }

// ---------------------------------------------------------------------------
// Config file parsing
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

EstimatorKind parse_estimator(const std::string& v) {
  if (v == "silent") return EstimatorKind::Silent;
  if (v == "reparam") return EstimatorKind::Reparam;
  if (v == "gumbel") return EstimatorKind::Gumbel;
  if (v == "reinforce") return EstimatorKind::Reinforce;
  if (v == "silent+reparam") return EstimatorKind::SilentReparam;
  if (v == "silent+gumbel") return EstimatorKind::SilentGumbel;
  if (v == "silent+reinforce") return EstimatorKind::SilentReinforce;
  throw ConfigError("unknown estimator '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(std::stoull(part));
  }
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected a boolean, got '" + v + "'");
}

}  // namespace

TrainConfig parse_config_text(const std::string& text, const std::string& origin) {
  TrainConfig cfg;
  std::vector<std::string> unknown;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ": malformed line '" + line + "' (expected key=value)");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      if (key == "estimator") cfg.estimator = parse_estimator(value);
      else if (key == "latent_kind") {
        if (value == "gaussian") cfg.latent_kind = LatentKind::DiagGaussian;
        else if (value == "bernoulli") cfg.latent_kind = LatentKind::Bernoulli;
        else throw ConfigError("unknown latent_kind '" + value + "'");
      }
      else if (key == "latent_dim") cfg.latent_dim = std::stoull(value);
      else if (key == "mode") {
        if (value == "fixed") cfg.learnable_precision = false;
        else if (value == "learnable") cfg.learnable_precision = true;
        else throw ConfigError("unknown mode '" + value + "'");
      }
      else if (key == "sigma2") cfg.sigma2 = std::stod(value);
      else if (key == "cutoff_epoch") cfg.cutoff_epoch = std::stoull(value);
      else if (key == "anneal_rate") cfg.anneal_rate = std::stod(value);
      else if (key == "max_epochs") cfg.max_epochs = std::stoull(value);
      else if (key == "batch_size") cfg.batch_size = std::stoull(value);
      else if (key == "lr_encoder") cfg.lr_encoder = std::stod(value);
      else if (key == "lr_decoder_nl") cfg.lr_decoder_nl = std::stod(value);
      else if (key == "lr_decoder_mu") cfg.lr_decoder_mu = std::stod(value);
      else if (key == "lr_decoder_alpha") cfg.lr_decoder_alpha = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else if (key == "gumbel_temperature") cfg.gumbel_temperature = std::stod(value);
      else if (key == "reinforce_momentum") cfg.reinforce_momentum = std::stod(value);
      else if (key == "noisy_decoder") {
        if (value == "linear") cfg.noisy_decoder = NoisyDecoderKind::Linear;
        else if (value == "mlp") cfg.noisy_decoder = NoisyDecoderKind::Mlp;
        else throw ConfigError("unknown noisy_decoder '" + value + "'");
      }
      else if (key == "encoder_hidden") cfg.encoder_hidden = parse_size_list(value);
      else if (key == "decoder_hidden") cfg.decoder_hidden = parse_size_list(value);
      else if (key == "weight_decay") cfg.weight_decay = std::stod(value);
      else if (key == "csv_wall_time") cfg.csv_wall_time = parse_bool(value);
      else if (key == "dataset") {
        if (value == "synthetic") cfg.data.kind = DataSourceKind::Synthetic;
        else if (value == "blobs") cfg.data.kind = DataSourceKind::Blobs;
        else if (value == "idx") cfg.data.kind = DataSourceKind::Idx;
        else throw ConfigError("unknown dataset '" + value + "'");
      }
      else if (key == "n_items") cfg.data.n_items = std::stoull(value);
      else if (key == "data_dim") cfg.data.data_dim = std::stoull(value);
      else if (key == "synthetic_latent_dim") cfg.data.synthetic_latent_dim = std::stoull(value);
      else if (key == "synthetic_noise") cfg.data.synthetic_noise = std::stod(value);
      else if (key == "matrix_seed") cfg.data.matrix_seed = std::stoull(value);
      else if (key == "idx_path") cfg.data.idx_path = value;
      else unknown.push_back(key);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError(origin + ": bad value for key '" + key + "': '" + value + "'");
    }
  }
  if (!unknown.empty()) {
    std::string msg = origin + ": unknown config keys:";
    for (const std::string& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  cfg.validate();
  return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

Dataset build_dataset(const TrainConfig& cfg) {
  RngStream rng = RngStream(cfg.seed).split(kStreamData);
  switch (cfg.data.kind) {
    case DataSourceKind::Synthetic: {
      SyntheticSpec spec;
      spec.latent_dim = cfg.data.synthetic_latent_dim;
      spec.data_dim = cfg.data.data_dim;
      spec.matrix_seed = cfg.data.matrix_seed;
      spec.noise_scale = cfg.data.synthetic_noise;
      return make_synthetic(spec, cfg.data.n_items, rng).data;
    }
    case DataSourceKind::Blobs:
      return make_blobs8x8(cfg.data.n_items, rng);
    case DataSourceKind::Idx:
      return load_idx_images(cfg.data.idx_path);
  }
  throw ConfigError("unreachable dataset kind");
}

LinearDecoder init_linear_decoder(std::size_t k, std::size_t d, bool learnable,
                                  RngStream& rng) {
  LinearDecoder dec;
  dec.w_mu = DenseMatrix(k, d + 1);
  const double limit = std::sqrt(6.0 / static_cast<double>(d + 1));
  for (double& w : dec.w_mu.data()) w = limit * (2.0 * rng.next_uniform() - 1.0);
  if (learnable) {
    // Small data columns plus a solidly positive bias column keep the initial
    // precision away from zero.
    DenseMatrix wa(k, d + 1);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < d; ++i) {
        wa(j, i) = 0.05 * (2.0 * rng.next_uniform() - 1.0);
      }
      wa(j, d) = 3.0;
    }
    dec.w_alpha = std::move(wa);
  }
  return dec;
}

}  // namespace

struct Trainer::NoisyEval {
  EstimatorOutput est;
  MlpGrads nl_grads;           // loss grads, mlp decoder path
  DenseMatrix lin_mu_grads;    // loss grads, linear decoder path
  DenseMatrix lin_alpha_grads;
  bool has_nl = false;
  bool has_lin = false;
};

Trainer::Trainer(TrainConfig cfg) : Trainer(cfg, build_dataset(cfg)) {}

Trainer::Trainer(TrainConfig cfg, Dataset data) : cfg_(std::move(cfg)), dataset_(std::move(data)) {
  cfg_.validate();
  if (dataset_.size() == 0) throw ConfigError("dataset is empty");
  const std::size_t k = dataset_.dim();
  const std::size_t d = cfg_.latent_dim;

  RngStream enc_rng = RngStream(cfg_.seed).split(kStreamEncoderInit);
  std::vector<std::size_t> enc_dims{k};
  enc_dims.insert(enc_dims.end(), cfg_.encoder_hidden.begin(), cfg_.encoder_hidden.end());
  const bool gaussian = cfg_.latent_kind == LatentKind::DiagGaussian;
  enc_dims.push_back(gaussian ? 2 * d : d);
  encoder_ = Mlp::create(enc_dims, gaussian ? HeadKind::GaussianStats : HeadKind::BernoulliLogits,
                         enc_rng);
  opt_encoder_ = AdamW(encoder_.param_count(),
                       {cfg_.lr_encoder, 0.9, 0.95, 1e-8, cfg_.weight_decay});

  const bool wants_lin =
      cfg_.uses_silent_path() ||
      (cfg_.noisy_part().has_value() && cfg_.noisy_decoder == NoisyDecoderKind::Linear);
  if (wants_lin) {
    RngStream lin_rng = RngStream(cfg_.seed).split(kStreamLinInit);
    lin_decoder_ = init_linear_decoder(k, d, cfg_.learnable_precision, lin_rng);
    opt_mu_ = AdamW(lin_decoder_->w_mu.size(),
                    {cfg_.lr_decoder_mu, 0.9, 0.95, 1e-8, cfg_.weight_decay});
    if (cfg_.learnable_precision) {
      opt_alpha_ = AdamW(lin_decoder_->w_alpha->size(),
                         {cfg_.lr_decoder_alpha, 0.9, 0.95, 1e-8, cfg_.weight_decay});
    }
  }
  if (cfg_.noisy_part().has_value() && cfg_.noisy_decoder == NoisyDecoderKind::Mlp) {
    RngStream nl_rng = RngStream(cfg_.seed).split(kStreamNlInit);
    std::vector<std::size_t> dec_dims{d};
    dec_dims.insert(dec_dims.end(), cfg_.decoder_hidden.begin(), cfg_.decoder_hidden.end());
    dec_dims.push_back(cfg_.learnable_precision ? 2 * k : k);
    nl_decoder_ = Mlp::create(
        dec_dims, cfg_.learnable_precision ? HeadKind::GaussianStats : HeadKind::DecoderMean,
        nl_rng);
    opt_nl_ = AdamW(nl_decoder_->param_count(),
                    {cfg_.lr_decoder_nl, 0.9, 0.95, 1e-8, cfg_.weight_decay});
  }
  reinforce_state_.momentum = cfg_.reinforce_momentum;
}

LatentDistribution Trainer::stats_from_raw(const DenseVector& raw) const {
  const std::size_t d = cfg_.latent_dim;
  if (cfg_.latent_kind == LatentKind::DiagGaussian) {
    DenseVector mean(raw.begin(), raw.begin() + d);
    DenseVector var(d);
    for (std::size_t i = 0; i < d; ++i) {
      var[i] = std::exp(raw[d + i]);
      // The head parameterizes log-variance, so an exact zero is an exp
      // underflow, i.e. the optimizer blew up.
      if (!std::isfinite(mean[i]) || !std::isfinite(var[i]) || var[i] == 0.0) {
        EpochReport partial;
        partial.epoch = epoch_;
        throw DivergenceError("encoder emitted degenerate statistics", partial);
      }
    }
    return LatentDistribution::diag_gaussian(std::move(mean), std::move(var));
  }
  DenseVector p(d);
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::isfinite(raw[i])) {
      EpochReport partial;
      partial.epoch = epoch_;
      throw DivergenceError("encoder emitted non-finite statistics", partial);
    }
    p[i] = sigmoid(raw[i]);
  }
  return LatentDistribution::bernoulli(std::move(p));
}

DenseVector Trainer::item_input(std::size_t index, RngStream& dequant) {
  if (dataset_.space == PixelSpace::QuantizedU8) {
    return dequantize(dataset_.items[index], dequant);
  }
  return dataset_.items[index];
}

Trainer::NoisyEval Trainer::eval_noisy(const DenseVector& x, const LatentDistribution& dist,
                                       EstimatorKind kind, RngStream& rng,
                                       ReinforceState& reinforce) {
  NoisyEval result;
  const bool use_mlp = nl_decoder_.has_value();
  const std::size_t k = dataset_.dim();

  if (use_mlp) {
    const Mlp& dec = *nl_decoder_;
    MlpTape tape;
    MlpGrads grads = MlpGrads::zeros_like(dec);
    auto eval_full = [&](const DenseVector& z) -> DecoderEval {
      const DenseVector out = mlp_forward(dec, z, &tape);
      DenseVector upstream(out.size(), 0.0);
      double loglik = 0.0;
      if (!cfg_.learnable_precision) {
        const double inv_s2 = 1.0 / cfg_.sigma2;
        loglik = -0.5 * static_cast<double>(k) *
                 std::log(2.0 * std::numbers::pi * cfg_.sigma2);
        for (std::size_t j = 0; j < k; ++j) {
          const double r = x[j] - out[j];
          loglik -= 0.5 * r * r * inv_s2;
          upstream[j] = r * inv_s2;
        }
      } else {
        // Outputs are [mean, logvar] per pixel.
        loglik = -0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi);
        for (std::size_t j = 0; j < k; ++j) {
          const double r = x[j] - out[j];
          const double inv_var = std::exp(-out[k + j]);
          loglik += -0.5 * out[k + j] - 0.5 * r * r * inv_var;
          upstream[j] = r * inv_var;
          upstream[k + j] = -0.5 + 0.5 * r * r * inv_var;
        }
      }
      grads = mlp_backward(dec, tape, upstream);
      return DecoderEval{loglik, grads.wrt_input};
    };
    switch (kind) {
      case EstimatorKind::Reparam:
        result.est = reparam_grad(eval_full, dist, rng);
        break;
      case EstimatorKind::Gumbel:
        result.est = gumbel_softmax_grad(eval_full, dist, cfg_.gumbel_temperature, rng);
        break;
      case EstimatorKind::Reinforce:
        result.est = reinforce_grad(
            [&](const DenseVector& z) { return eval_full(z).loglik; }, dist, reinforce, rng);
        break;
      default:
        throw std::invalid_argument("eval_noisy: not a stochastic estimator kind");
    }
    grads.scale(-1.0);  // loglik grads -> loss grads
    result.nl_grads = std::move(grads);
    result.has_nl = true;
    return result;
  }

  // Linear decoder on the sampled path.
  const LinearDecoder& dec = *lin_decoder_;
  DenseVector z_used;
  const DecoderEvalFn base = cfg_.learnable_precision
                                 ? make_linear_learnable_eval(x, dec)
                                 : make_linear_fixed_eval(x, dec, cfg_.sigma2);
  auto eval_capture = [&](const DenseVector& z) {
    z_used = z;
    return base(z);
  };
  switch (kind) {
    case EstimatorKind::Reparam:
      result.est = reparam_grad(eval_capture, dist, rng);
      break;
    case EstimatorKind::Gumbel:
      result.est = gumbel_softmax_grad(eval_capture, dist, cfg_.gumbel_temperature, rng);
      break;
    case EstimatorKind::Reinforce:
      result.est = reinforce_grad(
          [&](const DenseVector& z) { return eval_capture(z).loglik; }, dist, reinforce, rng);
      break;
    default:
      throw std::invalid_argument("eval_noisy: not a stochastic estimator kind");
  }

  DenseVector za = z_used;
  za.push_back(1.0);
  const DenseVector mu = matvec(dec.w_mu, za);
  result.lin_mu_grads = DenseMatrix(k, za.size());
  if (!cfg_.learnable_precision) {
    const double inv_s2 = 1.0 / cfg_.sigma2;
    for (std::size_t j = 0; j < k; ++j) {
      const double dloss_dmu = (mu[j] - x[j]) * inv_s2;
      for (std::size_t i = 0; i < za.size(); ++i) {
        result.lin_mu_grads(j, i) = dloss_dmu * za[i];
      }
    }
  } else {
    const DenseVector alpha = matvec(*dec.w_alpha, za);
    result.lin_alpha_grads = DenseMatrix(k, za.size());
    for (std::size_t j = 0; j < k; ++j) {
      const double r = x[j] - mu[j];
      const double a = alpha[j];
      const double dloss_dmu = -r * a * a;
      const double dloss_dalpha = -(1.0 / a - r * r * a);
      for (std::size_t i = 0; i < za.size(); ++i) {
        result.lin_mu_grads(j, i) = dloss_dmu * za[i];
        result.lin_alpha_grads(j, i) = dloss_dalpha * za[i];
      }
    }
  }
  result.has_lin = true;
  return result;
}

EpochReport Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  ++epoch_;
  if (cfg_.cutoff_epoch > 0 && epoch_ == cfg_.cutoff_epoch) frozen_ = true;

  double w_lin = 0.0, w_nl = 0.0;
  const bool has_silent = cfg_.uses_silent_path();
  const auto noisy_kind = cfg_.noisy_part();
  if (has_silent && noisy_kind) {
    std::tie(w_lin, w_nl) = anneal_weights(epoch_, cfg_.anneal_rate);
  } else if (has_silent) {
    w_lin = 1.0;
  } else {
    w_nl = 1.0;
  }

  RngStream shuffle_rng = RngStream(cfg_.seed).split(kStreamShuffle).split(epoch_);
  RngStream noisy_rng = RngStream(cfg_.seed).split(kStreamNoisy).split(epoch_);
  RngStream dequant_rng = RngStream(cfg_.seed).split(kStreamDequant).split(epoch_);

  std::vector<std::size_t> order(dataset_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  shuffle_indices(order, shuffle_rng);

  const ReconMode mode = cfg_.learnable_precision ? ReconMode::learnable()
                                                  : ReconMode::fixed(cfg_.sigma2);

  double sum_total = 0.0, sum_recon_loss = 0.0, sum_kl = 0.0;
  std::size_t n_seen = 0;

  DenseVector enc_params = flatten_params(encoder_);
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
    const double inv_batch = 1.0 / static_cast<double>(end - begin);

    DenseVector enc_grad(enc_params.size(), 0.0);
    DenseVector mu_grad, alpha_grad;
    if (lin_decoder_) {
      mu_grad.assign(lin_decoder_->w_mu.size(), 0.0);
      if (cfg_.learnable_precision) alpha_grad.assign(lin_decoder_->w_alpha->size(), 0.0);
    }
    MlpGrads nl_grad;
    if (nl_decoder_) nl_grad = MlpGrads::zeros_like(*nl_decoder_);

    double batch_total = 0.0;
    for (std::size_t b = begin; b < end; ++b) {
      const DenseVector x = item_input(order[b], dequant_rng);
      MlpTape tape;
      const DenseVector raw = mlp_forward(encoder_, x, &tape);
      const LatentDistribution dist = stats_from_raw(raw);
      const double kl = kl_to_prior(dist);
      const DenseVector g_kl = kl_to_prior_grad_natural(dist);

      double silent_loglik = 0.0;
      DenseVector silent_grad_stats;
      if (lin_decoder_ && (has_silent || !noisy_kind)) {
        const SilentEval silent = silent_grad_full(x, *lin_decoder_, dist, mode);
        silent_loglik = -silent.out.loss;
        silent_grad_stats = silent.out.grad_stats;
        if (has_silent) {
          // The linear decoder trains on its own analytic loss.
          axpy(mu_grad, 1.0, silent.grad_w_mu.data());
          if (cfg_.learnable_precision) axpy(alpha_grad, 1.0, silent.grad_w_alpha->data());
        }
      }

      double noisy_loglik = 0.0;
      DenseVector noisy_grad_stats;
      if (noisy_kind) {
        NoisyEval noisy = eval_noisy(x, dist, *noisy_kind, noisy_rng, reinforce_state_);
        noisy_loglik = -noisy.est.loss;
        noisy_grad_stats = std::move(noisy.est.grad_stats);
        if (noisy.has_nl) nl_grad.accumulate(noisy.nl_grads);
        if (noisy.has_lin && !has_silent) {
          axpy(mu_grad, 1.0, noisy.lin_mu_grads.data());
          if (cfg_.learnable_precision) axpy(alpha_grad, 1.0, noisy.lin_alpha_grads.data());
        }
      }

      if (!frozen_) {
        DenseVector upstream = g_kl;
        if (has_silent && w_lin != 0.0) axpy(upstream, w_lin, silent_grad_stats);
        if (noisy_kind && w_nl != 0.0) axpy(upstream, w_nl, noisy_grad_stats);
        const MlpGrads item_grads = mlp_backward(encoder_, tape, upstream);
        axpy(enc_grad, 1.0, flatten_grads(item_grads));
      }

      double recon_loglik = 0.0;
      if (has_silent && noisy_kind) {
        recon_loglik = w_lin * silent_loglik + w_nl * noisy_loglik;
      } else if (has_silent || !noisy_kind) {
        recon_loglik = silent_loglik;
      } else {
        recon_loglik = noisy_loglik;
      }
      const double total = elbo_loss(recon_loglik, kl);
      batch_total += total;
      sum_total += total;
      sum_recon_loss += -recon_loglik;
      sum_kl += kl;
      ++n_seen;
    }

    batch_total *= inv_batch;
    if (!std::isfinite(batch_total) || std::abs(batch_total) > kDivergenceLimit) {
      EpochReport partial;
      partial.epoch = epoch_;
      partial.total_loss = batch_total;
      partial.w_lin = w_lin;
      throw DivergenceError("training diverged at epoch " + std::to_string(epoch_) +
                                " (batch loss " + std::to_string(batch_total) + ")",
                            partial);
    }

    if (!frozen_) {
      for (double& g : enc_grad) g *= inv_batch;
      opt_encoder_.step(enc_params, enc_grad);
      unflatten_params(encoder_, enc_params);
    }
    if (lin_decoder_) {
      for (double& g : mu_grad) g *= inv_batch;
      opt_mu_.step(lin_decoder_->w_mu.data(), mu_grad);
      if (cfg_.learnable_precision) {
        for (double& g : alpha_grad) g *= inv_batch;
        opt_alpha_.step(lin_decoder_->w_alpha->data(), alpha_grad);
      }
    }
    if (nl_decoder_) {
      MlpGrads scaled = std::move(nl_grad);
      scaled.scale(inv_batch);
      DenseVector nl_params = flatten_params(*nl_decoder_);
      opt_nl_.step(nl_params, flatten_grads(scaled));
      unflatten_params(*nl_decoder_, nl_params);
    }
  }

  EpochReport report;
  report.epoch = epoch_;
  const double inv_n = 1.0 / static_cast<double>(n_seen);
  report.total_loss = sum_total * inv_n;
  report.recon_loss = sum_recon_loss * inv_n;
  report.kl = sum_kl * inv_n;
  report.w_lin = w_lin;
  const double mean_loglik = -report.recon_loss;
  report.bpd = dataset_.space == PixelSpace::QuantizedU8
                   ? bpd(mean_loglik, dataset_.dim())
                   : bpd_continuous(mean_loglik, dataset_.dim());
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

TrainResult Trainer::run() {
  TrainResult result;
  while (epoch_ < cfg_.max_epochs) {
    try {
      result.epochs.push_back(run_epoch());
    } catch (const DivergenceError& err) {
      result.epochs.push_back(err.last_report);
      result.diverged = true;
      result.message = err.what();
      break;
    }
  }
  return result;
}

GradVarianceReport Trainer::measure_gradient_variance(
    std::size_t n_samples, std::optional<EstimatorKind> estimator_override) {
  if (n_samples < 2) {
    throw std::invalid_argument("measure_gradient_variance: need at least 2 samples");
  }
  RngStream base = RngStream(cfg_.seed).split(kStreamVariance).split(variance_calls_++);
  RngStream dequant_rng = base.split(0);
  RngStream sample_rng = base.split(1);

  const std::size_t batch = std::min(cfg_.batch_size, dataset_.size());
  // One encoder pass on the fixed batch pins the latent distributions.
  std::vector<DenseVector> inputs;
  std::vector<MlpTape> tapes(batch);
  std::vector<LatentDistribution> dists;
  for (std::size_t b = 0; b < batch; ++b) {
    inputs.push_back(item_input(b, dequant_rng));
    const DenseVector raw = mlp_forward(encoder_, inputs[b], &tapes[b]);
    dists.push_back(stats_from_raw(raw));
  }

  const ReconMode mode = cfg_.learnable_precision ? ReconMode::learnable()
                                                  : ReconMode::fixed(cfg_.sigma2);
  const EstimatorKind kind = estimator_override.value_or(cfg_.estimator);
  const bool pure_silent = kind == EstimatorKind::Silent;
  const auto noisy_kind = [&]() -> std::optional<EstimatorKind> {
    switch (kind) {
      case EstimatorKind::Silent:
        return std::nullopt;
      case EstimatorKind::Reparam:
      case EstimatorKind::SilentReparam:
        return EstimatorKind::Reparam;
      case EstimatorKind::Gumbel:
      case EstimatorKind::SilentGumbel:
        return EstimatorKind::Gumbel;
      case EstimatorKind::Reinforce:
      case EstimatorKind::SilentReinforce:
        return EstimatorKind::Reinforce;
    }
    return std::nullopt;
  }();
  const bool has_silent = pure_silent || is_combined(kind);
  if (has_silent && !lin_decoder_) {
    throw std::invalid_argument("measure_gradient_variance: no linear decoder for silent path");
  }

  double w_lin = 0.0, w_nl = 0.0;
  if (has_silent && noisy_kind) {
    std::tie(w_lin, w_nl) = anneal_weights(epoch_, cfg_.anneal_rate);
  } else if (has_silent) {
    w_lin = 1.0;
  } else {
    w_nl = 1.0;
  }

  ReinforceState frozen_baseline = reinforce_state_;  // measurement never mutates training state
  const std::size_t n_params = encoder_.param_count();
  std::vector<DenseVector> samples;
  samples.reserve(n_samples);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  for (std::size_t s = 0; s < n_samples; ++s) {
    DenseVector grad(n_params, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
      DenseVector upstream;
      if (has_silent) {
        EstimatorOutput silent = silent_grad(inputs[b], *lin_decoder_, dists[b], mode);
        upstream = std::move(silent.grad_stats);
        for (double& g : upstream) g *= w_lin;
      }
      if (noisy_kind) {
        ReinforceState state_copy = frozen_baseline;
        NoisyEval noisy = eval_noisy(inputs[b], dists[b], *noisy_kind, sample_rng, state_copy);
        if (upstream.empty()) {
          upstream = std::move(noisy.est.grad_stats);
          for (double& g : upstream) g *= w_nl;
        } else {
          axpy(upstream, w_nl, noisy.est.grad_stats);
        }
      }
      const MlpGrads item_grads = mlp_backward(encoder_, tapes[b], upstream);
      axpy(grad, 1.0, flatten_grads(item_grads));
    }
    for (double& g : grad) g *= inv_batch;
    samples.push_back(std::move(grad));
  }

  // Shifted two-pass variance: deltas from the first sample keep identical
  // samples at a variance of exactly zero.
  GradVarianceReport report;
  report.n_params = n_params;
  report.n_samples = n_samples;
  DenseVector mean_delta(n_params, 0.0);
  for (const DenseVector& g : samples) {
    for (std::size_t i = 0; i < n_params; ++i) mean_delta[i] += g[i] - samples[0][i];
  }
  const double inv_n = 1.0 / static_cast<double>(n_samples);
  for (double& m : mean_delta) m *= inv_n;
  double total = 0.0;
  for (const DenseVector& g : samples) {
    for (std::size_t i = 0; i < n_params; ++i) {
      const double d = (g[i] - samples[0][i]) - mean_delta[i];
      total += d * d;
    }
  }
  report.total_variance = total / static_cast<double>(n_samples - 1);
  return report;
}

double Trainer::exact_expected_loss() {
  if (!lin_decoder_) {
    throw std::invalid_argument("exact_expected_loss: requires a linear decoder");
  }
  const ReconMode mode = cfg_.learnable_precision ? ReconMode::learnable()
                                                  : ReconMode::fixed(cfg_.sigma2);
  double sum = 0.0;
  for (const DenseVector& x : dataset_.items) {
    const DenseVector raw = mlp_forward(encoder_, x, nullptr);
    const LatentDistribution dist = stats_from_raw(raw);
    const EstimatorOutput silent = silent_grad(x, *lin_decoder_, dist, mode);
    sum += elbo_loss(-silent.loss, kl_to_prior(dist));
  }
  return sum / static_cast<double>(dataset_.size());
}

MetricReport Trainer::evaluate() {
  RngStream eval_rng = RngStream(cfg_.seed).split(kStreamEval);
  const ReconMode mode = cfg_.learnable_precision ? ReconMode::learnable()
                                                  : ReconMode::fixed(cfg_.sigma2);
  const std::size_t k = dataset_.dim();
  double sum_loglik = 0.0, sum_mse = 0.0;
  for (const DenseVector& raw_item : dataset_.items) {
    const DenseVector x = dataset_.space == PixelSpace::QuantizedU8
                              ? dequantize(raw_item, eval_rng)
                              : raw_item;
    const DenseVector raw = mlp_forward(encoder_, x, nullptr);
    const LatentDistribution dist = stats_from_raw(raw);

    double loglik = 0.0;
    DenseVector recon_mean;
    if (nl_decoder_) {
      // Sample-based model: one latent draw per item from the eval stream.
      const DenseVector z = sample(dist, eval_rng);
      const DenseVector out = mlp_forward(*nl_decoder_, z, nullptr);
      if (!cfg_.learnable_precision) {
        const double inv_s2 = 1.0 / cfg_.sigma2;
        loglik = -0.5 * static_cast<double>(k) *
                 std::log(2.0 * std::numbers::pi * cfg_.sigma2);
        for (std::size_t j = 0; j < k; ++j) {
          const double r = x[j] - out[j];
          loglik -= 0.5 * r * r * inv_s2;
        }
      } else {
        loglik = -0.5 * static_cast<double>(k) * std::log(2.0 * std::numbers::pi);
        for (std::size_t j = 0; j < k; ++j) {
          const double r = x[j] - out[j];
          loglik += -0.5 * out[k + j] - 0.5 * r * r * std::exp(-out[k + j]);
        }
      }
      DenseVector mean_latent(dist.dim());
      for (std::size_t i = 0; i < dist.dim(); ++i) mean_latent[i] = dist.component_mean(i);
      const DenseVector mean_out = mlp_forward(*nl_decoder_, mean_latent, nullptr);
      recon_mean.assign(mean_out.begin(), mean_out.begin() + k);
    } else {
      const EstimatorOutput silent = silent_grad(x, *lin_decoder_, dist, mode);
      loglik = -silent.loss;
      DenseVector mean_latent(dist.dim());
      for (std::size_t i = 0; i < dist.dim(); ++i) mean_latent[i] = dist.component_mean(i);
      mean_latent.push_back(1.0);
      recon_mean = matvec(lin_decoder_->w_mu, mean_latent);
    }
    sum_loglik += loglik;
    sum_mse += mse(raw_item, recon_mean);
  }
  MetricReport report;
  report.n_items = dataset_.size();
  const double mean_loglik = sum_loglik / static_cast<double>(dataset_.size());
  report.bpd = dataset_.space == PixelSpace::QuantizedU8 ? bpd(mean_loglik, k)
                                                         : bpd_continuous(mean_loglik, k);
  report.mse = sum_mse / static_cast<double>(dataset_.size());
  return report;
}

void Trainer::save_state(const std::string& path) const {
  TensorMap tensors;
  pack_mlp(tensors, "encoder", encoder_);
  if (lin_decoder_) {
    tensors["lin.w_mu"] = lin_decoder_->w_mu;
    if (lin_decoder_->w_alpha) tensors["lin.w_alpha"] = *lin_decoder_->w_alpha;
  }
  if (nl_decoder_) pack_mlp(tensors, "nl_decoder", *nl_decoder_);
  save_checkpoint(path, tensors);
}

void write_epoch_csv(const std::string& path, const std::vector<EpochReport>& reports,
                     bool wall_time) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);  // LF endings everywhere
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "epoch,total_loss,recon_loss,kl,w_lin,bpd,seconds\n";
  char buf[256];
  for (const EpochReport& r : reports) {
    std::snprintf(buf, sizeof(buf), "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f\n", r.epoch,
                  r.total_loss, r.recon_loss, r.kl, r.w_lin, r.bpd,
                  wall_time ? r.seconds : 0.0);
    out << buf;
  }
}

}  // namespace silentgrad
