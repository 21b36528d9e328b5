// silentgrad CLI: oracle verification, training, gradient-variance
// measurement, and estimator comparison sweeps.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "silentgrad/metrics.hpp"
#include "silentgrad/oracle.hpp"
#include "silentgrad/train.hpp"

namespace fs = std::filesystem;
using namespace silentgrad;

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int cmd_verify(std::uint64_t seed, std::size_t n_mc) {
  if (n_mc < 1000) {
    std::cerr << "verify: --n-mc must be at least 1000\n";
    return 2;
  }
  const std::vector<CheckResult> results = run_all_checks(seed, n_mc);
  std::ofstream csv("verify_report.csv", std::ios::binary | std::ios::trunc);
  csv << "name,analytic,oracle,std_error,pass\n";
  bool all_pass = true;
  for (const CheckResult& r : results) {
    std::printf("%-55s analytic=% .9e oracle=% .9e se=%.3e %s\n", r.name.c_str(),
                r.analytic, r.oracle, r.std_error, r.pass ? "PASS" : "FAIL");
    csv << r.name << ',' << format_double(r.analytic) << ',' << format_double(r.oracle)
        << ',' << format_double(r.std_error) << ',' << (r.pass ? "true" : "false")
        << '\n';
    all_pass = all_pass && r.pass;
  }
  std::printf("%zu checks, %s\n", results.size(), all_pass ? "all passed" : "FAILURES above");
  return all_pass ? 0 : 1;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig cfg = parse_config_file(config_path);  // before any output exists
  fs::create_directories(out_dir);
  Trainer trainer(cfg);
  const TrainResult result = trainer.run();
  write_epoch_csv((fs::path(out_dir) / "epochs.csv").string(), result.epochs,
                  cfg.csv_wall_time);
  trainer.save_state((fs::path(out_dir) / "checkpoint.bin").string());
  if (result.diverged) {
    std::cerr << "train: " << result.message << "\n";
    return 1;
  }
  const MetricReport metrics = trainer.evaluate();
  std::ofstream json((fs::path(out_dir) / "metrics.json").string(),
                     std::ios::binary | std::ios::trunc);
  json << metric_report_json(metrics);
  std::printf("trained %zu epochs; bpd=%.6g mse=%.6g\n", trainer.epochs_run(), metrics.bpd,
              metrics.mse);
  return 0;
}

int cmd_variance(const std::string& config_path, const std::vector<std::size_t>& epochs) {
  const TrainConfig cfg = parse_config_file(config_path);
  Trainer trainer(cfg);
  std::vector<std::size_t> targets = epochs;
  std::sort(targets.begin(), targets.end());
  std::ofstream csv("variance_report.csv", std::ios::binary | std::ios::trunc);
  csv << "epoch,total_variance,n_params,n_samples\n";
  auto measure = [&](std::size_t epoch) {
    const GradVarianceReport rep = trainer.measure_gradient_variance(100);
    std::printf("epoch %-6zu variance=% .9e over %zu params, %zu samples\n", epoch,
                rep.total_variance, rep.n_params, rep.n_samples);
    csv << epoch << ',' << format_double(rep.total_variance) << ',' << rep.n_params << ','
        << rep.n_samples << '\n';
  };
  std::size_t next = 0;
  while (next < targets.size() && targets[next] == 0) {
    measure(0);  // untrained state
    ++next;
  }
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs && next < targets.size(); ++epoch) {
    trainer.run_epoch();
    while (next < targets.size() && targets[next] == epoch) {
      measure(epoch);
      ++next;
    }
  }
  for (; next < targets.size(); ++next) {
    std::cerr << "variance: epoch " << targets[next] << " exceeds max_epochs "
              << cfg.max_epochs << ", skipped\n";
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths, const std::string& out_dir) {
  if (config_paths.size() < 2) {
    std::cerr << "compare: need at least 2 configs\n";
    return 2;
  }
  std::vector<TrainConfig> configs;
  for (const std::string& path : config_paths) configs.push_back(parse_config_file(path));
  for (std::size_t i = 1; i < configs.size(); ++i) {
    if (configs[i].data_signature() != configs[0].data_signature()) {
      std::cerr << "compare: configs must share dataset and seed ('"
                << config_paths[i] << "' differs)\n";
      return 2;
    }
  }
  fs::create_directories(out_dir);
  std::ofstream summary((fs::path(out_dir) / "summary.csv").string(),
                        std::ios::binary | std::ios::trunc);
  summary << "method,final_total_loss,final_kl,bpd,mse,grad_variance\n";
  int status = 0;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const std::string method = fs::path(config_paths[i]).stem().string();
    Trainer trainer(configs[i]);
    const TrainResult result = trainer.run();
    write_epoch_csv((fs::path(out_dir) / (method + "_epochs.csv")).string(), result.epochs,
                    configs[i].csv_wall_time);
    if (result.diverged) {
      std::cerr << "compare: " << method << ": " << result.message << "\n";
      summary << method << ",diverged,,,,\n";
      status = 1;
      continue;
    }
    const MetricReport metrics = trainer.evaluate();
    const GradVarianceReport var = trainer.measure_gradient_variance(100);
    const EpochReport& last = result.epochs.back();
    summary << method << ',' << format_double(last.total_loss) << ','
            << format_double(last.kl) << ',' << format_double(metrics.bpd) << ','
            << format_double(metrics.mse) << ',' << format_double(var.total_variance)
            << '\n';
    std::printf("%-24s loss=%.6g kl=%.6g bpd=%.6g mse=%.6g grad_var=%.6g\n",
                method.c_str(), last.total_loss, last.kl, metrics.bpd, metrics.mse,
                var.total_variance);
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact and stochastic ELBO gradient estimation for linear-decoder VAEs"};
  app.require_subcommand(1);

  std::uint64_t seed = 1;
  std::size_t n_mc = 1000000;
  CLI::App* verify = app.add_subcommand("verify", "Run the oracle check registry");
  verify->add_option("--seed", seed, "Master seed for the oracle streams");
  verify->add_option("--n-mc", n_mc, "Monte-Carlo samples per statistical check");

  std::string config_path, out_dir = "out";
  CLI::App* train = app.add_subcommand("train", "Train one configuration");
  train->add_option("--config", config_path, "Path to a key=value config file")->required();
  train->add_option("--out", out_dir, "Output directory");

  std::string var_config;
  std::vector<std::size_t> var_epochs{10};
  CLI::App* variance =
      app.add_subcommand("variance", "Measure encoder gradient variance at epochs");
  variance->add_option("--config", var_config, "Path to a key=value config file")->required();
  variance->add_option("--epochs", var_epochs, "Epoch checkpoints (comma separated)")
      ->delimiter(',');

  std::vector<std::string> cmp_configs;
  std::string cmp_out = "out";
  CLI::App* compare = app.add_subcommand("compare", "Run several configs on shared data");
  compare->add_option("--config", cmp_configs, "Config files (>= 2, same dataset+seed)")
      ->required();
  compare->add_option("--out", cmp_out, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (verify->parsed()) return cmd_verify(seed, n_mc);
    if (train->parsed()) return cmd_train(config_path, out_dir);
    if (variance->parsed()) return cmd_variance(var_config, var_epochs);
    if (compare->parsed()) return cmd_compare(cmp_configs, cmp_out);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
