// Command-line driver: data generation, training, sampling, evaluation,
// beta sweeps and the method comparison report.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

#include "pudm/config.hpp"
#include "pudm/experiment.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> method;
  std::optional<double> beta;
  std::optional<std::string> correction;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration file (INI)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Run seed");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--method", o.method, "unsupervised | supervised | pn | pu");
  cmd->add_option("--beta", o.beta, "Class prior of sensitive data in U");
  cmd->add_option("--correction", o.correction, "max | abs");
}

pudm::RunConfig resolve(const Overrides& o) {
  pudm::RunConfig cfg = o.config.empty() ? pudm::RunConfig{} : pudm::load_config(o.config);
  pudm::apply_environment(cfg);
  if (o.seed) cfg.seed = *o.seed;
  if (o.out) cfg.out_dir = *o.out;
  if (o.method) cfg.objective.method = pudm::parse_method(*o.method);
  if (o.beta) cfg.objective.pu.beta = *o.beta;
  if (o.correction) cfg.objective.pu.correction = pudm::parse_correction(*o.correction);
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Positive-unlabeled diffusion training on synthetic 2-D data"};
  app.require_subcommand(1);
  Overrides o;

  auto* gen = app.add_subcommand("gen-data", "Generate the U / S / test split");
  add_common(gen, o);

  auto* train = app.add_subcommand("train", "Train a denoiser with the configured objective");
  add_common(train, o);

  std::string checkpoint;
  std::string samples_out;
  auto* smp = app.add_subcommand("sample", "Draw samples from a checkpoint");
  add_common(smp, o);
  smp->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  smp->add_option("--output", samples_out, "Samples CSV (default: next to the checkpoint)");
  std::optional<int> n_samples;
  std::optional<std::string> scheduler;
  smp->add_option("--n", n_samples, "Number of samples");
  smp->add_option("--scheduler", scheduler, "ddpm | ddim");

  std::string samples_in;
  std::string eval_prefix;
  auto* ev = app.add_subcommand("eval", "Score samples against the held-out normal set");
  add_common(ev, o);
  ev->add_option("--samples", samples_in, "Samples CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--output-prefix", eval_prefix, "Report path prefix (.csv/.txt appended)");

  std::optional<std::string> betas;
  std::optional<int> replicates;
  auto* sweep = app.add_subcommand("sweep-beta", "Train/sample/eval over a list of beta values");
  add_common(sweep, o);
  sweep->add_option("--betas", betas, "Comma-separated beta list");
  sweep->add_option("--replicates", replicates, "Seeds per beta");

  std::vector<std::string> methods = {"unsupervised", "supervised", "pu"};
  auto* report = app.add_subcommand("report", "Compare methods over seeds (mean ± std table)");
  add_common(report, o);
  report->add_option("--methods", methods, "Methods to compare")->delimiter(',');
  report->add_option("--replicates", replicates, "Seeds per method");

  CLI11_PARSE(app, argc, argv);

  try {
    pudm::RunConfig cfg = resolve(o);
    if (*gen) {
      pudm::cmd_gen_data(cfg);
      std::cout << "wrote " << pudm::data_dir(cfg) << '\n';
    } else if (*train) {
      std::cout << "run directory: " << pudm::cmd_train(cfg) << '\n';
    } else if (*smp) {
      if (n_samples) cfg.sampler.n_samples = *n_samples;
      if (scheduler) cfg.sampler.scheduler = pudm::parse_scheduler(*scheduler);
      std::cout << "wrote " << pudm::cmd_sample(cfg, checkpoint, samples_out) << '\n';
    } else if (*ev) {
      std::cout << pudm::cmd_eval(cfg, samples_in, eval_prefix).text();
    } else if (*sweep) {
      if (betas) cfg.sweep.betas = pudm::parse_double_list(*betas);
      if (replicates) cfg.sweep.replicates = *replicates;
      const auto rows = pudm::cmd_sweep_beta(cfg);
      int failed = 0;
      for (const auto& r : rows) {
        if (!r.ok) {
          ++failed;
          std::cerr << "beta=" << r.beta << " seed=" << r.seed << " failed: " << r.error << '\n';
        }
      }
      std::cout << "wrote " << (std::filesystem::path(cfg.out_dir) / "sweep.csv").string() << '\n';
      return failed == 0 ? 0 : 2;
    } else if (*report) {
      if (replicates) cfg.sweep.replicates = *replicates;
      std::vector<pudm::Method> ms;
      for (const auto& m : methods) ms.push_back(pudm::parse_method(m));
      const auto rows = pudm::cmd_report(cfg, ms);
      std::cout << "wrote " << (std::filesystem::path(cfg.out_dir) / "summary.md").string() << '\n';
      for (const auto& r : rows) {
        if (!r.ok) {
          std::cerr << pudm::to_string(r.method) << " seed=" << r.seed << " failed: " << r.error
                    << '\n';
        }
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
