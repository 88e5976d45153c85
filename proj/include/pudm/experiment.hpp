#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pudm/checkpoint.hpp"
#include "pudm/config.hpp"
#include "pudm/metrics.hpp"

namespace pudm {

// Row of the per-step training log (train_log.csv).
struct TrainLogRow {
  std::int64_t step = 0;
  StepDiagnostics diag;
  bool has_s_terms = true;  // false for the unsupervised method
};

std::string train_log_header();
std::string train_log_line(const TrainLogRow& row);

struct TrainResult {
  DenoiserParams params;
  AdamWState optimizer;
  std::vector<TrainLogRow> log;
  std::string run_dir;  // empty when nothing was written
};

// Cycles through a shuffled permutation of [0, n), reshuffling on exhaustion.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng rng);
  std::vector<std::size_t> next(std::size_t batch);

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng rng_;
};

Matrix gather_columns(const Matrix& points, const std::vector<std::size_t>& idx);

// Runs the configured objective on the split. If run_dir is non-empty,
// writes train_log.csv and checkpoints there. On divergence the last good
// parameters (end of the previous epoch) are written to
// checkpoint_last_good.bin before the NumericError propagates.
TrainResult train(const RunConfig& cfg, const PuDataset& split, const std::string& run_dir = "");

// Subcommand implementations. Each validates cfg before doing any work.
std::string data_dir(const RunConfig& cfg);
std::string run_dir(const RunConfig& cfg);

void cmd_gen_data(const RunConfig& cfg);
std::string cmd_train(const RunConfig& cfg);  // returns the run directory
std::string cmd_sample(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& output = "");
EvalReport cmd_eval(const RunConfig& cfg, const std::string& samples_path,
                    const std::string& output_prefix = "");

struct SweepRow {
  double beta = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport report;
};

// One train+sample+eval per (beta, replicate); failures are recorded and the
// remaining runs continue. Writes sweep.csv into out_dir.
std::vector<SweepRow> cmd_sweep_beta(const RunConfig& cfg);

struct ReportRow {
  Method method = Method::kUnsupervised;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  EvalReport report;
};

// Runs the given methods over cfg.sweep.replicates seeds and writes
// report_runs.csv, summary.csv and summary.md into out_dir.
std::vector<ReportRow> cmd_report(const RunConfig& cfg, const std::vector<Method>& methods);

// Samples file: "# k=v, ..." header then "x0,x1" rows. Also accepts the
// labeled dataset format (label column ignored).
struct SampleFile {
  KeyValues header;
  Matrix points;
};
void save_samples(const std::string& path, const Matrix& points, const KeyValues& header);
SampleFile load_samples(const std::string& path);

// Runs fn(i) for i in [0, n) on up to `threads` worker threads.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace pudm
