#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "pudm/data.hpp"
#include "pudm/pu_objective.hpp"
#include "pudm/samplers.hpp"

namespace pudm {

enum class Method { kUnsupervised, kSupervised, kPn, kPu };

Method parse_method(std::string_view s);
std::string_view to_string(Method m);

struct DataSpec {
  DatasetKind kind = DatasetKind::kTwoGaussians;
  std::uint64_t seed = 1234;
  int pool_size = 8000;
  SplitCounts counts;
  Geometry geometry;
};

struct ScheduleSpec {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
};

struct OptimSpec {
  double base_lr = 1e-3;
  int warmup_steps = 500;
  int epochs = 200;
  AdamWHyper adamw;
};

struct ObjectiveSpec {
  Method method = Method::kPu;
  PuConfig pu;
};

struct SamplerSpec {
  Scheduler scheduler = Scheduler::kDdpm;
  int n_samples = 2000;
  int ddim_steps = 50;
};

struct SweepSpec {
  std::vector<double> betas = {0.05, 0.091, 0.15, 0.2};
  int replicates = 3;
};

// Everything a run needs. Parsed from an INI-style file:
//
//   [section]
//   key = value      ; comments start with ';' or '#'
//
// Sections and keys are listed in README.md. Unknown sections or keys are
// errors. Only PUDM_OUT_DIR and PUDM_THREADS are read from the environment.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  int threads = 1;
  DataSpec data;
  MlpSpec model;
  ScheduleSpec schedule;
  OptimSpec optim;
  ObjectiveSpec objective;
  SamplerSpec sampler;
  int eval_projections = 128;
  SweepSpec sweep;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

RunConfig parse_config(std::istream& is, const std::string& source = "<config>");
RunConfig load_config(const std::string& path);
void apply_environment(RunConfig& cfg);

// Canonical INI text for cfg; parse_config(write_config(c)) == c.
std::string write_config(const RunConfig& cfg);

std::vector<double> parse_double_list(std::string_view s);

}  // namespace pudm
