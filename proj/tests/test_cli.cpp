#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "pudm/config.hpp"
#include "pudm/errors.hpp"
#include "pudm/experiment.hpp"

using namespace pudm;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), {});
}

// Small enough that a full train + sample + eval takes well under a second.
RunConfig tiny_config(const std::string& name) {
  RunConfig c;
  c.out_dir = (fs::temp_directory_path() / ("pudm_cli_" + name)).string();
  fs::remove_all(c.out_dir);
  c.data.pool_size = 600;
  c.data.counts = SplitCounts{150, 15, 20, 100};
  c.model.hidden_layers = 2;
  c.model.hidden_width = 16;
  c.model.time_dim = 8;
  c.schedule.steps = 100;
  c.optim.epochs = 8;
  c.optim.warmup_steps = 5;
  c.objective.pu.batch_u = 32;
  c.objective.pu.batch_s = 8;
  c.sampler.n_samples = 150;
  c.sampler.ddim_steps = 10;
  c.eval_projections = 16;
  return c;
}

std::vector<std::vector<std::string>> read_rows(const fs::path& p) {
  std::ifstream is(p);
  std::string line;
  std::getline(is, line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    rows.push_back(cols);
  }
  return rows;
}

}  // namespace

TEST_CASE("config parsing") {
  std::istringstream in(R"(
; comment
[run]
seed = 7
out_dir = results

[data]
kind = two_moons
n_s = 150

[model]
hidden_width = 64

[optim]
base_lr = 2e-4
batch_u = 64

[objective]
method = supervised
beta = 0.2
correction = abs

[sampler]
scheduler = ddim

[sweep]
betas = 0.05, 0.1
)");
  const RunConfig c = parse_config(in);
  CHECK(c.seed == 7);
  CHECK(c.out_dir == "results");
  CHECK(c.data.kind == DatasetKind::kTwoMoons);
  CHECK(c.data.counts.s == 150);
  CHECK(c.model.hidden_width == 64);
  CHECK(c.optim.base_lr == 2e-4);
  CHECK(c.objective.pu.batch_u == 64);
  CHECK(c.objective.method == Method::kSupervised);
  CHECK(c.objective.pu.beta == 0.2);
  CHECK(c.objective.pu.correction == Correction::kAbs);
  CHECK(c.sampler.scheduler == Scheduler::kDdim);
  CHECK(c.sweep.betas == std::vector<double>{0.05, 0.1});
  CHECK(c.data.counts.u_normal == 2000);

  std::istringstream again(write_config(c));
  const RunConfig d = parse_config(again);
  CHECK(write_config(d) == write_config(c));
}

TEST_CASE("config rejects unknown keys and bad values") {
  auto parse = [](const std::string& text) {
    std::istringstream in(text);
    return parse_config(in, "test.ini");
  };
  CHECK_THROWS_AS(parse("[run]\nsed = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[runs]\nseed = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[objective]\nbeta = 1.5\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[objective]\nmethod = gan\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[optim]\nepochs = many\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse("[sampler]\nn_samples = 0\n"), std::invalid_argument);
  try {
    parse("[model]\nhidden_width = -3\n");
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("hidden_width") != std::string::npos);
  }
}

TEST_CASE("environment overrides only output dir and threads") {
  RunConfig c;
  ::setenv("PUDM_OUT_DIR", "/tmp/elsewhere", 1);
  ::setenv("PUDM_THREADS", "3", 1);
  apply_environment(c);
  ::unsetenv("PUDM_OUT_DIR");
  ::unsetenv("PUDM_THREADS");
  CHECK(c.out_dir == "/tmp/elsewhere");
  CHECK(c.threads == 3);
}

TEST_CASE("gen-data writes a byte-stable split") {
  RunConfig c = tiny_config("gen");
  cmd_gen_data(c);
  const fs::path d = data_dir(c);
  std::vector<std::string> first;
  for (const char* f : {"u.csv", "s.csv", "test.csv", "manifest.txt"}) {
    REQUIRE(fs::exists(d / f));
    first.push_back(read_file(d / f));
  }
  cmd_gen_data(c);
  int i = 0;
  for (const char* f : {"u.csv", "s.csv", "test.csv", "manifest.txt"}) CHECK(read_file(d / f) == first[i++]);

  c.data.counts.u_normal = 250;
  try {
    cmd_gen_data(c);
    FAIL("expected shortfall");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("need 350, have 300 (short by 50)") != std::string::npos);
  }
  fs::remove_all(c.out_dir);
}

TEST_CASE("batch sampler covers every index once per pass") {
  BatchSampler b(10, Rng(3));
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    for (auto k : b.next(4)) seen.insert(k);
  }
  for (std::size_t k = 0; k < 10; ++k) CHECK(seen.count(k) == 2);
}

TEST_CASE("parallel_for visits every index") {
  for (int threads : {1, 3}) {
    std::vector<int> hits(17, 0);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
}

TEST_CASE("train, sample and eval end to end") {
  RunConfig c = tiny_config("e2e");
  cmd_gen_data(c);

  const std::string dir = cmd_train(c);
  for (const char* f : {"train_log.csv", "checkpoint_final.bin", "checkpoint_best.bin", "config.ini"}) {
    CHECK(fs::exists(fs::path(dir) / f));
  }
  CHECK(read_file(fs::path(dir) / "train_log.csv").rfind(train_log_header() + "\n", 0) == 0);
  const auto log = read_rows(fs::path(dir) / "train_log.csv");
  CHECK(log.size() == 8 * 6);  // ceil(165 / 32) steps per epoch
  for (const auto& r : log) {
    REQUIRE(r.size() == 7);
    const double deficit = std::stod(r[3]) - c.objective.pu.beta * std::stod(r[4]);
    CHECK(r[5] == (deficit >= 0 ? "positive" : "negative"));
  }

  SUBCASE("sampling is deterministic and both schedulers give finite output") {
    const std::string ck = (fs::path(dir) / "checkpoint_final.bin").string();
    const std::string a = cmd_sample(c, ck, (fs::path(dir) / "a.csv").string());
    const std::string b = cmd_sample(c, ck, (fs::path(dir) / "b.csv").string());
    CHECK(read_file(a) == read_file(b));
    const SampleFile sf = load_samples(a);
    CHECK(sf.points.cols() == 150);
    CHECK(sf.points.allFinite());
    c.sampler.scheduler = Scheduler::kDdim;
    const std::string di = cmd_sample(c, ck);
    CHECK(fs::path(di).filename() == "samples_ddim.csv");
    CHECK(load_samples(di).points.allFinite());
    c.sampler.n_samples = 0;
    CHECK_THROWS_AS(cmd_sample(c, ck), std::invalid_argument);
  }
  SUBCASE("checkpoint shape mismatch is named") {
    RunConfig other = c;
    other.model.hidden_width = 12;
    try {
      cmd_sample(other, (fs::path(dir) / "checkpoint_final.bin").string());
      FAIL("expected mismatch");
    } catch (const std::invalid_argument& e) {
      const std::string msg = e.what();
      CHECK(msg.find("16x10") != std::string::npos);
      CHECK(msg.find("12x10") != std::string::npos);
    }
  }
  SUBCASE("eval writes a report and handles reference sets") {
    const std::string s = cmd_sample(c, (fs::path(dir) / "checkpoint_final.bin").string());
    const EvalReport r = cmd_eval(c, s);
    CHECK(r.n_samples == 100);
    CHECK(fs::exists(fs::path(dir) / "samples_ddpm_eval.csv"));
    CHECK(fs::exists(fs::path(dir) / "samples_ddpm_eval.txt"));

    const EvalReport self = cmd_eval(c, (fs::path(data_dir(c)) / "test.csv").string(),
                                     (fs::path(c.out_dir) / "self").string());
    CHECK(self.non_sensitive_rate >= 0.99);
    CHECK(self.sw_distance == 0.0);
    const EvalReport sens = cmd_eval(c, (fs::path(data_dir(c)) / "s.csv").string(),
                                     (fs::path(c.out_dir) / "sens").string());
    CHECK(sens.non_sensitive_rate <= 0.01);

    RunConfig moons = c;
    moons.data.kind = DatasetKind::kTwoMoons;
    CHECK_THROWS_AS(cmd_eval(moons, s), std::invalid_argument);
  }
  fs::remove_all(c.out_dir);
}

TEST_CASE("pu with beta 0 reproduces the unsupervised trace") {
  RunConfig c = tiny_config("beta0");
  cmd_gen_data(c);
  c.objective.method = Method::kUnsupervised;
  const auto un = read_rows(fs::path(cmd_train(c)) / "train_log.csv");
  c.objective.method = Method::kPu;
  c.objective.pu.beta = 0.0;
  const std::string pu_dir = cmd_train(c);
  const auto pu = read_rows(fs::path(pu_dir) / "train_log.csv");
  REQUIRE(un.size() == pu.size());
  for (std::size_t i = 0; i < un.size(); ++i) {
    CHECK(un[i][1] == pu[i][1]);  // lr
    CHECK(un[i][3] == pu[i][3]);  // L_U_minus
    CHECK(un[i][6] == pu[i][6]);  // objective
  }
  c.objective.method = Method::kUnsupervised;
  CHECK(read_file(fs::path(run_dir(c)) / "checkpoint_final.bin") ==
        read_file(fs::path(pu_dir) / "checkpoint_final.bin"));
  fs::remove_all(c.out_dir);
}

TEST_CASE("every method trains") {
  RunConfig c = tiny_config("methods");
  cmd_gen_data(c);
  for (auto m : {Method::kSupervised, Method::kPn}) {
    c.objective.method = m;
    CHECK(fs::exists(fs::path(cmd_train(c)) / "checkpoint_final.bin"));
  }
  c.objective.method = Method::kPu;
  c.objective.pu.correction = Correction::kAbs;
  CHECK(fs::path(cmd_train(c)).filename() == "pu_beta0.1_abs_seed1");
  fs::remove_all(c.out_dir);
}

TEST_CASE("divergence keeps the last good checkpoint") {
  RunConfig c = tiny_config("diverge");
  cmd_gen_data(c);
  PuDataset split = load_pu_split(data_dir(c));
  split.u.points(0, 0) = std::numeric_limits<double>::quiet_NaN();
  const std::string dir = (fs::path(c.out_dir) / "bad").string();
  try {
    train(c, split, dir);
    FAIL("expected divergence");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("at training step") != std::string::npos);
  }
  CHECK(fs::exists(fs::path(dir) / "checkpoint_last_good.bin"));
  CHECK_FALSE(fs::exists(fs::path(dir) / "checkpoint_final.bin"));
  fs::remove_all(c.out_dir);
}

TEST_CASE("sweep and report tables") {
  RunConfig c = tiny_config("sweep");
  c.optim.epochs = 2;
  c.schedule.steps = 20;
  c.sampler.n_samples = 50;
  cmd_gen_data(c);

  c.sweep.betas = {0.1};
  c.sweep.replicates = 1;
  CHECK(cmd_sweep_beta(c).size() == 1);

  c.sweep.betas = {0.05, 0.2};
  c.sweep.replicates = 2;
  const auto rows = cmd_sweep_beta(c);
  CHECK(rows.size() == 4);
  for (const auto& r : rows) CHECK(r.ok);
  const auto table = read_rows(fs::path(c.out_dir) / "sweep.csv");
  REQUIRE(table.size() == 4);
  CHECK(table[0][0] == "0.05");
  CHECK(table[3][1] == "2");
  CHECK(table[3][2] == "ok");

  const auto rep = cmd_report(c, {Method::kUnsupervised, Method::kPu});
  CHECK(rep.size() == 4);
  const std::string md = read_file(fs::path(c.out_dir) / "summary.md");
  CHECK(md.find("| unsupervised |") != std::string::npos);
  CHECK(md.find("±") != std::string::npos);
  CHECK(read_rows(fs::path(c.out_dir) / "summary.csv").size() == 2);

  RunConfig missing = c;
  missing.out_dir = (fs::temp_directory_path() / "pudm_cli_nothing_here").string();
  CHECK_THROWS(cmd_sweep_beta(missing));
  fs::remove_all(c.out_dir);
}
