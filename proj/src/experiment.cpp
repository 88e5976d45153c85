#include "pudm/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "pudm/errors.hpp"

namespace pudm {

namespace fs = std::filesystem;

namespace {

std::string shapes_of(const DenoiserParams& p) {
  std::ostringstream os;
  os << "data_dim=" << p.data_dim << " time_dim=" << p.time_dim << " layers=[";
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    os << (i ? ", " : "") << p.layers[i].weight.rows() << "x" << p.layers[i].weight.cols();
  }
  os << "]";
  return os.str();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  return os;
}

std::string header_line(const KeyValues& kv) {
  std::string s = "# ";
  for (std::size_t i = 0; i < kv.size(); ++i) {
    s += (i ? ", " : "") + kv[i].first + "=" + kv[i].second;
  }
  return s;
}

const std::string* find_key(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return &v;
  }
  return nullptr;
}

std::string run_label(const RunConfig& cfg) {
  std::string s(to_string(cfg.objective.method));
  if (cfg.objective.method == Method::kPu || cfg.objective.method == Method::kPn) {
    s += "_beta" + format_double(cfg.objective.pu.beta);
  }
  if (cfg.objective.method == Method::kPu) {
    s += "_" + std::string(to_string(cfg.objective.pu.correction));
  }
  return s + "_seed" + std::to_string(cfg.seed);
}

double mean(const std::vector<double>& xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / static_cast<double>(xs.size() - 1));
}

// Labels of U kept for the PN oracle baseline.
std::vector<std::size_t> normal_indices(const LabeledDataset& u) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (u.labels[i] == kNormal) idx.push_back(i);
  }
  return idx;
}

// train + sample + eval for one configuration.
EvalReport full_run(const RunConfig& cfg) {
  const std::string dir = cmd_train(cfg);
  const std::string samples = cmd_sample(cfg, (fs::path(dir) / "checkpoint_final.bin").string());
  return cmd_eval(cfg, samples);
}

}  // namespace

std::string train_log_header() { return "step,lr,L_S_plus,L_U_minus,L_S_minus,branch,objective"; }

std::string train_log_line(const TrainLogRow& r) {
  std::string s = std::to_string(r.step) + "," + format_double(r.diag.lr) + ",";
  if (r.has_s_terms) {
    s += format_double(r.diag.s_plus) + "," + format_double(r.diag.u_minus) + "," +
         format_double(r.diag.s_minus) + "," +
         (r.diag.branch == Branch::kPositive ? "positive" : "negative");
  } else {
    s += "," + format_double(r.diag.u_minus) + ",,";
  }
  return s + "," + format_double(r.diag.objective);
}

BatchSampler::BatchSampler(std::size_t n, Rng rng) : order_(n), rng_(std::move(rng)) {
  if (n == 0) throw std::invalid_argument("cannot sample batches from an empty set");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch) {
  std::vector<std::size_t> out;
  out.reserve(batch);
  while (out.size() < batch) {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

Matrix gather_columns(const Matrix& points, const std::vector<std::size_t>& idx) {
  Matrix out(points.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = points.col(static_cast<Eigen::Index>(idx[i]));
  }
  return out;
}

TrainResult train(const RunConfig& cfg, const PuDataset& split, const std::string& dir) {
  cfg.validate();
  const auto& pu = cfg.objective.pu;
  const Method method = cfg.objective.method;
  const NoiseSchedule sched =
      make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);

  const Matrix& u_points = split.u.points;
  const Matrix& s_points = split.s.points;
  if (u_points.cols() == 0) throw std::invalid_argument("U is empty");
  if (s_points.cols() == 0 && method != Method::kUnsupervised) {
    throw std::invalid_argument("S is empty");
  }
  const std::size_t steps_per_epoch =
      (static_cast<std::size_t>(u_points.cols()) + pu.batch_u - 1) / pu.batch_u;
  const std::int64_t total_steps = static_cast<std::int64_t>(steps_per_epoch) * cfg.optim.epochs;
  const LrSchedule lr_sched{cfg.optim.base_lr, cfg.optim.warmup_steps, total_steps};
  if (total_steps <= lr_sched.warmup_steps) {
    throw std::invalid_argument("total training steps (" + std::to_string(total_steps) +
                                ") must exceed warmup_steps");
  }

  TrainResult res;
  res.params = init_params(cfg.model, cfg.seed);
  res.optimizer = make_adamw(res.params, cfg.optim.adamw);

  // PN trains on the true normal part of U.
  std::vector<std::size_t> n_idx;
  Matrix n_points;
  if (method == Method::kPn) {
    n_idx = normal_indices(split.u);
    if (n_idx.empty()) throw std::invalid_argument("PN baseline needs normal points in U");
    n_points = gather_columns(u_points, n_idx);
  }
  const Matrix& primary = method == Method::kPn ? n_points : u_points;

  BatchSampler u_batches(static_cast<std::size_t>(primary.cols()), make_rng(cfg.seed, Stream::kBatchU));
  std::optional<BatchSampler> s_batches;
  if (method != Method::kUnsupervised) {
    s_batches.emplace(static_cast<std::size_t>(s_points.cols()), make_rng(cfg.seed, Stream::kBatchS));
  }
  Rng rng_u = make_rng(cfg.seed, Stream::kNoiseU);
  Rng rng_s = make_rng(cfg.seed, Stream::kNoiseS);

  std::ofstream log;
  if (!dir.empty()) {
    fs::create_directories(dir);
    log = open_out((fs::path(dir) / "train_log.csv").string());
    log << train_log_header() << '\n';
  }

  DenoiserParams last_good = res.params;
  double best_epoch = std::numeric_limits<double>::infinity();
  double epoch_acc = 0.0;
  std::int64_t step = 0;
  try {
    for (step = 1; step <= total_steps; ++step) {
      const double lr = lr_at(lr_sched, step);
      const Matrix ub = gather_columns(primary, u_batches.next(pu.batch_u));
      TrainLogRow row;
      row.step = step;
      switch (method) {
        case Method::kPu: {
          const Matrix sb = gather_columns(s_points, s_batches->next(pu.batch_s));
          row.diag = pu_gradient_step(ub, sb, res.params, res.optimizer, lr, pu, sched, rng_u, rng_s);
          break;
        }
        case Method::kUnsupervised: {
          auto obj = unsupervised_objective(res.params, ub, sched, rng_u, pu.mc_draws);
          if (!std::isfinite(obj.value) || !all_finite(obj.grad)) {
            throw NumericError("non-finite loss or gradient");
          }
          adamw_step(res.params, obj.grad, res.optimizer, lr);
          row.has_s_terms = false;
          row.diag.lr = lr;
          row.diag.u_minus = obj.value;
          row.diag.objective = obj.value;
          break;
        }
        case Method::kSupervised:
        case Method::kPn: {
          const Matrix sb = gather_columns(s_points, s_batches->next(pu.batch_s));
          auto u = loss_ell(res.params, ub, sched, rng_u, pu.mc_draws);
          auto s = loss_ell(res.params, sb, sched, rng_s, pu.mc_draws);
          row.diag.lr = lr;
          row.diag.u_minus = mean_bce(u, 0);
          row.diag.s_plus = mean_bce(s, 1);
          row.diag.s_minus = mean_bce(s, 0);
          auto obj = method == Method::kSupervised ? supervised_objective(res.params, u, s)
                                                   : pn_objective(res.params, s, u, pu.beta);
          if (!std::isfinite(obj.value) || !all_finite(obj.grad)) {
            throw NumericError("non-finite loss or gradient");
          }
          adamw_step(res.params, obj.grad, res.optimizer, lr);
          row.diag.objective = obj.value;
          break;
        }
      }
      epoch_acc += row.diag.objective;
      if (log.is_open()) log << train_log_line(row) << '\n';
      res.log.push_back(row);

      if (step % static_cast<std::int64_t>(steps_per_epoch) == 0) {
        if (!all_finite(res.params)) throw NumericError("parameters became non-finite");
        last_good = res.params;
        const double epoch_mean = epoch_acc / static_cast<double>(steps_per_epoch);
        epoch_acc = 0.0;
        if (!dir.empty() && epoch_mean < best_epoch) {
          save_checkpoint((fs::path(dir) / "checkpoint_best.bin").string(), res.params, nullptr);
        }
        best_epoch = std::min(best_epoch, epoch_mean);
      }
    }
  } catch (const NumericError& e) {
    if (!dir.empty()) {
      if (log.is_open()) log.flush();
      save_checkpoint((fs::path(dir) / "checkpoint_last_good.bin").string(), last_good, nullptr);
    }
    throw NumericError(std::string(e.what()) + " at training step " + std::to_string(step));
  }
  if (!dir.empty()) {
    save_checkpoint((fs::path(dir) / "checkpoint_final.bin").string(), res.params, &res.optimizer);
    res.run_dir = dir;
  }
  return res;
}

std::string data_dir(const RunConfig& cfg) { return (fs::path(cfg.out_dir) / "data").string(); }

std::string run_dir(const RunConfig& cfg) {
  return (fs::path(cfg.out_dir) / "runs" / run_label(cfg)).string();
}

void cmd_gen_data(const RunConfig& cfg) {
  cfg.validate();
  const LabeledDataset pool =
      generate(cfg.data.kind, cfg.data.pool_size, cfg.data.seed, cfg.data.geometry);
  const PuDataset split = make_pu_split(pool, cfg.data.counts, cfg.data.seed);
  save_pu_split(data_dir(cfg), split);
}

std::string cmd_train(const RunConfig& cfg) {
  cfg.validate();
  const PuDataset split = load_pu_split(data_dir(cfg));
  if (split.u.kind != cfg.data.kind) {
    throw std::invalid_argument("dataset on disk is " + std::string(to_string(split.u.kind)) +
                                ", config says " + std::string(to_string(cfg.data.kind)));
  }
  const std::string dir = run_dir(cfg);
  fs::create_directories(dir);
  {
    auto os = open_out((fs::path(dir) / "config.ini").string());
    os << write_config(cfg);
  }
  train(cfg, split, dir);
  return dir;
}

std::string cmd_sample(const RunConfig& cfg, const std::string& checkpoint,
                       const std::string& output) {
  cfg.validate();
  const Checkpoint ck = load_checkpoint(checkpoint);
  const DenoiserParams expected = init_params(cfg.model, 0);
  if (!ck.params.same_shape(expected)) {
    throw std::invalid_argument("checkpoint " + checkpoint + " has " + shapes_of(ck.params) +
                                " but config expects " + shapes_of(expected));
  }
  const NoiseSchedule sched =
      make_schedule(cfg.schedule.steps, cfg.schedule.beta_start, cfg.schedule.beta_end);
  SampleRunSpec spec;
  spec.n_samples = cfg.sampler.n_samples;
  spec.scheduler = cfg.sampler.scheduler;
  spec.ddim_steps = cfg.sampler.ddim_steps;
  spec.seed = cfg.seed;
  const Matrix x = sample(ck.params, sched, spec);
  const int steps = spec.scheduler == Scheduler::kDdpm ? sched.steps() : spec.ddim_steps;
  const KeyValues header = {{"kind", std::string(to_string(cfg.data.kind))},
                            {"seed", std::to_string(spec.seed)},
                            {"scheduler", std::string(to_string(spec.scheduler))},
                            {"steps", std::to_string(steps)},
                            {"n", std::to_string(spec.n_samples)},
                            {"checkpoint", fs::path(checkpoint).filename().string()}};
  const std::string path =
      output.empty() ? (fs::path(checkpoint).parent_path() / ("samples_" +
                        std::string(to_string(spec.scheduler)) + ".csv")).string()
                     : output;
  save_samples(path, x, header);
  return path;
}

EvalReport cmd_eval(const RunConfig& cfg, const std::string& samples_path,
                    const std::string& output_prefix) {
  cfg.validate();
  const PuDataset split = load_pu_split(data_dir(cfg));
  if (split.u.kind != cfg.data.kind) {
    throw std::invalid_argument("config dataset kind '" + std::string(to_string(cfg.data.kind)) +
                                "' does not match the stored split '" +
                                std::string(to_string(split.u.kind)) + "'");
  }
  const SampleFile samples = load_samples(samples_path);
  if (const auto* kind = find_key(samples.header, "kind")) {
    if (*kind != to_string(split.u.kind)) {
      throw std::invalid_argument("samples are from dataset kind '" + *kind +
                                  "' but the test set is '" +
                                  std::string(to_string(split.u.kind)) + "'");
    }
  }
  if (samples.points.rows() != split.test_normal.points.rows()) {
    throw std::invalid_argument("sample dimension does not match the dataset");
  }
  // Match the sample count to the test count by subsampling the larger set.
  Matrix gen = samples.points;
  Matrix test = split.test_normal.points;
  Rng rng = make_rng(cfg.seed, Stream::kSubsample);
  auto subsample = [&rng](const Matrix& m, Eigen::Index n) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(m.cols()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());
    return gather_columns(m, idx);
  };
  if (gen.cols() > test.cols()) gen = subsample(gen, test.cols());
  if (test.cols() > gen.cols()) test = subsample(test, gen.cols());

  EvalReport rep;
  rep.kind = split.u.kind;
  rep.n_samples = static_cast<std::size_t>(gen.cols());
  rep.non_sensitive_rate = non_sensitive_rate(gen, split.u.kind, split.u.geometry);
  rep.sw_distance = sliced_wasserstein(gen, test, cfg.eval_projections, cfg.seed);
  rep.run = run_label(cfg);

  const std::string prefix =
      output_prefix.empty()
          ? (fs::path(samples_path).parent_path() / fs::path(samples_path).stem()).string() + "_eval"
          : output_prefix;
  {
    auto os = open_out(prefix + ".csv");
    os << EvalReport::csv_header() << '\n' << rep.csv_row() << '\n';
  }
  {
    auto os = open_out(prefix + ".txt");
    os << rep.text();
  }
  return rep;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<SweepRow> cmd_sweep_beta(const RunConfig& cfg) {
  cfg.validate();
  load_pu_split(data_dir(cfg));  // fail fast if the data is missing
  std::vector<SweepRow> rows;
  for (double beta : cfg.sweep.betas) {
    for (int r = 0; r < cfg.sweep.replicates; ++r) {
      SweepRow row;
      row.beta = beta;
      row.seed = cfg.seed + static_cast<std::uint64_t>(r);
      rows.push_back(row);
    }
  }
  parallel_for(rows.size(), cfg.threads, [&](std::size_t i) {
    RunConfig c = cfg;
    c.objective.method = Method::kPu;
    c.objective.pu.beta = rows[i].beta;
    c.seed = rows[i].seed;
    try {
      rows[i].report = full_run(c);
      rows[i].ok = true;
    } catch (const std::exception& e) {
      rows[i].error = e.what();
    }
  });
  auto os = open_out((fs::path(cfg.out_dir) / "sweep.csv").string());
  os << "beta,seed,status,non_sensitive_rate,sw_distance\n";
  for (const auto& r : rows) {
    os << format_double(r.beta) << ',' << r.seed << ',';
    if (r.ok) {
      os << "ok," << format_double(r.report.non_sensitive_rate) << ','
         << format_double(r.report.sw_distance) << '\n';
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      os << "failed: " << msg << ",,\n";
    }
  }
  return rows;
}

std::vector<ReportRow> cmd_report(const RunConfig& cfg, const std::vector<Method>& methods) {
  cfg.validate();
  if (methods.empty()) throw std::invalid_argument("no methods to report");
  load_pu_split(data_dir(cfg));  // fail fast if the data is missing
  std::vector<ReportRow> rows;
  for (Method m : methods) {
    for (int r = 0; r < cfg.sweep.replicates; ++r) {
      ReportRow row;
      row.method = m;
      row.seed = cfg.seed + static_cast<std::uint64_t>(r);
      rows.push_back(row);
    }
  }
  parallel_for(rows.size(), cfg.threads, [&](std::size_t i) {
    RunConfig c = cfg;
    c.objective.method = rows[i].method;
    c.seed = rows[i].seed;
    try {
      rows[i].report = full_run(c);
      rows[i].ok = true;
    } catch (const std::exception& e) {
      rows[i].error = e.what();
    }
  });

  {
    auto os = open_out((fs::path(cfg.out_dir) / "report_runs.csv").string());
    os << "method,seed,status,non_sensitive_rate,sw_distance\n";
    for (const auto& r : rows) {
      os << to_string(r.method) << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
      if (r.ok) {
        os << format_double(r.report.non_sensitive_rate) << ','
           << format_double(r.report.sw_distance);
      } else {
        os << ',';
      }
      os << '\n';
    }
  }
  auto csv = open_out((fs::path(cfg.out_dir) / "summary.csv").string());
  auto md = open_out((fs::path(cfg.out_dir) / "summary.md").string());
  csv << "method,runs,rate_mean,rate_std,sw_mean,sw_std\n";
  md << "| Method | Non-sensitive rate | Sliced Wasserstein |\n|---|---:|---:|\n";
  for (Method m : methods) {
    std::vector<double> rate;
    std::vector<double> sw;
    for (const auto& r : rows) {
      if (r.method == m && r.ok) {
        rate.push_back(r.report.non_sensitive_rate);
        sw.push_back(r.report.sw_distance);
      }
    }
    if (rate.empty()) {
      csv << to_string(m) << ",0,,,,\n";
      md << "| " << to_string(m) << " | failed | failed |\n";
      continue;
    }
    csv << to_string(m) << ',' << rate.size() << ',' << format_double(mean(rate)) << ','
        << format_double(stddev(rate)) << ',' << format_double(mean(sw)) << ','
        << format_double(stddev(sw)) << '\n';
    char buf[160];
    std::snprintf(buf, sizeof(buf), "| %s | %.3f ± %.3f | %.4f ± %.4f |\n",
                  std::string(to_string(m)).c_str(), mean(rate), stddev(rate), mean(sw), stddev(sw));
    md << buf;
  }
  return rows;
}

void save_samples(const std::string& path, const Matrix& points, const KeyValues& header) {
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  auto os = open_out(path);
  os << header_line(header) << '\n';
  for (Eigen::Index d = 0; d < points.rows(); ++d) os << (d ? "," : "") << 'x' << d;
  os << '\n';
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    for (Eigen::Index d = 0; d < points.rows(); ++d) {
      os << (d ? "," : "") << format_double(points(d, i));
    }
    os << '\n';
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

SampleFile load_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  SampleFile out;
  std::string line;
  int line_no = 1;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) {
    throw ParseError(path, line_no, "missing '# ' header");
  }
  std::istringstream hs(line.substr(2));
  std::string field;
  while (std::getline(hs, field, ',')) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw ParseError(path, line_no, "header field without '='");
    auto key = field.substr(0, eq);
    key.erase(0, key.find_first_not_of(' '));
    out.header.emplace_back(key, field.substr(eq + 1));
  }
  ++line_no;
  if (!std::getline(is, line)) throw ParseError(path, line_no, "missing column header");
  std::size_t dims = 0;
  bool labeled = false;
  {
    std::istringstream cs(line);
    std::string col;
    while (std::getline(cs, col, ',')) {
      if (col == "label") {
        labeled = true;
      } else {
        ++dims;
      }
    }
  }
  if (dims == 0) throw ParseError(path, line_no, "no coordinate columns");
  std::vector<double> xs;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream rs(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(rs, cell, ',')) {
      if (c < dims) {
        try {
          xs.push_back(parse_double(cell));
        } catch (const std::invalid_argument& e) {
          throw ParseError(path, line_no, e.what());
        }
      }
      ++c;
    }
    if (c != dims + (labeled ? 1 : 0)) throw ParseError(path, line_no, "wrong column count");
  }
  const auto n = static_cast<Eigen::Index>(xs.size() / dims);
  if (const auto* declared = find_key(out.header, "n");
      declared != nullptr && *declared != std::to_string(n)) {
    throw ParseError(path, line_no, "expected " + *declared + " rows, found " + std::to_string(n));
  }
  if (n == 0) throw ParseError(path, line_no, "no samples");
  out.points = Eigen::Map<const Matrix>(xs.data(), static_cast<Eigen::Index>(dims), n);
  return out;
}

}  // namespace pudm
