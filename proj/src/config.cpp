#include "pudm/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "pudm/errors.hpp"

namespace pudm {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"run", {"seed", "out_dir", "threads"}},
      {"data",
       {"kind", "seed", "pool_size", "n_u_normal", "n_u_sensitive", "n_s", "n_test",
        "center_offset", "cluster_std", "moon_noise", "checker_cells", "checker_extent"}},
      {"model", {"hidden_layers", "hidden_width", "time_embed_dim"}},
      {"schedule", {"steps", "beta_start", "beta_end"}},
      {"optim",
       {"base_lr", "warmup_steps", "epochs", "batch_u", "batch_s", "weight_decay", "adam_beta1",
        "adam_beta2", "adam_eps"}},
      {"objective", {"method", "beta", "correction", "mc_draws"}},
      {"sampler", {"scheduler", "n_samples", "ddim_steps"}},
      {"eval", {"n_proj"}},
      {"sweep", {"betas", "replicates"}},
  };
  return keys;
}

template <typename T>
T read_value(const pt::ptree& tree, const std::string& path, T fallback,
             const std::string& source) {
  const auto node = tree.get_child_optional(pt::ptree::path_type(path, '.'));
  if (!node) return fallback;
  const std::string raw = node->data();
  try {
    if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else if constexpr (std::is_same_v<T, double>) {
      return parse_double(raw);
    } else {
      std::size_t used = 0;
      const long long v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument("trailing characters");
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) throw std::invalid_argument("negative value");
      }
      return static_cast<T>(v);
    }
  } catch (const std::exception&) {
    throw std::invalid_argument(source + ": bad value for " + path + ": '" + raw + "'");
  }
}

std::string join(const std::vector<double>& xs) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + format_double(xs[i]);
  return s;
}

}  // namespace

Method parse_method(std::string_view s) {
  if (s == "unsupervised") return Method::kUnsupervised;
  if (s == "supervised") return Method::kSupervised;
  if (s == "pn") return Method::kPn;
  if (s == "pu") return Method::kPu;
  throw std::invalid_argument("unknown method '" + std::string(s) +
                              "' (expected unsupervised|supervised|pn|pu)");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kUnsupervised: return "unsupervised";
    case Method::kSupervised: return "supervised";
    case Method::kPn: return "pn";
    case Method::kPu: return "pu";
  }
  return "unknown";
}

std::vector<double> parse_double_list(std::string_view s) {
  std::vector<double> out;
  std::string item;
  std::istringstream is{std::string(s)};
  while (std::getline(is, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    const auto e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw std::invalid_argument("empty entry in list");
    out.push_back(parse_double(item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw std::invalid_argument("empty list");
  return out;
}

void RunConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid config: ") + what);
  };
  require(!out_dir.empty(), "run.out_dir must be set");
  require(threads >= 1, "run.threads must be >= 1");
  require(data.pool_size >= 2, "data.pool_size must be >= 2");
  require(data.counts.u_normal >= 0 && data.counts.u_sensitive >= 0, "data U counts must be >= 0");
  require(data.counts.u_normal + data.counts.u_sensitive > 0, "U must be non-empty");
  require(data.counts.s > 0, "data.n_s must be > 0");
  require(data.counts.test > 0, "data.n_test must be > 0");
  data.geometry.validate();
  require(model.hidden_layers >= 0, "model.hidden_layers must be >= 0");
  require(model.hidden_width > 0, "model.hidden_width must be > 0");
  require(model.time_dim > 0 && model.time_dim % 2 == 0, "model.time_embed_dim must be even > 0");
  require(model.data_dim == 2, "model data_dim is fixed to 2");
  require(schedule.steps >= 1, "schedule.steps must be >= 1");
  require(schedule.beta_start > 0 && schedule.beta_start <= schedule.beta_end &&
              schedule.beta_end < 1,
          "need 0 < schedule.beta_start <= schedule.beta_end < 1");
  require(optim.base_lr > 0, "optim.base_lr must be > 0");
  require(optim.warmup_steps >= 0, "optim.warmup_steps must be >= 0");
  require(optim.epochs >= 1, "optim.epochs must be >= 1");
  require(optim.adamw.beta1 >= 0 && optim.adamw.beta1 < 1, "optim.adam_beta1 must be in [0,1)");
  require(optim.adamw.beta2 >= 0 && optim.adamw.beta2 < 1, "optim.adam_beta2 must be in [0,1)");
  require(optim.adamw.eps > 0, "optim.adam_eps must be > 0");
  require(optim.adamw.weight_decay >= 0, "optim.weight_decay must be >= 0");
  objective.pu.validate();
  require(sampler.n_samples > 0, "sampler.n_samples must be > 0");
  require(sampler.ddim_steps >= 1 && sampler.ddim_steps <= schedule.steps,
          "sampler.ddim_steps must lie in [1, schedule.steps]");
  require(eval_projections >= 1, "eval.n_proj must be >= 1");
  require(!sweep.betas.empty(), "sweep.betas must be non-empty");
  for (double b : sweep.betas) require(b >= 0 && b <= 1, "sweep.betas entries must lie in [0,1]");
  require(sweep.replicates >= 1, "sweep.replicates must be >= 1");
}

RunConfig parse_config(std::istream& is, const std::string& source) {
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(source, static_cast<int>(e.line()), e.message());
  }
  const auto& known = known_keys();
  for (const auto& [section, body] : tree) {
    const auto it = known.find(section);
    if (it == known.end() || body.empty()) {
      throw std::invalid_argument(source + ": unknown section or top-level key '" + section + "'");
    }
    for (const auto& [key, value] : body) {
      if (!it->second.count(key)) {
        throw std::invalid_argument(source + ": unknown key '" + section + "." + key + "'");
      }
    }
  }

  RunConfig c;
  auto get = [&](const std::string& path, auto fallback) {
    return read_value(tree, path, fallback, source);
  };
  c.seed = get("run.seed", c.seed);
  c.out_dir = get("run.out_dir", c.out_dir);
  c.threads = get("run.threads", c.threads);

  try {
    c.data.kind = parse_kind(get("data.kind", std::string(to_string(c.data.kind))));
    c.objective.method = parse_method(get("objective.method", std::string(to_string(c.objective.method))));
    c.objective.pu.correction =
        parse_correction(get("objective.correction", std::string(to_string(c.objective.pu.correction))));
    c.sampler.scheduler =
        parse_scheduler(get("sampler.scheduler", std::string(to_string(c.sampler.scheduler))));
    if (tree.get_optional<std::string>("sweep.betas")) {
      c.sweep.betas = parse_double_list(tree.get<std::string>("sweep.betas"));
    }
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  c.data.seed = get("data.seed", c.data.seed);
  c.data.pool_size = get("data.pool_size", c.data.pool_size);
  c.data.counts.u_normal = get("data.n_u_normal", c.data.counts.u_normal);
  c.data.counts.u_sensitive = get("data.n_u_sensitive", c.data.counts.u_sensitive);
  c.data.counts.s = get("data.n_s", c.data.counts.s);
  c.data.counts.test = get("data.n_test", c.data.counts.test);
  c.data.geometry.center_offset = get("data.center_offset", c.data.geometry.center_offset);
  c.data.geometry.cluster_std = get("data.cluster_std", c.data.geometry.cluster_std);
  c.data.geometry.moon_noise = get("data.moon_noise", c.data.geometry.moon_noise);
  c.data.geometry.checker_cells = get("data.checker_cells", c.data.geometry.checker_cells);
  c.data.geometry.checker_extent = get("data.checker_extent", c.data.geometry.checker_extent);
  c.model.hidden_layers = get("model.hidden_layers", c.model.hidden_layers);
  c.model.hidden_width = get("model.hidden_width", c.model.hidden_width);
  c.model.time_dim = get("model.time_embed_dim", c.model.time_dim);
  c.schedule.steps = get("schedule.steps", c.schedule.steps);
  c.schedule.beta_start = get("schedule.beta_start", c.schedule.beta_start);
  c.schedule.beta_end = get("schedule.beta_end", c.schedule.beta_end);
  c.optim.base_lr = get("optim.base_lr", c.optim.base_lr);
  c.optim.warmup_steps = get("optim.warmup_steps", c.optim.warmup_steps);
  c.optim.epochs = get("optim.epochs", c.optim.epochs);
  c.objective.pu.batch_u = get("optim.batch_u", c.objective.pu.batch_u);
  c.objective.pu.batch_s = get("optim.batch_s", c.objective.pu.batch_s);
  c.optim.adamw.weight_decay = get("optim.weight_decay", c.optim.adamw.weight_decay);
  c.optim.adamw.beta1 = get("optim.adam_beta1", c.optim.adamw.beta1);
  c.optim.adamw.beta2 = get("optim.adam_beta2", c.optim.adamw.beta2);
  c.optim.adamw.eps = get("optim.adam_eps", c.optim.adamw.eps);
  c.objective.pu.beta = get("objective.beta", c.objective.pu.beta);
  c.objective.pu.mc_draws = get("objective.mc_draws", c.objective.pu.mc_draws);
  c.sampler.n_samples = get("sampler.n_samples", c.sampler.n_samples);
  c.sampler.ddim_steps = get("sampler.ddim_steps", c.sampler.ddim_steps);
  c.eval_projections = get("eval.n_proj", c.eval_projections);
  c.sweep.replicates = get("sweep.replicates", c.sweep.replicates);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(source + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config " + path);
  return parse_config(is, path);
}

void apply_environment(RunConfig& cfg) {
  if (const char* out = std::getenv("PUDM_OUT_DIR"); out != nullptr && *out != '\0') {
    cfg.out_dir = out;
  }
  if (const char* th = std::getenv("PUDM_THREADS"); th != nullptr && *th != '\0') {
    try {
      cfg.threads = std::stoi(th);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("PUDM_THREADS is not an integer: ") + th);
    }
  }
}

std::string write_config(const RunConfig& c) {
  std::ostringstream os;
  os << "[run]\nseed = " << c.seed << "\nout_dir = " << c.out_dir << "\nthreads = " << c.threads
     << "\n\n[data]\nkind = " << to_string(c.data.kind) << "\nseed = " << c.data.seed
     << "\npool_size = " << c.data.pool_size << "\nn_u_normal = " << c.data.counts.u_normal
     << "\nn_u_sensitive = " << c.data.counts.u_sensitive << "\nn_s = " << c.data.counts.s
     << "\nn_test = " << c.data.counts.test
     << "\ncenter_offset = " << format_double(c.data.geometry.center_offset)
     << "\ncluster_std = " << format_double(c.data.geometry.cluster_std)
     << "\nmoon_noise = " << format_double(c.data.geometry.moon_noise)
     << "\nchecker_cells = " << c.data.geometry.checker_cells
     << "\nchecker_extent = " << format_double(c.data.geometry.checker_extent)
     << "\n\n[model]\nhidden_layers = " << c.model.hidden_layers
     << "\nhidden_width = " << c.model.hidden_width << "\ntime_embed_dim = " << c.model.time_dim
     << "\n\n[schedule]\nsteps = " << c.schedule.steps
     << "\nbeta_start = " << format_double(c.schedule.beta_start)
     << "\nbeta_end = " << format_double(c.schedule.beta_end)
     << "\n\n[optim]\nbase_lr = " << format_double(c.optim.base_lr)
     << "\nwarmup_steps = " << c.optim.warmup_steps << "\nepochs = " << c.optim.epochs
     << "\nbatch_u = " << c.objective.pu.batch_u << "\nbatch_s = " << c.objective.pu.batch_s
     << "\nweight_decay = " << format_double(c.optim.adamw.weight_decay)
     << "\nadam_beta1 = " << format_double(c.optim.adamw.beta1)
     << "\nadam_beta2 = " << format_double(c.optim.adamw.beta2)
     << "\nadam_eps = " << format_double(c.optim.adamw.eps)
     << "\n\n[objective]\nmethod = " << to_string(c.objective.method)
     << "\nbeta = " << format_double(c.objective.pu.beta)
     << "\ncorrection = " << to_string(c.objective.pu.correction)
     << "\nmc_draws = " << c.objective.pu.mc_draws
     << "\n\n[sampler]\nscheduler = " << to_string(c.sampler.scheduler)
     << "\nn_samples = " << c.sampler.n_samples << "\nddim_steps = " << c.sampler.ddim_steps
     << "\n\n[eval]\nn_proj = " << c.eval_projections << "\n\n[sweep]\nbetas = " << join(c.sweep.betas)
     << "\nreplicates = " << c.sweep.replicates << '\n';
  return os.str();
}

}  // namespace pudm
