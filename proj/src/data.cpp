#include "pudm/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "pudm/errors.hpp"
#include "pudm/rng.hpp"

namespace pudm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not an unsigned integer: '" + std::string(s) + "'");
  }
  return v;
}

int parse_int(std::string_view s) {
  int v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not an integer: '" + std::string(s) + "'");
  }
  return v;
}

KeyValues geometry_fields(const Geometry& g) {
  return {{"center_offset", format_double(g.center_offset)},
          {"cluster_std", format_double(g.cluster_std)},
          {"moon_noise", format_double(g.moon_noise)},
          {"checker_cells", std::to_string(g.checker_cells)},
          {"checker_extent", format_double(g.checker_extent)}};
}

// Returns true if key was a geometry field.
bool apply_geometry_field(Geometry& g, const std::string& key, const std::string& value) {
  if (key == "center_offset") {
    g.center_offset = parse_double(value);
  } else if (key == "cluster_std") {
    g.cluster_std = parse_double(value);
  } else if (key == "moon_noise") {
    g.moon_noise = parse_double(value);
  } else if (key == "checker_cells") {
    g.checker_cells = parse_int(value);
  } else if (key == "checker_extent") {
    g.checker_extent = parse_double(value);
  } else {
    return false;
  }
  return true;
}

LabeledDataset subset(const LabeledDataset& pool, const std::vector<std::size_t>& idx,
                      const std::string& role) {
  LabeledDataset out;
  out.kind = pool.kind;
  out.seed = pool.seed;
  out.geometry = pool.geometry;
  out.points.resize(pool.points.rows(), static_cast<Eigen::Index>(idx.size()));
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    out.points.col(static_cast<Eigen::Index>(i)) = pool.points.col(static_cast<Eigen::Index>(idx[i]));
    out.labels[i] = pool.labels[idx[i]];
  }
  out.extra = {{"role", role}};
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view s) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + std::string(s) + "'");
  }
  return v;
}

DatasetKind parse_kind(std::string_view s) {
  if (s == "two_gaussians") return DatasetKind::kTwoGaussians;
  if (s == "two_moons") return DatasetKind::kTwoMoons;
  if (s == "checkerboard") return DatasetKind::kCheckerboard;
  throw std::invalid_argument("unknown dataset kind '" + std::string(s) + "'");
}

std::string_view to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::kTwoGaussians: return "two_gaussians";
    case DatasetKind::kTwoMoons: return "two_moons";
    case DatasetKind::kCheckerboard: return "checkerboard";
  }
  return "unknown";
}

void Geometry::validate() const {
  if (!(center_offset > 0.0)) throw std::invalid_argument("center_offset must be > 0");
  if (!(cluster_std > 0.0)) throw std::invalid_argument("cluster_std must be > 0");
  if (!(moon_noise >= 0.0)) throw std::invalid_argument("moon_noise must be >= 0");
  if (checker_cells < 2) throw std::invalid_argument("checker_cells must be >= 2");
  if (!(checker_extent > 0.0)) throw std::invalid_argument("checker_extent must be > 0");
}

std::size_t LabeledDataset::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

LabeledDataset generate(DatasetKind kind, int n, std::uint64_t seed, const Geometry& g) {
  if (n < 2) throw std::invalid_argument("need n >= 2 points");
  g.validate();
  Rng rng(derive_seed(seed, 0));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  LabeledDataset ds;
  ds.kind = kind;
  ds.seed = seed;
  ds.geometry = g;
  ds.points.resize(2, n);
  ds.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2 == 0 ? kNormal : kSensitive;
    double x = 0.0;
    double y = 0.0;
    switch (kind) {
      case DatasetKind::kTwoGaussians: {
        const double cx = label == kNormal ? -g.center_offset : g.center_offset;
        x = cx + g.cluster_std * n01(rng);
        y = g.cluster_std * n01(rng);
        break;
      }
      case DatasetKind::kTwoMoons: {
        const double theta = M_PI * u01(rng);
        if (label == kNormal) {
          x = std::cos(theta);
          y = std::sin(theta);
        } else {
          x = 1.0 - std::cos(theta);
          y = 0.5 - std::sin(theta);
        }
        x += g.moon_noise * n01(rng);
        y += g.moon_noise * n01(rng);
        break;
      }
      case DatasetKind::kCheckerboard: {
        const int cells = g.checker_cells;
        const double width = 2.0 * g.checker_extent / cells;
        // Cells of the requested parity, enumerated row-major.
        std::uniform_int_distribution<int> pick(0, cells * cells - 1);
        int ci = 0;
        int cj = 0;
        do {
          const int c = pick(rng);
          ci = c / cells;
          cj = c % cells;
        } while ((ci + cj) % 2 != label);
        x = -g.checker_extent + (ci + u01(rng)) * width;
        y = -g.checker_extent + (cj + u01(rng)) * width;
        break;
      }
    }
    ds.points(0, i) = x;
    ds.points(1, i) = y;
    ds.labels[i] = label;
  }
  return ds;
}

double PuDataset::contamination() const {
  const auto n = u.size();
  return n == 0 ? 0.0 : static_cast<double>(u.count(kSensitive)) / static_cast<double>(n);
}

PuDataset make_pu_split(const LabeledDataset& pool, const SplitCounts& counts,
                        std::uint64_t seed) {
  if (counts.u_normal < 0 || counts.u_sensitive < 0 || counts.s < 0 || counts.test < 0) {
    throw std::invalid_argument("split counts must be non-negative");
  }
  std::vector<std::size_t> normal;
  std::vector<std::size_t> sensitive;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (pool.labels[i] == kNormal ? normal : sensitive).push_back(i);
  }
  const std::size_t need_normal = static_cast<std::size_t>(counts.u_normal) + counts.test;
  const std::size_t need_sensitive = static_cast<std::size_t>(counts.u_sensitive) + counts.s;
  std::string shortfall;
  if (need_normal > normal.size()) {
    shortfall += "normal points: need " + std::to_string(need_normal) + ", have " +
                 std::to_string(normal.size()) + " (short by " +
                 std::to_string(need_normal - normal.size()) + ")";
  }
  if (need_sensitive > sensitive.size()) {
    if (!shortfall.empty()) shortfall += "; ";
    shortfall += "sensitive points: need " + std::to_string(need_sensitive) + ", have " +
                 std::to_string(sensitive.size()) + " (short by " +
                 std::to_string(need_sensitive - sensitive.size()) + ")";
  }
  if (!shortfall.empty()) throw std::invalid_argument("insufficient pool for split: " + shortfall);

  Rng rng = make_rng(seed, Stream::kSplit);
  std::shuffle(normal.begin(), normal.end(), rng);
  std::shuffle(sensitive.begin(), sensitive.end(), rng);

  PuDataset out;
  out.counts = counts;
  out.split_seed = seed;
  out.pool_size = pool.size();
  out.u_index.assign(normal.begin(), normal.begin() + counts.u_normal);
  out.u_index.insert(out.u_index.end(), sensitive.begin(), sensitive.begin() + counts.u_sensitive);
  std::shuffle(out.u_index.begin(), out.u_index.end(), rng);
  out.test_index.assign(normal.begin() + counts.u_normal,
                        normal.begin() + counts.u_normal + counts.test);
  out.s_index.assign(sensitive.begin() + counts.u_sensitive,
                     sensitive.begin() + counts.u_sensitive + counts.s);
  out.u = subset(pool, out.u_index, "U");
  out.s = subset(pool, out.s_index, "S");
  out.test_normal = subset(pool, out.test_index, "test");
  return out;
}

void write_csv(std::ostream& os, const LabeledDataset& ds) {
  KeyValues header = {{"kind", std::string(to_string(ds.kind))},
                      {"seed", std::to_string(ds.seed)},
                      {"n", std::to_string(ds.size())}};
  for (auto& kv : geometry_fields(ds.geometry)) header.push_back(std::move(kv));
  for (const auto& kv : ds.extra) header.push_back(kv);
  os << "# ";
  for (std::size_t i = 0; i < header.size(); ++i) {
    os << (i ? ", " : "") << header[i].first << '=' << header[i].second;
  }
  os << "\nx0,x1,label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    os << format_double(ds.points(0, c)) << ',' << format_double(ds.points(1, c)) << ','
       << ds.labels[i] << '\n';
  }
}

LabeledDataset read_csv(std::istream& is, const std::string& source) {
  LabeledDataset ds;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& what) { throw ParseError(source, line_no, what); };

  if (!std::getline(is, line)) {
    line_no = 1;
    fail("empty file");
  }
  ++line_no;
  if (line.rfind("# ", 0) != 0) fail("missing provenance header");
  std::size_t n = 0;
  bool have_kind = false;
  bool have_n = false;
  try {
    for (const auto& field : split(std::string_view(line).substr(2), ',')) {
      const auto eq = field.find('=');
      if (eq == std::string::npos) fail("header field without '=': " + field);
      const std::string key = trim(std::string_view(field).substr(0, eq));
      const std::string value = trim(std::string_view(field).substr(eq + 1));
      if (key == "kind") {
        ds.kind = parse_kind(value);
        have_kind = true;
      } else if (key == "seed") {
        ds.seed = parse_u64(value);
      } else if (key == "n") {
        n = parse_u64(value);
        have_n = true;
      } else if (!apply_geometry_field(ds.geometry, key, value)) {
        ds.extra.emplace_back(key, value);
      }
    }
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (!have_kind || !have_n) fail("header must define kind and n");

  if (!std::getline(is, line)) {
    ++line_no;
    fail("missing column header");
  }
  ++line_no;
  if (trim(line) != "x0,x1,label") fail("expected column header 'x0,x1,label'");

  std::vector<double> xs;
  std::vector<int> labels;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cols = split(line, ',');
    if (cols.size() != 3) fail("expected 3 columns, got " + std::to_string(cols.size()));
    try {
      xs.push_back(parse_double(trim(cols[0])));
      xs.push_back(parse_double(trim(cols[1])));
      const int label = parse_int(trim(cols[2]));
      if (label != kNormal && label != kSensitive) fail("label must be 0 or 1");
      labels.push_back(label);
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  if (labels.size() != n) {
    ++line_no;
    fail("expected " + std::to_string(n) + " rows, found " + std::to_string(labels.size()) +
         " (truncated file?)");
  }
  ds.points = Eigen::Map<const Matrix>(xs.data(), 2, static_cast<Eigen::Index>(n));
  ds.labels = std::move(labels);
  return ds;
}

void save_csv(const std::string& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_csv(os, ds);
  if (!os) throw std::runtime_error("failed writing " + path);
}

LabeledDataset load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  return read_csv(is, path);
}

void save_pu_split(const std::string& dir, const PuDataset& split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_csv((fs::path(dir) / "u.csv").string(), split.u);
  save_csv((fs::path(dir) / "s.csv").string(), split.s);
  save_csv((fs::path(dir) / "test.csv").string(), split.test_normal);
  const std::string path = (fs::path(dir) / "manifest.txt").string();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << "kind=" << to_string(split.u.kind) << '\n'
     << "seed=" << split.u.seed << '\n'
     << "split_seed=" << split.split_seed << '\n'
     << "pool_size=" << split.pool_size << '\n'
     << "n_u_normal=" << split.counts.u_normal << '\n'
     << "n_u_sensitive=" << split.counts.u_sensitive << '\n'
     << "n_s=" << split.counts.s << '\n'
     << "n_test=" << split.counts.test << '\n'
     << "contamination=" << format_double(split.contamination()) << '\n';
  for (const auto& [k, v] : geometry_fields(split.u.geometry)) os << k << '=' << v << '\n';
  os << "u_file=u.csv\ns_file=s.csv\ntest_file=test.csv\n";
  if (!os) throw std::runtime_error("failed writing " + path);
}

PuDataset load_pu_split(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ifstream is(manifest_path);
  if (!is) throw std::runtime_error("cannot open " + manifest_path);
  std::map<std::string, std::string> kv;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(manifest_path, line_no, "expected key=value");
    kv[trim(std::string_view(line).substr(0, eq))] = trim(std::string_view(line).substr(eq + 1));
  }
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw std::runtime_error(manifest_path + ": missing key '" + k + "'");
    return it->second;
  };
  PuDataset out;
  out.u = load_csv((fs::path(dir) / get("u_file")).string());
  out.s = load_csv((fs::path(dir) / get("s_file")).string());
  out.test_normal = load_csv((fs::path(dir) / get("test_file")).string());
  out.split_seed = parse_u64(get("split_seed"));
  out.pool_size = parse_u64(get("pool_size"));
  out.counts.u_normal = parse_int(get("n_u_normal"));
  out.counts.u_sensitive = parse_int(get("n_u_sensitive"));
  out.counts.s = parse_int(get("n_s"));
  out.counts.test = parse_int(get("n_test"));
  if (out.u.count(kSensitive) != static_cast<std::size_t>(out.counts.u_sensitive) ||
      out.u.size() != static_cast<std::size_t>(out.counts.u_normal + out.counts.u_sensitive) ||
      out.s.size() != static_cast<std::size_t>(out.counts.s) ||
      out.test_normal.size() != static_cast<std::size_t>(out.counts.test)) {
    throw std::runtime_error(manifest_path + ": counts disagree with data files");
  }
  if (out.s.count(kNormal) != 0 || out.test_normal.count(kSensitive) != 0) {
    throw std::runtime_error(dir + ": S must be all sensitive and test all normal");
  }
  return out;
}

}  // namespace pudm
