#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pudm/tensor_nn.hpp"

namespace pudm {

enum class DatasetKind { kTwoGaussians, kTwoMoons, kCheckerboard };

DatasetKind parse_kind(std::string_view s);
std::string_view to_string(DatasetKind k);

inline constexpr int kNormal = 0;
inline constexpr int kSensitive = 1;

// Shape parameters of the synthetic families.
struct Geometry {
  double center_offset = 2.0;  // two_gaussians: centers at (-offset, 0) and (+offset, 0)
  double cluster_std = 0.5;    // two_gaussians: isotropic std
  double moon_noise = 0.1;     // two_moons: additive Gaussian noise std
  int checker_cells = 4;       // checkerboard: cells per side
  double checker_extent = 2.0; // checkerboard: covers [-extent, extent]^2

  void validate() const;
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Points are stored column-wise: points.col(i) is point i (2 x n).
struct LabeledDataset {
  DatasetKind kind = DatasetKind::kTwoGaussians;
  std::uint64_t seed = 0;
  Geometry geometry;
  Matrix points;
  std::vector<int> labels;
  KeyValues extra;  // additional header fields, kept in order

  std::size_t size() const { return labels.size(); }
  std::size_t count(int label) const;
};

// Deterministic given seed. Labels alternate normal/sensitive, so the classes
// differ in size by at most one. Sensitive regions:
//   two_gaussians: the (+offset, 0) cluster
//   two_moons:     the lower moon
//   checkerboard:  cells with odd (i + j)
LabeledDataset generate(DatasetKind kind, int n, std::uint64_t seed, const Geometry& geometry = {});

struct SplitCounts {
  int u_normal = 2000;
  int u_sensitive = 200;
  int s = 200;
  int test = 2000;
};

// U keeps its ground-truth labels for auditing and for the PN baseline; PU
// training only ever reads U.points.
struct PuDataset {
  LabeledDataset u;
  LabeledDataset s;
  LabeledDataset test_normal;
  // Pool indices each point was taken from.
  std::vector<std::size_t> u_index;
  std::vector<std::size_t> s_index;
  std::vector<std::size_t> test_index;
  SplitCounts counts;
  std::uint64_t split_seed = 0;
  std::size_t pool_size = 0;

  double contamination() const;
};

PuDataset make_pu_split(const LabeledDataset& pool, const SplitCounts& counts,
                        std::uint64_t seed);

// CSV with a provenance comment line:
//   # kind=two_gaussians, seed=7, n=4, center_offset=2, ...
//   x0,x1,label
//   -2.1,0.3,0
void write_csv(std::ostream& os, const LabeledDataset& ds);
LabeledDataset read_csv(std::istream& is, const std::string& source = "<stream>");
void save_csv(const std::string& path, const LabeledDataset& ds);
LabeledDataset load_csv(const std::string& path);

// Writes u.csv, s.csv, test.csv and manifest.txt into dir.
void save_pu_split(const std::string& dir, const PuDataset& split);
PuDataset load_pu_split(const std::string& dir);

// Shortest representation that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);

}  // namespace pudm
