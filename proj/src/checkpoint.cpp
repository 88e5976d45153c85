#include "pudm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace pudm {

namespace {

constexpr std::array<char, 4> kMagic = {'P', 'U', 'D', 'M'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

std::uint64_t get_bytes(std::istream& is, int n) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), n)) {
    throw std::runtime_error("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::uint32_t get_u32(std::istream& is) { return static_cast<std::uint32_t>(get_bytes(is, 4)); }
std::uint64_t get_u64(std::istream& is) { return get_bytes(is, 8); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_u64(is)); }

void put_matrix(std::ostream& os, const Matrix& m) {
  put_u32(os, static_cast<std::uint32_t>(m.rows()));
  put_u32(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(os, m(r, c));
  }
}

Matrix get_matrix(std::istream& is, std::uint32_t rows, std::uint32_t cols) {
  constexpr std::uint64_t kMaxEntries = 1ULL << 28;
  if (static_cast<std::uint64_t>(rows) * cols > kMaxEntries) {
    throw std::runtime_error("checkpoint tensor too large");
  }
  Matrix m(rows, cols);
  for (std::uint32_t r = 0; r < rows; ++r) {
    for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = get_f64(is);
  }
  return m;
}

void put_tensors(std::ostream& os, const DenoiserParams& p) {
  for (const auto& l : p.layers) {
    put_matrix(os, l.weight);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) put_f64(os, l.bias[i]);
  }
  put_matrix(os, p.cond_table);
}

void get_tensors(std::istream& is, DenoiserParams& p, std::size_t layer_count) {
  p.layers.clear();
  for (std::size_t i = 0; i < layer_count; ++i) {
    const auto rows = get_u32(is);
    const auto cols = get_u32(is);
    Layer l{get_matrix(is, rows, cols), Vector(rows)};
    for (std::uint32_t r = 0; r < rows; ++r) l.bias[r] = get_f64(is);
    p.layers.push_back(std::move(l));
  }
  const auto rows = get_u32(is);
  const auto cols = get_u32(is);
  p.cond_table = get_matrix(is, rows, cols);
}

void read_moment(std::istream& is, const DenoiserParams& shape, DenoiserParams& out) {
  out = shape;
  get_tensors(is, out, shape.layers.size());
  if (!out.same_shape(shape)) throw std::runtime_error("optimizer moment shape mismatch");
}

}  // namespace

void write_checkpoint(std::ostream& os, const DenoiserParams& params,
                      const AdamWState* optimizer) {
  params.validate();
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, kCheckpointVersion);
  put_u32(os, static_cast<std::uint32_t>(params.layers.size()));
  for (const auto& l : params.layers) {
    put_matrix(os, l.weight);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) put_f64(os, l.bias[i]);
  }
  put_u32(os, static_cast<std::uint32_t>(params.data_dim));
  put_u32(os, static_cast<std::uint32_t>(params.time_dim));
  put_u32(os, static_cast<std::uint32_t>(params.cond_classes));
  put_matrix(os, params.cond_table);
  os.put(optimizer != nullptr ? 1 : 0);
  if (optimizer != nullptr) {
    put_u64(os, static_cast<std::uint64_t>(optimizer->step));
    put_f64(os, optimizer->hyper.beta1);
    put_f64(os, optimizer->hyper.beta2);
    put_f64(os, optimizer->hyper.eps);
    put_f64(os, optimizer->hyper.weight_decay);
    put_tensors(os, optimizer->m);
    put_tensors(os, optimizer->v);
  }
  if (!os) throw std::runtime_error("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("not a PUDM checkpoint (bad magic)");
  }
  const auto version = get_u32(is);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto layer_count = get_u32(is);
  if (layer_count == 0 || layer_count > 1024) throw std::runtime_error("bad layer count");
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    const auto rows = get_u32(is);
    const auto cols = get_u32(is);
    Layer l{get_matrix(is, rows, cols), Vector(rows)};
    for (std::uint32_t r = 0; r < rows; ++r) l.bias[r] = get_f64(is);
    ck.params.layers.push_back(std::move(l));
  }
  ck.params.data_dim = static_cast<int>(get_u32(is));
  ck.params.time_dim = static_cast<int>(get_u32(is));
  ck.params.cond_classes = static_cast<int>(get_u32(is));
  {
    const auto rows = get_u32(is);
    const auto cols = get_u32(is);
    ck.params.cond_table = get_matrix(is, rows, cols);
  }
  try {
    ck.params.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("inconsistent checkpoint: ") + e.what());
  }
  const int has_opt = is.get();
  if (has_opt == std::char_traits<char>::eof()) throw std::runtime_error("checkpoint truncated");
  if (has_opt == 1) {
    AdamWState st;
    st.step = static_cast<std::int64_t>(get_u64(is));
    st.hyper.beta1 = get_f64(is);
    st.hyper.beta2 = get_f64(is);
    st.hyper.eps = get_f64(is);
    st.hyper.weight_decay = get_f64(is);
    read_moment(is, ck.params, st.m);
    read_moment(is, ck.params, st.v);
    ck.optimizer = std::move(st);
  } else if (has_opt != 0) {
    throw std::runtime_error("bad optimizer flag in checkpoint");
  }
  return ck;
}

void save_checkpoint(const std::string& path, const DenoiserParams& params,
                     const AdamWState* optimizer) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_checkpoint(os, params, optimizer);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  try {
    return read_checkpoint(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

}  // namespace pudm
