#include "dam/tensor_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dam {
namespace {

constexpr std::array<char, 4> kMagic = {'D', 'A', 'M', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                                     static_cast<char>((v >> 16) & 0xff),
                                     static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes.data(), 4);
}

std::uint32_t get_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  return os;
}

Dat1Tensor expect_rank(Dat1Tensor t, std::size_t rank, const std::filesystem::path& path) {
  if (t.dims.size() != rank) {
    throw Error(path.string() + ": expected rank " + std::to_string(rank) + ", found " +
                std::to_string(t.dims.size()));
  }
  return t;
}

std::vector<Real> widen(const std::vector<float>& values) {
  return std::vector<Real>(values.begin(), values.end());
}

}  // namespace

std::size_t Dat1Tensor::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_dat1(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
                std::span<const Real> values) {
  std::size_t expected = 1;
  for (auto d : dims) expected *= d;
  if (expected != values.size()) {
    throw Error("write_dat1: dims describe " + std::to_string(expected) + " elements, got " +
                std::to_string(values.size()));
  }
  auto os = open_out(path);
  os.write(kMagic.data(), kMagic.size());
  put_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(os, d);
  for (Real v : values) put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!os) throw Error("write failed: " + path.string());
}

Dat1Tensor read_dat1(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::array<char, 4> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw Error(path.string() + ": not a DAT1 file");
  Dat1Tensor t;
  const auto rank = get_u32(is);
  if (rank > 8) throw Error(path.string() + ": implausible rank " + std::to_string(rank));
  t.dims.resize(rank);
  for (auto& d : t.dims) d = get_u32(is);
  const std::size_t n = t.element_count();
  t.values.resize(n);
  for (auto& v : t.values) v = std::bit_cast<float>(get_u32(is));
  if (!is) throw Error(path.string() + ": truncated payload");
  return t;
}

void save_feature_map(const std::filesystem::path& path, const FeatureMap& map) {
  const std::array<std::uint32_t, 3> dims = {static_cast<std::uint32_t>(map.channels()),
                                             static_cast<std::uint32_t>(map.height()),
                                             static_cast<std::uint32_t>(map.width())};
  write_dat1(path, dims, map.values());
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
  auto t = expect_rank(read_dat1(path), 3, path);
  return FeatureMap(t.dims[0], t.dims[1], t.dims[2], widen(t.values));
}

void save_depth_map(const std::filesystem::path& path, const DepthMap& depth) {
  const std::array<std::uint32_t, 2> dims = {static_cast<std::uint32_t>(depth.height()),
                                             static_cast<std::uint32_t>(depth.width())};
  write_dat1(path, dims, depth.values());
}

DepthMap load_depth_map(const std::filesystem::path& path, Real hole_value) {
  auto t = expect_rank(read_dat1(path), 2, path);
  return DepthMap(t.dims[0], t.dims[1], widen(t.values), hole_value);
}

void save_label_map(const std::filesystem::path& path, const LabelMap& labels) {
  const std::array<std::uint32_t, 2> dims = {static_cast<std::uint32_t>(labels.height()),
                                             static_cast<std::uint32_t>(labels.width())};
  std::vector<Real> values(labels.values().begin(), labels.values().end());
  write_dat1(path, dims, values);
}

LabelMap load_label_map(const std::filesystem::path& path, std::optional<std::int32_t> ignore_label) {
  auto t = expect_rank(read_dat1(path), 2, path);
  std::vector<std::int32_t> labels(t.values.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const float v = t.values[i];
    if (v != std::round(v)) throw Error(path.string() + ": non-integer label");
    labels[i] = static_cast<std::int32_t>(v);
  }
  return LabelMap(t.dims[0], t.dims[1], std::move(labels), ignore_label);
}

void save_weights(const std::filesystem::path& path, const WeightTensor& weights) {
  const std::array<std::uint32_t, 4> dims = {
      static_cast<std::uint32_t>(weights.out_channels()), static_cast<std::uint32_t>(weights.in_channels()),
      static_cast<std::uint32_t>(weights.kernel_h()), static_cast<std::uint32_t>(weights.kernel_w())};
  write_dat1(path, dims, weights.values());
}

WeightTensor load_weights(const std::filesystem::path& path) {
  auto t = expect_rank(read_dat1(path), 4, path);
  WeightTensor w(t.dims[0], t.dims[1], t.dims[2], t.dims[3]);
  std::copy(t.values.begin(), t.values.end(), w.values().begin());
  return w;
}

void save_vector(const std::filesystem::path& path, std::span<const Real> values) {
  const std::array<std::uint32_t, 1> dims = {static_cast<std::uint32_t>(values.size())};
  write_dat1(path, dims, values);
}

std::vector<Real> load_vector(const std::filesystem::path& path) {
  return widen(expect_rank(read_dat1(path), 1, path).values);
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               std::span<const Real> values, Real lo, Real hi) {
  if (values.size() != height * width) throw Error("write_pgm: size mismatch");
  auto os = open_out(path);
  os << "P5\n" << width << " " << height << "\n255\n";
  const Real span = hi > lo ? hi - lo : 1;
  std::vector<unsigned char> bytes(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real scaled = std::clamp((values[i] - lo) / span, Real{0}, Real{1}) * 255;
    bytes[i] = static_cast<unsigned char>(std::lround(scaled));
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth) {
  const auto [lo, hi] = std::minmax_element(depth.values().begin(), depth.values().end());
  write_pgm(path, depth.height(), depth.width(), depth.values(), depth.size() ? *lo : 0,
            depth.size() ? *hi : 1);
}

void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels, std::size_t classes) {
  std::vector<Real> values(labels.values().begin(), labels.values().end());
  write_pgm(path, labels.height(), labels.width(), values, 0,
            static_cast<Real>(classes > 1 ? classes - 1 : 1));
}

}  // namespace dam
