#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "dam/tensor.hpp"

namespace dam {

/// Raw contents of a DAT1 container: "DAM1", u32 rank, u32 dims[rank], f32 payload (all little-endian).
struct Dat1Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> values;

  std::size_t element_count() const;
};

void write_dat1(const std::filesystem::path& path, std::span<const std::uint32_t> dims,
                std::span<const Real> values);
Dat1Tensor read_dat1(const std::filesystem::path& path);

void save_feature_map(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap load_feature_map(const std::filesystem::path& path);

void save_depth_map(const std::filesystem::path& path, const DepthMap& depth);
DepthMap load_depth_map(const std::filesystem::path& path, Real hole_value = 0);

void save_label_map(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_label_map(const std::filesystem::path& path,
                        std::optional<std::int32_t> ignore_label = std::nullopt);

void save_weights(const std::filesystem::path& path, const WeightTensor& weights);
WeightTensor load_weights(const std::filesystem::path& path);

void save_vector(const std::filesystem::path& path, std::span<const Real> values);
std::vector<Real> load_vector(const std::filesystem::path& path);

/// Binary 8-bit PGM (P5). Values are rescaled linearly from [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width,
               std::span<const Real> values, Real lo, Real hi);
/// Depth rescaled from its own min..max.
void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth);
/// Labels rescaled from 0..classes-1.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels, std::size_t classes);

}  // namespace dam
