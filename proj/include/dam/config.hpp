#pragma once

#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>

#include "dam/network.hpp"
#include "dam/optim.hpp"
#include "dam/synth.hpp"

namespace dam {

using Json = nlohmann::ordered_json;

/// Raised for malformed or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

enum class SelectMetric { mean_iou, f1 };

struct OptimizerConfig {
  Real mu = 0.9;
  Real gamma = 0.01;
  LrSchedule schedule = ConstantSchedule{};
};

struct TrainOptions {
  std::int64_t iterations = 2000;
  std::size_t batch_size = 4;
  std::int64_t val_every = 200;
  SelectMetric select_metric = SelectMetric::mean_iou;
};

/// Everything a training run reads from its configuration file.
struct RunSpec {
  NetworkSpec network;
  OptimizerConfig optimizer;
  TrainOptions training;
  std::uint64_t seed = 1;
  bool mean_depth_given = false;  // true when the file pins mean_depth instead of taking the manifest's
};

Json read_json_file(const std::filesystem::path& path);

/// Keys: seed, mean_depth, input{channels, source}, layers[], optimizer{mu, gamma, schedule}, training{...}.
/// Each layers[] entry has a "type": dam_conv | conv_dense | maxpool | softmax_loss.
RunSpec parse_run_spec(const Json& j);
Json to_json(const RunSpec& spec);

/// Applies "dotted.key=value" overrides (value parsed as JSON, falling back to a string).
void apply_override(Json& j, const std::string& assignment);

/// Keys: height, width, focal_px, object_size_mm, wall_offset_mm, shapes[], splits[{name, count,
/// distance_min_mm, distance_max_mm}], seed, emit_pgm.
GeneratorConfig parse_generator_config(const Json& j);

}  // namespace dam
