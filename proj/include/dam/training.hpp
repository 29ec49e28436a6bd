#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dam/config.hpp"
#include "dam/metrics.hpp"
#include "dam/network.hpp"
#include "dam/optim.hpp"
#include "dam/synth.hpp"

namespace dam {

FeatureMap make_input(InputSource source, const DepthMap& depth);
std::vector<Sample> make_samples(const std::vector<GeneratedSample>& scenes, InputSource source);

/// A dataset directory written by generate_dataset().
struct Dataset {
  std::filesystem::path root;
  Json manifest;

  Real mean_depth() const;
  std::size_t classes() const;
  bool has_split(const std::string& name) const;
  std::vector<Sample> load_split(const std::string& name, InputSource source) const;
};

Dataset open_dataset(const std::filesystem::path& root);

/// Forward pass over every sample, accumulating argmax predictions. Predictions are
/// appended to `predictions` when given.
ConfusionMatrix evaluate(Network& net, std::span<const Sample> samples,
                         std::vector<LabelMap>* predictions = nullptr);

/// Mean IoU, or F1 for two-class runs selected on F1.
Real selection_score(const MetricReport& report, SelectMetric metric);

/// Training state that round-trips through a checkpoint directory.
struct Checkpoint {
  RunSpec spec;  // mean_depth pinned
  Network network;
  Sgd optimizer;
  std::optional<Real> best_score;
  std::int64_t best_iter = 0;
};

/// <dir>/checkpoint.json plus one DAT1 file per parameter block and momentum buffer.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

struct TrainRunOptions {
  std::optional<std::filesystem::path> out_dir;  // checkpoints and train_log.csv go here when set
  std::optional<std::filesystem::path> resume_from;
  std::function<void(const TrainRecord&)> on_record;
};

struct TrainResult {
  std::vector<TrainRecord> records;
  Checkpoint final_state;
  std::optional<Real> best_score;
  std::int64_t best_iter = 0;
};

/// Initial state for a fresh run: network built from spec.seed, optimizer from spec.optimizer.
Checkpoint initial_checkpoint(const RunSpec& spec);

/// SGD over shuffled mini-batches with periodic validation and best-model checkpointing.
/// Writes checkpoint_best/ (on each validation improvement), checkpoint_last/ and
/// train_log.csv when out_dir is set.
TrainResult run_training(Checkpoint state, const std::vector<Sample>& train, const std::vector<Sample>& val,
                         const TrainRunOptions& options = {});

/// CSV row for train_log.csv: iter,loss,data_loss,reg_loss,lr,validation.
std::string format_record(const TrainRecord& r);

}  // namespace dam
