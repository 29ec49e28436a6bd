#include "dam/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dam/random.hpp"
#include "dam/tensor_io.hpp"

namespace dam {
namespace {

constexpr const char* kLogHeader = "iter,loss,data_loss,reg_loss,lr,validation\n";

std::string fmt_real(Real v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << text;
}

// Index of the sample at global draw position `pos`: epochs are independent
// seeded permutations, so a resumed run draws exactly what it would have.
class BatchOrder {
 public:
  BatchOrder(std::uint64_t seed, std::size_t n) : seed_(seed), n_(n) {}

  std::size_t at(std::uint64_t pos) {
    const std::uint64_t epoch = pos / n_;
    if (!current_ || *current_ != epoch) {
      perm_.resize(n_);
      for (std::size_t i = 0; i < n_; ++i) perm_[i] = i;
      Rng rng(mix_seed(seed_, epoch));
      for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
      current_ = epoch;
    }
    return perm_[pos % n_];
  }

 private:
  std::uint64_t seed_;
  std::size_t n_;
  std::optional<std::uint64_t> current_;
  std::vector<std::size_t> perm_;
};

}  // namespace

FeatureMap make_input(InputSource source, const DepthMap& depth) {
  const DepthMap filled = depth.has_holes() ? fill_holes(depth) : depth;
  return source == InputSource::depth ? intensity_input(filled) : synthetic_intensity_input(filled);
}

std::vector<Sample> make_samples(const std::vector<GeneratedSample>& scenes, InputSource source) {
  std::vector<Sample> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) {
    out.push_back({make_input(source, s.rendered.depth), s.rendered.depth, s.rendered.labels});
  }
  return out;
}

Real Dataset::mean_depth() const {
  if (!manifest.contains("mean_depth_mm")) throw ConfigError(root.string() + ": manifest lacks mean_depth_mm");
  return manifest.at("mean_depth_mm").get<Real>();
}

std::size_t Dataset::classes() const { return manifest.at("classes").get<std::size_t>(); }

bool Dataset::has_split(const std::string& name) const {
  return manifest.contains("splits") && manifest.at("splits").contains(name);
}

std::vector<Sample> Dataset::load_split(const std::string& name, InputSource source) const {
  if (!has_split(name)) throw ConfigError(root.string() + ": no split named '" + name + "'");
  std::vector<Sample> out;
  for (const auto& f : manifest.at("splits").at(name).at("samples")) {
    auto depth = load_depth_map(root / f.at("depth").get<std::string>());
    auto labels = load_label_map(root / f.at("label").get<std::string>());
    out.push_back({make_input(source, depth), std::move(depth), std::move(labels)});
  }
  return out;
}

Dataset open_dataset(const std::filesystem::path& root) {
  const auto path = root / "manifest.json";
  if (!std::filesystem::exists(path)) throw ConfigError("no dataset manifest at " + path.string());
  return Dataset{root, read_json_file(path)};
}

ConfusionMatrix evaluate(Network& net, std::span<const Sample> samples, std::vector<LabelMap>* predictions) {
  ConfusionMatrix cm(net.classes());
  for (const auto& s : samples) {
    const auto prob = net.forward(s.input, s.depth);
    auto predicted = argmax_labels(prob);
    LabelMap truth = s.labels;
    if (net.spec().loss.ignore_label) truth.set_ignore_label(net.spec().loss.ignore_label);
    cm.accumulate(predicted, truth);
    if (predictions) predictions->push_back(std::move(predicted));
  }
  return cm;
}

Real selection_score(const MetricReport& report, SelectMetric metric) {
  if (metric == SelectMetric::f1) {
    if (!report.f1) throw ConfigError("select_metric f1 needs a two-class network");
    return *report.f1;
  }
  return report.mean_iou;
}

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());

  RunSpec pinned = ckpt.spec;
  pinned.network.mean_depth = ckpt.network.spec().mean_depth;
  pinned.mean_depth_given = true;

  Json meta;
  meta["format"] = "dam-checkpoint-1";
  meta["config"] = to_json(pinned);
  meta["iter"] = ckpt.optimizer.iter();
  meta["plateau_events"] = ckpt.optimizer.plateau_events();
  meta["stalled_evaluations"] = ckpt.optimizer.stalled_evaluations();
  meta["has_best_score"] = ckpt.optimizer.has_best_score();
  meta["schedule_best_score"] = ckpt.optimizer.best_score();
  meta["best_score"] = ckpt.best_score ? Json(*ckpt.best_score) : Json(nullptr);
  meta["best_iter"] = ckpt.best_iter;

  const auto names = ckpt.network.parameter_names();
  const auto blocks = ckpt.network.parameter_blocks();
  const auto convs = ckpt.network.conv_layers();
  Json files = Json::array();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto file = names[b] + ".dat1";
    if (b % 2 == 0) {
      save_weights(dir / file, convs[b / 2]->weights());
    } else {
      save_vector(dir / file, blocks[b]);
    }
    files.push_back(file);
  }
  meta["parameters"] = files;
  Json momentum = Json::array();
  for (std::size_t b = 0; b < ckpt.optimizer.prev_delta().size(); ++b) {
    const auto file = names[b] + ".momentum.dat1";
    save_vector(dir / file, ckpt.optimizer.prev_delta()[b]);
    momentum.push_back(file);
  }
  meta["momentum"] = momentum;
  write_text(dir / "checkpoint.json", meta.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto meta_path = dir / "checkpoint.json";
  if (!std::filesystem::exists(meta_path)) throw ConfigError("no checkpoint at " + dir.string());
  const Json meta = read_json_file(meta_path);
  auto spec = parse_run_spec(meta.at("config"));
  auto net = Network::build(spec.network, spec.seed);

  const auto& files = meta.at("parameters");
  auto blocks = net.parameter_blocks();
  if (files.size() != blocks.size()) {
    throw ConfigError(dir.string() + ": checkpoint lists " + std::to_string(files.size()) +
                      " parameter blocks, the network has " + std::to_string(blocks.size()));
  }
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto t = read_dat1(dir / files[b].get<std::string>());
    if (t.values.size() != blocks[b].size()) {
      throw ConfigError(dir.string() + ": " + files[b].get<std::string>() + " holds " +
                        std::to_string(t.values.size()) + " values, expected " + std::to_string(blocks[b].size()));
    }
    std::copy(t.values.begin(), t.values.end(), blocks[b].begin());
  }

  Sgd sgd(spec.optimizer.mu, spec.optimizer.gamma, spec.optimizer.schedule);
  std::vector<std::vector<Real>> delta;
  for (const auto& f : meta.at("momentum")) delta.push_back(load_vector(dir / f.get<std::string>()));
  sgd.restore(meta.at("iter").get<std::int64_t>(), std::move(delta), meta.at("plateau_events").get<std::int32_t>(),
              meta.at("stalled_evaluations").get<std::int32_t>(), meta.at("has_best_score").get<bool>(),
              meta.at("schedule_best_score").get<Real>());

  Checkpoint ckpt{std::move(spec), std::move(net), std::move(sgd), std::nullopt, 0};
  if (!meta.at("best_score").is_null()) ckpt.best_score = meta.at("best_score").get<Real>();
  ckpt.best_iter = meta.at("best_iter").get<std::int64_t>();
  return ckpt;
}

Checkpoint initial_checkpoint(const RunSpec& spec) {
  return Checkpoint{spec, Network::build(spec.network, spec.seed),
                    Sgd(spec.optimizer.mu, spec.optimizer.gamma, spec.optimizer.schedule), std::nullopt, 0};
}

std::string format_record(const TrainRecord& r) {
  return std::to_string(r.iter) + "," + fmt_real(r.loss) + "," + fmt_real(r.data_loss) + "," +
         fmt_real(r.reg_loss) + "," + fmt_real(r.lr) + "," + (r.validation ? fmt_real(*r.validation) : "") + "\n";
}

TrainResult run_training(Checkpoint state, const std::vector<Sample>& train, const std::vector<Sample>& val,
                         const TrainRunOptions& options) {
  if (train.empty()) throw ConfigError("training split is empty");
  const auto& opts = state.spec.training;

  std::ofstream log;
  if (options.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.out_dir, ec);
    if (ec) throw Error("cannot create " + options.out_dir->string() + ": " + ec.message());
    const auto log_path = *options.out_dir / "train_log.csv";
    const bool append = options.resume_from.has_value() && std::filesystem::exists(log_path);
    log.open(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw Error("cannot write " + log_path.string());
    if (!append) log << kLogHeader;
  }

  TrainResult result{{}, std::move(state), std::nullopt, 0};
  auto& ckpt = result.final_state;
  BatchOrder order(mix_seed(ckpt.spec.seed, 0xba7c4), train.size());
  const std::int64_t target = ckpt.optimizer.iter() + opts.iterations;

  while (ckpt.optimizer.iter() < target) {
    const auto step_index = static_cast<std::uint64_t>(ckpt.optimizer.iter());
    std::vector<const Sample*> batch;
    for (std::size_t k = 0; k < opts.batch_size; ++k) {
      batch.push_back(&train[order.at(step_index * opts.batch_size + k)]);
    }
    auto record = train_step(ckpt.network, batch, ckpt.optimizer);

    const bool validate_now = record.iter % opts.val_every == 0 || record.iter == target;
    if (validate_now && !val.empty()) {
      const auto report = compute_all(evaluate(ckpt.network, val));
      const Real score = selection_score(report, opts.select_metric);
      record.validation = score;
      ckpt.optimizer.report_validation(score);
      if (!ckpt.best_score || score > *ckpt.best_score) {
        ckpt.best_score = score;
        ckpt.best_iter = record.iter;
        if (options.out_dir) save_checkpoint(*options.out_dir / "checkpoint_best", ckpt);
      }
    }
    if (log.is_open()) log << format_record(record);
    if (options.on_record) options.on_record(record);
    result.records.push_back(record);
    if (ckpt.optimizer.finished()) break;
  }

  if (options.out_dir) save_checkpoint(*options.out_dir / "checkpoint_last", ckpt);
  result.best_score = ckpt.best_score;
  result.best_iter = ckpt.best_iter;
  return result;
}

}  // namespace dam
