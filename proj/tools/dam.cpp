#include <CLI11.hpp>
#include <malloc.h>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dam/config.hpp"
#include "dam/gradcheck.hpp"
#include "dam/invariance.hpp"
#include "dam/metrics.hpp"
#include "dam/tensor_io.hpp"
#include "dam/training.hpp"

namespace {

using namespace dam;

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

Json load_config(const std::string& path, const std::vector<std::string>& overrides) {
  Json j = path.empty() ? Json::object() : read_json_file(path);
  for (const auto& o : overrides) apply_override(j, o);
  return j;
}

std::string sample_stem(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu", i);
  return buf;
}

void require_single_channel(const NetworkSpec& spec) {
  if (spec.input_channels != 1) {
    throw ConfigError("the dataset provides 1 input channel, the network expects " +
                      std::to_string(spec.input_channels));
  }
}

void require_classes(const NetworkSpec& spec, const Dataset& data) {
  if (spec.classes() != data.classes()) {
    throw ConfigError("the network predicts " + std::to_string(spec.classes()) + " classes, the dataset has " +
                      std::to_string(data.classes()));
  }
}

struct GenArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool emit_pgm = false;
};

int gen_data(const GenArgs& a) {
  Json j = load_config(a.config, {});
  auto config = parse_generator_config(j);
  if (a.seed) config.seed = *a.seed;
  if (a.emit_pgm) config.emit_pgm = true;
  const auto text = generate_dataset(config, a.out);
  const Json manifest = Json::parse(text);
  std::printf("dataset %s: %zu samples, %zu classes, mean depth %.3f mm (std %.3f)\n", a.out.c_str(),
              manifest.at("sample_count").get<std::size_t>(), manifest.at("classes").get<std::size_t>(),
              manifest.at("mean_depth_mm").get<double>(), manifest.at("std_depth_mm").get<double>());
  for (const auto& [name, split] : manifest.at("splits").items()) {
    std::printf("  %-6s %5zu scenes, distance [%g, %g] mm\n", name.c_str(), split.at("count").get<std::size_t>(),
                split.at("distance_min_mm").get<double>(), split.at("distance_max_mm").get<double>());
  }
  return 0;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool quiet = false;
};

int train(const TrainArgs& a) {
  const Dataset data = open_dataset(a.data);
  Checkpoint state = [&] {
    if (!a.resume.empty()) {
      auto ckpt = load_checkpoint(a.resume);
      if (!a.overrides.empty()) {
        // Only the run length and cadence may change mid-run.
        Json j = to_json(ckpt.spec);
        for (const auto& o : a.overrides) {
          if (o.rfind("training.", 0) != 0) throw ConfigError("--set on resume only accepts training.* keys");
          apply_override(j, o);
        }
        ckpt.spec.training = parse_run_spec(j).training;
      }
      return ckpt;
    }
    if (a.config.empty()) throw ConfigError("train needs --config or --resume");
    Json j = load_config(a.config, a.overrides);
    auto spec = parse_run_spec(j);
    if (a.seed) spec.seed = *a.seed;
    if (!spec.mean_depth_given) spec.network.mean_depth = data.mean_depth();
    spec.network.validate();
    return initial_checkpoint(spec);
  }();
  require_single_channel(state.spec.network);
  require_classes(state.spec.network, data);

  const auto source = state.spec.network.source;
  const auto train_set = data.load_split("train", source);
  const auto val_set = data.has_split("val") ? data.load_split("val", source) : std::vector<Sample>{};
  std::printf("training on %zu scenes (val %zu), mean depth %.3f mm, %lld iterations from iter %lld\n",
              train_set.size(), val_set.size(), state.spec.network.mean_depth,
              static_cast<long long>(state.spec.training.iterations),
              static_cast<long long>(state.optimizer.iter()));

  TrainRunOptions options;
  options.out_dir = a.out;
  if (!a.resume.empty()) options.resume_from = a.resume;
  const auto every = std::max<std::int64_t>(1, state.spec.training.val_every);
  options.on_record = [&](const TrainRecord& r) {
    if (a.quiet) return;
    if (r.validation || r.iter % every == 0 || r.iter == 1) {
      std::printf("iter %6lld  loss %.6f  data %.6f  reg %.6f  lr %.3e%s\n", static_cast<long long>(r.iter), r.loss,
                  r.data_loss, r.reg_loss, r.lr,
                  r.validation ? ("  val " + std::to_string(*r.validation)).c_str() : "");
      std::fflush(stdout);
    }
  };
  const auto result = run_training(std::move(state), train_set, val_set, options);
  if (result.best_score) {
    std::printf("best validation score %.6f at iter %lld\n", *result.best_score,
                static_cast<long long>(result.best_iter));
  }
  std::printf("checkpoints in %s\n", a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::string emit_pgm;
  std::string json_out;
  std::string confusion_out;
};

int eval(const EvalArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  const Dataset data = open_dataset(a.data);
  require_single_channel(ckpt.spec.network);
  require_classes(ckpt.spec.network, data);
  const auto samples = data.load_split(a.split, ckpt.spec.network.source);
  std::vector<LabelMap> predictions;
  const auto cm = evaluate(ckpt.network, samples, a.emit_pgm.empty() ? nullptr : &predictions);
  const auto report = compute_all(cm);
  std::printf("%s split '%s', %zu scenes\n%s", a.checkpoint.c_str(), a.split.c_str(), samples.size(),
              report.to_table().c_str());
  if (!a.emit_pgm.empty()) {
    std::filesystem::create_directories(a.emit_pgm);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      write_label_pgm(std::filesystem::path(a.emit_pgm) / (sample_stem(i) + "_pred.pgm"), predictions[i],
                      cm.classes());
    }
  }
  if (!a.json_out.empty()) std::ofstream(a.json_out) << report.to_json() << "\n";
  if (!a.confusion_out.empty()) std::ofstream(a.confusion_out) << cm.to_csv();
  return 0;
}

struct GradcheckArgs {
  std::string config;
  std::uint64_t seed = 1;
  double eps = 1e-5;
  double tol = 1e-5;
  std::size_t height = 8;
  std::size_t width = 8;
  bool corrupt = false;
};

int gradcheck(const GradcheckArgs& a) {
  const auto spec = parse_run_spec(load_config(a.config, {}));
  std::size_t convs = 0;
  for (const auto& l : spec.network.layers) convs += std::holds_alternative<ConvLayerSpec>(l);
  if (convs > 3 || a.height > 8 || a.width > 8) {
    throw ConfigError("gradcheck is meant for small networks: at most 3 conv layers on an 8x8 input");
  }
  GradcheckOptions opt;
  opt.eps = a.eps;
  opt.tolerance = a.tol;
  if (a.corrupt) {
    opt.corrupt = [](std::vector<std::vector<Real>>& g) { g.front().front() *= 1.01; };
  }
  const auto report = check_network(spec.network, a.height, a.width, a.seed, opt);
  std::printf("%s", report.to_table().c_str());
  return report.passed() ? 0 : 1;
}

struct InvarianceArgs {
  std::vector<int> g{2};
  std::uint64_t seed = 1;
};

int invariance(const InvarianceArgs& a) {
  bool ok = true;
  for (int g : a.g) {
    if (g < 1) throw ConfigError("--g must be a positive integer");
    for (const auto& c : {InvarianceCase{1, g, a.seed, false}, InvarianceCase{2, g, a.seed, false},
                          InvarianceCase{2, g, a.seed, true}}) {
      const auto r = run_invariance(c);
      const bool invariant = r.deviation < 1e-12;
      const bool control_breaks = g == 1 || r.control_deviation > 1e-3;
      std::printf("%s: %s\n", describe(c, r).c_str(), invariant && control_breaks ? "PASS" : "FAIL");
      ok = ok && invariant && control_breaks;
    }
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef M_MMAP_THRESHOLD
  // Conv buffers are a few MB and reallocated every layer call; keep them on the heap.
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
  CLI::App app{"Depth-adaptive multiscale convolution: data generation, training and checks"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic depth/label dataset");
  gen_cmd->add_option("--config", gen.config, "Generator config (JSON); defaults apply when omitted")
      ->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Override the config seed");
  gen_cmd->add_flag("--emit-pgm", gen.emit_pgm, "Also write PGM previews");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a network on a generated dataset");
  train_cmd->add_option("--config", tr.config, "Run config (JSON)")->check(CLI::ExistingFile);
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", tr.out, "Output directory for checkpoints and train_log.csv")->required();
  train_cmd->add_option("--resume", tr.resume, "Checkpoint directory to continue from")
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--seed", tr.seed, "Override the config seed");
  train_cmd->add_option("--set", tr.overrides, "Config override, dotted.key=value (repeatable)");
  train_cmd->add_flag("--quiet", tr.quiet, "Only print the summary");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint directory")->required()
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--data-split", ev.split, "Split name")->capture_default_str();
  eval_cmd->add_option("--emit-pgm", ev.emit_pgm, "Write predicted label PGMs into this directory");
  eval_cmd->add_option("--json", ev.json_out, "Write the metric report as JSON");
  eval_cmd->add_option("--confusion", ev.confusion_out, "Write the confusion matrix as CSV");

  GradcheckArgs gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
  gc_cmd->add_option("--config", gc.config, "Small run config (JSON)")->required()->check(CLI::ExistingFile);
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();
  gc_cmd->add_option("--eps", gc.eps, "Central-difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol, "Relative error tolerance")->capture_default_str();
  gc_cmd->add_option("--height", gc.height)->capture_default_str();
  gc_cmd->add_option("--width", gc.width)->capture_default_str();
  gc_cmd->add_flag("--corrupt", gc.corrupt, "Perturb one analytic gradient entry by 1% (negative control)");

  InvarianceArgs inv;
  auto* inv_cmd = app.add_subcommand("invariance", "Check depth invariance of a two-layer stack");
  inv_cmd->add_option("--g", inv.g, "Distance ratio(s)")->capture_default_str();
  inv_cmd->add_option("--seed", inv.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*train_cmd) return train(tr);
    if (*eval_cmd) return eval(ev);
    if (*gc_cmd) return gradcheck(gc);
    if (*inv_cmd) return invariance(inv);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
