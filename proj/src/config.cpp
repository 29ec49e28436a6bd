#include "dam/config.hpp"

#include <fstream>
#include <set>

namespace dam {
namespace {

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
T get_or(const Json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": bad value for '" + key + "': " + e.what());
  }
}

Activation parse_activation(const std::string& s, const std::string& where) {
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError(where + ": activation must be relu or identity, got '" + s + "'");
}

const char* activation_name(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

const char* mode_name(SparsityMode m) {
  switch (m) {
    case SparsityMode::adaptive:
      return "adaptive";
    case SparsityMode::fixed:
      return "fixed";
    case SparsityMode::dense:
      return "dense";
  }
  return "?";
}

SparsityMode parse_mode(const std::string& s, const std::string& where) {
  if (s == "adaptive") return SparsityMode::adaptive;
  if (s == "fixed") return SparsityMode::fixed;
  if (s == "dense") return SparsityMode::dense;
  throw ConfigError(where + ": sparsity must be adaptive, fixed or dense, got '" + s + "'");
}

LrSchedule parse_schedule(const Json& j, std::int64_t iterations, const std::string& where) {
  const std::string type = j.is_string() ? j.get<std::string>() : get_or<std::string>(j, "type", "constant", where);
  const Json body = j.is_object() ? j : Json::object();
  if (type == "constant") {
    check_keys(body.empty() ? Json::object() : body, {"type"}, where);
    return ConstantSchedule{};
  }
  if (type == "poly") {
    check_keys(body.empty() ? Json::object() : body, {"type", "power", "max_iter"}, where);
    PolySchedule p;
    p.power = get_or<Real>(body, "power", 0.9, where);
    p.max_iter = get_or<std::int64_t>(body, "max_iter", std::max<std::int64_t>(iterations, 1), where);
    return p;
  }
  if (type == "plateau") {
    check_keys(body.empty() ? Json::object() : body, {"type", "factor", "patience", "min_improve"}, where);
    PlateauSchedule p;
    p.factor = get_or<Real>(body, "factor", 10, where);
    p.patience = get_or<std::int32_t>(body, "patience", 3, where);
    p.min_improve = get_or<Real>(body, "min_improve", 0.001, where);
    return p;
  }
  throw ConfigError(where + ": schedule must be constant, poly or plateau, got '" + type + "'");
}

Json schedule_json(const LrSchedule& s) {
  Json j;
  if (const auto* p = std::get_if<PolySchedule>(&s)) {
    j["type"] = "poly";
    j["power"] = p->power;
    j["max_iter"] = p->max_iter;
  } else if (const auto* p = std::get_if<PlateauSchedule>(&s)) {
    j["type"] = "plateau";
    j["factor"] = p->factor;
    j["patience"] = p->patience;
    j["min_improve"] = p->min_improve;
  } else {
    j["type"] = "constant";
  }
  return j;
}

ConvLayerSpec parse_conv(const Json& j, bool dense, const std::string& where) {
  check_keys(j,
             dense ? std::set<std::string>{"type", "out_channels", "kernel", "depth_diff", "activation"}
                   : std::set<std::string>{"type", "out_channels", "kernel", "s_r", "q", "s_max", "depth_diff",
                                           "activation", "sparsity", "reference_depth", "pool_product"},
             where);
  ConvLayerSpec c;
  if (!j.contains("out_channels")) throw ConfigError(where + ": out_channels is required");
  c.out_channels = get_or<std::size_t>(j, "out_channels", 1, where);
  c.kernel = get_or<std::size_t>(j, "kernel", 3, where);
  c.depth_diff = get_or<bool>(j, "depth_diff", false, where);
  if (j.contains("activation")) c.activation = parse_activation(j.at("activation").get<std::string>(), where);
  if (dense) {
    c.mode = SparsityMode::dense;
    return c;
  }
  if (j.contains("s_r")) {
    const auto& s = j.at("s_r");
    c.scale_groups = s.is_array() ? s.get<std::vector<Real>>() : std::vector<Real>{s.get<Real>()};
  }
  c.q = get_or<std::int32_t>(j, "q", 1, where);
  c.s_max = get_or<std::int32_t>(j, "s_max", 16, where);
  if (j.contains("sparsity")) c.mode = parse_mode(j.at("sparsity").get<std::string>(), where);
  if (j.contains("reference_depth")) c.reference_depth = j.at("reference_depth").get<Real>();
  if (j.contains("pool_product")) c.pool_product = j.at("pool_product").get<std::int32_t>();
  return c;
}

}  // namespace

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunSpec parse_run_spec(const Json& j) {
  check_keys(j, {"seed", "mean_depth", "input", "layers", "optimizer", "training"}, "config");
  RunSpec spec;
  spec.seed = get_or<std::uint64_t>(j, "seed", 1, "config");
  if (j.contains("mean_depth")) {
    spec.network.mean_depth = get_or<Real>(j, "mean_depth", 1000, "config");
    spec.mean_depth_given = true;
  }

  if (j.contains("input")) {
    const auto& in = j.at("input");
    check_keys(in, {"channels", "source"}, "config.input");
    spec.network.input_channels = get_or<std::size_t>(in, "channels", 1, "config.input");
    const auto source = get_or<std::string>(in, "source", "depth", "config.input");
    if (source == "depth") {
      spec.network.source = InputSource::depth;
    } else if (source == "synthetic-intensity") {
      spec.network.source = InputSource::synthetic_intensity;
    } else {
      throw ConfigError("config.input: source must be depth or synthetic-intensity");
    }
  }

  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, {"iterations", "batch_size", "val_every", "select_metric"}, "config.training");
    spec.training.iterations = get_or<std::int64_t>(t, "iterations", 2000, "config.training");
    spec.training.batch_size = get_or<std::size_t>(t, "batch_size", 4, "config.training");
    spec.training.val_every = get_or<std::int64_t>(t, "val_every", 200, "config.training");
    const auto metric = get_or<std::string>(t, "select_metric", "mean_iou", "config.training");
    if (metric == "mean_iou") {
      spec.training.select_metric = SelectMetric::mean_iou;
    } else if (metric == "f1") {
      spec.training.select_metric = SelectMetric::f1;
    } else {
      throw ConfigError("config.training: select_metric must be mean_iou or f1");
    }
    if (spec.training.iterations < 0) throw ConfigError("config.training: iterations must be >= 0");
    if (spec.training.batch_size == 0) throw ConfigError("config.training: batch_size must be >= 1");
    if (spec.training.val_every < 1) throw ConfigError("config.training: val_every must be >= 1");
  }

  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    check_keys(o, {"mu", "gamma", "schedule"}, "config.optimizer");
    spec.optimizer.mu = get_or<Real>(o, "mu", 0.9, "config.optimizer");
    spec.optimizer.gamma = get_or<Real>(o, "gamma", 0.01, "config.optimizer");
    if (o.contains("schedule")) {
      spec.optimizer.schedule = parse_schedule(o.at("schedule"), spec.training.iterations, "config.optimizer.schedule");
    }
  }

  if (!j.contains("layers") || !j.at("layers").is_array()) throw ConfigError("config: layers[] is required");
  const auto& layers = j.at("layers");
  bool have_loss = false;
  std::size_t conv_count = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto where = "config.layers[" + std::to_string(i) + "]";
    const auto& l = layers[i];
    if (have_loss) throw ConfigError(where + ": softmax_loss must be the last layer");
    const auto type = get_or<std::string>(l, "type", "", where);
    if (type == "dam_conv" || type == "conv_dense") {
      spec.network.layers.emplace_back(parse_conv(l, type == "conv_dense", where));
      ++conv_count;
    } else if (type == "maxpool") {
      check_keys(l, {"type", "window", "stride"}, where);
      PoolLayerSpec p;
      p.window = get_or<std::size_t>(l, "window", 2, where);
      p.stride = get_or<std::size_t>(l, "stride", p.window, where);
      spec.network.layers.emplace_back(p);
    } else if (type == "softmax_loss") {
      check_keys(l, {"type", "normalize", "lambda", "ignore_label"}, where);
      spec.network.loss.normalize = get_or<bool>(l, "normalize", true, where);
      spec.network.loss.lambda = get_or<Real>(l, "lambda", 0.0005, where);
      if (l.contains("ignore_label")) spec.network.loss.ignore_label = l.at("ignore_label").get<std::int32_t>();
      have_loss = true;
    } else {
      throw ConfigError(where + ": unknown layer type '" + type + "'");
    }
  }
  if (!have_loss) throw ConfigError("config: layers[] must end with a softmax_loss entry");

  // The conv feeding softmax defaults to the identity transfer function.
  std::size_t seen = 0;
  for (std::size_t i = 0; i < spec.network.layers.size(); ++i) {
    auto* conv = std::get_if<ConvLayerSpec>(&spec.network.layers[i]);
    if (!conv) continue;
    // softmax_loss is last, so network layer i is json layer i.
    if (++seen == conv_count && !layers[i].contains("activation")) conv->activation = Activation::identity;
  }

  try {
    spec.network.validate();
    Sgd(spec.optimizer.mu, spec.optimizer.gamma, spec.optimizer.schedule);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

Json to_json(const RunSpec& spec) {
  Json j;
  j["seed"] = spec.seed;
  if (spec.mean_depth_given) j["mean_depth"] = spec.network.mean_depth;
  j["input"] = {{"channels", spec.network.input_channels},
                {"source", spec.network.source == InputSource::depth ? "depth" : "synthetic-intensity"}};
  Json layers = Json::array();
  for (const auto& l : spec.network.layers) {
    Json e;
    if (const auto* p = std::get_if<PoolLayerSpec>(&l)) {
      e["type"] = "maxpool";
      e["window"] = p->window;
      e["stride"] = p->stride;
    } else {
      const auto& c = std::get<ConvLayerSpec>(l);
      e["type"] = c.mode == SparsityMode::dense ? "conv_dense" : "dam_conv";
      e["out_channels"] = c.out_channels;
      e["kernel"] = c.kernel;
      if (c.mode != SparsityMode::dense) {
        e["s_r"] = c.scale_groups;
        e["q"] = c.q;
        e["s_max"] = c.s_max;
        e["sparsity"] = mode_name(c.mode);
        if (c.reference_depth) e["reference_depth"] = *c.reference_depth;
        if (c.pool_product) e["pool_product"] = *c.pool_product;
      }
      e["depth_diff"] = c.depth_diff;
      e["activation"] = activation_name(c.activation);
    }
    layers.push_back(e);
  }
  Json loss;
  loss["type"] = "softmax_loss";
  loss["normalize"] = spec.network.loss.normalize;
  loss["lambda"] = spec.network.loss.lambda;
  if (spec.network.loss.ignore_label) loss["ignore_label"] = *spec.network.loss.ignore_label;
  layers.push_back(loss);
  j["layers"] = layers;
  j["optimizer"] = {{"mu", spec.optimizer.mu}, {"gamma", spec.optimizer.gamma},
                    {"schedule", schedule_json(spec.optimizer.schedule)}};
  j["training"] = {{"iterations", spec.training.iterations},
                   {"batch_size", spec.training.batch_size},
                   {"val_every", spec.training.val_every},
                   {"select_metric", spec.training.select_metric == SelectMetric::f1 ? "f1" : "mean_iou"}};
  return j;
}

void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    const bool last = dot == std::string::npos;
    if (node->is_array()) {
      std::size_t idx = 0;
      try {
        idx = std::stoul(part);
      } catch (const std::exception&) {
        throw ConfigError("override '" + key + "': '" + part + "' is not an array index");
      }
      if (idx >= node->size()) throw ConfigError("override '" + key + "': index out of range");
      node = &(*node)[idx];
    } else {
      node = &(*node)[part];
    }
    if (last) break;
    start = dot + 1;
  }
  *node = value;
}

GeneratorConfig parse_generator_config(const Json& j) {
  check_keys(j, {"height", "width", "focal_px", "object_size_mm", "wall_offset_mm", "shapes", "splits", "seed",
                 "emit_pgm"},
             "generator");
  GeneratorConfig c;
  c.height = get_or<std::size_t>(j, "height", c.height, "generator");
  c.width = get_or<std::size_t>(j, "width", c.width, "generator");
  c.focal_px = get_or<Real>(j, "focal_px", c.focal_px, "generator");
  c.object_size_mm = get_or<Real>(j, "object_size_mm", c.object_size_mm, "generator");
  c.wall_offset_mm = get_or<Real>(j, "wall_offset_mm", c.wall_offset_mm, "generator");
  c.seed = get_or<std::uint64_t>(j, "seed", c.seed, "generator");
  c.emit_pgm = get_or<bool>(j, "emit_pgm", c.emit_pgm, "generator");
  if (j.contains("shapes")) {
    c.shapes.clear();
    try {
      for (const auto& s : j.at("shapes")) c.shapes.push_back(parse_shape(s.get<std::string>()));
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string("generator: ") + e.what());
    }
  }
  if (j.contains("splits")) {
    c.splits.clear();
    for (std::size_t i = 0; i < j.at("splits").size(); ++i) {
      const auto& s = j.at("splits")[i];
      const auto where = "generator.splits[" + std::to_string(i) + "]";
      check_keys(s, {"name", "count", "distance_min_mm", "distance_max_mm"}, where);
      SplitConfig split;
      split.name = get_or<std::string>(s, "name", "", where);
      split.count = get_or<std::size_t>(s, "count", 1, where);
      split.distance_min_mm = get_or<Real>(s, "distance_min_mm", 800, where);
      split.distance_max_mm = get_or<Real>(s, "distance_max_mm", 1600, where);
      c.splits.push_back(split);
    }
  }
  try {
    c.validate();
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace dam
