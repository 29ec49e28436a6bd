#include "dam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <nlohmann/json.hpp>
#include <sstream>

#include "dam/random.hpp"
#include "dam/tensor_io.hpp"

namespace dam {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool inside(Shape shape, Real dx, Real dy, Real size_px) {
  switch (shape) {
    case Shape::disk:
      return dx * dx + dy * dy <= size_px * size_px;
    case Shape::square:
      return std::abs(dx) <= size_px && std::abs(dy) <= size_px;
    case Shape::ring: {
      const Real r2 = dx * dx + dy * dy;
      const Real inner = 0.5 * size_px;
      return r2 <= size_px * size_px && r2 >= inner * inner;
    }
  }
  return false;
}

std::string sample_stem(std::size_t index) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

}  // namespace

const char* shape_name(Shape shape) {
  switch (shape) {
    case Shape::disk:
      return "disk";
    case Shape::square:
      return "square";
    case Shape::ring:
      return "ring";
  }
  return "?";
}

Shape parse_shape(const std::string& name) {
  if (name == "disk") return Shape::disk;
  if (name == "square") return Shape::square;
  if (name == "ring") return Shape::ring;
  throw Error("unknown shape '" + name + "' (expected disk, square or ring)");
}

Real projected_size_px(Real focal_px, Real size_mm, Real distance_mm) {
  return focal_px * size_mm / distance_mm;
}

RenderedScene render(const SceneSpec& spec) {
  if (spec.height == 0 || spec.width == 0) throw Error("render: empty image");
  if (!(spec.focal_px > 0) || !(spec.background_mm > 0)) {
    throw Error("render: focal length and background depth must be positive");
  }
  for (const auto& obj : spec.objects) {
    if (!(obj.distance_mm > 0) || !(obj.distance_mm < spec.background_mm)) {
      throw Error("render: object distance " + std::to_string(obj.distance_mm) +
                  " mm must lie in (0, background depth)");
    }
    if (!(obj.size_mm > 0)) throw Error("render: object size must be positive");
    if (obj.class_index <= 0) throw Error("render: object class 0 is reserved for background");
  }

  RenderedScene out{DepthMap(spec.height, spec.width, spec.background_mm), LabelMap(spec.height, spec.width, 0)};
  const Real cx = (static_cast<Real>(spec.width) - 1) / 2;
  const Real cy = (static_cast<Real>(spec.height) - 1) / 2;

  // Painter's order: farthest first, so nearer objects overwrite it.
  std::vector<std::size_t> order(spec.objects.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return spec.objects[a].distance_mm > spec.objects[b].distance_mm;
  });

  for (std::size_t idx : order) {
    const auto& obj = spec.objects[idx];
    const Real scale = spec.focal_px / obj.distance_mm;
    const Real px = cx + obj.center_x_mm * scale;
    const Real py = cy + obj.center_y_mm * scale;
    const Real size_px = projected_size_px(spec.focal_px, obj.size_mm, obj.distance_mm);
    std::size_t covered = 0;
    for (std::size_t m = 0; m < spec.height; ++m) {
      for (std::size_t n = 0; n < spec.width; ++n) {
        if (!inside(obj.shape, static_cast<Real>(n) - px, static_cast<Real>(m) - py, size_px)) continue;
        out.depth(m, n) = obj.distance_mm;
        out.labels(m, n) = obj.class_index;
        ++covered;
      }
    }
    if (covered == 0) {
      throw Error("render: object " + std::to_string(idx) + " (" + shape_name(obj.shape) +
                  ") covers no pixel after projection");
    }
  }
  return out;
}

void GeneratorConfig::validate() const {
  if (height == 0 || width == 0) throw Error("generator: image dimensions must be positive");
  if (!(focal_px > 0)) throw Error("generator: focal_px must be positive");
  if (!(object_size_mm > 0)) throw Error("generator: object_size_mm must be positive");
  if (!(wall_offset_mm > 0)) throw Error("generator: wall_offset_mm must be positive");
  if (shapes.empty()) throw Error("generator: need at least one shape class");
  if (splits.empty()) throw Error("generator: need at least one split");
  for (const auto& s : splits) {
    if (s.name.empty()) throw Error("generator: split without a name");
    if (s.count == 0) throw Error("generator: split '" + s.name + "' needs count >= 1");
    if (!(s.distance_min_mm > 0) || s.distance_min_mm > s.distance_max_mm) {
      throw Error("generator: split '" + s.name + "' has invalid distance range [" +
                  std::to_string(s.distance_min_mm) + ", " + std::to_string(s.distance_max_mm) + "]");
    }
  }
}

std::vector<GeneratedSample> generate_split(const GeneratorConfig& config, const SplitConfig& split) {
  config.validate();
  std::vector<GeneratedSample> samples;
  samples.reserve(split.count);
  const Real cx = (static_cast<Real>(config.width) - 1) / 2;
  const Real cy = (static_cast<Real>(config.height) - 1) / 2;
  for (std::size_t i = 0; i < split.count; ++i) {
    Rng rng(mix_seed(config.seed, fnv1a(split.name) ^ (0x51ed27ULL * (i + 1))));
    SceneObject obj;
    const auto shape_index = rng.below(config.shapes.size());
    obj.shape = config.shapes[shape_index];
    obj.class_index = static_cast<std::int32_t>(shape_index + 1);
    obj.size_mm = config.object_size_mm;
    // Quantised to 1/16 mm so the value survives the f32 round trip through DAT1 exactly.
    obj.distance_mm = std::clamp(std::round(rng.uniform(split.distance_min_mm, split.distance_max_mm) * 16) / 16,
                                 split.distance_min_mm, split.distance_max_mm);

    // Keep the whole object in frame with a one-pixel margin where possible.
    const Real extent = projected_size_px(config.focal_px, obj.size_mm, obj.distance_mm) + 1;
    auto place = [&](Real centre, std::size_t dim) {
      const Real lo = extent;
      const Real hi = static_cast<Real>(dim) - 1 - extent;
      const Real px = lo < hi ? rng.uniform(lo, hi) : centre;
      return (px - centre) * obj.distance_mm / config.focal_px;
    };
    obj.center_x_mm = place(cx, config.width);
    obj.center_y_mm = place(cy, config.height);

    SceneSpec scene;
    scene.height = config.height;
    scene.width = config.width;
    scene.focal_px = config.focal_px;
    scene.background_mm = obj.distance_mm + config.wall_offset_mm;
    scene.objects.push_back(obj);
    samples.push_back({scene, render(scene)});
  }
  return samples;
}

DepthStats depth_statistics(const std::vector<GeneratedSample>& samples) {
  Real sum = 0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    for (Real d : s.rendered.depth.values()) sum += d;
    count += s.rendered.depth.size();
  }
  if (count == 0) throw Error("depth_statistics: no pixels");
  DepthStats stats;
  stats.mean_mm = sum / static_cast<Real>(count);
  Real sq = 0;
  for (const auto& s : samples) {
    for (Real d : s.rendered.depth.values()) sq += (d - stats.mean_mm) * (d - stats.mean_mm);
  }
  stats.std_mm = std::sqrt(sq / static_cast<Real>(count));
  return stats;
}

std::string generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string() + ": " + ec.message());

  nlohmann::ordered_json manifest;
  manifest["format"] = "dam-synth-1";
  manifest["height"] = config.height;
  manifest["width"] = config.width;
  manifest["focal_px"] = config.focal_px;
  manifest["object_size_mm"] = config.object_size_mm;
  manifest["wall_offset_mm"] = config.wall_offset_mm;
  manifest["classes"] = config.classes();
  auto names = nlohmann::ordered_json::array({"background"});
  for (auto s : config.shapes) names.push_back(shape_name(s));
  manifest["class_names"] = names;
  manifest["seed"] = config.seed;

  std::optional<DepthStats> train_stats;
  std::size_t total = 0;
  nlohmann::ordered_json splits = nlohmann::ordered_json::object();
  for (const auto& split : config.splits) {
    const auto samples = generate_split(config, split);
    if (split.name == "train") train_stats = depth_statistics(samples);
    const auto dir = out_dir / split.name;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());

    nlohmann::ordered_json entry;
    entry["count"] = split.count;
    entry["distance_min_mm"] = split.distance_min_mm;
    entry["distance_max_mm"] = split.distance_max_mm;
    auto files = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto stem = sample_stem(i);
      const auto depth_name = stem + "_depth.dat1";
      const auto label_name = stem + "_label.dat1";
      save_depth_map(dir / depth_name, samples[i].rendered.depth);
      save_label_map(dir / label_name, samples[i].rendered.labels);
      if (config.emit_pgm) {
        write_depth_pgm(dir / (stem + "_depth.pgm"), samples[i].rendered.depth);
        write_label_pgm(dir / (stem + "_label.pgm"), samples[i].rendered.labels, config.classes());
      }
      const auto& obj = samples[i].scene.objects.front();
      nlohmann::ordered_json f;
      f["depth"] = split.name + "/" + depth_name;
      f["label"] = split.name + "/" + label_name;
      f["distance_mm"] = obj.distance_mm;
      f["shape"] = shape_name(obj.shape);
      files.push_back(f);
    }
    entry["samples"] = files;
    splits[split.name] = entry;
    total += split.count;
  }
  if (!train_stats) {
    // No split named train: fall back to every generated scene.
    std::vector<GeneratedSample> all;
    for (const auto& split : config.splits) {
      auto s = generate_split(config, split);
      all.insert(all.end(), s.begin(), s.end());
    }
    train_stats = depth_statistics(all);
  }
  manifest["sample_count"] = total;
  manifest["mean_depth_mm"] = train_stats->mean_mm;
  manifest["std_depth_mm"] = train_stats->std_mm;
  manifest["splits"] = splits;

  const std::string text = manifest.dump(2) + "\n";
  std::ofstream os(out_dir / "manifest.json", std::ios::trunc);
  if (!os) throw Error("cannot write " + (out_dir / "manifest.json").string());
  os << text;
  return text;
}

FeatureMap intensity_input(const DepthMap& depth) {
  if (depth.has_holes()) throw Error("intensity_input: depth map has holes");
  FeatureMap x(1, depth.height(), depth.width());
  for (std::size_t i = 0; i < depth.size(); ++i) x.values()[i] = depth.values()[i] / 1000.0;
  return x;
}

FeatureMap synthetic_intensity_input(const DepthMap& depth) {
  if (depth.has_holes()) throw Error("synthetic_intensity_input: depth map has holes");
  FeatureMap x(1, depth.height(), depth.width());
  for (std::size_t i = 0; i < depth.size(); ++i) x.values()[i] = 1000.0 / depth.values()[i];
  return x;
}

}  // namespace dam
