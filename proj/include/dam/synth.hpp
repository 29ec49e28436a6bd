#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dam/tensor.hpp"

namespace dam {

enum class Shape { disk, square, ring };

const char* shape_name(Shape shape);
Shape parse_shape(const std::string& name);

/// One flat object facing the camera. size_mm is the radius of a disk or ring
/// (the ring's hole has half that radius) and the half side of a square.
struct SceneObject {
  Shape shape = Shape::disk;
  Real size_mm = 100;
  std::int32_t class_index = 1;
  Real center_x_mm = 0;  // camera-plane offset, +x to the right
  Real center_y_mm = 0;  // camera-plane offset, +y downward
  Real distance_mm = 1000;
};

/// Pinhole camera with its principal point on the centre of the pixel grid
/// ((width - 1) / 2, (height - 1) / 2) and pixel (m, n) centred at (n, m).
struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  Real focal_px = 200;
  Real background_mm = 5000;
  std::vector<SceneObject> objects;
};

struct RenderedScene {
  DepthMap depth;
  LabelMap labels;  // 0 is background
};

/// f * size / d.
Real projected_size_px(Real focal_px, Real size_mm, Real distance_mm);

/// Rasterises every object at its projected size; a pixel belongs to a shape iff
/// its centre lies inside it. Nearer objects occlude farther ones.
RenderedScene render(const SceneSpec& spec);

struct SplitConfig {
  std::string name;
  std::size_t count = 1;
  Real distance_min_mm = 800;
  Real distance_max_mm = 1600;
};

struct GeneratorConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  Real focal_px = 200;
  Real object_size_mm = 100;
  /// Wall distance behind the object; moving the camera keeps relative depth fixed.
  Real wall_offset_mm = 500;
  std::vector<Shape> shapes{Shape::disk, Shape::square, Shape::ring};  // class = position + 1
  std::vector<SplitConfig> splits{{"train", 600, 800, 1600}, {"val", 100, 800, 1600}, {"test", 200, 2400, 4000}};
  std::uint64_t seed = 1;
  bool emit_pgm = false;

  void validate() const;
  std::size_t classes() const { return shapes.size() + 1; }
};

struct GeneratedSample {
  SceneSpec scene;
  RenderedScene rendered;
};

/// Deterministic scenes for one split; each holds a single object at a uniform
/// distance in the split range and a uniform in-frame position.
std::vector<GeneratedSample> generate_split(const GeneratorConfig& config, const SplitConfig& split);

struct DepthStats {
  Real mean_mm = 0;
  Real std_mm = 0;
};

/// Mean and standard deviation over every pixel of every depth map.
DepthStats depth_statistics(const std::vector<GeneratedSample>& samples);

/// Writes <out>/<split>/<idx>_depth.dat1 and <idx>_label.dat1 (plus PGM previews
/// when enabled) and <out>/manifest.json. Returns the manifest text.
std::string generate_dataset(const GeneratorConfig& config, const std::filesystem::path& out_dir);

/// Depth in metres as a single-channel feature map.
FeatureMap intensity_input(const DepthMap& depth);
/// Inverse-depth shading (1000 / depth_mm), a stand-in brightness image.
FeatureMap synthetic_intensity_input(const DepthMap& depth);

}  // namespace dam
