#include "dam/invariance.hpp"

#include <cmath>
#include <cstdio>

#include "dam/dam_conv.hpp"
#include "dam/random.hpp"

namespace dam {
namespace {

constexpr std::size_t kMaxControlDraws = 32;

struct Scene {
  FeatureMap x;
  DepthMap depth;
};

struct Stack {
  DamConv first;
  DamConv second;

  FeatureMap run(const Scene& s) {
    const auto h = first.forward(s.x, s.depth);
    return second.forward(h, s.depth);
  }
  FeatureMap run_fixed(const Scene& s) {
    const auto h = first.forward_with_sparsity(s.x, SparsityMap(s.x.channels(), s.x.height(), s.x.width(), 1));
    return second.forward_with_sparsity(h, SparsityMap(h.channels(), h.height(), h.width(), 1));
  }
};

DamConv random_layer(Rng& rng, std::size_t out, std::size_t in, std::size_t kh, std::vector<Real> group_scales,
                     bool depth_diff) {
  WeightTensor w(out, in, kh, 3);
  for (auto& v : w.values()) v = rng.uniform(-1, 1);
  std::vector<Real> b(out);
  for (auto& v : b) v = rng.uniform(0.1, 0.5);
  MultiscaleParams p = MultiscaleParams::uniform(in, 1000);
  p.scales = expand_scale_groups(group_scales, in);
  return DamConv(std::move(w), std::move(b), std::move(p), Activation::relu, depth_diff);
}

// The scene at distance d and its copy at d/g. Depths are chosen so every p_r / depth is an
// integer; off-lattice pixels of the close-up get unrelated values and depths.
std::pair<Scene, Scene> make_scenes(Rng& rng, std::size_t channels, std::size_t h, std::size_t w, std::int32_t g) {
  const std::size_t gh = h == 1 ? 1 : g * (h - 1) + 1;
  const std::size_t gw = g * (w - 1) + 1;
  Scene far{FeatureMap(channels, h, w), DepthMap(h, w)};
  Scene near{FeatureMap(channels, gh, gw), DepthMap(gh, gw)};
  for (auto& v : near.x.values()) v = rng.uniform(-2, 2);
  for (auto& d : near.depth.values()) d = rng.uniform(150, 3000);
  const std::size_t gm = h == 1 ? 0 : static_cast<std::size_t>(g);
  for (std::size_t m = 0; m < h; ++m) {
    for (std::size_t n = 0; n < w; ++n) {
      const Real d = rng.below(2) ? 1000.0 : 500.0;
      far.depth(m, n) = d;
      near.depth(m * gm, n * g) = d / g;
      for (std::size_t r = 0; r < channels; ++r) {
        far.x(r, m, n) = rng.uniform(-1, 1);
        near.x(r, m * gm, n * g) = far.x(r, m, n);
      }
    }
  }
  return {std::move(far), std::move(near)};
}

Real lattice_deviation(const FeatureMap& far, const FeatureMap& near, std::int32_t g, std::size_t* compared) {
  const std::size_t gm = far.height() == 1 ? 0 : static_cast<std::size_t>(g);
  Real worst = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < far.channels(); ++t) {
    for (std::size_t m = 0; m < far.height(); ++m) {
      for (std::size_t n = 0; n < far.width(); ++n) {
        worst = std::max(worst, std::abs(far(t, m, n) - near(t, m * gm, n * g)));
        ++count;
      }
    }
  }
  if (compared) *compared = count;
  return worst;
}

}  // namespace

InvarianceResult run_invariance(const InvarianceCase& c, Real control_threshold) {
  if (c.g < 1) throw Error("invariance: g must be a positive integer");
  if (c.dims != 1 && c.dims != 2) throw Error("invariance: dims must be 1 or 2");
  if (c.depth_diff && c.dims != 2) throw Error("invariance: depth_diff is only exercised in 2-D");

  InvarianceResult result;
  for (std::size_t draw = 0; draw < kMaxControlDraws; ++draw) {
    Rng rng(mix_seed(c.seed, draw));
    Stack stack;
    std::pair<Scene, Scene> scenes;
    if (c.dims == 1) {
      // One channel, the same kernel and bias in both layers.
      stack.first = random_layer(rng, 1, 1, 1, {1.0}, false);
      stack.second = DamConv(stack.first.weights(), stack.first.bias(), stack.first.params(), Activation::relu);
      scenes = make_scenes(rng, 1, 1, 15, c.g);
    } else {
      stack.first = random_layer(rng, 3, 2, 3, {1.0, 2.0}, c.depth_diff);
      stack.second = random_layer(rng, 2, 3, 3, {2.0, 1.0, 1.0}, false);
      scenes = make_scenes(rng, 2, 9, 9, c.g);
    }
    const auto far = stack.run(scenes.first);
    const auto near = stack.run(scenes.second);
    result.deviation = lattice_deviation(far, near, c.g, &result.compared);

    if (c.g == 1) return result;  // the control is identical too; nothing to separate
    result.control_deviation = lattice_deviation(stack.run_fixed(scenes.first), stack.run_fixed(scenes.second), c.g,
                                                 nullptr);
    result.resamples = draw;
    if (result.control_deviation > control_threshold) return result;
  }
  return result;
}

std::string describe(const InvarianceCase& c, const InvarianceResult& r) {
  char line[200];
  std::snprintf(line, sizeof line, "%zu-D g=%d%s: adaptive deviation %.3e over %zu positions, fixed-dilation control %.3e",
                c.dims, c.g, c.depth_diff ? " depth_diff" : "", r.deviation, r.compared, r.control_deviation);
  return line;
}

}  // namespace dam
