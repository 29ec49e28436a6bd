#include "dam/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "dam/random.hpp"

namespace dam {
namespace {

// Central differences of `loss` over every entry of `values`, compared with `analytic`.
BlockCheck compare_block(const std::string& name, std::span<Real> values, std::span<const Real> analytic,
                         const std::function<Real()>& loss, const GradcheckOptions& opt) {
  BlockCheck check{name, values.size()};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + opt.eps;
    const Real plus = loss();
    values[i] = saved - opt.eps;
    const Real minus = loss();
    values[i] = saved;
    const Real numeric = (plus - minus) / (2 * opt.eps);
    const Real err = relative_error(analytic[i], numeric, opt.floor);
    if (!(err <= check.worst) || i == 0) {
      check.worst = std::isnan(err) ? std::numeric_limits<Real>::infinity() : err;
      check.worst_index = i;
      check.analytic_at_worst = analytic[i];
      check.numeric_at_worst = numeric;
    }
  }
  return check;
}

Real sum_product(const FeatureMap& a, const FeatureMap& b) {
  Real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
  return s;
}

Real half_squared_norm(std::span<const Real> w) {
  Real s = 0;
  for (Real v : w) s += v * v;
  return 0.5 * s;
}

FeatureMap random_map(Rng& rng, std::size_t c, std::size_t h, std::size_t w, Real lo, Real hi) {
  FeatureMap x(c, h, w);
  for (auto& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

}  // namespace

Real relative_error(Real analytic, Real numeric, Real floor) {
  const Real scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

Real GradcheckReport::worst() const {
  Real w = 0;
  for (const auto& b : blocks) w = std::max(w, b.worst);
  return w;
}

std::string GradcheckReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %8s %12s %14s %14s\n", "block", "entries", "worst_rel", "analytic",
                "numeric");
  os << line;
  for (const auto& b : blocks) {
    std::snprintf(line, sizeof line, "%-16s %8zu %12.3e %14.6e %14.6e\n", b.name.c_str(), b.entries, b.worst,
                  b.analytic_at_worst, b.numeric_at_worst);
    os << line;
  }
  std::snprintf(line, sizeof line, "worst %.3e, tolerance %.1e, kink margin %.3e, attempts %zu: %s\n", worst(),
                tolerance, kink_margin, attempts, passed() ? "PASS" : "FAIL");
  os << line;
  return os.str();
}

GradcheckReport check_layer(DamConv& layer, const FeatureMap& input, const SparsityMap& sparsity,
                            const FeatureMap& grad_out, Real lambda, const GradcheckOptions& options) {
  FeatureMap x = input;
  const auto out = layer.forward_with_sparsity(x, sparsity);
  if (!out.same_shape(grad_out)) throw Error("check_layer: grad_out " + grad_out.shape_string() + " does not match output " + out.shape_string());

  GradcheckReport report;
  report.tolerance = options.tolerance;
  report.kink_margin = layer.activation() == Activation::relu ? layer.min_abs_preactivation()
                                                              : std::numeric_limits<Real>::infinity();

  const auto g = layer.backward_weights(grad_out, lambda);
  const auto gx = layer.backward_input(grad_out);
  std::vector<std::vector<Real>> analytic{{g.weights.values().begin(), g.weights.values().end()},
                                          g.bias,
                                          {gx.values().begin(), gx.values().end()}};
  if (options.corrupt) options.corrupt(analytic);

  auto loss = [&] {
    return sum_product(grad_out, layer.forward_with_sparsity(x, sparsity)) +
           lambda * half_squared_norm(layer.weights().values());
  };
  report.blocks.push_back(compare_block("weight", layer.weights().values(), analytic[0], loss, options));
  report.blocks.push_back(compare_block("bias", layer.bias(), analytic[1], loss, options));
  report.blocks.push_back(compare_block("input", x.values(), analytic[2], loss, options));
  return report;
}

GradcheckReport check_random_layer(std::uint64_t seed, std::size_t in_channels, std::size_t out_channels,
                                   std::size_t height, std::size_t width, bool depth_diff,
                                   const GradcheckOptions& options) {
  for (std::size_t attempt = 0; attempt < options.max_attempts; ++attempt) {
    Rng rng(mix_seed(seed, attempt));
    WeightTensor w(out_channels, in_channels, 3, 3);
    const Real a = std::sqrt(3.0 / static_cast<Real>(w.fan_in()));
    for (auto& v : w.values()) v = rng.uniform(-a, a);
    std::vector<Real> b(out_channels);
    for (auto& v : b) v = rng.uniform(-0.1, 0.1);
    DamConv layer(std::move(w), std::move(b), MultiscaleParams::uniform(in_channels), Activation::relu, depth_diff);

    SparsityMap s(in_channels, height, width);
    for (auto& v : s.values()) v = static_cast<std::int32_t>(1 + rng.below(3));
    const auto x = random_map(rng, in_channels, height, width, -1, 1);
    const auto grad_out = random_map(rng, out_channels, height, width, -1, 1);

    layer.forward_with_sparsity(x, s);
    if (layer.min_abs_preactivation() < options.min_margin) continue;
    auto report = check_layer(layer, x, s, grad_out, 0.0005, options);
    report.attempts = attempt + 1;
    return report;
  }
  throw NumericError("check_random_layer: no kink-free sample in " + std::to_string(options.max_attempts) +
                     " attempts");
}

GradcheckReport check_network(const NetworkSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed,
                              const GradcheckOptions& options) {
  spec.validate();
  for (std::size_t attempt = 0; attempt < options.max_attempts; ++attempt) {
    const std::uint64_t s = mix_seed(seed, attempt);
    Network net = Network::build(spec, s);
    Rng rng(mix_seed(s, 0xda7a));

    // Depths around the mean so the adaptive layers see a mix of dilations.
    DepthMap depth(height, width);
    for (auto& d : depth.values()) d = spec.mean_depth * rng.uniform(0.3, 1.2);
    auto x = random_map(rng, spec.input_channels, height, width, -1, 1);
    const auto probe = net.forward(x, depth);
    LabelMap labels(probe.height(), probe.width());
    for (auto& l : labels.values()) l = static_cast<std::int32_t>(rng.below(spec.classes()));

    auto sample = net.forward_backward(x, depth, labels);
    const Real margin = net.min_kink_margin();
    if (margin < options.min_margin) continue;

    const auto decayed = net.decayed_blocks();
    auto blocks = net.parameter_blocks();
    std::vector<std::vector<Real>> analytic = sample.params;
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      if (!decayed[b]) continue;
      for (std::size_t i = 0; i < blocks[b].size(); ++i) analytic[b][i] += spec.loss.lambda * blocks[b][i];
    }
    analytic.emplace_back(sample.input.values().begin(), sample.input.values().end());
    if (options.corrupt) options.corrupt(analytic);

    GradcheckReport report;
    report.tolerance = options.tolerance;
    report.kink_margin = margin;
    report.attempts = attempt + 1;
    auto loss = [&] { return net.evaluate_loss(x, depth, labels).total; };
    const auto names = net.parameter_names();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      report.blocks.push_back(compare_block(names[b], blocks[b], analytic[b], loss, options));
    }
    report.blocks.push_back(compare_block("input", x.values(), analytic.back(), loss, options));
    return report;
  }
  throw NumericError("check_network: no kink-free sample in " + std::to_string(options.max_attempts) +
                     " attempts");
}

}  // namespace dam
