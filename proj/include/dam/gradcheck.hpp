#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dam/dam_conv.hpp"
#include "dam/network.hpp"

namespace dam {

/// |a - n| / max(|a|, |n|, floor).
Real relative_error(Real analytic, Real numeric, Real floor);

struct BlockCheck {
  std::string name;
  std::size_t entries = 0;
  Real worst = 0;            // largest relative error in the block
  std::size_t worst_index = 0;
  Real analytic_at_worst = 0;
  Real numeric_at_worst = 0;
};

struct GradcheckReport {
  std::vector<BlockCheck> blocks;
  Real tolerance = 0;
  Real kink_margin = 0;  // distance of the checked point from the nearest ReLU kink / pool tie
  std::size_t attempts = 1;

  Real worst() const;
  bool passed() const { return worst() < tolerance; }
  std::string to_table() const;
};

struct GradcheckOptions {
  Real eps = 1e-5;
  Real tolerance = 1e-5;
  Real floor = 1e-6;          // keeps near-zero gradients from inflating the relative error
  Real min_margin = 1e-4;     // resample when the point sits this close to a kink
  std::size_t max_attempts = 64;
  /// Applied to the analytic gradients before comparison (negative-control hook).
  std::function<void(std::vector<std::vector<Real>>&)> corrupt;
};

/// One layer against e = sum(G * forward(X)) + (lambda / 2) * |W|^2 with a random G.
/// Blocks: weight, bias, input.
GradcheckReport check_layer(DamConv& layer, const FeatureMap& input, const SparsityMap& sparsity,
                            const FeatureMap& grad_out, Real lambda, const GradcheckOptions& options = {});

/// Random layer with mixed S in {1, 2, 3}, resampled until clear of ReLU kinks.
GradcheckReport check_random_layer(std::uint64_t seed, std::size_t in_channels, std::size_t out_channels,
                                   std::size_t height, std::size_t width, bool depth_diff,
                                   const GradcheckOptions& options = {});

/// Whole network against the total loss e = e_a + lambda * e_b, every parameter block plus the input.
/// Input, depth (mixed S) and labels are drawn from `seed`; weights come from Network::build.
GradcheckReport check_network(const NetworkSpec& spec, std::size_t height, std::size_t width, std::uint64_t seed,
                              const GradcheckOptions& options = {});

}  // namespace dam
