#pragma once

#include <cstdint>
#include <string>

#include "dam/tensor.hpp"

namespace dam {

/// Two stacked DaM layers (ReLU, 3-tap kernels) applied to a scene and to the same scene
/// seen g times closer: the rescaled input x_hat[g*i] = x[i] with unrelated values between
/// lattice points, and depths divided by g so every dilation grows by g.
struct InvarianceCase {
  std::size_t dims = 1;      // 1: single-channel 1-D signal with shared weights; 2: multi-channel images
  std::int32_t g = 2;
  std::uint64_t seed = 1;
  bool depth_diff = false;   // first layer reads depth differences (2-D only)
};

struct InvarianceResult {
  Real deviation = 0;          // max |x_hat^3 - x^3| over lattice positions, adaptive dilation
  Real control_deviation = 0;  // the same with every dilation fixed at 1
  std::size_t compared = 0;    // lattice positions compared (all output channels)
  std::size_t resamples = 0;   // control redraws needed to clear the control threshold
};

/// Throws for g < 1 or dims outside {1, 2}.
InvarianceResult run_invariance(const InvarianceCase& c, Real control_threshold = 1e-3);

std::string describe(const InvarianceCase& c, const InvarianceResult& r);

}  // namespace dam
