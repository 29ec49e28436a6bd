#pragma once

// Straight nested-loop reference implementations. They share no code with the
// library beyond the container types, so agreement is evidence, not tautology.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dam/dam_conv.hpp"
#include "dam/tensor.hpp"

namespace oracle {

using dam::FeatureMap;
using dam::Real;
using dam::SparsityMap;
using dam::WeightTensor;

inline Real padded(const FeatureMap& x, std::size_t r, long m, long n) {
  if (m < 0 || n < 0 || m >= static_cast<long>(x.height()) || n >= static_cast<long>(x.width())) return 0;
  return x(r, static_cast<std::size_t>(m), static_cast<std::size_t>(n));
}

inline bool inside(const FeatureMap& x, long m, long n) {
  return m >= 0 && n >= 0 && m < static_cast<long>(x.height()) && n < static_cast<long>(x.width());
}

/// Plain zero-padded "same" convolution (cross-correlation), no dilation.
inline FeatureMap dense_conv(const FeatureMap& x, const WeightTensor& w, const std::vector<Real>& b, bool relu) {
  FeatureMap out(w.out_channels(), x.height(), x.width());
  const long hh = static_cast<long>(w.kernel_h() / 2);
  const long hw = static_cast<long>(w.kernel_w() / 2);
  for (std::size_t t = 0; t < w.out_channels(); ++t) {
    for (long m = 0; m < static_cast<long>(x.height()); ++m) {
      for (long n = 0; n < static_cast<long>(x.width()); ++n) {
        Real acc = b[t];
        for (std::size_t r = 0; r < x.channels(); ++r) {
          for (long u = -hh; u <= hh; ++u) {
            for (long v = -hw; v <= hw; ++v) {
              acc += w(t, r, static_cast<std::size_t>(u + hh), static_cast<std::size_t>(v + hw)) *
                     padded(x, r, m + u, n + v);
            }
          }
        }
        out(t, static_cast<std::size_t>(m), static_cast<std::size_t>(n)) = relu ? std::max(acc, Real{0}) : acc;
      }
    }
  }
  return out;
}

/// Pre-activation of the sparse convolution, one output at a time.
inline FeatureMap dam_preactivation(const FeatureMap& x, const WeightTensor& w, const std::vector<Real>& b,
                                    const SparsityMap& s, bool diff) {
  FeatureMap out(w.out_channels(), x.height(), x.width());
  const long hh = static_cast<long>(w.kernel_h() / 2);
  const long hw = static_cast<long>(w.kernel_w() / 2);
  for (std::size_t t = 0; t < w.out_channels(); ++t) {
    for (long m = 0; m < static_cast<long>(x.height()); ++m) {
      for (long n = 0; n < static_cast<long>(x.width()); ++n) {
        Real acc = b[t];
        for (std::size_t r = 0; r < x.channels(); ++r) {
          const long S = s(r, static_cast<std::size_t>(m), static_cast<std::size_t>(n));
          for (long u = -hh; u <= hh; ++u) {
            for (long v = -hw; v <= hw; ++v) {
              Real tap = 0;
              if (inside(x, m + S * u, n + S * v)) {
                tap = padded(x, r, m + S * u, n + S * v);
                if (diff) tap -= padded(x, r, m, n);
              }
              acc += w(t, r, static_cast<std::size_t>(u + hh), static_cast<std::size_t>(v + hw)) * tap;
            }
          }
        }
        out(t, static_cast<std::size_t>(m), static_cast<std::size_t>(n)) = acc;
      }
    }
  }
  return out;
}

inline FeatureMap dam_conv(const FeatureMap& x, const WeightTensor& w, const std::vector<Real>& b,
                           const SparsityMap& s, bool diff, bool relu) {
  auto out = dam_preactivation(x, w, b, s, diff);
  if (relu) {
    for (auto& v : out.values()) v = std::max(v, Real{0});
  }
  return out;
}

/// The scatter loop exactly as the input-gradient pseudo-code lays it out:
/// zero the buffer, then visit t, r, m, n, u, v and accumulate into the tap position.
/// `g` is the gradient with respect to the pre-activation.
inline FeatureMap scatter_input_gradient(const FeatureMap& g, const WeightTensor& w, const SparsityMap& s,
                                         std::size_t in_channels, bool diff) {
  FeatureMap gx(in_channels, g.height(), g.width(), 0.0);
  const long hh = static_cast<long>(w.kernel_h() / 2);
  const long hw = static_cast<long>(w.kernel_w() / 2);
  for (std::size_t t = 0; t < w.out_channels(); ++t) {
    for (std::size_t r = 0; r < in_channels; ++r) {
      for (long m = 0; m < static_cast<long>(g.height()); ++m) {
        for (long n = 0; n < static_cast<long>(g.width()); ++n) {
          const long S = s(r, static_cast<std::size_t>(m), static_cast<std::size_t>(n));
          for (long u = -hh; u <= hh; ++u) {
            for (long v = -hw; v <= hw; ++v) {
              const long mm = m + S * u;
              const long nn = n + S * v;
              if (!inside(gx, mm, nn)) continue;
              const Real c = g(t, static_cast<std::size_t>(m), static_cast<std::size_t>(n)) *
                             w(t, r, static_cast<std::size_t>(u + hh), static_cast<std::size_t>(v + hw));
              gx(r, static_cast<std::size_t>(mm), static_cast<std::size_t>(nn)) += c;
              if (diff) gx(r, static_cast<std::size_t>(m), static_cast<std::size_t>(n)) -= c;
            }
          }
        }
      }
    }
  }
  return gx;
}

/// dE/dW[t,r,u,v] = sum_{m,n} g[t,m,n] * tap + lambda * W.
inline WeightTensor weight_gradient(const FeatureMap& g, const FeatureMap& x, const WeightTensor& w,
                                    const SparsityMap& s, bool diff, Real lambda) {
  WeightTensor gw(w.out_channels(), w.in_channels(), w.kernel_h(), w.kernel_w());
  const long hh = static_cast<long>(w.kernel_h() / 2);
  const long hw = static_cast<long>(w.kernel_w() / 2);
  for (std::size_t t = 0; t < w.out_channels(); ++t) {
    for (std::size_t r = 0; r < w.in_channels(); ++r) {
      for (long u = -hh; u <= hh; ++u) {
        for (long v = -hw; v <= hw; ++v) {
          Real acc = 0;
          for (long m = 0; m < static_cast<long>(x.height()); ++m) {
            for (long n = 0; n < static_cast<long>(x.width()); ++n) {
              const long S = s(r, static_cast<std::size_t>(m), static_cast<std::size_t>(n));
              if (!inside(x, m + S * u, n + S * v)) continue;
              Real tap = padded(x, r, m + S * u, n + S * v);
              if (diff) tap -= padded(x, r, m, n);
              acc += g(t, static_cast<std::size_t>(m), static_cast<std::size_t>(n)) * tap;
            }
          }
          const auto i = static_cast<std::size_t>(u + hh);
          const auto j = static_cast<std::size_t>(v + hw);
          gw(t, r, i, j) = acc + lambda * w(t, r, i, j);
        }
      }
    }
  }
  return gw;
}

/// Segmentation metrics written out directly from their definitions, with the
/// convention that classes whose denominator vanishes are skipped in the means.
struct Metrics {
  double pixel_acc, mean_acc, mean_iou, fw_iou;
  double precision, recall, f1;  // two-class only
};

inline Metrics metrics(const std::vector<std::vector<std::uint64_t>>& n) {
  const std::size_t c = n.size();
  double total = 0, diag = 0;
  std::vector<double> t(c, 0), col(c, 0);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      total += static_cast<double>(n[i][j]);
      t[i] += static_cast<double>(n[i][j]);
      col[j] += static_cast<double>(n[i][j]);
    }
    diag += static_cast<double>(n[i][i]);
  }
  Metrics out{};
  out.pixel_acc = diag / total;
  double acc_sum = 0, iou_sum = 0, fw = 0;
  int acc_count = 0, iou_count = 0;
  for (std::size_t i = 0; i < c; ++i) {
    const double nii = static_cast<double>(n[i][i]);
    if (t[i] > 0) {
      acc_sum += nii / t[i];
      ++acc_count;
    }
    const double denom = t[i] + col[i] - nii;
    if (denom > 0) {
      iou_sum += nii / denom;
      ++iou_count;
      fw += t[i] * nii / denom;
    }
  }
  out.mean_acc = acc_sum / acc_count;
  out.mean_iou = iou_sum / iou_count;
  out.fw_iou = fw / total;
  if (c == 2) {
    const double n11 = static_cast<double>(n[1][1]);
    const double n01 = static_cast<double>(n[0][1]);
    const double n10 = static_cast<double>(n[1][0]);
    out.precision = n11 + n01 > 0 ? n11 / (n11 + n01) : 0;
    out.recall = n11 + n10 > 0 ? n11 / (n11 + n10) : 0;
    out.f1 = out.precision + out.recall > 0 ? 2 * out.precision * out.recall / (out.precision + out.recall) : 0;
  }
  return out;
}

/// Random helpers on std::mt19937_64 so the tests do not reuse the library's generator.
struct Random {
  std::mt19937_64 engine;
  explicit Random(std::uint64_t seed) : engine(seed) {}
  Real uniform(Real lo, Real hi) { return std::uniform_real_distribution<Real>(lo, hi)(engine); }
  long integer(long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(engine); }

  FeatureMap map(std::size_t c, std::size_t h, std::size_t w, Real lo = -1, Real hi = 1) {
    FeatureMap x(c, h, w);
    for (auto& v : x.values()) v = uniform(lo, hi);
    return x;
  }
  WeightTensor weights(std::size_t out, std::size_t in, std::size_t kh, std::size_t kw) {
    WeightTensor w(out, in, kh, kw);
    for (auto& v : w.values()) v = uniform(-1, 1);
    return w;
  }
  std::vector<Real> vector(std::size_t n) {
    std::vector<Real> b(n);
    for (auto& v : b) v = uniform(-0.5, 0.5);
    return b;
  }
  SparsityMap sparsity(std::size_t c, std::size_t h, std::size_t w, int lo, int hi) {
    SparsityMap s(c, h, w);
    for (auto& v : s.values()) v = static_cast<std::int32_t>(integer(lo, hi));
    return s;
  }
};

/// Copies a span so gtest can compare and print it.
template <class T>
std::vector<std::remove_const_t<T>> vec(std::span<T> s) {
  return {s.begin(), s.end()};
}

inline Real max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  Real worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace oracle
