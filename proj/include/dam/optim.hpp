#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "dam/tensor.hpp"

namespace dam {

struct ConstantSchedule {};

/// gamma0 * (1 - iter / max_iter)^power; zero once max_iter is reached.
struct PolySchedule {
  Real power = 0.9;
  std::int64_t max_iter = 40000;
};

/// Divide gamma by `factor` whenever the validation score has failed to improve
/// by at least `min_improve` for `patience` consecutive evaluations.
struct PlateauSchedule {
  Real factor = 10;
  std::int32_t patience = 3;
  Real min_improve = 0.001;
};

using LrSchedule = std::variant<ConstantSchedule, PolySchedule, PlateauSchedule>;

/// One parameter block and its gradient.
struct ParamSlot {
  std::span<Real> value;
  std::span<const Real> grad;
};

/// Heavy-ball SGD in parameter-delta form:
///   W_new = W + mu * (W - W_prev) - gamma * dE/dW.
class Sgd {
 public:
  Sgd(Real mu, Real gamma0, LrSchedule schedule = ConstantSchedule{});

  Real mu() const { return mu_; }
  Real base_lr() const { return gamma0_; }
  const LrSchedule& schedule() const { return schedule_; }
  std::int64_t iter() const { return iter_; }

  /// Learning rate for the next step.
  Real current_lr() const;
  /// True once a poly schedule has reached max_iter.
  bool finished() const;

  /// Applies one update to every slot; the first call fixes the slot layout.
  void step(std::span<const ParamSlot> slots);

  /// Feeds a validation score (higher is better) to the plateau schedule.
  void report_validation(Real score);

  // Checkpoint access.
  const std::vector<std::vector<Real>>& prev_delta() const { return prev_delta_; }
  std::int32_t plateau_events() const { return plateau_events_; }
  std::int32_t stalled_evaluations() const { return stalled_; }
  Real best_score() const { return best_score_; }
  bool has_best_score() const { return has_best_; }
  void restore(std::int64_t iter, std::vector<std::vector<Real>> prev_delta, std::int32_t plateau_events,
               std::int32_t stalled, bool has_best, Real best_score);

 private:
  Real mu_;
  Real gamma0_;
  LrSchedule schedule_;
  std::int64_t iter_ = 0;
  std::vector<std::vector<Real>> prev_delta_;
  std::int32_t plateau_events_ = 0;
  std::int32_t stalled_ = 0;
  bool has_best_ = false;
  Real best_score_ = 0;
};

}  // namespace dam
