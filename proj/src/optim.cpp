#include "dam/optim.hpp"

#include <cmath>

namespace dam {

Sgd::Sgd(Real mu, Real gamma0, LrSchedule schedule)
    : mu_(mu), gamma0_(gamma0), schedule_(schedule) {
  if (!(mu >= 0 && mu < 1)) throw Error("Sgd: momentum must lie in [0, 1)");
  if (!(gamma0 > 0)) throw Error("Sgd: learning rate must be positive");
  if (const auto* poly = std::get_if<PolySchedule>(&schedule_); poly && poly->max_iter <= 0) {
    throw Error("Sgd: poly schedule needs max_iter > 0");
  }
  if (const auto* plateau = std::get_if<PlateauSchedule>(&schedule_);
      plateau && (!(plateau->factor > 1) || plateau->patience < 1)) {
    throw Error("Sgd: plateau schedule needs factor > 1 and patience >= 1");
  }
}

Real Sgd::current_lr() const {
  if (const auto* poly = std::get_if<PolySchedule>(&schedule_)) {
    if (iter_ >= poly->max_iter) return 0;
    const Real progress = static_cast<Real>(iter_) / static_cast<Real>(poly->max_iter);
    return gamma0_ * std::pow(1 - progress, poly->power);
  }
  if (const auto* plateau = std::get_if<PlateauSchedule>(&schedule_)) {
    return gamma0_ / std::pow(plateau->factor, plateau_events_);
  }
  return gamma0_;
}

bool Sgd::finished() const {
  const auto* poly = std::get_if<PolySchedule>(&schedule_);
  return poly != nullptr && iter_ >= poly->max_iter;
}

void Sgd::step(std::span<const ParamSlot> slots) {
  if (prev_delta_.empty()) {
    prev_delta_.reserve(slots.size());
    for (const auto& s : slots) prev_delta_.emplace_back(s.value.size(), 0);
  }
  if (slots.size() != prev_delta_.size()) throw Error("Sgd::step: parameter block count changed");
  for (std::size_t b = 0; b < slots.size(); ++b) {
    if (slots[b].value.size() != prev_delta_[b].size() || slots[b].grad.size() != slots[b].value.size()) {
      throw Error("Sgd::step: shape mismatch in parameter block " + std::to_string(b));
    }
  }

  const Real gamma = current_lr();
  for (std::size_t b = 0; b < slots.size(); ++b) {
    auto w = slots[b].value;
    auto g = slots[b].grad;
    auto& delta = prev_delta_[b];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const Real old = w[i];
      w[i] = old + mu_ * delta[i] - gamma * g[i];
      delta[i] = w[i] - old;
    }
  }
  ++iter_;
}

void Sgd::report_validation(Real score) {
  const auto* plateau = std::get_if<PlateauSchedule>(&schedule_);
  if (plateau == nullptr) return;
  if (!has_best_ || score - best_score_ >= plateau->min_improve) {
    stalled_ = 0;
  } else if (++stalled_ >= plateau->patience) {
    ++plateau_events_;
    stalled_ = 0;
  }
  if (!has_best_ || score > best_score_) best_score_ = score;
  has_best_ = true;
}

void Sgd::restore(std::int64_t iter, std::vector<std::vector<Real>> prev_delta,
                  std::int32_t plateau_events, std::int32_t stalled, bool has_best, Real best_score) {
  iter_ = iter;
  prev_delta_ = std::move(prev_delta);
  plateau_events_ = plateau_events;
  stalled_ = stalled;
  has_best_ = has_best;
  best_score_ = best_score;
}

}  // namespace dam
