#pragma once

// SGD with two learning-rate groups (weights vs. filter taps), momentum and
// weight decay, plus the validation-driven learning-rate schedule: hold the
// rate while validation perplexity improves by at least 1, then train six
// more epochs halving the rate after each.

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "fsmn/model.hpp"

namespace fsmn {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OptimConfig {
  double lr_weights = 0.4;
  double lr_taps = 0.002;
  double momentum = 0.0;
  double weight_decay = 0.0;
  bool exempt_taps = false;  // skip momentum and decay on taps

  static OptimConfig ptb_preset() { return {0.4, 0.002, 0.9, 4e-5, false}; }

  void validate() const {
    if (!(lr_weights > 0.0)) throw ConfigError("lr_weights must be > 0");
    if (!(lr_taps > 0.0)) throw ConfigError("lr_taps must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  }
};

enum class SchedulePhase { stable, halving };
enum class ScheduleDecision { continue_training, continue_halved, stop };

inline const char* decision_name(ScheduleDecision d) {
  switch (d) {
    case ScheduleDecision::continue_training: return "continue";
    case ScheduleDecision::continue_halved: return "continue_halved";
    case ScheduleDecision::stop: return "stop";
  }
  return "?";
}

inline constexpr std::size_t kHalvingEpochs = 6;
inline constexpr double kMinImprovement = 1.0;

struct ScheduleState {
  SchedulePhase phase = SchedulePhase::stable;
  double best_val_ppl = std::numeric_limits<double>::infinity();
  std::size_t halving_epochs_done = 0;
  double current_scale = 1.0;

  bool operator==(const ScheduleState&) const = default;
};

/// Called once per epoch with that epoch's validation perplexity. The
/// returned state's scale applies to the next epoch.
inline ScheduleDecision schedule_update(ScheduleState& s, double val_ppl) {
  if (!std::isfinite(val_ppl) || val_ppl <= 0.0) {
    throw NumericError("schedule_update: validation perplexity " + std::to_string(val_ppl) +
                       " is not a finite positive value");
  }
  if (s.phase == SchedulePhase::stable) {
    if (s.best_val_ppl - val_ppl >= kMinImprovement) {
      s.best_val_ppl = val_ppl;
      return ScheduleDecision::continue_training;
    }
    s.phase = SchedulePhase::halving;
    s.halving_epochs_done = 1;
    s.current_scale = 0.5;
    return ScheduleDecision::continue_halved;
  }
  if (s.halving_epochs_done >= kHalvingEpochs) return ScheduleDecision::stop;
  ++s.halving_epochs_done;
  s.current_scale *= 0.5;
  return ScheduleDecision::continue_halved;
}

/// Velocity buffers, one per tensor in for_each_tensor order.
struct OptimState {
  std::vector<Matrix> velocity;

  static OptimState zeros_like(const Parameters& p) {
    OptimState s;
    for_each_tensor(p, [&](const TensorInfo&, const Matrix& m) {
      s.velocity.emplace_back(m.rows(), m.cols());
    });
    return s;
  }

  bool operator==(const OptimState&) const = default;
};

/// g' = g + wd·p;  v = μ·v + g';  p -= η·v   with η from the tensor's group.
inline void sgd_step(Parameters& params, const Parameters& grads, OptimState& state,
                     const OptimConfig& config, const ScheduleState& schedule) {
  std::vector<const Matrix*> g;
  for_each_tensor(grads, [&](const TensorInfo&, const Matrix& m) { g.push_back(&m); });
  if (state.velocity.empty()) state = OptimState::zeros_like(params);

  // Validate everything before mutating anything.
  std::size_t k = 0;
  for_each_tensor(params, [&](const TensorInfo& info, const Matrix& p) {
    if (k >= g.size() || g[k]->rows() != p.rows() || g[k]->cols() != p.cols() ||
        k >= state.velocity.size() || state.velocity[k].size() != p.size()) {
      throw ShapeError("sgd_step: gradient or velocity shape does not match tensor " + info.name);
    }
    if (!all_finite(*g[k])) {
      throw NumericError("sgd_step: non-finite gradient in tensor " + info.name);
    }
    ++k;
  });

  k = 0;
  for_each_tensor(params, [&](const TensorInfo& info, Matrix& p) {
    const bool is_taps = info.group == ParamGroup::taps;
    const double lr = (is_taps ? config.lr_taps : config.lr_weights) * schedule.current_scale;
    const bool plain = is_taps && config.exempt_taps;
    const double mu = plain ? 0.0 : config.momentum;
    const double wd = plain ? 0.0 : config.weight_decay;
    double* pv = p.data();
    const double* gv = g[k]->data();
    double* vv = state.velocity[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      vv[i] = mu * vv[i] + (gv[i] + wd * pv[i]);
      pv[i] -= lr * vv[i];
    }
    ++k;
  });
}

}  // namespace fsmn
