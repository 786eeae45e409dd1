#include "binorm/optim.hpp"

#include <algorithm>
#include <string>

#include "binorm/error.hpp"
#include "binorm/norm.hpp"

namespace binorm {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (!(gate_lr_multiplier > 0.0)) throw ConfigError("gate learning-rate multiplier must be positive");
  if (gate_weight_decay != 0.0) throw ConfigError("weight decay is never applied to gate parameters");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  for (const auto& [epoch, divisor] : lr_schedule) {
    if (!(divisor > 0.0)) {
      throw ConfigError("lr schedule divisor at epoch " + std::to_string(epoch) + " must be positive");
    }
  }
}

std::vector<std::pair<std::size_t, double>> TrainConfig::default_schedule(std::size_t epochs) {
  return {{epochs / 2, 10.0}, {(3 * epochs) / 4, 10.0}};
}

double TrainConfig::lr_at_epoch(std::size_t epoch) const {
  const auto schedule = lr_schedule.empty() ? default_schedule(epochs) : lr_schedule;
  double lr = base_lr;
  for (const auto& [at, divisor] : schedule) {
    if (epoch >= at) lr /= divisor;
  }
  return lr;
}

void sgd_step(std::span<const ParamRef> params, Velocity& velocity, const TrainConfig& cfg,
              double lr) {
  if (velocity.size() < params.size()) velocity.resize(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    const ParamRef& p = params[k];
    if (p.role == ParamRole::FrozenGate) continue;
    if (p.grad.size() != p.value.size()) {
      throw InvalidShape("gradient of '" + p.name + "' does not match its parameter");
    }
    auto& v = velocity[k];
    if (v.size() != p.value.size()) v.assign(p.value.size(), 0.0);

    if (p.role == ParamRole::Gate) {
      const double gate_lr = lr * cfg.gate_lr_multiplier;
      ChannelVec rho(std::vector<double>(p.value.begin(), p.value.end()));
      ChannelVec step(p.value.size());
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = cfg.momentum * v[i] + p.grad[i];
        step[i] = gate_lr * v[i];
      }
      const ChannelVec next = clip_update_rho(rho, step);
      std::copy(next.data.begin(), next.data.end(), p.value.begin());
      continue;
    }

    for (std::size_t i = 0; i < v.size(); ++i) {
      v[i] = cfg.momentum * v[i] + p.grad[i] + cfg.weight_decay * p.value[i];
      p.value[i] -= lr * v[i];
    }
  }
}

}  // namespace binorm
