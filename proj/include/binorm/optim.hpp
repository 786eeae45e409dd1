#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "binorm/nn.hpp"

namespace binorm {

struct TrainConfig {
  double base_lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Gates train with base_lr * gate_lr_multiplier.
  double gate_lr_multiplier = 10.0;
  /// Always zero: gates are never decayed. Kept so configs state it explicitly.
  double gate_weight_decay = 0.0;
  std::size_t epochs = 32;
  std::size_t batch_size = 32;
  /// (epoch, divisor): from that epoch on the learning rate is divided by the
  /// divisor, cumulatively. Empty means the default 50% / 75% step decay.
  std::vector<std::pair<std::size_t, double>> lr_schedule;
  std::uint64_t seed = 0;

  /// Throws ConfigError.
  void validate() const;
  /// Step decay by 10 at 50% and 75% of the epochs.
  static std::vector<std::pair<std::size_t, double>> default_schedule(std::size_t epochs);
  double lr_at_epoch(std::size_t epoch) const;
};

/// Momentum buffers, one per ParamRef in network order. Sized lazily.
using Velocity = std::vector<std::vector<double>>;

/// One SGD-with-momentum step at learning rate `lr`:
///   v <- momentum * v + grad + weight_decay * value;  value <- value - lr * v
/// Gates use lr * gate_lr_multiplier, no weight decay, and the new value is
/// clip_[0,1](value - step); the velocity itself is never clipped. Frozen
/// gates are skipped.
void sgd_step(std::span<const ParamRef> params, Velocity& velocity, const TrainConfig& cfg,
              double lr);

}  // namespace binorm
