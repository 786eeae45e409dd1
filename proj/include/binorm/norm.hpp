#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "binorm/tensor.hpp"

namespace binorm {

enum class Mode { Train, Eval };

/// Which normalizer a layer applies. BnPlusIn is a BIN layer whose gates are
/// frozen at 0.5 and never updated.
enum class NormKind { BN, IN, BIN, BnPlusIn };

std::string_view to_string(NormKind kind);
/// Accepts "bn", "in", "bin", "bn+in" and "bn_plus_in". Throws ConfigError otherwise.
NormKind parse_norm_kind(std::string_view name);

inline constexpr double kDefaultEps = 1e-5;
inline constexpr double kDefaultRunningMomentum = 0.1;

struct NormParams {
  ChannelVec rho;    ///< style gate, each element in [0, 1]
  ChannelVec gamma;
  ChannelVec beta;
  ChannelVec running_mean;
  ChannelVec running_var;
  double eps = kDefaultEps;
  double running_momentum = kDefaultRunningMomentum;

  /// rho = 1, gamma = 1, beta = 0, running mean 0 and running variance 1.
  static NormParams init(std::size_t channels, double eps = kDefaultEps,
                         double momentum = kDefaultRunningMomentum);
  std::size_t channels() const { return gamma.size(); }
  /// Throws InvalidShape / ContractViolation when the invariants do not hold.
  void validate() const;
};

/// Forward intermediates needed by the backward pass. A standalone BN layer
/// leaves the instance fields empty and a standalone IN layer leaves the batch
/// fields empty.
struct NormCache {
  Tensor4 x;
  ChannelVec mu_b;
  ChannelVec var_b;
  InstanceChannelVec mu_i;
  InstanceChannelVec var_i;
  Tensor4 xhat_b;
  Tensor4 xhat_i;

  bool has_batch_branch() const { return !xhat_b.empty(); }
  bool has_instance_branch() const { return !xhat_i.empty(); }
};

struct NormOutput {
  Tensor4 y;
  std::optional<NormCache> cache;  ///< only produced in Train mode
};

struct GradBundle {
  Tensor4 d_input;
  ChannelVec d_gamma;
  ChannelVec d_beta;
  std::optional<ChannelVec> d_rho;  ///< absent for layers without a gate
};

struct BatchNormalized {
  Tensor4 xhat;
  ChannelStats stats;
};

struct InstanceNormalized {
  Tensor4 xhat;
  InstanceStats stats;
};

/// (x - mu_c) / sqrt(var_c + eps) with statistics over (n, h, w).
BatchNormalized bn_normalize(const Tensor4& x, double eps);
/// (x - mu_nc) / sqrt(var_nc + eps) with statistics over (h, w). With H = W = 1
/// every output is zero: instance normalization removes all signal there.
InstanceNormalized in_normalize(const Tensor4& x, double eps);

/// Batch-instance normalization:
///   y = (rho * xhat_b + (1 - rho) * xhat_i) * gamma + beta
///
/// Train mode uses minibatch statistics for the batch branch and folds them
/// into the running statistics. Eval mode substitutes the running statistics
/// in the batch branch; the instance branch always uses per-sample statistics.
/// Throws ContractViolation when a gate lies outside [0, 1].
NormOutput bin_forward(const Tensor4& x, NormParams& p, Mode mode);

/// Gradients of a Train-mode bin_forward. d_rho follows
///   dl/drho_c = gamma_c * sum_{n,h,w} (xhat_b - xhat_i) * dl/dy
/// and d_input carries the chain through the statistics of both branches.
GradBundle bin_backward(const NormCache& cache, const NormParams& p, const Tensor4& d_y);

/// Standalone batch normalization with affine; maintains running statistics.
NormOutput bn_forward(const Tensor4& x, NormParams& p, Mode mode);
GradBundle bn_backward(const NormCache& cache, const NormParams& p, const Tensor4& d_y);

/// Standalone instance normalization with affine; identical in both modes.
NormOutput in_forward(const Tensor4& x, NormParams& p, Mode mode);
GradBundle in_backward(const NormCache& cache, const NormParams& p, const Tensor4& d_y);

/// Dispatch on kind. BnPlusIn runs the BIN path with whatever gates p holds.
NormOutput norm_forward(NormKind kind, const Tensor4& x, NormParams& p, Mode mode);
GradBundle norm_backward(NormKind kind, const NormCache& cache, const NormParams& p,
                         const Tensor4& d_y);

/// rho <- clip_[0,1](rho - step), where step is the full optimizer update
/// (learning rate, gate multiplier and momentum already applied).
ChannelVec clip_update_rho(const ChannelVec& rho, const ChannelVec& step);

/// running <- (1 - m) * running + m * current, m = p.running_momentum.
void update_running_stats(NormParams& p, const ChannelVec& mean, const ChannelVec& var);

}  // namespace binorm
