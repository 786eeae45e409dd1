#include "binorm/norm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "binorm/error.hpp"

namespace binorm {

namespace {

enum class Branches { Batch, Instance, Blend };

void require_channels(const ChannelVec& v, std::size_t c, const char* what) {
  if (v.size() != c) {
    throw InvalidShape(std::string(what) + " has " + std::to_string(v.size()) +
                       " entries, expected " + std::to_string(c));
  }
}

void check_input(const Tensor4& x, const NormParams& p) {
  p.validate();
  if (x.empty()) throw InvalidShape("normalization input is empty");
  require_channels(p.gamma, x.c(), "gamma");
}

double normalize_one(double x, double mean, double var, double eps) {
  return (x - mean) / std::sqrt(var + eps);
}

// rho * xb + (1 - rho) * xi, exact when both branches agree (N = 1).
double blend(double xb, double xi, double rho) {
  return xb == xi ? xb : rho * xb + (1.0 - rho) * xi;
}

// Gate weight applied to the batch branch of channel c.
double batch_weight(Branches which, const NormParams& p, std::size_t c) {
  switch (which) {
    case Branches::Batch:
      return 1.0;
    case Branches::Instance:
      return 0.0;
    case Branches::Blend:
      return p.rho[c];
  }
  return 0.0;
}

NormOutput forward_train(const Tensor4& x, NormParams& p, Branches which) {
  NormCache cache;
  cache.x = x;
  if (which != Branches::Instance) {
    auto bn = bn_normalize(x, p.eps);
    cache.xhat_b = std::move(bn.xhat);
    cache.mu_b = std::move(bn.stats.mean);
    cache.var_b = std::move(bn.stats.var);
    update_running_stats(p, cache.mu_b, cache.var_b);
  }
  if (which != Branches::Batch) {
    auto in = in_normalize(x, p.eps);
    cache.xhat_i = std::move(in.xhat);
    cache.mu_i = std::move(in.stats.mean);
    cache.var_i = std::move(in.stats.var);
  }

  Tensor4 y(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double g = p.gamma[c];
      const double b = p.beta[c];
      auto out = y.plane(n, c);
      if (which == Branches::Batch) {
        auto xb = cache.xhat_b.plane(n, c);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = xb[i] * g + b;
      } else if (which == Branches::Instance) {
        auto xi = cache.xhat_i.plane(n, c);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = xi[i] * g + b;
      } else {
        const double r = p.rho[c];
        auto xb = cache.xhat_b.plane(n, c);
        auto xi = cache.xhat_i.plane(n, c);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = blend(xb[i], xi[i], r) * g + b;
      }
    }
  }
  return NormOutput{std::move(y), std::move(cache)};
}

// Eval mode folds everything into y = scale_nc * x + shift_nc.
NormOutput forward_eval(const Tensor4& x, const NormParams& p, Branches which) {
  InstanceStats inst;
  if (which != Branches::Batch) inst = reduce_mean_var_over_hw(x);

  Tensor4 y(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double wb = batch_weight(which, p, c);
      double scale = 0.0;
      double shift = 0.0;
      if (wb != 0.0) {
        const double inv = 1.0 / std::sqrt(p.running_var[c] + p.eps);
        scale += wb * inv;
        shift -= wb * p.running_mean[c] * inv;
      }
      if (wb != 1.0) {
        const double inv = 1.0 / std::sqrt(inst.var.at(n, c) + p.eps);
        scale += (1.0 - wb) * inv;
        shift -= (1.0 - wb) * inst.mean.at(n, c) * inv;
      }
      scale *= p.gamma[c];
      shift = shift * p.gamma[c] + p.beta[c];
      auto src = x.plane(n, c);
      auto out = y.plane(n, c);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * src[i] + shift;
    }
  }
  return NormOutput{std::move(y), std::nullopt};
}

NormOutput forward(const Tensor4& x, NormParams& p, Mode mode, Branches which) {
  check_input(x, p);
  if (mode == Mode::Train) return forward_train(x, p, which);
  return forward_eval(x, p, which);
}

GradBundle backward(const NormCache& cache, const NormParams& p, const Tensor4& dy,
                    Branches which) {
  p.validate();
  const Tensor4& x = cache.x;
  if (dy.shape() != x.shape()) throw InvalidShape("d_y shape does not match the cached input");
  require_channels(p.gamma, x.c(), "gamma");
  const bool use_b = which != Branches::Instance;
  const bool use_i = which != Branches::Batch;
  if ((use_b && cache.xhat_b.shape() != x.shape()) ||
      (use_i && cache.xhat_i.shape() != x.shape())) {
    throw InvalidShape("normalization cache is missing a branch or has inconsistent shapes");
  }

  const std::size_t N = x.n();
  const std::size_t C = x.c();
  const std::size_t HW = x.shape().plane();
  GradBundle g{Tensor4(x.shape()), ChannelVec(C), ChannelVec(C), std::nullopt};
  if (which == Branches::Blend) g.d_rho = ChannelVec(C);

  for (std::size_t c = 0; c < C; ++c) {
    const double wb = batch_weight(which, p, c);
    const double wi = 1.0 - wb;
    const double gamma = p.gamma[c];

    // per-channel sums over (n, h, w)
    double sum_dy = 0.0;
    double sum_dy_xb = 0.0;
    double sum_dy_xi = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      auto d = dy.plane(n, c);
      for (std::size_t i = 0; i < HW; ++i) sum_dy += d[i];
      if (use_b) {
        auto xb = cache.xhat_b.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) sum_dy_xb += d[i] * xb[i];
      }
      if (use_i) {
        auto xi = cache.xhat_i.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) sum_dy_xi += d[i] * xi[i];
      }
    }

    g.d_beta[c] = sum_dy;
    g.d_gamma[c] = (use_b ? wb * sum_dy_xb : 0.0) + (use_i ? wi * sum_dy_xi : 0.0);
    if (g.d_rho) {
      double diff = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        auto d = dy.plane(n, c);
        auto xb = cache.xhat_b.plane(n, c);
        auto xi = cache.xhat_i.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) diff += (xb[i] - xi[i]) * d[i];
      }
      (*g.d_rho)[c] = gamma * diff;
    }

    if (use_b && wb != 0.0) {
      const double m = static_cast<double>(N * HW);
      const double mean_dy = sum_dy / m;
      const double mean_dy_xb = sum_dy_xb / m;
      const double k = wb * gamma / std::sqrt(cache.var_b[c] + p.eps);
      for (std::size_t n = 0; n < N; ++n) {
        auto d = dy.plane(n, c);
        auto xb = cache.xhat_b.plane(n, c);
        auto dx = g.d_input.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) dx[i] += k * (d[i] - mean_dy - xb[i] * mean_dy_xb);
      }
    }
    if (use_i && wi != 0.0) {
      const double m = static_cast<double>(HW);
      for (std::size_t n = 0; n < N; ++n) {
        auto d = dy.plane(n, c);
        auto xi = cache.xhat_i.plane(n, c);
        double s = 0.0;
        double sx = 0.0;
        for (std::size_t i = 0; i < HW; ++i) {
          s += d[i];
          sx += d[i] * xi[i];
        }
        const double mean_dy = s / m;
        const double mean_dy_xi = sx / m;
        const double k = wi * gamma / std::sqrt(cache.var_i.at(n, c) + p.eps);
        auto dx = g.d_input.plane(n, c);
        for (std::size_t i = 0; i < HW; ++i) dx[i] += k * (d[i] - mean_dy - xi[i] * mean_dy_xi);
      }
    }
  }
  return g;
}

}  // namespace

std::string_view to_string(NormKind kind) {
  switch (kind) {
    case NormKind::BN:
      return "bn";
    case NormKind::IN:
      return "in";
    case NormKind::BIN:
      return "bin";
    case NormKind::BnPlusIn:
      return "bn+in";
  }
  return "?";
}

NormKind parse_norm_kind(std::string_view name) {
  if (name == "bn") return NormKind::BN;
  if (name == "in") return NormKind::IN;
  if (name == "bin") return NormKind::BIN;
  if (name == "bn+in" || name == "bn_plus_in") return NormKind::BnPlusIn;
  throw ConfigError("unknown normalization kind '" + std::string(name) +
                    "' (expected bn, in, bin or bn+in)");
}

NormParams NormParams::init(std::size_t channels, double eps, double momentum) {
  NormParams p;
  p.rho = ChannelVec(channels, 1.0);
  p.gamma = ChannelVec(channels, 1.0);
  p.beta = ChannelVec(channels, 0.0);
  p.running_mean = ChannelVec(channels, 0.0);
  p.running_var = ChannelVec(channels, 1.0);
  p.eps = eps;
  p.running_momentum = momentum;
  p.validate();
  return p;
}

void NormParams::validate() const {
  const std::size_t c = gamma.size();
  if (c == 0) throw InvalidShape("normalization layer needs at least one channel");
  require_channels(rho, c, "rho");
  require_channels(beta, c, "beta");
  require_channels(running_mean, c, "running_mean");
  require_channels(running_var, c, "running_var");
  if (!(eps > 0.0)) throw ContractViolation("eps must be positive");
  if (!(running_momentum >= 0.0 && running_momentum <= 1.0)) {
    throw ContractViolation("running momentum must lie in [0, 1]");
  }
  for (std::size_t i = 0; i < c; ++i) {
    if (!(rho[i] >= 0.0 && rho[i] <= 1.0)) {
      throw ContractViolation("gate rho[" + std::to_string(i) + "] = " + std::to_string(rho[i]) +
                              " lies outside [0, 1]");
    }
    if (!(running_var[i] >= 0.0)) throw ContractViolation("running variance must be >= 0");
  }
}

BatchNormalized bn_normalize(const Tensor4& x, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("eps must be positive");
  BatchNormalized out{Tensor4(x.shape()), reduce_mean_var_over_nhw(x)};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double mean = out.stats.mean[c];
      const double var = out.stats.var[c];
      auto src = x.plane(n, c);
      auto dst = out.xhat.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = normalize_one(src[i], mean, var, eps);
    }
  }
  return out;
}

InstanceNormalized in_normalize(const Tensor4& x, double eps) {
  if (!(eps > 0.0)) throw ContractViolation("eps must be positive");
  InstanceNormalized out{Tensor4(x.shape()), reduce_mean_var_over_hw(x)};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double mean = out.stats.mean.at(n, c);
      const double var = out.stats.var.at(n, c);
      auto src = x.plane(n, c);
      auto dst = out.xhat.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = normalize_one(src[i], mean, var, eps);
    }
  }
  return out;
}

NormOutput bin_forward(const Tensor4& x, NormParams& p, Mode mode) {
  return forward(x, p, mode, Branches::Blend);
}

GradBundle bin_backward(const NormCache& cache, const NormParams& p, const Tensor4& d_y) {
  return backward(cache, p, d_y, Branches::Blend);
}

NormOutput bn_forward(const Tensor4& x, NormParams& p, Mode mode) {
  return forward(x, p, mode, Branches::Batch);
}

GradBundle bn_backward(const NormCache& cache, const NormParams& p, const Tensor4& d_y) {
  return backward(cache, p, d_y, Branches::Batch);
}

NormOutput in_forward(const Tensor4& x, NormParams& p, Mode mode) {
  return forward(x, p, mode, Branches::Instance);
}

GradBundle in_backward(const NormCache& cache, const NormParams& p, const Tensor4& d_y) {
  return backward(cache, p, d_y, Branches::Instance);
}

NormOutput norm_forward(NormKind kind, const Tensor4& x, NormParams& p, Mode mode) {
  switch (kind) {
    case NormKind::BN:
      return bn_forward(x, p, mode);
    case NormKind::IN:
      return in_forward(x, p, mode);
    case NormKind::BIN:
    case NormKind::BnPlusIn:
      return bin_forward(x, p, mode);
  }
  throw ContractViolation("unhandled normalization kind");
}

GradBundle norm_backward(NormKind kind, const NormCache& cache, const NormParams& p,
                         const Tensor4& d_y) {
  switch (kind) {
    case NormKind::BN:
      return bn_backward(cache, p, d_y);
    case NormKind::IN:
      return in_backward(cache, p, d_y);
    case NormKind::BIN:
    case NormKind::BnPlusIn:
      return bin_backward(cache, p, d_y);
  }
  throw ContractViolation("unhandled normalization kind");
}

ChannelVec clip_update_rho(const ChannelVec& rho, const ChannelVec& step) {
  require_channels(step, rho.size(), "gate step");
  ChannelVec out(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) out[i] = std::clamp(rho[i] - step[i], 0.0, 1.0);
  return out;
}

void update_running_stats(NormParams& p, const ChannelVec& mean, const ChannelVec& var) {
  require_channels(mean, p.channels(), "batch mean");
  require_channels(var, p.channels(), "batch variance");
  const double m = p.running_momentum;
  for (std::size_t c = 0; c < p.channels(); ++c) {
    p.running_mean[c] = (1.0 - m) * p.running_mean[c] + m * mean[c];
    p.running_var[c] = (1.0 - m) * p.running_var[c] + m * var[c];
  }
}

}  // namespace binorm
