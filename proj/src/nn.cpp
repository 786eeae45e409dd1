#include "binorm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "binorm/error.hpp"
#include "binorm/rng.hpp"

namespace binorm {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t pad) {
  if (in + 2 * pad < k) throw InvalidShape("convolution kernel larger than padded input");
  return in + 2 * pad - k + 1;
}

// Range [lo, hi) of output coordinates o for which o + k - pad lands inside [0, in).
void valid_range(std::size_t in, std::size_t out, std::size_t k, std::size_t pad,
                 std::ptrdiff_t& lo, std::ptrdiff_t& hi) {
  const auto shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  lo = std::max<std::ptrdiff_t>(0, -shift);
  hi = std::min(static_cast<std::ptrdiff_t>(out), static_cast<std::ptrdiff_t>(in) - shift);
  if (lo > hi) lo = hi;
}

void init_uniform(std::span<double> values, double bound, Rng& rng) {
  for (double& v : values) v = rng.uniform(-bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& weight, const ChannelVec& bias,
                       std::size_t padding) {
  const std::size_t K = weight.h();
  if (weight.c() != x.c() || weight.w() != K) {
    throw InvalidShape("conv weight shape does not match input channels");
  }
  if (bias.size() != weight.n()) throw InvalidShape("conv bias size does not match output channels");
  const std::size_t OH = conv_out_size(x.h(), K, padding);
  const std::size_t OW = conv_out_size(x.w(), K, padding);
  const std::size_t W = x.w();
  Tensor4 y(Shape{x.n(), weight.n(), OH, OW});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t oc = 0; oc < weight.n(); ++oc) {
      auto out = y.plane(n, oc);
      std::fill(out.begin(), out.end(), bias[oc]);
      for (std::size_t ic = 0; ic < x.c(); ++ic) {
        auto in = x.plane(n, ic);
        for (std::size_t kh = 0; kh < K; ++kh) {
          std::ptrdiff_t oh_lo, oh_hi;
          valid_range(x.h(), OH, kh, padding, oh_lo, oh_hi);
          const auto dh = static_cast<std::ptrdiff_t>(kh) - static_cast<std::ptrdiff_t>(padding);
          for (std::size_t kw = 0; kw < K; ++kw) {
            std::ptrdiff_t ow_lo, ow_hi;
            valid_range(W, OW, kw, padding, ow_lo, ow_hi);
            const auto dw = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(padding);
            const double wv = weight(oc, ic, kh, kw);
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const double* src = in.data() + (oh + dh) * static_cast<std::ptrdiff_t>(W);
              double* dst = out.data() + oh * static_cast<std::ptrdiff_t>(OW);
              for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) dst[ow] += wv * src[ow + dw];
            }
          }
        }
      }
    }
  }
  return y;
}

ConvGrads conv2d_backward(const Tensor4& x, const Tensor4& weight, const Tensor4& d_y,
                          std::size_t padding) {
  const std::size_t K = weight.h();
  const std::size_t OH = conv_out_size(x.h(), K, padding);
  const std::size_t OW = conv_out_size(x.w(), K, padding);
  if (d_y.shape() != Shape{x.n(), weight.n(), OH, OW}) {
    throw InvalidShape("conv d_y shape does not match forward output");
  }
  const std::size_t W = x.w();
  ConvGrads g{Tensor4(x.shape()), Tensor4(weight.shape()), ChannelVec(weight.n())};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t oc = 0; oc < weight.n(); ++oc) {
      auto dout = d_y.plane(n, oc);
      double s = 0.0;
      for (double v : dout) s += v;
      g.d_bias[oc] += s;
      for (std::size_t ic = 0; ic < x.c(); ++ic) {
        auto in = x.plane(n, ic);
        auto din = g.d_input.plane(n, ic);
        for (std::size_t kh = 0; kh < K; ++kh) {
          std::ptrdiff_t oh_lo, oh_hi;
          valid_range(x.h(), OH, kh, padding, oh_lo, oh_hi);
          const auto dh = static_cast<std::ptrdiff_t>(kh) - static_cast<std::ptrdiff_t>(padding);
          for (std::size_t kw = 0; kw < K; ++kw) {
            std::ptrdiff_t ow_lo, ow_hi;
            valid_range(W, OW, kw, padding, ow_lo, ow_hi);
            const auto dw = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(padding);
            const double wv = weight(oc, ic, kh, kw);
            double acc = 0.0;
            for (std::ptrdiff_t oh = oh_lo; oh < oh_hi; ++oh) {
              const std::ptrdiff_t row = (oh + dh) * static_cast<std::ptrdiff_t>(W);
              const double* src = in.data() + row;
              double* dsrc = din.data() + row;
              const double* dd = dout.data() + oh * static_cast<std::ptrdiff_t>(OW);
              for (std::ptrdiff_t ow = ow_lo; ow < ow_hi; ++ow) {
                acc += dd[ow] * src[ow + dw];
                dsrc[ow + dw] += wv * dd[ow];
              }
            }
            g.d_weight(oc, ic, kh, kw) += acc;
          }
        }
      }
    }
  }
  return g;
}

Tensor4 relu_forward(const Tensor4& x) {
  return map(x, [](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor4 relu_backward(const Tensor4& x, const Tensor4& d_y) {
  if (x.shape() != d_y.shape()) throw InvalidShape("relu d_y shape does not match input");
  Tensor4 dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? d_y[i] : 0.0;
  return dx;
}

Tensor4 avgpool_forward(const Tensor4& x, std::size_t window) {
  if (window == 0 || x.h() % window != 0 || x.w() % window != 0) {
    throw InvalidShape("avgpool window " + std::to_string(window) + " does not tile " +
                       std::to_string(x.h()) + "x" + std::to_string(x.w()));
  }
  const std::size_t OH = x.h() / window;
  const std::size_t OW = x.w() / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  Tensor4 y(Shape{x.n(), x.c(), OH, OW});
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      for (std::size_t h = 0; h < x.h(); ++h) {
        for (std::size_t w = 0; w < x.w(); ++w) y(n, c, h / window, w / window) += x(n, c, h, w);
      }
      for (double& v : y.plane(n, c)) v *= inv;
    }
  }
  return y;
}

Tensor4 avgpool_backward(const Shape& input_shape, const Tensor4& d_y, std::size_t window) {
  if (window == 0 || d_y.shape() != Shape{input_shape.n, input_shape.c, input_shape.h / window,
                                          input_shape.w / window}) {
    throw InvalidShape("avgpool d_y shape does not match forward output");
  }
  const double inv = 1.0 / static_cast<double>(window * window);
  Tensor4 dx(input_shape);
  for (std::size_t n = 0; n < dx.n(); ++n) {
    for (std::size_t c = 0; c < dx.c(); ++c) {
      for (std::size_t h = 0; h < dx.h(); ++h) {
        for (std::size_t w = 0; w < dx.w(); ++w) {
          dx(n, c, h, w) = d_y(n, c, h / window, w / window) * inv;
        }
      }
    }
  }
  return dx;
}

Tensor4 fc_forward(const Tensor4& x, std::span<const double> weight, std::span<const double> bias,
                   std::size_t out_features) {
  const std::size_t in = x.c() * x.h() * x.w();
  if (weight.size() != out_features * in || bias.size() != out_features) {
    throw InvalidShape("fc parameters do not match " + std::to_string(in) + " input features");
  }
  Tensor4 y(Shape{x.n(), out_features, 1, 1});
  for (std::size_t n = 0; n < x.n(); ++n) {
    const double* row = x.data().data() + n * in;
    for (std::size_t o = 0; o < out_features; ++o) {
      double s = bias[o];
      const double* wrow = weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) s += wrow[i] * row[i];
      y(n, o, 0, 0) = s;
    }
  }
  return y;
}

FcGrads fc_backward(const Tensor4& x, std::span<const double> weight, const Tensor4& d_y) {
  const std::size_t in = x.c() * x.h() * x.w();
  const std::size_t out = d_y.c();
  if (d_y.n() != x.n() || d_y.h() != 1 || d_y.w() != 1 || weight.size() != out * in) {
    throw InvalidShape("fc d_y shape does not match forward output");
  }
  FcGrads g{Tensor4(x.shape()), std::vector<double>(out * in, 0.0), std::vector<double>(out, 0.0)};
  for (std::size_t n = 0; n < x.n(); ++n) {
    const double* row = x.data().data() + n * in;
    double* drow = g.d_input.data().data() + n * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double d = d_y(n, o, 0, 0);
      g.d_bias[o] += d;
      const double* wrow = weight.data() + o * in;
      double* dwrow = g.d_weight.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        dwrow[i] += d * row[i];
        drow[i] += d * wrow[i];
      }
    }
  }
  return g;
}

XentResult softmax_xent(const Tensor4& logits, std::span<const int> labels) {
  const std::size_t N = logits.n();
  const std::size_t K = logits.c();
  if (logits.h() != 1 || logits.w() != 1) throw InvalidShape("logits must have shape (N, K, 1, 1)");
  if (labels.size() != N) throw InvalidShape("label count does not match batch size");
  XentResult r{0.0, Tensor4(logits.shape()), 0};
  const double inv_n = 1.0 / static_cast<double>(N);
  for (std::size_t n = 0; n < N; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= K) {
      throw InvalidShape("label " + std::to_string(label) + " outside [0, " + std::to_string(K) + ")");
    }
    const double* z = logits.data().data() + n * K;
    const double zmax = *std::max_element(z, z + K);
    double denom = 0.0;
    for (std::size_t k = 0; k < K; ++k) denom += std::exp(z[k] - zmax);
    const double log_denom = std::log(denom);
    r.loss += (log_denom - (z[label] - zmax)) * inv_n;
    std::size_t best = 0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(z[k] - zmax - log_denom);
      r.d_logits(n, k, 0, 0) = (p - (static_cast<int>(k) == label ? 1.0 : 0.0)) * inv_n;
      if (z[k] > z[best]) best = k;
    }
    if (static_cast<int>(best) == label) ++r.correct;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(std::vector<LayerSpec> specs, std::uint64_t seed) {
  layers_.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    Rng rng(seed, "init/layer" + std::to_string(i));
    layers_.push_back(std::visit(
        Overloaded{
            [&](const ConvSpec& s) -> Layer {
              ConvLayer l{s, Tensor4(Shape{s.out_channels, s.in_channels, s.kernel, s.kernel}),
                          ChannelVec(s.out_channels), {}, {}, {}};
              const double kk = static_cast<double>(s.kernel * s.kernel);
              const double fan_in = static_cast<double>(s.in_channels) * kk;
              const double fan_out = static_cast<double>(s.out_channels) * kk;
              init_uniform(l.weight.data(), std::sqrt(6.0 / (fan_in + fan_out)), rng);
              return l;
            },
            [&](const NormSpec& s) -> Layer {
              NormLayer l{s, NormParams::init(s.channels, s.eps, s.momentum), {}, {}, {}, {}};
              if (s.kind == NormKind::BnPlusIn) l.params.rho = ChannelVec(s.channels, 0.5);
              return l;
            },
            [&](const ReluSpec&) -> Layer { return ReluLayer{}; },
            [&](const AvgPoolSpec& s) -> Layer { return AvgPoolLayer{s, {}}; },
            [&](const FcSpec& s) -> Layer {
              FcLayer l{s, std::vector<double>(s.out_features * s.in_features),
                        std::vector<double>(s.out_features, 0.0), {}, {}, {}};
              init_uniform(l.weight,
                           std::sqrt(6.0 / static_cast<double>(s.in_features + s.out_features)),
                           rng);
              return l;
            },
        },
        specs[i]));
  }
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {}

Tensor4 Network::forward(const Tensor4& x, Mode mode) {
  const bool train = mode == Mode::Train;
  Tensor4 h = x;
  for (Layer& layer : layers_) {
    h = std::visit(
        Overloaded{
            [&](ConvLayer& l) {
              Tensor4 y = conv2d_forward(h, l.weight, l.bias, l.spec.padding);
              if (train) l.input = std::move(h);
              return y;
            },
            [&](NormLayer& l) {
              auto out = norm_forward(l.spec.kind, h, l.params, mode);
              l.cache = std::move(out.cache);
              return std::move(out.y);
            },
            [&](ReluLayer& l) {
              Tensor4 y = relu_forward(h);
              if (train) l.input = std::move(h);
              return y;
            },
            [&](AvgPoolLayer& l) {
              l.input_shape = h.shape();
              return avgpool_forward(h, l.spec.window);
            },
            [&](FcLayer& l) {
              Tensor4 y = fc_forward(h, l.weight, l.bias, l.spec.out_features);
              if (train) l.input = std::move(h);
              return y;
            },
        },
        layer);
  }
  return h;
}

Tensor4 Network::backward(const Tensor4& d_output) {
  Tensor4 d = d_output;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    d = std::visit(
        Overloaded{
            [&](ConvLayer& l) {
              if (l.input.empty()) throw ContractViolation("backward without a Train-mode forward");
              auto g = conv2d_backward(l.input, l.weight, d, l.spec.padding);
              l.d_weight = std::move(g.d_weight);
              l.d_bias = std::move(g.d_bias);
              return std::move(g.d_input);
            },
            [&](NormLayer& l) {
              if (!l.cache) throw ContractViolation("backward without a Train-mode forward");
              auto g = norm_backward(l.spec.kind, *l.cache, l.params, d);
              l.d_gamma = std::move(g.d_gamma);
              l.d_beta = std::move(g.d_beta);
              l.d_rho = g.d_rho ? std::move(*g.d_rho) : ChannelVec(l.params.channels(), 0.0);
              return std::move(g.d_input);
            },
            [&](ReluLayer& l) {
              if (l.input.empty()) throw ContractViolation("backward without a Train-mode forward");
              return relu_backward(l.input, d);
            },
            [&](AvgPoolLayer& l) { return avgpool_backward(l.input_shape, d, l.spec.window); },
            [&](FcLayer& l) {
              if (l.input.empty()) throw ContractViolation("backward without a Train-mode forward");
              auto g = fc_backward(l.input, l.weight, d);
              l.d_weight = std::move(g.d_weight);
              l.d_bias = std::move(g.d_bias);
              return std::move(g.d_input);
            },
        },
        *it);
  }
  return d;
}

std::vector<ParamRef> Network::parameters() {
  std::vector<ParamRef> refs;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    std::visit(Overloaded{
                   [&](ConvLayer& l) {
                     if (l.d_weight.empty()) l.d_weight = Tensor4(l.weight.shape());
                     if (l.d_bias.size() != l.bias.size()) l.d_bias = ChannelVec(l.bias.size());
                     refs.push_back({prefix + "conv.weight", ParamRole::Weight, l.weight.data(),
                                     l.d_weight.data()});
                     refs.push_back({prefix + "conv.bias", ParamRole::Weight, l.bias.data,
                                     l.d_bias.data});
                   },
                   [&](NormLayer& l) {
                     const std::size_t c = l.params.channels();
                     if (l.d_gamma.size() != c) l.d_gamma = ChannelVec(c);
                     if (l.d_beta.size() != c) l.d_beta = ChannelVec(c);
                     if (l.d_rho.size() != c) l.d_rho = ChannelVec(c);
                     refs.push_back({prefix + "norm.gamma", ParamRole::Weight, l.params.gamma.data,
                                     l.d_gamma.data});
                     refs.push_back({prefix + "norm.beta", ParamRole::Weight, l.params.beta.data,
                                     l.d_beta.data});
                     if (l.spec.kind == NormKind::BIN) {
                       refs.push_back({prefix + "norm.rho", ParamRole::Gate, l.params.rho.data,
                                       l.d_rho.data});
                     } else if (l.spec.kind == NormKind::BnPlusIn) {
                       refs.push_back({prefix + "norm.rho", ParamRole::FrozenGate,
                                       l.params.rho.data, l.d_rho.data});
                     }
                   },
                   [&](ReluLayer&) {},
                   [&](AvgPoolLayer&) {},
                   [&](FcLayer& l) {
                     if (l.d_weight.size() != l.weight.size()) l.d_weight.assign(l.weight.size(), 0.0);
                     if (l.d_bias.size() != l.bias.size()) l.d_bias.assign(l.bias.size(), 0.0);
                     refs.push_back({prefix + "fc.weight", ParamRole::Weight, l.weight, l.d_weight});
                     refs.push_back({prefix + "fc.bias", ParamRole::Weight, l.bias, l.d_bias});
                   },
               },
               layers_[i]);
  }
  return refs;
}

std::size_t Network::num_parameters() const {
  std::size_t count = 0;
  for (const Layer& layer : layers_) {
    std::visit(Overloaded{
                   [&](const ConvLayer& l) { count += l.weight.size() + l.bias.size(); },
                   [&](const NormLayer& l) {
                     count += 2 * l.params.channels();
                     if (l.spec.kind == NormKind::BIN) count += l.params.channels();
                   },
                   [&](const ReluLayer&) {},
                   [&](const AvgPoolLayer&) {},
                   [&](const FcLayer& l) { count += l.weight.size() + l.bias.size(); },
               },
               layer);
  }
  return count;
}

std::vector<const NormLayer*> Network::norm_layers() const {
  std::vector<const NormLayer*> out;
  for (const Layer& layer : layers_) {
    if (const auto* l = std::get_if<NormLayer>(&layer)) out.push_back(l);
  }
  return out;
}

std::vector<LayerSpec> build_toy_net(const NetConfig& cfg) {
  if (cfg.num_norm_layers < 3) {
    throw ConfigError("the toy network needs at least three normalization layers");
  }
  if (cfg.channels == 0 || cfg.in_channels == 0 || cfg.num_classes < 2) {
    throw ConfigError("toy network needs channels >= 1 and at least two classes");
  }
  std::vector<LayerSpec> specs;
  std::size_t in_ch = cfg.in_channels;
  std::size_t h = cfg.height;
  std::size_t w = cfg.width;
  for (std::size_t i = 0; i < cfg.num_norm_layers; ++i) {
    if (h + 2 * cfg.padding < 3 || w + 2 * cfg.padding < 3) {
      throw ConfigError("input too small for " + std::to_string(cfg.num_norm_layers) +
                        " conv blocks");
    }
    specs.emplace_back(ConvSpec{in_ch, cfg.channels, 3, cfg.padding});
    h = h + 2 * cfg.padding - 2;
    w = w + 2 * cfg.padding - 2;
    specs.emplace_back(NormSpec{cfg.norm_kind, cfg.channels, cfg.eps, cfg.momentum});
    specs.emplace_back(ReluSpec{});
    if (i + 1 < cfg.num_norm_layers && h >= 8 && w >= 8 && h % 2 == 0 && w % 2 == 0) {
      specs.emplace_back(AvgPoolSpec{2});
      h /= 2;
      w /= 2;
    }
    in_ch = cfg.channels;
  }
  if (h != w) throw ConfigError("toy network expects square feature maps");
  specs.emplace_back(AvgPoolSpec{h});
  specs.emplace_back(FcSpec{cfg.channels, cfg.num_classes});
  return specs;
}

void randomize_gates(Network& net, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed, "gates");
  for (Layer& layer : net.layers()) {
    if (auto* l = std::get_if<NormLayer>(&layer); l && l->spec.kind == NormKind::BIN) {
      for (double& r : l->params.rho.data) r = rng.uniform(lo, hi);
    }
  }
}

std::vector<GradCheckReport> check_network_gradients(Network& net, const Tensor4& x,
                                                     std::span<const int> labels,
                                                     const GradCheckTolerances& tol) {
  const Tensor4 logits = net.forward(x, Mode::Train);
  const Tensor4 dx = net.backward(softmax_xent(logits, labels).d_logits);
  auto refs = net.parameters();

  std::vector<GradCheckReport> reports;
  Network probe = net;
  const ScalarFn f_input = [&](std::span<const double> theta) {
    Tensor4 xp(x.shape(), std::vector<double>(theta.begin(), theta.end()));
    return softmax_xent(probe.forward(xp, Mode::Train), labels).loss;
  };
  reports.push_back(
      compare_gradients("input", dx.data(), numeric_gradient(f_input, x.data(), tol.step), tol));

  auto probe_refs = probe.parameters();
  for (std::size_t k = 0; k < refs.size(); ++k) {
    if (refs[k].role == ParamRole::FrozenGate) continue;
    std::span<double> target = probe_refs[k].value;
    const std::vector<double> original(target.begin(), target.end());
    const ScalarFn f = [&](std::span<const double> theta) {
      std::copy(theta.begin(), theta.end(), target.begin());
      return softmax_xent(probe.forward(x, Mode::Train), labels).loss;
    };
    reports.push_back(compare_gradients(refs[k].name, refs[k].grad,
                                        numeric_gradient(f, original, tol.step), tol));
    std::copy(original.begin(), original.end(), target.begin());
  }
  return reports;
}

}  // namespace binorm
