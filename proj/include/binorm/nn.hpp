#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "binorm/gradcheck.hpp"
#include "binorm/norm.hpp"
#include "binorm/tensor.hpp"

namespace binorm {

// ---------------------------------------------------------------------------
// Layer descriptions
// ---------------------------------------------------------------------------

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 3;
  std::size_t padding = 0;
};

struct NormSpec {
  NormKind kind = NormKind::BIN;
  std::size_t channels = 1;
  double eps = kDefaultEps;
  double momentum = kDefaultRunningMomentum;
};

struct ReluSpec {};

/// Non-overlapping average pooling with a square window (stride == window).
struct AvgPoolSpec {
  std::size_t window = 2;
};

/// Fully connected over the flattened (c, h, w) features; output is (N, out, 1, 1).
struct FcSpec {
  std::size_t in_features = 1;
  std::size_t out_features = 1;
};

using LayerSpec = std::variant<ConvSpec, NormSpec, ReluSpec, AvgPoolSpec, FcSpec>;

// ---------------------------------------------------------------------------
// Stateless building blocks
// ---------------------------------------------------------------------------

struct ConvGrads {
  Tensor4 d_input;
  Tensor4 d_weight;
  ChannelVec d_bias;
};

/// weight has shape (out, in, k, k); stride 1, zero padding.
Tensor4 conv2d_forward(const Tensor4& x, const Tensor4& weight, const ChannelVec& bias,
                       std::size_t padding);
ConvGrads conv2d_backward(const Tensor4& x, const Tensor4& weight, const Tensor4& d_y,
                          std::size_t padding);

Tensor4 relu_forward(const Tensor4& x);
/// d_y masked by x > 0.
Tensor4 relu_backward(const Tensor4& x, const Tensor4& d_y);

Tensor4 avgpool_forward(const Tensor4& x, std::size_t window);
Tensor4 avgpool_backward(const Shape& input_shape, const Tensor4& d_y, std::size_t window);

struct FcGrads {
  Tensor4 d_input;
  std::vector<double> d_weight;
  std::vector<double> d_bias;
};

/// weight is row-major (out, in).
Tensor4 fc_forward(const Tensor4& x, std::span<const double> weight, std::span<const double> bias,
                   std::size_t out_features);
FcGrads fc_backward(const Tensor4& x, std::span<const double> weight, const Tensor4& d_y);

struct XentResult {
  double loss = 0.0;        ///< mean over the batch
  Tensor4 d_logits;         ///< gradient of the mean loss
  std::size_t correct = 0;  ///< argmax hits
};

/// Softmax cross-entropy over logits of shape (N, K, 1, 1).
XentResult softmax_xent(const Tensor4& logits, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

enum class ParamRole {
  Weight,      ///< ordinary parameter: base learning rate and weight decay
  Gate,        ///< style gate: scaled learning rate, no decay, clipped to [0, 1]
  FrozenGate,  ///< BN+IN gate pinned at 0.5, never updated
};

/// A view of one parameter tensor and its gradient inside a Network.
struct ParamRef {
  std::string name;
  ParamRole role = ParamRole::Weight;
  std::span<double> value;
  std::span<const double> grad;
};

struct ConvLayer {
  ConvSpec spec;
  Tensor4 weight;
  ChannelVec bias;
  Tensor4 d_weight;
  ChannelVec d_bias;
  Tensor4 input;
};

struct NormLayer {
  NormSpec spec;
  NormParams params;
  ChannelVec d_gamma;
  ChannelVec d_beta;
  ChannelVec d_rho;
  std::optional<NormCache> cache;
};

struct ReluLayer {
  Tensor4 input;
};

struct AvgPoolLayer {
  AvgPoolSpec spec;
  Shape input_shape;
};

struct FcLayer {
  FcSpec spec;
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> d_weight;
  std::vector<double> d_bias;
  Tensor4 input;
};

using Layer = std::variant<ConvLayer, NormLayer, ReluLayer, AvgPoolLayer, FcLayer>;

class Network {
 public:
  /// Initializes conv/fc weights uniformly in +-sqrt(6 / (fan_in + fan_out))
  /// from per-layer streams of `seed`, so nets that differ only in their
  /// normalization kind share every non-gate initial value. gamma = 1,
  /// beta = 0, rho = 1 (0.5 for BN+IN).
  Network(std::vector<LayerSpec> specs, std::uint64_t seed);
  /// Wraps already-initialized layers (checkpoint loading).
  explicit Network(std::vector<Layer> layers);

  /// Train mode keeps per-layer caches for backward and updates running statistics.
  Tensor4 forward(const Tensor4& x, Mode mode);
  /// Stores every parameter gradient in the layers and returns d_input.
  /// Requires a preceding Train-mode forward.
  Tensor4 backward(const Tensor4& d_output);

  std::vector<ParamRef> parameters();
  /// Learnable scalar count (frozen gates excluded).
  std::size_t num_parameters() const;

  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }
  /// Normalization layers in depth order.
  std::vector<const NormLayer*> norm_layers() const;

 private:
  std::vector<Layer> layers_;
};

struct NetConfig {
  std::size_t in_channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 8;
  std::size_t num_norm_layers = 3;
  NormKind norm_kind = NormKind::BIN;
  std::size_t num_classes = 4;
  std::size_t padding = 0;
  double eps = kDefaultEps;
  double momentum = kDefaultRunningMomentum;
};

/// [conv3x3 -> norm -> relu (-> avgpool2)] x num_norm_layers -> global avgpool -> fc.
/// A 2x2 pool follows every block but the last whose output is at least 8
/// pixels on a side. Throws ConfigError for fewer than three normalization
/// layers or when the spatial size collapses.
std::vector<LayerSpec> build_toy_net(const NetConfig& cfg);

/// Puts every non-frozen gate at a random interior value in [lo, hi].
void randomize_gates(Network& net, std::uint64_t seed, double lo = 0.1, double hi = 0.9);

/// Gradient check of a whole network under softmax cross-entropy: one report
/// for the input and one per parameter tensor. Uses only forward passes for
/// the numeric side. Gates must be strictly inside (0, 1).
std::vector<GradCheckReport> check_network_gradients(Network& net, const Tensor4& x,
                                                     std::span<const int> labels,
                                                     const GradCheckTolerances& tol = {});

}  // namespace binorm
