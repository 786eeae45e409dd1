#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "binorm/tensor.hpp"

namespace binorm {

enum class Task {
  Shape,  ///< label is the shape class; style is a nuisance
  Style,  ///< label is the brightness bucket; style is the signal
};

std::string_view to_string(Task task);
/// "shape" or "style"; throws ConfigError otherwise.
Task parse_task(std::string_view name);

/// Shape classes rendered by render_shape.
enum ShapeClass : int { kDisk = 0, kCross = 1, kBar = 2, kRing = 3 };
inline constexpr int kNumShapeClasses = 4;

/// Limits accepted by apply_style.
inline constexpr double kContrastMin = 0.5;
inline constexpr double kContrastMax = 1.5;
inline constexpr double kBrightnessMin = -0.5;
inline constexpr double kBrightnessMax = 0.5;

/// Sampling ranges used by the generator; a sub-range of the accepted limits
/// chosen so that on average only a few percent of pixels clamp.
struct StyleRanges {
  double contrast_lo = 0.75;
  double contrast_hi = 1.25;
  double brightness_lo = -0.25;
  double brightness_hi = 0.25;
};

struct StyleParams {
  double contrast = 1.0;    ///< a
  double brightness = 0.0;  ///< b
};

struct DataOptions {
  std::size_t height = 16;
  std::size_t width = 16;
  int num_style_buckets = 4;
  StyleRanges ranges{};
  /// When false, apply_style is not clamped and instance normalization is
  /// exactly style-invariant.
  bool clamp = true;
  double noise_stddev = 0.02;
};

/// Metadata for one generated image.
struct StyleSample {
  int shape_label = 0;
  StyleParams style{};
  int style_label = 0;
};

inline constexpr double kBackgroundLevel = 0.3;
inline constexpr double kForegroundLevel = 0.7;

/// Renders a (1, 1, H, W) image of a disk, cross, bar or ring at
/// kForegroundLevel on a kBackgroundLevel background, 4x supersampled. With a
/// jitter seed the position, size, bar orientation and a little pixel noise are
/// randomized; without one the shape is centered and noise-free.
/// H, W >= 16; throws InvalidShape otherwise and ContractViolation for an
/// unknown class.
Tensor4 render_shape(int class_id, std::size_t height, std::size_t width,
                     std::optional<std::uint64_t> jitter_seed, double noise_stddev = 0.02);

/// x' = clamp_[0,1](a * x + b) (clamp optional). a in [0.5, 1.5] and b in
/// [-0.5, 0.5]; throws ContractViolation outside.
Tensor4 apply_style(const Tensor4& image, double contrast, double brightness, bool clamp = true);

/// Equal-width bucket of the brightness within the sampling range.
int brightness_bucket(double brightness, const StyleRanges& ranges, int buckets);

struct Split {
  Tensor4 images;  ///< (n, 1, H, W)
  std::vector<int> labels;
  std::vector<StyleSample> samples;
};

struct Dataset {
  Split train;
  Split test;
};

/// Generates balanced train and test splits for the task. Every sample is
/// drawn from its own stream derived from (seed, split, index); the two
/// splits use distinct streams. The non-label factor is sampled independently
/// and uniformly.
Dataset make_dataset(Task task, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                     const DataOptions& opts = {});

/// CSV manifest `index,shape_label,style_label,a,b`.
std::string label_manifest_csv(const Split& split);

}  // namespace binorm
