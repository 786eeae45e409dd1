#include "binorm/styledata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "binorm/error.hpp"
#include "binorm/rng.hpp"

namespace binorm {

namespace {

constexpr int kSupersample = 4;

struct Placement {
  double cx = 0.0;
  double cy = 0.0;
  double scale = 1.0;
  bool vertical = false;
};

bool inside(int class_id, double px, double py) {
  const double r = std::hypot(px, py);
  switch (class_id) {
    case kDisk:
      return r <= 0.55;
    case kCross:
      return (std::abs(px) <= 0.17 && std::abs(py) <= 0.7) ||
             (std::abs(py) <= 0.17 && std::abs(px) <= 0.7);
    case kBar:
      return std::abs(px) <= 0.75 && std::abs(py) <= 0.2;
    case kRing:
      return r >= 0.38 && r <= 0.7;
    default:
      return false;
  }
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(order[i - 1], order[j]);
  }
}

Split make_split(Task task, std::size_t count, std::uint64_t seed, std::string_view name,
                 const DataOptions& opts) {
  const StyleRanges& rg = opts.ranges;
  const int num_labels = task == Task::Shape ? kNumShapeClasses : opts.num_style_buckets;
  const std::size_t plane = opts.height * opts.width;

  // balanced labels in a shuffled order
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng order_rng(seed, std::string(name) + "/order");
  shuffle(order, order_rng);

  Split split{Tensor4(Shape{std::max<std::size_t>(count, 1), 1, opts.height, opts.width}), {}, {}};
  split.labels.resize(count);
  split.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(order[i] % static_cast<std::size_t>(num_labels));
    Rng rng(seed, std::string(name) + "/sample" + std::to_string(i));
    StyleSample s;
    s.style.contrast = rng.uniform(rg.contrast_lo, rg.contrast_hi);
    if (task == Task::Shape) {
      s.shape_label = label;
      s.style.brightness = rng.uniform(rg.brightness_lo, rg.brightness_hi);
    } else {
      s.shape_label = static_cast<int>(rng.below(kNumShapeClasses));
      const double width = (rg.brightness_hi - rg.brightness_lo) / opts.num_style_buckets;
      const double lo = rg.brightness_lo + width * label;
      // stay strictly inside the bucket so re-quantization is unambiguous
      s.style.brightness = lo + width * (0.001 + 0.998 * rng.uniform());
    }
    s.style_label = brightness_bucket(s.style.brightness, rg, opts.num_style_buckets);
    const Tensor4 base = render_shape(s.shape_label, opts.height, opts.width, rng.next_u64(),
                                      opts.noise_stddev);
    const Tensor4 styled = apply_style(base, s.style.contrast, s.style.brightness, opts.clamp);
    std::copy(styled.values().begin(), styled.values().end(),
              split.images.values().begin() + static_cast<std::ptrdiff_t>(i * plane));
    split.labels[i] = label;
    split.samples[i] = s;
  }
  return split;
}

}  // namespace

std::string_view to_string(Task task) { return task == Task::Shape ? "shape" : "style"; }

Task parse_task(std::string_view name) {
  if (name == "shape") return Task::Shape;
  if (name == "style") return Task::Style;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected shape or style)");
}

Tensor4 render_shape(int class_id, std::size_t height, std::size_t width,
                     std::optional<std::uint64_t> jitter_seed, double noise_stddev) {
  if (height < 16 || width < 16) {
    throw InvalidShape("images must be at least 16x16, got " + std::to_string(height) + "x" +
                       std::to_string(width));
  }
  if (class_id < 0 || class_id >= kNumShapeClasses) {
    throw ContractViolation("unknown shape class " + std::to_string(class_id));
  }
  Placement where;
  std::optional<Rng> rng;
  if (jitter_seed) {
    rng.emplace(*jitter_seed);
    where.cx = rng->uniform(-0.15, 0.15);
    where.cy = rng->uniform(-0.15, 0.15);
    where.scale = rng->uniform(0.85, 1.15);
    where.vertical = rng->uniform() < 0.5;
  }

  Tensor4 img(Shape{1, 1, height, width});
  const double inv_ss = 1.0 / (kSupersample * kSupersample);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const double u = (x + (sx + 0.5) / kSupersample) / width * 2.0 - 1.0;
          const double v = (y + (sy + 0.5) / kSupersample) / height * 2.0 - 1.0;
          double px = (u - where.cx) / where.scale;
          double py = (v - where.cy) / where.scale;
          if (where.vertical) std::swap(px, py);
          if (inside(class_id, px, py)) ++hits;
        }
      }
      double value = kBackgroundLevel + (kForegroundLevel - kBackgroundLevel) * hits * inv_ss;
      if (rng && noise_stddev > 0.0) value = std::clamp(value + rng->normal(0.0, noise_stddev), 0.0, 1.0);
      img(0, 0, y, x) = value;
    }
  }
  return img;
}

Tensor4 apply_style(const Tensor4& image, double contrast, double brightness, bool clamp) {
  if (!(contrast >= kContrastMin && contrast <= kContrastMax)) {
    throw ContractViolation("contrast " + std::to_string(contrast) + " outside [0.5, 1.5]");
  }
  if (!(brightness >= kBrightnessMin && brightness <= kBrightnessMax)) {
    throw ContractViolation("brightness " + std::to_string(brightness) + " outside [-0.5, 0.5]");
  }
  return map(image, [=](double v) {
    const double out = contrast * v + brightness;
    return clamp ? std::clamp(out, 0.0, 1.0) : out;
  });
}

int brightness_bucket(double brightness, const StyleRanges& ranges, int buckets) {
  const double t = (brightness - ranges.brightness_lo) / (ranges.brightness_hi - ranges.brightness_lo);
  const int b = static_cast<int>(std::floor(t * buckets));
  return std::clamp(b, 0, buckets - 1);
}

Dataset make_dataset(Task task, std::size_t n_train, std::size_t n_test, std::uint64_t seed,
                     const DataOptions& opts) {
  if (n_train == 0 || n_test == 0) throw ConfigError("dataset splits must be non-empty");
  if (opts.num_style_buckets < 2) throw ConfigError("need at least two style buckets");
  const StyleRanges& rg = opts.ranges;
  if (rg.contrast_lo < kContrastMin || rg.contrast_hi > kContrastMax ||
      rg.brightness_lo < kBrightnessMin || rg.brightness_hi > kBrightnessMax ||
      !(rg.contrast_lo < rg.contrast_hi) || !(rg.brightness_lo < rg.brightness_hi)) {
    throw ConfigError("style sampling ranges must be non-empty and within a in [0.5, 1.5], b in [-0.5, 0.5]");
  }
  return Dataset{make_split(task, n_train, seed, "data/train", opts),
                 make_split(task, n_test, seed, "data/test", opts)};
}

std::string label_manifest_csv(const Split& split) {
  std::string out = "index,shape_label,style_label,a,b\n";
  char buf[128];
  for (std::size_t i = 0; i < split.samples.size(); ++i) {
    const StyleSample& s = split.samples[i];
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%.17g,%.17g\n", i, s.shape_label, s.style_label,
                  s.style.contrast, s.style.brightness);
    out += buf;
  }
  return out;
}

}  // namespace binorm
