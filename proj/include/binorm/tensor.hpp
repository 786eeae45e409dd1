#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace binorm {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
};

/// Dense feature map stored row-major in (n, c, h, w) order.
class Tensor4 {
 public:
  Tensor4() = default;
  /// Throws InvalidShape when any dimension is zero.
  explicit Tensor4(Shape shape, double fill = 0.0);
  Tensor4(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  /// Offset of the first element of the (n, c) spatial plane.
  std::size_t plane_offset(std::size_t n, std::size_t c) const {
    return (n * shape_.c + c) * shape_.plane();
  }
  std::span<double> plane(std::size_t n, std::size_t c) {
    return std::span<double>(data_).subspan(plane_offset(n, c), shape_.plane());
  }
  std::span<const double> plane(std::size_t n, std::size_t c) const {
    return std::span<const double>(data_).subspan(plane_offset(n, c), shape_.plane());
  }

  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double sum() const;
  bool all_finite() const;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// One value per channel (means, variances, gates, affine parameters).
struct ChannelVec {
  std::vector<double> data;

  ChannelVec() = default;
  explicit ChannelVec(std::size_t c, double fill = 0.0) : data(c, fill) {}
  explicit ChannelVec(std::vector<double> values) : data(std::move(values)) {}
  ChannelVec(std::initializer_list<double> values) : data(values) {}

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool operator==(const ChannelVec&) const = default;
};

/// One value per (sample, channel) pair, stored n-major.
struct InstanceChannelVec {
  std::size_t n = 0;
  std::size_t c = 0;
  std::vector<double> data;

  InstanceChannelVec() = default;
  InstanceChannelVec(std::size_t n_, std::size_t c_, double fill = 0.0)
      : n(n_), c(c_), data(n_ * c_, fill) {}

  double& at(std::size_t i, std::size_t ch) { return data[i * c + ch]; }
  double at(std::size_t i, std::size_t ch) const { return data[i * c + ch]; }
};

struct ChannelStats {
  ChannelVec mean;
  ChannelVec var;
};

struct InstanceStats {
  InstanceChannelVec mean;
  InstanceChannelVec var;
};

Tensor4 new_tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill);

/// Per-channel mean and population variance over (n, h, w).
ChannelStats reduce_mean_var_over_nhw(const Tensor4& x);
/// Per-(n, c) mean and population variance over (h, w).
InstanceStats reduce_mean_var_over_hw(const Tensor4& x);

Tensor4 map(const Tensor4& x, const std::function<double(double)>& f);
Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 sub(const Tensor4& a, const Tensor4& b);
Tensor4 mul(const Tensor4& a, const Tensor4& b);
Tensor4 scale(const Tensor4& x, double s);
/// alpha * x + y
Tensor4 axpy(double alpha, const Tensor4& x, const Tensor4& y);

Tensor4 add_per_channel(const Tensor4& x, const ChannelVec& v);
Tensor4 sub_per_channel(const Tensor4& x, const ChannelVec& v);
Tensor4 mul_per_channel(const Tensor4& x, const ChannelVec& v);
Tensor4 sub_per_instance(const Tensor4& x, const InstanceChannelVec& v);
Tensor4 mul_per_instance(const Tensor4& x, const InstanceChannelVec& v);

}  // namespace binorm
