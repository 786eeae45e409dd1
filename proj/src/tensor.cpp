#include "binorm/tensor.hpp"

#include <cmath>
#include <string>

#include "binorm/error.hpp"

namespace binorm {

namespace {

void validate_shape(const Shape& s) {
  if (s.n == 0 || s.c == 0 || s.h == 0 || s.w == 0) {
    throw InvalidShape("tensor dimensions must be >= 1, got (" + std::to_string(s.n) + "," +
                       std::to_string(s.c) + "," + std::to_string(s.h) + "," +
                       std::to_string(s.w) + ")");
  }
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidShape(std::string(op) + ": operand shapes differ");
  }
}

template <typename Op>
Tensor4 zip(const Tensor4& a, const Tensor4& b, const char* name, Op op) {
  require_same_shape(a, b, name);
  Tensor4 out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}

template <typename Op>
Tensor4 per_channel(const Tensor4& x, const ChannelVec& v, const char* name, Op op) {
  if (v.size() != x.c()) {
    throw InvalidShape(std::string(name) + ": channel vector has " + std::to_string(v.size()) +
                       " entries for " + std::to_string(x.c()) + " channels");
  }
  Tensor4 out(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = op(src[i], v[c]);
    }
  }
  return out;
}

template <typename Op>
Tensor4 per_instance(const Tensor4& x, const InstanceChannelVec& v, const char* name, Op op) {
  if (v.n != x.n() || v.c != x.c()) {
    throw InvalidShape(std::string(name) + ": instance vector does not match (n, c)");
  }
  Tensor4 out(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto src = x.plane(n, c);
      auto dst = out.plane(n, c);
      const double s = v.at(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = op(src[i], s);
    }
  }
  return out;
}

}  // namespace

Tensor4::Tensor4(Shape shape, double fill) : shape_(shape) {
  validate_shape(shape_);
  data_.assign(shape_.numel(), fill);
}

Tensor4::Tensor4(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_.numel()) {
    throw InvalidShape("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape volume " + std::to_string(shape_.numel()));
  }
}

double Tensor4::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

bool Tensor4::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor4 new_tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill) {
  return Tensor4(Shape{n, c, h, w}, fill);
}

ChannelStats reduce_mean_var_over_nhw(const Tensor4& x) {
  const std::size_t C = x.c();
  const double count = static_cast<double>(x.n() * x.shape().plane());
  ChannelStats out{ChannelVec(C), ChannelVec(C)};
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (double v : x.plane(n, c)) s += v;
    }
    const double mean = s / count;
    double ss = 0.0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (double v : x.plane(n, c)) ss += (v - mean) * (v - mean);
    }
    out.mean[c] = mean;
    out.var[c] = ss / count;
  }
  return out;
}

InstanceStats reduce_mean_var_over_hw(const Tensor4& x) {
  const double count = static_cast<double>(x.shape().plane());
  InstanceStats out{InstanceChannelVec(x.n(), x.c()), InstanceChannelVec(x.n(), x.c())};
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      auto p = x.plane(n, c);
      double s = 0.0;
      for (double v : p) s += v;
      const double mean = s / count;
      double ss = 0.0;
      for (double v : p) ss += (v - mean) * (v - mean);
      out.mean.at(n, c) = mean;
      out.var.at(n, c) = ss / count;
    }
  }
  return out;
}

Tensor4 map(const Tensor4& x, const std::function<double(double)>& f) {
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
  return zip(a, b, "add", [](double u, double v) { return u + v; });
}

Tensor4 sub(const Tensor4& a, const Tensor4& b) {
  return zip(a, b, "sub", [](double u, double v) { return u - v; });
}

Tensor4 mul(const Tensor4& a, const Tensor4& b) {
  return zip(a, b, "mul", [](double u, double v) { return u * v; });
}

Tensor4 scale(const Tensor4& x, double s) {
  Tensor4 out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = s * x[i];
  return out;
}

Tensor4 axpy(double alpha, const Tensor4& x, const Tensor4& y) {
  return zip(x, y, "axpy", [alpha](double u, double v) { return alpha * u + v; });
}

Tensor4 add_per_channel(const Tensor4& x, const ChannelVec& v) {
  return per_channel(x, v, "add_per_channel", [](double a, double b) { return a + b; });
}

Tensor4 sub_per_channel(const Tensor4& x, const ChannelVec& v) {
  return per_channel(x, v, "sub_per_channel", [](double a, double b) { return a - b; });
}

Tensor4 mul_per_channel(const Tensor4& x, const ChannelVec& v) {
  return per_channel(x, v, "mul_per_channel", [](double a, double b) { return a * b; });
}

Tensor4 sub_per_instance(const Tensor4& x, const InstanceChannelVec& v) {
  return per_instance(x, v, "sub_per_instance", [](double a, double b) { return a - b; });
}

Tensor4 mul_per_instance(const Tensor4& x, const InstanceChannelVec& v) {
  return per_instance(x, v, "mul_per_instance", [](double a, double b) { return a * b; });
}

}  // namespace binorm
