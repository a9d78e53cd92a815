#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "msdcrd/error.hpp"

namespace msdcrd {

/// Element precision of a tensor as stored on disk. Values are always held
/// as double in memory; f32 tensors keep float-representable values only.
enum class DType { f32, f64 };

inline const char* to_string(DType d) { return d == DType::f32 ? "<f4" : "<f8"; }

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

/// Dense row-major array of rank 1..4 with finite entries.
class Tensor {
 public:
  static constexpr std::size_t max_rank = 4;

  Tensor() = default;

  explicit Tensor(Shape shape, DType dtype = DType::f64)
      : dtype_(dtype), shape_(std::move(shape)) {
    check_shape();
    data_.assign(count(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::f64)
      : dtype_(dtype), shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    detail::require(data_.size() == count(shape_),
                    "tensor data length " + std::to_string(data_.size()) +
                        " does not match shape " + shape_string(shape_));
    for (double& v : data_) {
      if (!std::isfinite(v)) detail::fail(ErrorKind::non_finite, "tensor contains a non-finite value");
      if (dtype_ == DType::f32) v = static_cast<double>(static_cast<float>(v));
    }
  }

  DType dtype() const noexcept { return dtype_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Flat offset of a rank-4 index (b, c, y, x).
  std::size_t offset(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return ((b * shape_[1] + c) * shape_[2] + y) * shape_[3] + x;
  }
  double operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(b, c, y, x)];
  }
  double& operator()(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return data_[offset(b, c, y, x)];
  }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }

  /// Same values, different declared precision. Narrowing rounds to float.
  Tensor as(DType dtype) const { return Tensor(shape_, data_, dtype); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dtype_ == b.dtype_ && a.shape_ == b.shape_ && a.data_ == b.data_;
  }

  static std::size_t count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

 private:
  void check_shape() const {
    detail::require(!shape_.empty() && shape_.size() <= max_rank,
                    "tensor rank must be between 1 and 4, got " + std::to_string(shape_.size()));
    for (std::size_t e : shape_)
      detail::require(e > 0, "tensor extents must be positive: " + shape_string(shape_));
  }

  DType dtype_ = DType::f64;
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) fail(ErrorKind::non_finite, std::string(what) + ": non-finite input");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

inline double l2_norm(std::span<const double> v) { return std::sqrt(detail::dot(v, v)); }

/// v / max(|v|, eps). Vectors shorter than eps map to a scaled-down copy,
/// so the zero vector stays zero.
inline std::vector<double> l2_normalize(std::span<const double> v, double eps = 1e-12) {
  detail::require(eps > 0.0, "l2_normalize: eps must be positive");
  detail::require_finite(v, "l2_normalize");
  const double denom = std::max(l2_norm(v), eps);
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= denom;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  detail::require(!logits.empty(), "softmax: empty input");
  detail::require_finite(logits, "softmax");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

/// Cosine similarity clamped to [-1, 1]; 0 when either vector is shorter
/// than eps.
inline double cosine_sim(std::span<const double> a, std::span<const double> b, double eps = 1e-12) {
  detail::require(a.size() == b.size(), "cosine_sim: length mismatch (" + std::to_string(a.size()) +
                                            " vs " + std::to_string(b.size()) + ")");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na < eps || nb < eps) return 0.0;
  return std::clamp(detail::dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace msdcrd
