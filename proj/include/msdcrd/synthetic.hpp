#pragma once

// Seeded random problem instances. Values come from mt19937_64 mapped to
// [-1, 1) by bit manipulation, so instances are identical on every platform.

#include <cstdint>
#include <optional>
#include <random>

#include "msdcrd/contrast.hpp"

namespace msdcrd::synthetic {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

 private:
  std::mt19937_64 engine_;
};

inline Tensor random_tensor(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::vector<double> data(Tensor::count(shape));
  for (double& v : data) v = scale * rng.uniform(-1.0, 1.0);
  return Tensor(shape, std::move(data));
}

inline Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
  Matrix m(idx(rows), idx(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.uniform(-1.0, 1.0);
  return m;
}

inline Vector random_vector(std::size_t n, Rng& rng, double scale = 1.0) {
  Vector v(idx(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * rng.uniform(-1.0, 1.0);
  return v;
}

/// Random permutation of 0..n-1 (Fisher-Yates on the portable generator).
inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.index(i)]);
  return p;
}

/// B images x M windows of random C-dimensional pooled samples with
/// synthetic metadata (each window a distinct 1x1 cell).
inline PooledSet random_pooled(std::size_t images, std::size_t windows, std::size_t channels, Rng& rng) {
  PooledSet p;
  p.images = images;
  p.windows_per_image = windows;
  p.samples = random_matrix(images * windows, channels, rng);
  for (std::size_t i = 0; i < images; ++i)
    for (std::size_t m = 0; m < windows; ++m) p.meta.push_back({i, m, Window{1, 0, m, 1, 1}});
  return p;
}

struct InstanceShape {
  std::size_t batch = 2;
  std::size_t student_channels = 4;
  std::size_t teacher_channels = 4;
  std::size_t student_size = 4;  // H = W
  std::size_t teacher_size = 4;
  std::size_t classes = 5;
  std::vector<std::size_t> scales{1, 2};
  bool with_task = false;
};

struct Instance {
  Tensor student;
  Tensor teacher;
  ClassifierHead head;
  Projector projector;
  ScaleSpec spec;
  Thresholds thresholds;
  LossConfig config;
  std::optional<TaskTargets> task;
};

/// Random instance. The head is scaled so teacher confidences spread over
/// both sides of the default thresholds.
inline Instance random_instance(std::uint64_t seed, const InstanceShape& shape) {
  Rng rng(seed);
  Instance in;
  in.student = random_tensor({shape.batch, shape.student_channels, shape.student_size, shape.student_size}, rng);
  in.teacher = random_tensor({shape.batch, shape.teacher_channels, shape.teacher_size, shape.teacher_size}, rng);
  in.head.weights = random_matrix(shape.classes, shape.teacher_channels, rng, 6.0);
  in.head.bias = random_vector(shape.classes, rng, 0.5);
  in.projector.weights = random_matrix(shape.teacher_channels, shape.student_channels, rng);
  in.projector.bias = random_vector(shape.teacher_channels, rng, 0.1);
  in.spec.scales = shape.scales;
  in.thresholds = {0.05, 0.6};
  if (shape.with_task) {
    TaskTargets task{random_tensor({shape.batch, shape.classes}, rng, 2.0), {}};
    for (std::size_t b = 0; b < shape.batch; ++b) task.labels.push_back(rng.index(shape.classes));
    in.task = std::move(task);
  }
  return in;
}

}  // namespace msdcrd::synthetic
