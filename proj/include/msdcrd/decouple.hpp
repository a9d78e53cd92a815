#pragma once

// Multi-scale pooling: turns each B x C x H x W feature map into M pooled
// C-dimensional samples per image, one per pooling window.

#include <cstddef>
#include <string>
#include <vector>

#include "msdcrd/matrix.hpp"

namespace msdcrd {

enum class PoolMode {
  output_grid,    // scale s: adaptive average pooling to an s x s grid
  kernel_stride,  // scale k: k x k windows sliding with a per-scale stride
};

inline const char* to_string(PoolMode m) { return m == PoolMode::output_grid ? "output-grid" : "kernel-stride"; }

struct ScaleSpec {
  PoolMode mode = PoolMode::output_grid;
  std::vector<std::size_t> scales{1};
  // kernel-stride only: one stride per scale; empty means stride = kernel.
  std::vector<std::size_t> strides;
  // kernel-stride only: append a whole-map window after all scales.
  bool include_gap = false;

  std::size_t stride(std::size_t i) const { return strides.empty() ? scales[i] : strides[i]; }

  void validate(std::size_t height, std::size_t width) const {
    using detail::require;
    require(!scales.empty(), "scale list is empty");
    for (std::size_t i = 0; i < scales.size(); ++i) {
      require(scales[i] >= 1, "scales must be positive");
      require(i == 0 || scales[i] > scales[i - 1], "scales must be strictly ascending");
      require(scales[i] <= std::min(height, width),
              "scale " + std::to_string(scales[i]) + " exceeds the spatial extent " + std::to_string(height) + "x" +
                  std::to_string(width));
    }
    if (mode == PoolMode::kernel_stride) {
      require(strides.empty() || strides.size() == scales.size(), "need one stride per scale");
      for (std::size_t s : strides) require(s >= 1, "strides must be positive");
    } else {
      require(strides.empty() && !include_gap, "strides and include-gap apply to kernel-stride mode only");
    }
  }
};

struct Window {
  std::size_t scale;  // 0 marks the appended whole-map window
  std::size_t top, left, height, width;

  std::size_t area() const { return height * width; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Ordered window rectangles for an H x W map: scales ascending, row-major
/// within a scale, then the optional whole-map window.
inline std::vector<Window> window_layout(const ScaleSpec& spec, std::size_t height, std::size_t width) {
  spec.validate(height, width);
  std::vector<Window> out;
  for (std::size_t i = 0; i < spec.scales.size(); ++i) {
    const std::size_t s = spec.scales[i];
    if (spec.mode == PoolMode::output_grid) {
      for (std::size_t r = 0; r < s; ++r) {
        const std::size_t top = r * height / s, bottom = (r + 1) * height / s;
        for (std::size_t c = 0; c < s; ++c) {
          const std::size_t left = c * width / s, right = (c + 1) * width / s;
          out.push_back({s, top, left, bottom - top, right - left});
        }
      }
    } else {
      const std::size_t step = spec.stride(i);
      for (std::size_t top = 0; top + s <= height; top += step)
        for (std::size_t left = 0; left + s <= width; left += step) out.push_back({s, top, left, s, s});
    }
  }
  if (spec.mode == PoolMode::kernel_stride && spec.include_gap) out.push_back({0, 0, 0, height, width});
  return out;
}

struct SampleMeta {
  std::size_t image;
  std::size_t window;
  Window rect;
};

/// N = B*M pooled samples, image-major then window order.
struct PooledSet {
  Matrix samples;  // N x C
  std::vector<SampleMeta> meta;
  std::size_t images = 0;
  std::size_t windows_per_image = 0;

  std::size_t rows() const { return static_cast<std::size_t>(samples.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(samples.cols()); }

  /// Copies of the rows at `keep`, in order.
  Matrix take_rows(const std::vector<std::size_t>& keep) const {
    Matrix out(idx(keep.size()), samples.cols());
    for (std::size_t k = 0; k < keep.size(); ++k) out.row(idx(k)) = samples.row(idx(keep[k]));
    return out;
  }
};

namespace detail {

inline void require_rank4(const Tensor& t, const char* what) {
  require(t.rank() == 4, std::string(what) + " must be rank 4 (B x C x H x W), got " + shape_string(t.shape()));
}

// Summation order is part of the contract: recomputing a row with this
// function reproduces the pooled value bit-for-bit.
inline double window_mean(const Tensor& f, std::size_t b, std::size_t c, const Window& w) {
  double sum = 0.0;
  for (std::size_t y = w.top; y < w.top + w.height; ++y)
    for (std::size_t x = w.left; x < w.left + w.width; ++x) sum += f(b, c, y, x);
  return sum / static_cast<double>(w.area());
}

}  // namespace detail

inline PooledSet multi_scale_pool(const Tensor& features, const ScaleSpec& spec) {
  detail::require_rank4(features, "feature batch");
  const std::size_t batch = features.extent(0), channels = features.extent(1);
  const auto layout = window_layout(spec, features.extent(2), features.extent(3));

  PooledSet out;
  out.images = batch;
  out.windows_per_image = layout.size();
  out.samples.resize(idx(batch * layout.size()), idx(channels));
  out.meta.reserve(batch * layout.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t m = 0; m < layout.size(); ++m) {
      const auto row = idx(b * layout.size() + m);
      for (std::size_t c = 0; c < channels; ++c)
        out.samples(row, idx(c)) = detail::window_mean(features, b, c, layout[m]);
      out.meta.push_back({b, m, layout[m]});
    }
  }
  return out;
}

/// Adjoint of multi_scale_pool: spreads each row gradient uniformly over its
/// window and accumulates into a B x C x H x W map.
inline Tensor pool_adjoint(const Matrix& row_grad, const std::vector<SampleMeta>& meta, const Shape& map_shape) {
  detail::require(map_shape.size() == 4, "pool_adjoint: map shape must be rank 4");
  detail::require(static_cast<std::size_t>(row_grad.rows()) == meta.size() &&
                      static_cast<std::size_t>(row_grad.cols()) == map_shape[1],
                  "pool_adjoint: gradient does not match pooled layout");
  Tensor grad(map_shape);
  for (std::size_t n = 0; n < meta.size(); ++n) {
    const Window& w = meta[n].rect;
    const double inv_area = 1.0 / static_cast<double>(w.area());
    for (std::size_t c = 0; c < map_shape[1]; ++c) {
      const double g = row_grad(idx(n), idx(c)) * inv_area;
      if (g == 0.0) continue;
      for (std::size_t y = w.top; y < w.top + w.height; ++y)
        for (std::size_t x = w.left; x < w.left + w.width; ++x) grad(meta[n].image, c, y, x) += g;
    }
  }
  return grad;
}

}  // namespace msdcrd
