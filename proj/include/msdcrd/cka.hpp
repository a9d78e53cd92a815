#pragma once

// Linear-kernel centered kernel alignment between activation sets.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "msdcrd/matrix.hpp"

namespace msdcrd {

/// X * X^T for an n x d activation matrix.
inline Matrix gram(const Matrix& x) {
  detail::require(x.rows() >= 2, "gram: need at least 2 samples");
  return x * x.transpose();
}

/// H K H. Centering ignores constant offsets, so K(0, 0) is subtracted
/// first; a constant kernel then centers to exactly zero instead of to
/// rounding noise the size of its entries.
inline Matrix centered_kernel(const Matrix& k) {
  Matrix kc = k.array() - k(0, 0);
  kc.rowwise() -= Eigen::RowVectorXd(kc.colwise().mean());
  kc.colwise() -= Vector(kc.rowwise().mean());
  return kc;
}

/// Empirical HSIC: tr(K H L H) / (n - 1)^2 with H the centering matrix.
inline double hsic(const Matrix& k, const Matrix& l) {
  detail::require(k.rows() == k.cols() && l.rows() == l.cols(), "hsic: kernel matrices must be square");
  detail::require(k.rows() == l.rows(), "hsic: kernel sizes differ (" + std::to_string(k.rows()) + " vs " +
                                            std::to_string(l.rows()) + ")");
  detail::require(k.rows() >= 2, "hsic: need at least 2 samples");
  const double n = static_cast<double>(k.rows());
  return centered_kernel(k).cwiseProduct(centered_kernel(l).transpose()).sum() / ((n - 1.0) * (n - 1.0));
}

/// Relative tolerance below which a centered Gram matrix counts as zero.
inline constexpr double cka_degenerate_tol = 1e-8;

inline double cka(const Matrix& x, const Matrix& y) {
  detail::require(x.rows() == y.rows(), "cka: sample counts differ (" + std::to_string(x.rows()) + " vs " +
                                            std::to_string(y.rows()) + ")");
  const Matrix k = gram(x);
  const Matrix l = gram(y);
  const double n1 = static_cast<double>(x.rows() - 1);
  const double kk = hsic(k, k), ll = hsic(l, l);
  // hsic(K, K) = |HKH|_F^2 / (n-1)^2, so compare that norm against |K|_F.
  auto degenerate = [&](double self, const Matrix& g) {
    return !(std::sqrt(std::max(self, 0.0)) * n1 > cka_degenerate_tol * g.norm());
  };
  if (degenerate(kk, k) || degenerate(ll, l))
    detail::fail(ErrorKind::degenerate, "cka: degenerate representation (constant features)");
  return hsic(k, l) / std::sqrt(kk * ll);
}

/// Ordered per-block activation matrices sharing one sample count.
struct ActivationSet {
  std::vector<std::string> names;
  std::vector<Matrix> blocks;

  std::size_t samples() const { return blocks.empty() ? 0 : static_cast<std::size_t>(blocks.front().rows()); }

  void validate() const {
    detail::require(!blocks.empty(), "activation set has no blocks");
    detail::require(names.empty() || names.size() == blocks.size(), "activation set names do not match blocks");
    for (const Matrix& b : blocks) {
      detail::require(static_cast<std::size_t>(b.rows()) == samples(), "activation blocks have different sample counts");
      detail::require(b.rows() >= 2, "activation blocks need at least 2 samples");
      if (!b.allFinite()) detail::fail(ErrorKind::non_finite, "activation block contains non-finite values");
    }
  }
};

/// Flattens n x ... activations to n x (product of the rest).
inline Matrix flatten_activations(const Tensor& t) { return to_matrix(t); }

struct CkaHeatmap {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::optional<double>> values;  // row-major; empty for degenerate pairs

  const std::optional<double>& at(std::size_t p, std::size_t q) const { return values[p * cols + q]; }
};

inline CkaHeatmap heatmap(const ActivationSet& a, const ActivationSet& b) {
  a.validate();
  b.validate();
  detail::require(a.samples() == b.samples(), "heatmap: activation sets have different sample counts (" +
                                                  std::to_string(a.samples()) + " vs " + std::to_string(b.samples()) +
                                                  ")");
  CkaHeatmap out{a.blocks.size(), b.blocks.size(), {}};
  out.values.reserve(out.rows * out.cols);
  for (const Matrix& x : a.blocks) {
    for (const Matrix& y : b.blocks) {
      try {
        out.values.emplace_back(cka(x, y));
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::degenerate) throw;
        out.values.emplace_back(std::nullopt);
      }
    }
  }
  return out;
}

}  // namespace msdcrd
