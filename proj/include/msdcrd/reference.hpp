#pragma once

// Naive reference implementations. Every routine here is written with
// explicit loops in long double and shares no numeric code with the
// optimized kernels, so the two can be checked against each other.

#include <cmath>
#include <cstddef>
#include <vector>

#include "msdcrd/decouple.hpp"
#include "msdcrd/select.hpp"
#include "msdcrd/tensor.hpp"

namespace msdcrd::reference {

using Rows = std::vector<std::vector<double>>;
using real = long double;

inline real dot(const std::vector<real>& a, const std::vector<real>& b) {
  real s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline real cosine(const std::vector<real>& a, const std::vector<real>& b, real eps) {
  const real na = std::sqrt(dot(a, a)), nb = std::sqrt(dot(b, b));
  if (na < eps || nb < eps) return 0;
  real c = dot(a, b) / (na * nb);
  return c > 1 ? 1 : (c < -1 ? -1 : c);
}

inline std::vector<real> widen(const std::vector<double>& v) { return {v.begin(), v.end()}; }

inline std::vector<real> normalized(const std::vector<double>& v, real eps) {
  auto w = widen(v);
  real n = std::sqrt(dot(w, w));
  if (n < eps) n = eps;
  for (real& x : w) x /= n;
  return w;
}

inline std::vector<std::vector<real>> centered(std::vector<std::vector<real>> units) {
  if (units.empty()) return units;
  std::vector<real> mean(units[0].size(), 0);
  for (const auto& u : units)
    for (std::size_t i = 0; i < u.size(); ++i) mean[i] += u[i];
  for (real& m : mean) m /= static_cast<real>(units.size());
  for (auto& u : units)
    for (std::size_t i = 0; i < u.size(); ++i) u[i] -= mean[i];
  return units;
}

// -(sum_k coef_k * log(exp(sim(a_k, b_k)/tau) / sum_j exp(sim(a_k, b_j)/tau)))
inline real info_nce(const std::vector<std::vector<real>>& a, const std::vector<std::vector<real>>& b,
                     const std::vector<real>& coef, real eps, real tau) {
  real loss = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    real z = 0;
    for (std::size_t j = 0; j < b.size(); ++j) z += std::exp(cosine(a[k], b[j], eps) / tau);
    loss -= coef[k] * std::log(std::exp(cosine(a[k], b[k], eps) / tau) / z);
  }
  return loss;
}

/// Sample-wise loss on raw pooled rows with per-row weights; rows with zero
/// weight are dropped and the sum is scaled by 1 / selected.
inline double sample_wise_loss(const Rows& student, const Rows& teacher, const std::vector<double>& weights,
                               std::size_t selected, bool centering, double eps = 1e-12, double tau = 1.0) {
  std::vector<std::vector<real>> s, t;
  std::vector<real> coef;
  for (std::size_t n = 0; n < student.size(); ++n) {
    if (!(weights[n] > 0)) continue;
    s.push_back(normalized(student[n], eps));
    t.push_back(normalized(teacher[n], eps));
    coef.push_back(static_cast<real>(weights[n]) / static_cast<real>(selected));
  }
  if (centering) {
    s = centered(std::move(s));
    t = centered(std::move(t));
  }
  return static_cast<double>(info_nce(s, t, coef, eps, tau));
}

/// Feature-wise loss on raw pooled rows: keep masked rows, normalize them,
/// contrast channels (columns) against channels.
inline double feature_wise_loss(const Rows& student, const Rows& teacher, const std::vector<std::uint8_t>& mask,
                                bool centering, double eps = 1e-12, double tau = 1.0) {
  std::vector<std::vector<real>> s_rows, t_rows;
  for (std::size_t n = 0; n < student.size(); ++n) {
    if (!mask[n]) continue;
    s_rows.push_back(normalized(student[n], eps));
    t_rows.push_back(normalized(teacher[n], eps));
  }
  const std::size_t channels = student.empty() ? 0 : student[0].size();
  std::vector<std::vector<real>> s(channels, std::vector<real>(s_rows.size()));
  std::vector<std::vector<real>> t(channels, std::vector<real>(s_rows.size()));
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (std::size_t n = 0; n < s_rows.size(); ++n) {
      s[ch][n] = s_rows[n][ch];
      t[ch][n] = t_rows[n][ch];
    }
  if (centering) {
    s = centered(std::move(s));
    t = centered(std::move(t));
  }
  std::vector<real> coef(channels, 1 / static_cast<real>(channels));
  return static_cast<double>(info_nce(s, t, coef, eps, tau));
}

inline double task_loss(const Rows& logits, const std::vector<std::size_t>& labels) {
  real total = 0;
  for (std::size_t b = 0; b < logits.size(); ++b) {
    real z = 0;
    for (double v : logits[b]) z += std::exp(static_cast<real>(v));
    total -= std::log(std::exp(static_cast<real>(logits[b][labels[b]])) / z);
  }
  return static_cast<double>(total / static_cast<real>(logits.size()));
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  real z = 0;
  for (double v : logits) z += std::exp(static_cast<real>(v));
  std::vector<double> p;
  for (double v : logits) p.push_back(static_cast<double>(std::exp(static_cast<real>(v)) / z));
  return p;
}

/// Pooled rows by exhaustive scan: every cell of the map is tested for
/// membership in each window.
inline Rows pool(const Tensor& f, const std::vector<Window>& windows) {
  const std::size_t B = f.extent(0), C = f.extent(1), H = f.extent(2), W = f.extent(3);
  Rows out;
  for (std::size_t b = 0; b < B; ++b)
    for (const Window& w : windows) {
      std::vector<double> row(C);
      for (std::size_t c = 0; c < C; ++c) {
        real sum = 0;
        std::size_t cells = 0;
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            if (y < w.top || y >= w.top + w.height || x < w.left || x >= w.left + w.width) continue;
            sum += f[((b * C + c) * H + y) * W + x];
            ++cells;
          }
        row[c] = static_cast<double>(sum / static_cast<real>(cells));
      }
      out.push_back(row);
    }
  return out;
}

/// Per-pixel matrix multiply: out[b][o][y][x] = sum_i w[o][i] s[b][i][y][x] + bias[o].
inline Tensor project(const Tensor& s, const Rows& weights, const std::vector<double>& bias) {
  const std::size_t B = s.extent(0), Cs = s.extent(1), H = s.extent(2), W = s.extent(3), Ct = weights.size();
  std::vector<double> data(B * Ct * H * W);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Ct; ++o)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          real v = bias.empty() ? 0 : bias[o];
          for (std::size_t i = 0; i < Cs; ++i) v += static_cast<real>(weights[o][i]) * s[((b * Cs + i) * H + y) * W + x];
          data[((b * Ct + o) * H + y) * W + x] = static_cast<double>(v);
        }
  return Tensor({B, Ct, H, W}, std::move(data));
}

inline std::vector<double> max_softmax(const Rows& samples, const Rows& head_w, const std::vector<double>& head_b) {
  std::vector<double> p;
  for (const auto& t : samples) {
    std::vector<double> logits(head_w.size());
    for (std::size_t k = 0; k < head_w.size(); ++k) {
      real v = head_b.empty() ? 0 : head_b[k];
      for (std::size_t c = 0; c < t.size(); ++c) v += static_cast<real>(head_w[k][c]) * t[c];
      logits[k] = static_cast<double>(v);
    }
    const auto probs = softmax(logits);
    double best = 0;
    for (double q : probs) best = q > best ? q : best;
    p.push_back(best);
  }
  return p;
}

/// Inverse-frequency weights written directly from the piecewise rule.
struct Weights {
  std::vector<double> w;
  std::size_t n_high = 0, n_low = 0;
};

inline Weights selection_weights(const std::vector<double>& p, double alpha, double beta) {
  Weights out;
  for (double q : p) {
    if (q >= beta) ++out.n_high;
    else if (q >= alpha) ++out.n_low;
  }
  for (double q : p) {
    if (q < alpha) out.w.push_back(0.0);
    else if (out.n_high == 0 || out.n_low == 0) out.w.push_back(1.0 / static_cast<double>(out.n_high + out.n_low));
    else if (q < beta) out.w.push_back(0.5 / static_cast<double>(out.n_high));
    else out.w.push_back(0.5 / static_cast<double>(out.n_low));
  }
  return out;
}

/// Staged composition of the reference stages above.
struct TotalLoss {
  double sample = 0, feature = 0, total = 0;
  std::size_t n_high = 0, n_low = 0;
};

inline TotalLoss total_loss(const Tensor& student, const Tensor& teacher, const Rows& head_w,
                            const std::vector<double>& head_b, const Rows& proj_w, const std::vector<double>& proj_b,
                            const std::vector<Window>& student_windows, const std::vector<Window>& teacher_windows,
                            double alpha, double beta, double lambda1, double lambda2, bool centering,
                            double task = 0.0) {
  const Rows s = pool(project(student, proj_w, proj_b), student_windows);
  const Rows t = pool(teacher, teacher_windows);
  const auto p = max_softmax(t, head_w, head_b);
  const auto sel = selection_weights(p, alpha, beta);
  std::vector<std::uint8_t> mask;
  for (double q : p) mask.push_back(q >= alpha ? 1 : 0);
  TotalLoss out;
  out.n_high = sel.n_high;
  out.n_low = sel.n_low;
  out.sample = sample_wise_loss(s, t, sel.w, sel.n_high + sel.n_low, centering);
  out.feature = feature_wise_loss(s, t, mask, centering);
  out.total = task + lambda1 * out.sample + lambda2 * out.feature;
  return out;
}

/// tr(K H L H) / (n-1)^2 with H materialized and multiplied out.
inline double hsic(const Rows& k, const Rows& l) {
  const std::size_t n = k.size();
  std::vector<std::vector<real>> h(n, std::vector<real>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) h[i][j] = (i == j ? 1 : 0) - 1 / static_cast<real>(n);
  auto mul = [n](const auto& a, const auto& b) {
    std::vector<std::vector<real>> c(n, std::vector<real>(n, 0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t m = 0; m < n; ++m) c[i][j] += static_cast<real>(a[i][m]) * static_cast<real>(b[m][j]);
    return c;
  };
  const auto khlh = mul(mul(mul(k, h), l), h);
  real tr = 0;
  for (std::size_t i = 0; i < n; ++i) tr += khlh[i][i];
  return static_cast<double>(tr / ((static_cast<real>(n) - 1) * (static_cast<real>(n) - 1)));
}

inline Rows gram(const Rows& x) {
  Rows g(x.size(), std::vector<double>(x.size()));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) {
      real s = 0;
      for (std::size_t d = 0; d < x[i].size(); ++d) s += static_cast<real>(x[i][d]) * x[j][d];
      g[i][j] = static_cast<double>(s);
    }
  return g;
}

inline double cka(const Rows& x, const Rows& y) {
  const Rows k = gram(x), l = gram(y);
  return hsic(k, l) / std::sqrt(hsic(k, k) * hsic(l, l));
}

}  // namespace msdcrd::reference
