#pragma once

// Built-in consistency checks: analytic gradients against central finite
// differences, optimized kernels against the naive reference, and CKA
// invariances, all on seeded instances.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "msdcrd/cka.hpp"
#include "msdcrd/reference.hpp"
#include "msdcrd/synthetic.hpp"

namespace msdcrd::selftest {

inline reference::Rows to_rows(const Matrix& m) {
  reference::Rows rows(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows[static_cast<std::size_t>(r)].assign(m.row(r).begin(), m.row(r).end());
  return rows;
}

inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences of loss_total over every student feature and every
/// projector parameter. Relative error uses max(|analytic|, |numeric|,
/// floor) as the denominator so exactly-zero gradients compare absolutely.
inline GradCheck gradient_check(const synthetic::Instance& in, double step = 1e-5, double floor = 1e-6) {
  auto loss_at = [&](const Tensor& student, const Projector& proj) {
    return forward(student, in.teacher, in.head, proj, in.spec, in.thresholds, in.config, in.task).loss_total;
  };
  const LossResult r = total_loss(in.student, in.teacher, in.head, in.projector, in.spec, in.thresholds, in.config, in.task);

  GradCheck out;
  auto record = [&](double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(analytic - numeric) / denom);
    ++out.coordinates;
  };

  Tensor x = in.student;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = loss_at(x, in.projector);
    x[i] = orig - step;
    const double down = loss_at(x, in.projector);
    x[i] = orig;
    record(r.grad.student[i], (up - down) / (2 * step));
  }

  Projector p = in.projector;
  for (Eigen::Index i = 0; i < p.weights.size(); ++i) {
    double& w = p.weights.data()[i];
    const double orig = w;
    w = orig + step;
    const double up = loss_at(in.student, p);
    w = orig - step;
    const double down = loss_at(in.student, p);
    w = orig;
    record(r.grad.projector_weights[static_cast<std::size_t>(i)], (up - down) / (2 * step));
  }
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) {
    const double orig = p.bias(i);
    p.bias(i) = orig + step;
    const double up = loss_at(in.student, p);
    p.bias(i) = orig - step;
    const double down = loss_at(in.student, p);
    p.bias(i) = orig;
    record(r.grad.projector_bias[static_cast<std::size_t>(i)], (up - down) / (2 * step));
  }
  return out;
}

/// Haar-ish random orthogonal matrix from the QR factorization of a random
/// square matrix.
inline Matrix random_orthogonal(std::size_t d, synthetic::Rng& rng) {
  const Matrix a = synthetic::random_matrix(d, d, rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(idx(d), idx(d));
}

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline Check check_pooling() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    synthetic::Rng rng(1000 + seed);
    const std::size_t hw = seed % 2 ? 7 : 8;
    const Tensor f = synthetic::random_tensor({2, 3, hw, hw}, rng);
    ScaleSpec spec;
    spec.scales = {1, 2, 4};
    const PooledSet p = multi_scale_pool(f, spec);
    const auto ref = reference::pool(f, window_layout(spec, hw, hw));
    for (std::size_t n = 0; n < ref.size(); ++n)
      for (std::size_t c = 0; c < ref[n].size(); ++c)
        worst = std::max(worst, std::abs(ref[n][c] - p.samples(idx(n), idx(c))));
  }
  return {"pooling matches exhaustive window mean", worst <= 1e-12, fmt("max abs error %.3g", worst)};
}

inline Check check_loss_oracles() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    synthetic::Rng rng(2000 + seed);
    const PooledSet s = synthetic::random_pooled(2, 3, 5, rng);
    const PooledSet t = synthetic::random_pooled(2, 3, 5, rng);
    ConfidenceTable table;
    for (std::size_t n = 0; n < s.rows(); ++n) table.p.push_back(rng.uniform(0.2, 1.0));
    const Thresholds th{0.3, 0.7};
    SelectionWeights w;
    try {
      w = sample_weights(table, th);
    } catch (const Error&) {
      continue;
    }
    for (bool center : {true, false}) {
      LossConfig cfg;
      cfg.centering = center;
      const double ls = sample_wise_loss(s, t, w, cfg).loss;
      const double lf = feature_wise_loss(s, t, w.feature, cfg).loss;
      const double rs = reference::sample_wise_loss(to_rows(s.samples), to_rows(t.samples), w.sample, w.selected(), center);
      const double rf = reference::feature_wise_loss(to_rows(s.samples), to_rows(t.samples), w.feature, center);
      worst = std::max({worst, std::abs(ls - rs), std::abs(lf - rf)});
    }
  }
  return {"contrastive losses match naive reference", worst <= 1e-9, fmt("max abs error %.3g", worst)};
}

inline Check check_gradients() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    synthetic::InstanceShape shape;
    shape.batch = 2;
    shape.student_channels = 3 + seed;
    shape.teacher_channels = 4;
    shape.student_size = shape.teacher_size = 4 + seed;
    shape.with_task = true;
    auto in = synthetic::random_instance(3000 + seed, shape);
    in.thresholds = {0.0, 0.6};
    worst = std::max(worst, gradient_check(in).max_rel_error);
  }
  return {"analytic gradient matches central differences", worst < 1e-4, fmt("max relative error %.3g", worst)};
}

inline Check check_cka() {
  double worst_self = 0.0, worst_scale = 0.0, worst_orth = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    synthetic::Rng rng(4000 + seed);
    const Matrix x = synthetic::random_matrix(8, 5, rng);
    const Matrix y = synthetic::random_matrix(8, 3, rng);
    const double base = cka(x, y);
    worst_self = std::max(worst_self, std::abs(cka(x, x) - 1.0));
    for (double c : {0.5, 3.0}) worst_scale = std::max(worst_scale, std::abs(cka(c * x, y) - base));
    worst_orth = std::max(worst_orth, std::abs(cka(x * random_orthogonal(5, rng), y) - base));
  }
  const bool ok = worst_self <= 1e-10 && worst_scale <= 1e-10 && worst_orth <= 1e-9;
  return {"cka self-similarity and invariances", ok,
          fmt("self %.3g", worst_self) + fmt(", scale %.3g", worst_scale) + fmt(", orthogonal %.3g", worst_orth)};
}

inline Check check_selection() {
  ConfidenceTable t;
  t.p = {0.1, 0.5, 0.9};
  const auto w = sample_weights(t, {0.3, 0.7});
  const bool ok = w.sample == std::vector<double>{0.0, 0.5, 0.5} && w.n_low == 1 && w.n_high == 1;
  return {"inverse-frequency selection weights", ok, ""};
}

inline std::vector<Check> run_all() {
  return {check_pooling(), check_loss_oracles(), check_gradients(), check_cka(), check_selection()};
}

}  // namespace msdcrd::selftest
