#pragma once

// Sample-wise and feature-wise contrastive distillation losses over pooled
// student/teacher samples, their combination with the task loss, and the
// analytic backward pass down to the raw student feature map.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "msdcrd/decouple.hpp"
#include "msdcrd/select.hpp"

namespace msdcrd {

/// 1x1 linear map from student channels to teacher channels.
struct Projector {
  Matrix weights;  // C_T x C_S
  Vector bias;     // C_T, may be empty

  static Projector identity(std::size_t channels) {
    return {Matrix::Identity(idx(channels), idx(channels)), Vector::Zero(idx(channels))};
  }

  std::size_t in_channels() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t out_channels() const { return static_cast<std::size_t>(weights.rows()); }

  void validate() const {
    detail::require(weights.size() > 0, "projector has no weights");
    detail::require(bias.size() == 0 || static_cast<std::size_t>(bias.size()) == out_channels(),
                    "projector bias length does not match its output channels");
    detail::require(weights.allFinite() && bias.allFinite(), "projector parameters must be finite");
  }
};

struct LossConfig {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  bool centering = true;
  double eps = 1e-12;
  // Similarities are divided by this before exponentiation. Values other
  // than 1 are an extension; the objective itself uses raw cosines.
  double temperature = 1.0;

  void validate() const {
    detail::require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be nonnegative");
    detail::require(eps > 0.0, "eps must be positive");
    detail::require(temperature > 0.0, "temperature must be positive");
  }

  friend bool operator==(const LossConfig&, const LossConfig&) = default;
};

// ---------------------------------------------------------------------------
// Projection

inline Tensor project(const Tensor& student, const Projector& proj) {
  detail::require_rank4(student, "student features");
  proj.validate();
  const std::size_t batch = student.extent(0), cs = student.extent(1);
  const std::size_t hw = student.extent(2) * student.extent(3);
  detail::require(cs == proj.in_channels(), "projector expects " + std::to_string(proj.in_channels()) +
                                                " input channels, student has " + std::to_string(cs));
  const std::size_t ct = proj.out_channels();
  Tensor out({batch, ct, student.extent(2), student.extent(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    Eigen::Map<const Matrix> in(student.data().data() + b * cs * hw, idx(cs), idx(hw));
    Eigen::Map<Matrix> dst(out.data().data() + b * ct * hw, idx(ct), idx(hw));
    dst.noalias() = proj.weights * in;
    if (proj.bias.size() != 0) dst.colwise() += proj.bias;
  }
  return out;
}

struct ProjectorGrad {
  Matrix weights;
  Vector bias;
};

/// Given d(loss)/d(projected map), returns d(loss)/d(student map) and
/// accumulates parameter gradients into `param_grad`.
inline Tensor project_adjoint(const Tensor& grad_out, const Tensor& student, const Projector& proj,
                              ProjectorGrad& param_grad) {
  const std::size_t batch = student.extent(0), cs = student.extent(1), ct = proj.out_channels();
  const std::size_t hw = student.extent(2) * student.extent(3);
  param_grad.weights = Matrix::Zero(idx(ct), idx(cs));
  param_grad.bias = Vector::Zero(idx(ct));
  Tensor grad_in(student.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    Eigen::Map<const Matrix> g(grad_out.data().data() + b * ct * hw, idx(ct), idx(hw));
    Eigen::Map<const Matrix> in(student.data().data() + b * cs * hw, idx(cs), idx(hw));
    Eigen::Map<Matrix> dst(grad_in.data().data() + b * cs * hw, idx(cs), idx(hw));
    dst.noalias() = proj.weights.transpose() * g;
    param_grad.weights.noalias() += g * in.transpose();
    param_grad.bias += g.rowwise().sum();
  }
  return grad_in;
}

// ---------------------------------------------------------------------------
// Shared kernels

namespace detail {

struct RowNormalization {
  Matrix unit;   // rows divided by max(norm, eps)
  Vector norms;  // raw row norms
};

inline RowNormalization normalize_rows(const Matrix& raw, double eps) {
  RowNormalization out{raw, raw.rowwise().norm()};
  for (Eigen::Index r = 0; r < raw.rows(); ++r) out.unit.row(r) /= std::max(out.norms(r), eps);
  return out;
}

inline Matrix normalize_rows_adjoint(const Matrix& grad_unit, const RowNormalization& fwd, double eps) {
  Matrix grad = grad_unit;
  for (Eigen::Index r = 0; r < grad.rows(); ++r) {
    if (fwd.norms(r) >= eps) {
      const double radial = grad_unit.row(r).dot(fwd.unit.row(r));
      grad.row(r) = (grad_unit.row(r) - radial * fwd.unit.row(r)) / fwd.norms(r);
    } else {
      grad.row(r) = grad_unit.row(r) / eps;
    }
  }
  return grad;
}

inline Matrix center_rows(const Matrix& m) { return m.rowwise() - m.colwise().mean(); }

// Unit directions for cosine similarity; rows shorter than eps become zero so
// every similarity involving them is 0.
inline Matrix directions(const Matrix& m, const Vector& norms, double eps) {
  Matrix dir = m;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (norms(r) >= eps) dir.row(r) /= norms(r);
    else dir.row(r).setZero();
  }
  return dir;
}

}  // namespace detail

/// InfoNCE over paired units: unit k of `a` is contrasted against every unit
/// of `b`, with (k, k) as the positive pair. Each unit's term is scaled by
/// its entry in `weight`.
struct InfoNceTerm {
  double loss = 0.0;
  bool centered = false;
  double eps = 0.0;
  double temperature = 1.0;
  Vector weight;
  Vector a_norms;     // norms of the (centered) student units
  Matrix a_dir;
  Matrix b_dir;
  Matrix similarity;  // clamped cosine similarities
  Matrix prob;        // row-wise softmax of similarity / temperature
};

inline InfoNceTerm info_nce_forward(const Matrix& a, const Matrix& b, const Vector& weight, bool centering,
                                    double eps, double temperature) {
  InfoNceTerm t;
  t.centered = centering;
  t.eps = eps;
  t.temperature = temperature;
  t.weight = weight;
  const Matrix ac = centering ? detail::center_rows(a) : a;
  const Matrix bc = centering ? detail::center_rows(b) : b;
  t.a_norms = ac.rowwise().norm();
  t.a_dir = detail::directions(ac, t.a_norms, eps);
  t.b_dir = detail::directions(bc, bc.rowwise().norm(), eps);
  t.similarity = (t.a_dir * t.b_dir.transpose()).cwiseMax(-1.0).cwiseMin(1.0);

  t.prob.resize(t.similarity.rows(), t.similarity.cols());
  for (Eigen::Index k = 0; k < t.similarity.rows(); ++k) {
    const Eigen::RowVectorXd logits = t.similarity.row(k) / temperature;
    const double mx = logits.maxCoeff();
    const Eigen::RowVectorXd shifted = (logits.array() - mx).exp().matrix();
    const double z = shifted.sum();
    t.prob.row(k) = shifted / z;
    const double log_z = mx + std::log(z);
    t.loss += weight(k) * (log_z - logits(k));
  }
  return t;
}

/// Gradient of the term's loss w.r.t. `a` as passed to info_nce_forward.
inline Matrix info_nce_backward(const InfoNceTerm& t) {
  Matrix g_sim = t.prob;
  g_sim.diagonal().array() -= 1.0;
  g_sim = (t.weight / t.temperature).asDiagonal() * g_sim;
  const Matrix g_dir = g_sim * t.b_dir;
  Matrix g = Matrix::Zero(g_dir.rows(), g_dir.cols());
  for (Eigen::Index k = 0; k < g.rows(); ++k) {
    if (t.a_norms(k) < t.eps) continue;
    const double radial = g_dir.row(k).dot(t.a_dir.row(k));
    g.row(k) = (g_dir.row(k) - radial * t.a_dir.row(k)) / t.a_norms(k);
  }
  if (t.centered) g = detail::center_rows(g);
  return g;
}

// ---------------------------------------------------------------------------
// Contrastive losses

namespace detail {

inline void require_aligned(const PooledSet& s, const PooledSet& t) {
  require(s.rows() == t.rows() && s.images == t.images && s.windows_per_image == t.windows_per_image,
          "student and teacher pooled sets have different geometry");
  require(s.channels() == t.channels(), "student and teacher pooled samples have different channel counts (" +
                                            std::to_string(s.channels()) + " vs " + std::to_string(t.channels()) +
                                            "); project the student first");
  for (std::size_t n = 0; n < s.meta.size(); ++n)
    require(s.meta[n].image == t.meta[n].image && s.meta[n].window == t.meta[n].window &&
                s.meta[n].rect.scale == t.meta[n].rect.scale,
            "student and teacher pooled rows are not aligned");
}

}  // namespace detail

/// Forward state of one contrastive loss. `rows` are the surviving pooled
/// rows; gradients flow back to those rows only.
struct ContrastiveTerm {
  double loss = 0.0;
  std::size_t total_rows = 0;
  std::vector<std::size_t> rows;
  detail::RowNormalization student;
  bool transposed = false;
  InfoNceTerm nce;
};

/// Gradient of the term w.r.t. the raw student pooled samples (all N rows;
/// dropped rows receive zero).
inline Matrix contrastive_backward(const ContrastiveTerm& term) {
  Matrix g_unit = info_nce_backward(term.nce);
  if (term.transposed) g_unit.transposeInPlace();
  const Matrix g_rows = detail::normalize_rows_adjoint(g_unit, term.student, term.nce.eps);
  Matrix full = Matrix::Zero(idx(term.total_rows), g_rows.cols());
  for (std::size_t k = 0; k < term.rows.size(); ++k) full.row(idx(term.rows[k])) = g_rows.row(idx(k));
  return full;
}

/// Sample-wise loss: every surviving student sample is contrasted against
/// all surviving teacher samples of the batch; positives share image and
/// window. Per-sample weights come from the selection step, with the whole
/// sum scaled by 1 / (N_high + N_low).
inline ContrastiveTerm sample_wise_loss(const PooledSet& student, const PooledSet& teacher,
                                        const SelectionWeights& w, const LossConfig& cfg) {
  cfg.validate();
  detail::require_aligned(student, teacher);
  detail::require(w.sample.size() == student.rows(), "selection weights do not match the pooled sample count");

  ContrastiveTerm term;
  term.total_rows = student.rows();
  for (std::size_t n = 0; n < w.sample.size(); ++n)
    if (w.sample[n] > 0.0) term.rows.push_back(n);
  if (term.rows.empty()) detail::fail(ErrorKind::empty_selection, "sample-wise loss: no selected samples");

  term.student = detail::normalize_rows(student.take_rows(term.rows), cfg.eps);
  const Matrix t_unit = detail::normalize_rows(teacher.take_rows(term.rows), cfg.eps).unit;

  const double scale = 1.0 / static_cast<double>(w.selected());
  Vector weight(idx(term.rows.size()));
  for (std::size_t k = 0; k < term.rows.size(); ++k) weight(idx(k)) = w.sample[term.rows[k]] * scale;

  term.nce = info_nce_forward(term.student.unit, t_unit, weight, cfg.centering, cfg.eps, cfg.temperature);
  term.loss = term.nce.loss;
  return term;
}

/// Feature-wise loss: after filtering and per-sample normalization, each
/// channel (a vector over the surviving samples) is contrasted against all
/// teacher channels.
inline ContrastiveTerm feature_wise_loss(const PooledSet& student, const PooledSet& teacher,
                                         const std::vector<std::uint8_t>& mask, const LossConfig& cfg) {
  cfg.validate();
  detail::require_aligned(student, teacher);
  detail::require(mask.size() == student.rows(), "feature mask does not match the pooled sample count");

  ContrastiveTerm term;
  term.total_rows = student.rows();
  term.transposed = true;
  for (std::size_t n = 0; n < mask.size(); ++n)
    if (mask[n]) term.rows.push_back(n);
  if (term.rows.empty()) detail::fail(ErrorKind::empty_selection, "feature-wise loss: every sample is masked out");

  term.student = detail::normalize_rows(student.take_rows(term.rows), cfg.eps);
  const Matrix t_unit = detail::normalize_rows(teacher.take_rows(term.rows), cfg.eps).unit;

  const auto channels = student.channels();
  const Vector weight = Vector::Constant(idx(channels), 1.0 / static_cast<double>(channels));
  term.nce = info_nce_forward(term.student.unit.transpose(), t_unit.transpose(), weight, cfg.centering, cfg.eps,
                              cfg.temperature);
  term.loss = term.nce.loss;
  return term;
}

// ---------------------------------------------------------------------------
// Task loss

/// Mean cross-entropy of B x K logits against integer labels.
inline double task_loss(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require(logits.rank() == 2, "logits must be B x K, got " + shape_string(logits.shape()));
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  detail::require(labels.size() == batch, "label count does not match logits batch");
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    detail::require(labels[b] < classes, "label " + std::to_string(labels[b]) + " out of range [0, " +
                                             std::to_string(classes) + ")");
    auto row = logits.data().subspan(b * classes, classes);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    total += mx + std::log(z) - row[labels[b]];
  }
  return total / static_cast<double>(batch);
}

inline Tensor task_loss_grad(const Tensor& logits, const std::vector<std::size_t>& labels) {
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  Tensor grad(logits.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const auto p = softmax(logits.data().subspan(b * classes, classes));
    for (std::size_t k = 0; k < classes; ++k)
      grad(b, k) = (p[k] - (k == labels[b] ? 1.0 : 0.0)) / static_cast<double>(batch);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Total loss

struct TaskTargets {
  Tensor logits;  // B x K student logits
  std::vector<std::size_t> labels;
};

/// Everything the backward pass needs from one forward evaluation.
struct ForwardState {
  bool valid = false;
  LossConfig cfg;
  Tensor student;
  Projector projector;
  Shape projected_shape;
  PooledSet student_pool;
  PooledSet teacher_pool;
  ConfidenceTable confidence;
  SelectionWeights selection;
  ContrastiveTerm sample_term;
  ContrastiveTerm feature_term;
  std::optional<TaskTargets> task;
  double loss_sample = 0.0;
  double loss_feature = 0.0;
  std::optional<double> loss_task;
  double loss_total = 0.0;
  std::vector<std::string> warnings;
};

inline ForwardState forward(const Tensor& student, const Tensor& teacher, const ClassifierHead& head,
                            const Projector& proj, const ScaleSpec& spec, const Thresholds& th,
                            const LossConfig& cfg, std::optional<TaskTargets> task = std::nullopt) {
  cfg.validate();
  th.validate();
  head.validate();
  detail::require_rank4(student, "student features");
  detail::require_rank4(teacher, "teacher features");
  detail::require(student.extent(0) == teacher.extent(0), "student and teacher batch sizes differ");
  detail::require(proj.out_channels() == teacher.extent(1),
                  "projector outputs " + std::to_string(proj.out_channels()) + " channels, teacher has " +
                      std::to_string(teacher.extent(1)));
  detail::require(head.channels() == teacher.extent(1), "classifier head channel count does not match teacher");
  if (spec.mode == PoolMode::kernel_stride)
    detail::require(student.extent(2) == teacher.extent(2) && student.extent(3) == teacher.extent(3),
                    "kernel-stride pooling requires equal student and teacher spatial sizes");

  ForwardState st;
  st.cfg = cfg;
  st.student = student;
  st.projector = proj;
  const Tensor projected = project(student, proj);
  st.projected_shape = projected.shape();
  st.student_pool = multi_scale_pool(projected, spec);
  st.teacher_pool = multi_scale_pool(teacher, spec);
  detail::require(st.student_pool.windows_per_image == st.teacher_pool.windows_per_image,
                  "student and teacher produce different numbers of pooled windows");

  st.confidence = confidence(st.teacher_pool, head);
  st.selection = sample_weights(st.confidence, th);
  if (cfg.centering && st.selection.selected() == 1)
    st.warnings.push_back("only one sample survives filtering; centered similarities degenerate to 0");

  st.sample_term = sample_wise_loss(st.student_pool, st.teacher_pool, st.selection, cfg);
  st.feature_term = feature_wise_loss(st.student_pool, st.teacher_pool, st.selection.feature, cfg);
  st.loss_sample = st.sample_term.loss;
  st.loss_feature = st.feature_term.loss;

  double task_value = 0.0;
  if (task) {
    detail::require(task->logits.rank() == 2 && task->logits.extent(0) == student.extent(0),
                    "student logits must be B x K with B matching the feature batch");
    task_value = task_loss(task->logits, task->labels);
    st.loss_task = task_value;
    st.task = std::move(task);
  }
  st.loss_total = task_value + cfg.lambda1 * st.loss_sample + cfg.lambda2 * st.loss_feature;
  st.valid = true;
  return st;
}

struct Gradients {
  Tensor student;             // same shape as the raw student map
  Tensor projector_weights;   // C_T x C_S
  Tensor projector_bias;      // C_T
  std::optional<Tensor> logits;
};

/// Exact gradients of loss_total. Teacher features and the selection
/// weights are constants.
inline Gradients backward(const ForwardState& st, const LossConfig& cfg) {
  if (!st.valid) detail::fail(ErrorKind::stale_cache, "backward called without a completed forward pass");
  if (!(st.cfg == cfg)) detail::fail(ErrorKind::stale_cache, "backward config differs from the forward config");

  Matrix pooled_grad = cfg.lambda1 * contrastive_backward(st.sample_term);
  pooled_grad += cfg.lambda2 * contrastive_backward(st.feature_term);
  const Tensor projected_grad = pool_adjoint(pooled_grad, st.student_pool.meta, st.projected_shape);

  ProjectorGrad pg;
  Gradients out;
  out.student = project_adjoint(projected_grad, st.student, st.projector, pg);
  out.projector_weights = to_tensor(pg.weights);
  out.projector_bias = to_tensor(pg.bias);
  if (st.task) out.logits = task_loss_grad(st.task->logits, st.task->labels);
  return out;
}

struct LossResult {
  double loss_sample = 0.0;
  double loss_feature = 0.0;
  std::optional<double> loss_task;
  double loss_total = 0.0;
  std::size_t n_high = 0;
  std::size_t n_low = 0;
  std::size_t n_filtered = 0;
  Gradients grad;
  std::vector<std::string> warnings;
};

inline LossResult total_loss(const Tensor& student, const Tensor& teacher, const ClassifierHead& head,
                             const Projector& proj, const ScaleSpec& spec, const Thresholds& th,
                             const LossConfig& cfg, std::optional<TaskTargets> task = std::nullopt) {
  const ForwardState st = forward(student, teacher, head, proj, spec, th, cfg, std::move(task));
  LossResult r;
  r.loss_sample = st.loss_sample;
  r.loss_feature = st.loss_feature;
  r.loss_task = st.loss_task;
  r.loss_total = st.loss_total;
  r.n_high = st.selection.n_high;
  r.n_low = st.selection.n_low;
  r.n_filtered = st.selection.filtered();
  r.grad = backward(st, cfg);
  r.warnings = st.warnings;
  return r;
}

}  // namespace msdcrd
