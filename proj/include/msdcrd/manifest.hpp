#pragma once

// JSON manifests naming the tensor files of one distillation batch or one
// activation set. Relative paths resolve against the manifest's directory.

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msdcrd/cka.hpp"
#include "msdcrd/contrast.hpp"
#include "msdcrd/npy.hpp"

namespace msdcrd {

/// Command-line values that take precedence over the manifest.
struct Overrides {
  std::optional<std::vector<std::size_t>> scales{};
  std::optional<std::string> scale_mode{};
  std::optional<std::vector<std::size_t>> strides{};
  std::optional<bool> include_gap{};
  std::optional<double> alpha{};
  std::optional<double> beta{};
  std::optional<double> lambda1{};
  std::optional<double> lambda2{};
  std::optional<double> temperature{};
  bool no_center = false;
};

struct BatchManifest {
  std::filesystem::path teacher;
  std::optional<std::filesystem::path> student{};
  std::optional<std::filesystem::path> head_weights{};
  std::optional<std::filesystem::path> head_bias{};
  std::optional<std::filesystem::path> projector_weights{};
  std::optional<std::filesystem::path> projector_bias{};
  std::optional<std::filesystem::path> student_logits{};
  std::optional<std::filesystem::path> labels{};
  ScaleSpec spec;
  Thresholds thresholds;
  LossConfig config;
  bool alpha_defaulted = false;
  bool beta_defaulted = false;
};

/// Fully loaded batch, shapes checked against each other.
struct Batch {
  Tensor teacher;
  std::optional<Tensor> student{};
  std::optional<ClassifierHead> head{};
  std::optional<Projector> projector{};
  std::optional<TaskTargets> task{};
  ScaleSpec spec;
  Thresholds thresholds;
  LossConfig config;
};

namespace detail {

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open manifest " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::validation, path.string() + ": invalid JSON: " + e.what());
  }
}

template <typename T>
std::optional<T> json_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::validation, std::string("manifest field '") + key + "' has the wrong type");
  }
}

inline PoolMode parse_pool_mode(const std::string& s) {
  if (s == "output-grid") return PoolMode::output_grid;
  if (s == "kernel-stride") return PoolMode::kernel_stride;
  fail(ErrorKind::validation, "unknown scale mode '" + s + "' (expected output-grid or kernel-stride)");
}

}  // namespace detail

inline BatchManifest parse_batch_manifest(const std::filesystem::path& path, const Overrides& ov = {}) {
  using detail::json_get;
  const nlohmann::json j = detail::read_json(path);
  detail::require(j.is_object(), "manifest must be a JSON object");
  const auto base = path.parent_path();
  auto file = [&](const char* key) -> std::optional<std::filesystem::path> {
    auto v = json_get<std::string>(j, key);
    if (!v) return std::nullopt;
    std::filesystem::path p(*v);
    return p.is_absolute() ? p : base / p;
  };

  BatchManifest m;
  auto teacher = file("teacher");
  detail::require(teacher.has_value(), "manifest is missing the 'teacher' tensor path");
  m.teacher = *teacher;
  m.student = file("student");
  m.head_weights = file("head_weights");
  m.head_bias = file("head_bias");
  m.projector_weights = file("projector_weights");
  m.projector_bias = file("projector_bias");
  m.student_logits = file("student_logits");
  m.labels = file("labels");

  m.spec.mode = detail::parse_pool_mode(ov.scale_mode.value_or(json_get<std::string>(j, "scale_mode").value_or("output-grid")));
  m.spec.scales = ov.scales ? *ov.scales : json_get<std::vector<std::size_t>>(j, "scales").value_or(std::vector<std::size_t>{1});
  m.spec.strides = ov.strides ? *ov.strides : json_get<std::vector<std::size_t>>(j, "strides").value_or(std::vector<std::size_t>{});
  m.spec.include_gap = ov.include_gap.value_or(json_get<bool>(j, "include_gap").value_or(false));

  const auto alpha = ov.alpha ? ov.alpha : json_get<double>(j, "alpha");
  const auto beta = ov.beta ? ov.beta : json_get<double>(j, "beta");
  m.alpha_defaulted = !alpha;
  m.beta_defaulted = !beta;
  m.thresholds.alpha = alpha.value_or(Thresholds{}.alpha);
  m.thresholds.beta = beta.value_or(Thresholds{}.beta);
  m.thresholds.validate();

  m.config.lambda1 = ov.lambda1.value_or(json_get<double>(j, "lambda1").value_or(1.0));
  m.config.lambda2 = ov.lambda2.value_or(json_get<double>(j, "lambda2").value_or(1.0));
  m.config.centering = !ov.no_center && json_get<bool>(j, "center").value_or(true);
  m.config.eps = json_get<double>(j, "eps").value_or(LossConfig{}.eps);
  m.config.temperature = ov.temperature.value_or(json_get<double>(j, "temperature").value_or(1.0));
  m.config.validate();
  return m;
}

inline std::vector<std::size_t> labels_from_tensor(const Tensor& t) {
  detail::require(t.rank() == 1, "labels must be a rank-1 tensor");
  std::vector<std::size_t> out;
  for (double v : t.data()) {
    detail::require(v >= 0.0 && v == std::floor(v), "labels must be nonnegative integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

/// Loads every tensor the manifest names and checks their shapes.
inline Batch load_batch(const BatchManifest& m) {
  Batch b;
  b.spec = m.spec;
  b.thresholds = m.thresholds;
  b.config = m.config;
  b.teacher = read_tensor(m.teacher);
  detail::require_rank4(b.teacher, "teacher features");
  const std::size_t batch = b.teacher.extent(0), ct = b.teacher.extent(1);
  b.spec.validate(b.teacher.extent(2), b.teacher.extent(3));

  if (m.student) {
    b.student = read_tensor(*m.student);
    detail::require_rank4(*b.student, "student features");
    detail::require(b.student->extent(0) == batch, "student and teacher batch sizes differ");
    b.spec.validate(b.student->extent(2), b.student->extent(3));
  }

  if (m.head_weights) {
    ClassifierHead head;
    const Tensor w = read_tensor(*m.head_weights);
    detail::require(w.rank() == 2, "classifier weights must be K x C");
    head.weights = to_matrix(w);
    if (m.head_bias) head.bias = to_vector(read_tensor(*m.head_bias));
    head.validate();
    detail::require(head.channels() == ct, "classifier expects " + std::to_string(head.channels()) +
                                               " channels, teacher has " + std::to_string(ct));
    b.head = std::move(head);
  }

  if (m.projector_weights) {
    Projector p;
    const Tensor w = read_tensor(*m.projector_weights);
    detail::require(w.rank() == 2, "projector weights must be C_T x C_S");
    p.weights = to_matrix(w);
    if (m.projector_bias) p.bias = to_vector(read_tensor(*m.projector_bias));
    p.validate();
    b.projector = std::move(p);
  } else if (b.student && b.student->extent(1) == ct) {
    b.projector = Projector::identity(ct);
  }
  if (b.student) {
    detail::require(b.projector.has_value(), "student has " + std::to_string(b.student->extent(1)) +
                                                 " channels, teacher has " + std::to_string(ct) +
                                                 "; the manifest must name projector_weights");
    detail::require(b.projector->in_channels() == b.student->extent(1) && b.projector->out_channels() == ct,
                    "projector shape does not map student channels to teacher channels");
  }

  detail::require(m.student_logits.has_value() == m.labels.has_value(),
                  "student_logits and labels must be given together");
  if (m.labels) {
    TaskTargets task{read_tensor(*m.student_logits), labels_from_tensor(read_tensor(*m.labels))};
    detail::require(task.logits.rank() == 2 && task.logits.extent(0) == batch, "student logits must be B x K");
    detail::require(task.labels.size() == batch, "label count does not match the batch size");
    for (std::size_t l : task.labels)
      detail::require(l < task.logits.extent(1), "label " + std::to_string(l) + " out of range");
    b.task = std::move(task);
  }
  return b;
}

/// Activation-set manifest: {"blocks": ["a.npy", ...]} or
/// {"blocks": [{"name": "stage1", "path": "a.npy"}, ...]}.
inline ActivationSet load_activation_set(const std::filesystem::path& path) {
  const nlohmann::json j = detail::read_json(path);
  detail::require(j.is_object() && j.contains("blocks") && j.at("blocks").is_array(),
                  "activation manifest must contain a 'blocks' array");
  ActivationSet set;
  for (const auto& entry : j.at("blocks")) {
    std::string name, file;
    if (entry.is_string()) {
      file = entry.get<std::string>();
      name = std::filesystem::path(file).stem().string();
    } else if (entry.is_object() && entry.contains("path") && entry.at("path").is_string()) {
      file = entry.at("path").get<std::string>();
      name = entry.contains("name") && entry.at("name").is_string() ? entry.at("name").get<std::string>()
                                                                    : std::filesystem::path(file).stem().string();
    } else {
      detail::fail(ErrorKind::validation, "activation manifest block entries must be paths or {name, path}");
    }
    std::filesystem::path p(file);
    if (!p.is_absolute()) p = path.parent_path() / p;
    set.names.push_back(name);
    set.blocks.push_back(flatten_activations(read_tensor(p)));
  }
  set.validate();
  return set;
}

}  // namespace msdcrd
