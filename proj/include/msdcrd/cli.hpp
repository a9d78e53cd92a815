#pragma once

// Command implementations behind the msdcrd executable. Each command writes
// its report to `out`, diagnostics to `err`, and returns the process exit
// code: 0 success, 1 self-test failure, 2 validation, 3 I/O, 4 empty
// selection.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>

#include "msdcrd/manifest.hpp"
#include "msdcrd/selftest.hpp"
#include "msdcrd/synthetic.hpp"

namespace msdcrd::cli {

inline constexpr int exit_ok = 0;
inline constexpr int exit_selftest_failed = 1;
inline constexpr int exit_validation = 2;
inline constexpr int exit_io = 3;
inline constexpr int exit_empty_selection = 4;

inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
    case ErrorKind::header:
    case ErrorKind::dtype:
    case ErrorKind::truncated: return exit_io;
    case ErrorKind::empty_selection: return exit_empty_selection;
    default: return exit_validation;
  }
}

/// Runs `body`, translating library errors into exit codes.
inline int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return exit_io;
  }
}

/// 17 significant digits: enough for any double to round-trip.
inline std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void warn_defaults(const BatchManifest& m, std::ostream& err) {
  if (m.alpha_defaulted)
    err << "warning: alpha not given, using default " << number(m.thresholds.alpha) << "\n";
  if (m.beta_defaulted)
    err << "warning: beta not given, using default " << number(m.thresholds.beta) << "\n";
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) msdcrd::detail::fail(ErrorKind::io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) msdcrd::detail::fail(ErrorKind::io, "failed writing " + path.string());
}

inline std::string meta_csv(const PooledSet& p) {
  std::ostringstream s;
  s << "row,image,window,scale,top,left,height,width\n";
  for (std::size_t n = 0; n < p.meta.size(); ++n) {
    const auto& m = p.meta[n];
    s << n << ',' << m.image << ',' << m.window << ',' << m.rect.scale << ',' << m.rect.top << ',' << m.rect.left
      << ',' << m.rect.height << ',' << m.rect.width << '\n';
  }
  return s.str();
}

inline void require_head(const Batch& b) {
  msdcrd::detail::require(b.head.has_value(), "manifest must name head_weights for this command");
}

}  // namespace detail

/// Pools the teacher (and the projected student, when present) and writes
/// teacher_pooled.npy, teacher_meta.csv, student_pooled.npy, student_meta.csv.
inline int cmd_pool(const std::filesystem::path& manifest, const std::filesystem::path& out_dir, const Overrides& ov,
                    std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const BatchManifest m = parse_batch_manifest(manifest, ov);
    const Batch b = load_batch(m);
    std::filesystem::create_directories(out_dir);

    const PooledSet t = multi_scale_pool(b.teacher, b.spec);
    write_tensor(out_dir / "teacher_pooled.npy", to_tensor(t.samples));
    detail::write_text(out_dir / "teacher_meta.csv", detail::meta_csv(t));
    out << "teacher: " << t.rows() << " samples (" << t.images << " images x " << t.windows_per_image
        << " windows), " << t.channels() << " channels\n";

    if (b.student) {
      const PooledSet s = multi_scale_pool(project(*b.student, *b.projector), b.spec);
      write_tensor(out_dir / "student_pooled.npy", to_tensor(s.samples));
      detail::write_text(out_dir / "student_meta.csv", detail::meta_csv(s));
      out << "student: " << s.rows() << " samples, " << s.channels() << " channels after projection\n";
    }
    return exit_ok;
  });
}

/// JSON loss report on `out`; optionally writes the student gradient.
inline int cmd_loss(const std::filesystem::path& manifest, const Overrides& ov,
                    const std::optional<std::filesystem::path>& grad_out, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const BatchManifest m = parse_batch_manifest(manifest, ov);
    detail::warn_defaults(m, err);
    const Batch b = load_batch(m);
    msdcrd::detail::require(b.student.has_value(), "manifest must name the student tensor for this command");
    detail::require_head(b);

    LossResult r;
    try {
      r = total_loss(*b.student, b.teacher, *b.head, *b.projector, b.spec, b.thresholds, b.config, b.task);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::empty_selection) throw;
      err << "error (empty-selection): every pooled teacher sample has confidence below alpha = "
          << number(b.thresholds.alpha) << "; lower --alpha or skip this batch\n";
      return exit_empty_selection;
    }
    for (const auto& w : r.warnings) err << "warning: " << w << "\n";

    out << "{\n";
    out << "  \"loss_sample\": " << number(r.loss_sample) << ",\n";
    out << "  \"loss_feature\": " << number(r.loss_feature) << ",\n";
    if (r.loss_task) out << "  \"loss_task\": " << number(*r.loss_task) << ",\n";
    out << "  \"loss_total\": " << number(r.loss_total) << ",\n";
    out << "  \"N_high\": " << r.n_high << ",\n";
    out << "  \"N_low\": " << r.n_low << ",\n";
    out << "  \"N_filtered\": " << r.n_filtered << "\n";
    out << "}\n";

    if (grad_out) write_tensor(*grad_out, r.grad.student);
    return exit_ok;
  });
}

/// Rounds a CKA value to an 8-bit gray level.
inline unsigned char gray_level(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::string heatmap_csv(const CkaHeatmap& h, const ActivationSet& x, const ActivationSet& y) {
  std::ostringstream s;
  s << "block";
  for (const auto& name : y.names) s << ',' << name;
  s << '\n';
  for (std::size_t p = 0; p < h.rows; ++p) {
    s << x.names[p];
    for (std::size_t q = 0; q < h.cols; ++q) {
      s << ',';
      if (h.at(p, q)) s << number(*h.at(p, q));
    }
    s << '\n';
  }
  return s.str();
}

/// Binary PGM (P5, maxval 255), one pixel per cell; missing cells are 0.
inline std::string heatmap_pgm(const CkaHeatmap& h) {
  std::string s = "P5\n" + std::to_string(h.cols) + " " + std::to_string(h.rows) + "\n255\n";
  for (const auto& v : h.values) s.push_back(static_cast<char>(v ? gray_level(*v) : 0));
  return s;
}

inline int cmd_cka(const std::filesystem::path& manifest_x, const std::filesystem::path& manifest_y,
                   const std::optional<std::filesystem::path>& csv_out,
                   const std::optional<std::filesystem::path>& pgm_out, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const ActivationSet x = load_activation_set(manifest_x);
    const ActivationSet y = load_activation_set(manifest_y);
    const CkaHeatmap h = heatmap(x, y);
    const std::string csv = heatmap_csv(h, x, y);
    if (csv_out) detail::write_text(*csv_out, csv);
    else out << csv;
    if (pgm_out) detail::write_text(*pgm_out, heatmap_pgm(h));
    for (std::size_t i = 0; i < h.values.size(); ++i)
      if (!h.values[i])
        err << "warning: degenerate pair (" << x.names[i / h.cols] << ", " << y.names[i % h.cols]
            << ") left empty\n";
    return exit_ok;
  });
}

/// CSV histogram of teacher maximum softmax probabilities.
inline int cmd_hist(const std::filesystem::path& manifest, std::size_t bins, const Overrides& ov,
                    const std::optional<std::filesystem::path>& csv_out, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Batch b = load_batch(parse_batch_manifest(manifest, ov));
    detail::require_head(b);
    const ConfidenceTable table = confidence(multi_scale_pool(b.teacher, b.spec), *b.head);
    const auto counts = confidence_histogram(table, bins);
    std::ostringstream s;
    s << "bin,lower,upper,count\n";
    for (std::size_t i = 0; i < bins; ++i)
      s << i << ',' << number(static_cast<double>(i) / static_cast<double>(bins)) << ','
        << number(static_cast<double>(i + 1) / static_cast<double>(bins)) << ',' << counts[i] << '\n';
    if (csv_out) detail::write_text(*csv_out, s.str());
    else out << s.str();
    return exit_ok;
  });
}

inline int cmd_selftest(std::ostream& out) {
  bool all = true;
  for (const auto& c : selftest::run_all()) {
    out << (c.passed ? "PASS " : "FAIL ") << c.name;
    if (!c.detail.empty()) out << " (" << c.detail << ")";
    out << "\n";
    all = all && c.passed;
  }
  out << (all ? "selftest passed\n" : "selftest FAILED\n");
  return all ? exit_ok : exit_selftest_failed;
}

/// Writes a seeded synthetic batch (tensors plus manifest.json) to `out_dir`.
inline int cmd_synth(std::uint64_t seed, const synthetic::InstanceShape& shape, const std::filesystem::path& out_dir,
                     std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    std::filesystem::create_directories(out_dir);
    const auto in = synthetic::random_instance(seed, shape);
    write_tensor(out_dir / "teacher.npy", in.teacher);
    write_tensor(out_dir / "student.npy", in.student);
    write_tensor(out_dir / "head_weights.npy", to_tensor(in.head.weights));
    write_tensor(out_dir / "head_bias.npy", to_tensor(in.head.bias));
    write_tensor(out_dir / "projector_weights.npy", to_tensor(in.projector.weights));
    write_tensor(out_dir / "projector_bias.npy", to_tensor(in.projector.bias));

    nlohmann::ordered_json j;
    j["teacher"] = "teacher.npy";
    j["student"] = "student.npy";
    j["head_weights"] = "head_weights.npy";
    j["head_bias"] = "head_bias.npy";
    j["projector_weights"] = "projector_weights.npy";
    j["projector_bias"] = "projector_bias.npy";
    if (in.task) {
      std::vector<double> labels(in.task->labels.begin(), in.task->labels.end());
      write_tensor(out_dir / "student_logits.npy", in.task->logits);
      write_tensor(out_dir / "labels.npy", Tensor({labels.size()}, labels));
      j["student_logits"] = "student_logits.npy";
      j["labels"] = "labels.npy";
    }
    j["scales"] = in.spec.scales;
    j["scale_mode"] = to_string(in.spec.mode);
    j["alpha"] = in.thresholds.alpha;
    j["beta"] = in.thresholds.beta;
    j["lambda1"] = in.config.lambda1;
    j["lambda2"] = in.config.lambda2;
    j["center"] = in.config.centering;
    detail::write_text(out_dir / "manifest.json", j.dump(2) + "\n");
    out << "wrote synthetic batch (seed " << seed << ") to " << out_dir.string() << "\n";
    return exit_ok;
  });
}

}  // namespace msdcrd::cli
