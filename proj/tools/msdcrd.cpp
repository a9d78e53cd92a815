#include <CLI11.hpp>

#include <algorithm>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "msdcrd/cli.hpp"

namespace {

struct RawFlags {
  std::vector<std::size_t> scales;
  std::string scale_mode;
  std::vector<std::size_t> strides;
  bool include_gap = false;
  std::optional<double> alpha, beta, lambda1, lambda2, temperature;
  bool no_center = false;
};

void add_pipeline_flags(CLI::App* cmd, RawFlags& f, bool loss_flags) {
  cmd->add_option("--scales", f.scales, "Pooling scales, comma separated (e.g. 1,2,4)")->delimiter(',');
  cmd->add_option("--scale-mode", f.scale_mode, "output-grid or kernel-stride")
      ->check(CLI::IsMember({"output-grid", "kernel-stride"}));
  cmd->add_option("--strides", f.strides, "Per-scale strides for kernel-stride mode")->delimiter(',');
  cmd->add_flag("--include-gap", f.include_gap, "Append a whole-map window (kernel-stride mode)");
  cmd->add_option("--alpha", f.alpha, "Filtering threshold");
  cmd->add_option("--beta", f.beta, "High-confidence threshold");
  if (loss_flags) {
    cmd->add_option("--lambda1", f.lambda1, "Weight of the sample-wise loss");
    cmd->add_option("--lambda2", f.lambda2, "Weight of the feature-wise loss");
    cmd->add_option("--temperature", f.temperature, "Similarity temperature (extension; default 1)");
    cmd->add_flag("--no-center", f.no_center, "Disable mean-centering before similarities");
  }
}

msdcrd::Overrides to_overrides(const RawFlags& f) {
  msdcrd::Overrides ov;
  if (!f.scales.empty()) {
    auto s = f.scales;
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    ov.scales = s;
  }
  if (!f.scale_mode.empty()) ov.scale_mode = f.scale_mode;
  if (!f.strides.empty()) ov.strides = f.strides;
  if (f.include_gap) ov.include_gap = true;
  ov.alpha = f.alpha;
  ov.beta = f.beta;
  ov.lambda1 = f.lambda1;
  ov.lambda2 = f.lambda2;
  ov.temperature = f.temperature;
  ov.no_center = f.no_center;
  return ov;
}

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = msdcrd::cli;
  CLI::App app{"Multi-scale decoupled contrastive distillation losses and CKA analysis"};
  app.require_subcommand(1);

  RawFlags pool_flags, loss_flags, hist_flags;
  std::string manifest, out_dir, grad_out, csv_out, pgm_out, manifest_y;
  std::size_t bins = 20;
  std::uint64_t seed = 0;
  msdcrd::synthetic::InstanceShape shape;
  std::string synth_scales = "1,2";

  auto* pool = app.add_subcommand("pool", "Pool teacher/student features and write samples + metadata");
  pool->add_option("manifest", manifest, "Batch manifest (JSON)")->required();
  pool->add_option("-o,--out-dir", out_dir, "Output directory")->required();
  add_pipeline_flags(pool, pool_flags, false);

  auto* loss = app.add_subcommand("loss", "Evaluate the distillation loss and print a JSON report");
  loss->add_option("manifest", manifest, "Batch manifest (JSON)")->required();
  loss->add_option("--grad-out", grad_out, "Write the student feature gradient to this tensor file");
  add_pipeline_flags(loss, loss_flags, true);

  auto* cka = app.add_subcommand("cka", "CKA heatmap between two activation sets");
  cka->add_option("manifest_x", manifest, "Activation manifest for the rows")->required();
  cka->add_option("manifest_y", manifest_y, "Activation manifest for the columns")->required();
  cka->add_option("-o,--out", csv_out, "CSV output path (default: stdout)");
  cka->add_option("--pgm", pgm_out, "Also render the heatmap as a PGM image");

  auto* hist = app.add_subcommand("hist", "Histogram of teacher confidences over pooled samples");
  hist->add_option("manifest", manifest, "Batch manifest (JSON)")->required();
  hist->add_option("--bins", bins, "Number of equal-width bins on [0, 1]")->check(CLI::PositiveNumber);
  hist->add_option("-o,--out", csv_out, "CSV output path (default: stdout)");
  add_pipeline_flags(hist, hist_flags, false);

  auto* selftest = app.add_subcommand("selftest", "Run built-in gradient, oracle and CKA checks");

  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic batch and its manifest");
  synth->add_option("-o,--out-dir", out_dir, "Output directory")->required();
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--batch", shape.batch, "Images per batch");
  synth->add_option("--student-channels", shape.student_channels);
  synth->add_option("--teacher-channels", shape.teacher_channels);
  synth->add_option("--student-size", shape.student_size, "Student spatial size (H = W)");
  synth->add_option("--teacher-size", shape.teacher_size, "Teacher spatial size (H = W)");
  synth->add_option("--classes", shape.classes);
  synth->add_option("--scales", shape.scales, "Scales recorded in the manifest")->delimiter(',');
  synth->add_flag("--with-task", shape.with_task, "Also write student logits and labels");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cli::exit_validation;
  }

  if (*pool) return cli::cmd_pool(manifest, out_dir, to_overrides(pool_flags), std::cout, std::cerr);
  if (*loss) return cli::cmd_loss(manifest, to_overrides(loss_flags), opt_path(grad_out), std::cout, std::cerr);
  if (*cka) return cli::cmd_cka(manifest, manifest_y, opt_path(csv_out), opt_path(pgm_out), std::cout, std::cerr);
  if (*hist) return cli::cmd_hist(manifest, bins, to_overrides(hist_flags), opt_path(csv_out), std::cout, std::cerr);
  if (*selftest) return cli::cmd_selftest(std::cout);
  if (*synth) return cli::cmd_synth(seed, shape, out_dir, std::cout, std::cerr);
  return cli::exit_validation;
}
