#include <gtest/gtest.h>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "msdcrd/cli.hpp"

using namespace msdcrd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("msdcrd_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
}

struct Run {
  int code;
  std::string out;
};

// Runs the built executable through the shell; stderr is discarded.
Run run(const std::string& args) {
  const std::string cmd = std::string("\"") + MSDCRD_CLI_PATH + "\" " + args + " 2>/dev/null";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  std::string out;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) out.append(buf, n);
  const int status = ::pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path synth(const std::string& name, std::uint64_t seed, synthetic::InstanceShape shape = {}) {
  const auto dir = scratch(name);
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_synth(seed, shape, dir, out, err), cli::exit_ok) << err.str();
  return dir / "manifest.json";
}

nlohmann::json loss_json(const fs::path& manifest, const Overrides& ov = {}) {
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_loss(manifest, ov, std::nullopt, out, err), cli::exit_ok) << err.str();
  return nlohmann::json::parse(out.str());
}

}  // namespace

TEST(CliLoss, SynthBatchMatchesFrozenValue) {
  auto m = synth("frozen", 7);
  const auto j = loss_json(m, Overrides{.alpha = 0.0});
  // Frozen from the staged reference composition for seed 7 with the
  // default shape, scales {1, 2}, alpha 0, beta 0.6.
  EXPECT_NEAR(j["loss_sample"].get<double>(), 0.32087915125328631, 1e-9);
  EXPECT_NEAR(j["loss_feature"].get<double>(), 1.1596844553338534, 1e-9);
  EXPECT_NEAR(j["loss_total"].get<double>(), 1.4805636065871397, 1e-9);
  EXPECT_EQ(j["N_high"].get<int>(), 3);
  EXPECT_EQ(j["N_low"].get<int>(), 7);
  EXPECT_EQ(j["N_filtered"].get<int>(), 0);
}

TEST(CliLoss, ReportMatchesLibraryAndRoundTrips) {
  synthetic::InstanceShape shape;
  shape.with_task = true;
  const auto m = synth("roundtrip", 11, shape);
  const auto j = loss_json(m, Overrides{.alpha = 0.0});
  auto in = synthetic::random_instance(11, shape);
  in.thresholds.alpha = 0.0;
  const auto r = total_loss(in.student, in.teacher, in.head, in.projector, in.spec, in.thresholds, in.config, in.task);
  EXPECT_NEAR(j["loss_sample"].get<double>(), r.loss_sample, 1e-12);
  EXPECT_NEAR(j["loss_feature"].get<double>(), r.loss_feature, 1e-12);
  EXPECT_NEAR(j["loss_task"].get<double>(), *r.loss_task, 1e-12);
  EXPECT_NEAR(j["loss_total"].get<double>(), r.loss_total, 1e-12);
  EXPECT_EQ(j["N_high"].get<std::size_t>(), r.n_high);
}

TEST(CliLoss, ZeroLambdasGiveZero) {
  const auto m = synth("lambda0", 3);
  const auto j = loss_json(m, Overrides{.alpha = 0.0, .lambda1 = 0.0, .lambda2 = 0.0});
  EXPECT_EQ(j["loss_total"].get<double>(), 0.0);
}

TEST(CliLoss, IdenticalSingleImageGivesZeroSampleLoss) {
  const auto dir = scratch("identical");
  synthetic::Rng rng(5);
  const Tensor f = synthetic::random_tensor({1, 3, 4, 4}, rng);
  write_tensor(dir / "f.npy", f);
  write_tensor(dir / "hw.npy", to_tensor(synthetic::random_matrix(4, 3, rng)));
  write_json(dir / "m.json", {{"teacher", "f.npy"}, {"student", "f.npy"}, {"head_weights", "hw.npy"},
                              {"scales", {1}}, {"alpha", 0.0}, {"beta", 0.6}, {"center", false}});
  const auto j = loss_json(dir / "m.json");
  EXPECT_EQ(j["loss_sample"].get<double>(), 0.0);
}

TEST(CliLoss, GradientFileMatchesLibrary) {
  const auto m = synth("grad", 13);
  const auto grad = m.parent_path() / "grad.npy";
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_loss(m, Overrides{.alpha = 0.0}, grad, out, err), cli::exit_ok);
  auto in = synthetic::random_instance(13, {});
  in.thresholds.alpha = 0.0;
  const auto r = total_loss(in.student, in.teacher, in.head, in.projector, in.spec, in.thresholds, in.config);
  EXPECT_EQ(read_tensor(grad), r.grad.student);
}

TEST(CliLoss, EmptySelectionNamesAlpha) {
  const auto m = synth("empty", 17);
  std::ostringstream out, err;
  EXPECT_EQ(cli::cmd_loss(m, Overrides{.alpha = 0.999999, .beta = 1.0}, std::nullopt, out, err),
            cli::exit_empty_selection);
  EXPECT_NE(err.str().find("alpha"), std::string::npos);
}

TEST(CliLoss, DefaultThresholdsWarn) {
  const auto dir = scratch("defaults");
  synthetic::Rng rng(6);
  write_tensor(dir / "t.npy", synthetic::random_tensor({2, 3, 4, 4}, rng));
  write_tensor(dir / "hw.npy", to_tensor(synthetic::random_matrix(4, 3, rng)));
  write_json(dir / "m.json", {{"teacher", "t.npy"}, {"student", "t.npy"}, {"head_weights", "hw.npy"}});
  std::ostringstream out, err;
  cli::cmd_loss(dir / "m.json", {}, std::nullopt, out, err);
  EXPECT_NE(err.str().find("alpha not given"), std::string::npos);
  EXPECT_NE(err.str().find("beta not given"), std::string::npos);
}

TEST(CliPool, RowCountsAndByteIdenticalReruns) {
  const auto m = synth("pool", 19, {.batch = 3, .student_size = 8, .teacher_size = 8, .scales = {1, 2, 4}});
  const auto a = m.parent_path() / "a", b = m.parent_path() / "b";
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_pool(m, a, {}, out, err), cli::exit_ok) << err.str();
  ASSERT_EQ(cli::cmd_pool(m, b, {}, out, err), cli::exit_ok);
  const Tensor t = read_tensor(a / "teacher_pooled.npy");
  EXPECT_EQ(t.shape(), (Shape{63, 4}));
  for (const char* f : {"teacher_pooled.npy", "teacher_meta.csv", "student_pooled.npy", "student_meta.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  const std::string meta = slurp(a / "teacher_meta.csv");
  EXPECT_EQ(std::count(meta.begin(), meta.end(), '\n'), 64);
}

TEST(CliPool, ScaleOverride) {
  const auto m = synth("pool_override", 20, {.student_size = 8, .teacher_size = 8});
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_pool(m, m.parent_path() / "o", Overrides{.scales = std::vector<std::size_t>{1, 2, 4}}, out, err),
            cli::exit_ok);
  EXPECT_EQ(read_tensor(m.parent_path() / "o" / "teacher_pooled.npy").extent(0), 42u);
}

TEST(CliCka, DiagonalAndPgmPixels) {
  const auto dir = scratch("cka");
  synthetic::Rng rng(21);
  write_tensor(dir / "a.npy", synthetic::random_tensor({6, 3}, rng));
  write_tensor(dir / "b.npy", synthetic::random_tensor({6, 2, 2}, rng));
  write_tensor(dir / "c.npy", synthetic::random_tensor({6, 4}, rng));
  write_json(dir / "x.json", {{"blocks", {"a.npy", "b.npy", "c.npy"}}});
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_cka(dir / "x.json", dir / "x.json", std::nullopt, dir / "h.pgm", out, err), cli::exit_ok)
      << err.str();

  std::istringstream csv(out.str());
  std::string line;
  std::getline(csv, line);
  std::vector<std::vector<double>> cells;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    cells.emplace_back();
    while (std::getline(row, cell, ',')) cells.back().push_back(std::stod(cell));
  }
  ASSERT_EQ(cells.size(), 3u);
  const std::string pgm = slurp(dir / "h.pgm");
  const std::string header = "P5\n3 3\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  for (std::size_t p = 0; p < 3; ++p) {
    EXPECT_NEAR(cells[p][p], 1.0, 1e-10);
    for (std::size_t q = 0; q < 3; ++q)
      EXPECT_EQ(static_cast<unsigned char>(pgm[header.size() + p * 3 + q]),
                static_cast<unsigned char>(std::lround(cells[p][q] * 255.0)));
  }
}

TEST(CliCka, SingleBlockAndNamedEntries) {
  const auto dir = scratch("cka1");
  synthetic::Rng rng(22);
  write_tensor(dir / "a.npy", synthetic::random_tensor({5, 3}, rng));
  write_json(dir / "x.json", {{"blocks", nlohmann::json::array({{{"name", "stem"}, {"path", "a.npy"}}})}});
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_cka(dir / "x.json", dir / "x.json", std::nullopt, std::nullopt, out, err), cli::exit_ok);
  EXPECT_EQ(out.str().substr(0, 11), "block,stem\n");
  EXPECT_NEAR(std::stod(out.str().substr(out.str().find(',', 11) + 1)), 1.0, 1e-10);
}

TEST(CliHist, ZeroHeadPutsEverythingInOneBin) {
  const auto dir = scratch("hist");
  synthetic::Rng rng(23);
  write_tensor(dir / "t.npy", synthetic::random_tensor({2, 3, 4, 4}, rng));
  write_tensor(dir / "hw.npy", Tensor({4, 3}));
  write_json(dir / "m.json", {{"teacher", "t.npy"}, {"head_weights", "hw.npy"}, {"scales", {1, 2}}});
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_hist(dir / "m.json", 2, {}, std::nullopt, out, err), cli::exit_ok) << err.str();
  EXPECT_EQ(out.str(), "bin,lower,upper,count\n0,0,0.5,10\n1,0.5,1,0\n");
}

TEST(CliHist, MatchesNaiveCounting) {
  const auto m = synth("hist_random", 24);
  std::ostringstream out, err;
  ASSERT_EQ(cli::cmd_hist(m, 5, {}, std::nullopt, out, err), cli::exit_ok);
  const auto in = synthetic::random_instance(24, {});
  const auto table = confidence(multi_scale_pool(in.teacher, in.spec), in.head);
  std::vector<std::size_t> naive(5, 0);
  for (double p : table.p) ++naive[std::min<std::size_t>(4, static_cast<std::size_t>(p * 5))];
  std::istringstream csv(out.str());
  std::string line;
  std::getline(csv, line);
  for (std::size_t b = 0; b < 5; ++b) {
    std::getline(csv, line);
    EXPECT_EQ(std::stoul(line.substr(line.rfind(',') + 1)), naive[b]);
  }
}

TEST(CliProcess, ExitCodes) {
  const auto m = synth("codes", 25);
  EXPECT_EQ(run("loss \"" + m.string() + "\" --alpha 0").code, 0);
  EXPECT_EQ(run("loss \"" + m.string() + "\" --alpha 0.9 --beta 0.5").code, 2);
  EXPECT_EQ(run("loss \"" + m.string() + "\" --scales 1,9").code, 2);
  EXPECT_EQ(run("loss").code, 2);
  EXPECT_EQ(run("loss /nonexistent/manifest.json").code, 3);
  EXPECT_EQ(run("loss \"" + m.string() + "\" --alpha 0.999999 --beta 1").code, 4);

  std::ofstream(m.parent_path() / "teacher.npy", std::ios::trunc) << "garbage";
  EXPECT_EQ(run("loss \"" + m.string() + "\"").code, 3);
}

TEST(CliProcess, LossIsDeterministic) {
  const auto m = synth("determinism", 26);
  const auto a = run("loss \"" + m.string() + "\" --alpha 0");
  const auto b = run("loss \"" + m.string() + "\" --alpha 0");
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_FALSE(a.out.empty());
}

TEST(CliProcess, SelftestPasses) {
  const auto r = run("selftest");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("selftest passed"), std::string::npos);
}
