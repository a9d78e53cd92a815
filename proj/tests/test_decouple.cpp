#include <gtest/gtest.h>

#include <set>
#include <vector>

#include "msdcrd/decouple.hpp"
#include "msdcrd/synthetic.hpp"

using namespace msdcrd;

namespace {

ScaleSpec grid(std::vector<std::size_t> scales) {
  ScaleSpec s;
  s.scales = std::move(scales);
  return s;
}

ScaleSpec sliding(std::vector<std::size_t> kernels, std::vector<std::size_t> strides = {}, bool gap = false) {
  ScaleSpec s;
  s.mode = PoolMode::kernel_stride;
  s.scales = std::move(kernels);
  s.strides = std::move(strides);
  s.include_gap = gap;
  return s;
}

bool throws_validation(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind() == ErrorKind::validation;
  }
  return false;
}

}  // namespace

TEST(WindowLayout, ScaleOneIsWholeMap) {
  const auto w = window_layout(grid({1}), 8, 8);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0], (Window{1, 0, 0, 8, 8}));
}

TEST(WindowLayout, OneTwoFourOnEight) {
  const auto w = window_layout(grid({1, 2, 4}), 8, 8);
  ASSERT_EQ(w.size(), 21u);
  EXPECT_EQ(w[1], (Window{2, 0, 0, 4, 4}));
  EXPECT_EQ(w[2], (Window{2, 0, 4, 4, 4}));
  EXPECT_EQ(w[3], (Window{2, 4, 0, 4, 4}));
  EXPECT_EQ(w[4], (Window{2, 4, 4, 4, 4}));
  for (std::size_t i = 5; i < 21; ++i) {
    EXPECT_EQ(w[i].scale, 4u);
    EXPECT_EQ(w[i].area(), 4u);
  }
}

TEST(WindowLayout, UnevenGridPartitionsTheMap) {
  const auto w = window_layout(grid({2}), 7, 7);
  ASSERT_EQ(w.size(), 4u);
  std::vector<int> hits(49, 0);
  for (const auto& r : w) {
    EXPECT_TRUE(r.height == 3 || r.height == 4);
    EXPECT_TRUE(r.width == 3 || r.width == 4);
    for (std::size_t y = r.top; y < r.top + r.height; ++y)
      for (std::size_t x = r.left; x < r.left + r.width; ++x) ++hits[y * 7 + x];
  }
  for (int h : hits) EXPECT_EQ(h, 1);
}

TEST(WindowLayout, RectanglesStayInBounds) {
  for (std::size_t hw : {4u, 5u, 7u, 8u, 13u}) {
    for (const auto& r : window_layout(grid({1, 2, 3, 4}), hw, hw + 1)) {
      EXPECT_LE(r.top + r.height, hw);
      EXPECT_LE(r.left + r.width, hw + 1);
      EXPECT_GT(r.area(), 0u);
    }
  }
}

TEST(WindowLayout, KernelStride) {
  EXPECT_EQ(window_layout(sliding({2}), 4, 4).size(), 4u);
  EXPECT_EQ(window_layout(sliding({2}, {1}), 4, 4).size(), 9u);
  const auto w = window_layout(sliding({2, 3}, {2, 1}, true), 5, 5);
  // k=2 stride 2 -> tops {0, 2}; k=3 stride 1 -> tops {0, 1, 2}; plus GAP.
  ASSERT_EQ(w.size(), 4u + 9u + 1u);
  EXPECT_EQ(w.back(), (Window{0, 0, 0, 5, 5}));
  EXPECT_EQ(w[4], (Window{3, 0, 0, 3, 3}));
}

TEST(WindowLayout, Errors) {
  EXPECT_TRUE(throws_validation([] { window_layout(grid({9}), 8, 8); }));
  EXPECT_TRUE(throws_validation([] { window_layout(grid({2, 1}), 8, 8); }));
  EXPECT_TRUE(throws_validation([] { window_layout(grid({}), 8, 8); }));
  EXPECT_TRUE(throws_validation([] { window_layout(grid({0}), 8, 8); }));
  EXPECT_TRUE(throws_validation([] { window_layout(sliding({5}), 4, 8); }));
  EXPECT_TRUE(throws_validation([] { window_layout(sliding({2}, {1, 1}), 4, 4); }));
}

TEST(MultiScalePool, ConstantMapGivesConstantRows) {
  Tensor f({2, 3, 8, 8});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) f(b, c, y, x) = 0.5 + static_cast<double>(c);
  const PooledSet p = multi_scale_pool(f, grid({1, 2, 4}));
  EXPECT_EQ(p.windows_per_image, 21u);
  EXPECT_EQ(p.rows(), 42u);
  for (std::size_t n = 0; n < p.rows(); ++n)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(p.samples(idx(n), idx(c)), 0.5 + static_cast<double>(c));
}

TEST(MultiScalePool, MatchesHandWrittenWindows) {
  synthetic::Rng rng(31);
  const Tensor f = synthetic::random_tensor({1, 2, 4, 4}, rng);
  const PooledSet p = multi_scale_pool(f, grid({1, 2}));
  ASSERT_EQ(p.rows(), 5u);
  // (top, left, size) of the whole map and the four quadrants.
  const int windows[5][3] = {{0, 0, 4}, {0, 0, 2}, {0, 2, 2}, {2, 0, 2}, {2, 2, 2}};
  for (int m = 0; m < 5; ++m) {
    for (std::size_t c = 0; c < 2; ++c) {
      long double sum = 0;
      int cells = 0;
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
          if (y >= windows[m][0] && y < windows[m][0] + windows[m][2] && x >= windows[m][1] &&
              x < windows[m][1] + windows[m][2]) {
            sum += f(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            ++cells;
          }
      EXPECT_NEAR(p.samples(m, idx(c)), static_cast<double>(sum / cells), 1e-12);
    }
  }
}

TEST(MultiScalePool, RowOrderAndMetadata) {
  synthetic::Rng rng(32);
  const Tensor f = synthetic::random_tensor({3, 2, 7, 7}, rng);
  const PooledSet p = multi_scale_pool(f, grid({1, 2}));
  ASSERT_EQ(p.meta.size(), 15u);
  for (std::size_t n = 0; n < p.meta.size(); ++n) {
    EXPECT_EQ(p.meta[n].image, n / 5);
    EXPECT_EQ(p.meta[n].window, n % 5);
    // Recomputing from the stored rectangle reproduces the row exactly.
    for (std::size_t c = 0; c < 2; ++c)
      EXPECT_EQ(p.samples(idx(n), idx(c)), detail::window_mean(f, p.meta[n].image, c, p.meta[n].rect));
  }
}

TEST(MultiScalePool, Linearity) {
  synthetic::Rng rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor f = synthetic::random_tensor({2, 3, 7, 7}, rng);
    const Tensor g = synthetic::random_tensor({2, 3, 7, 7}, rng);
    const double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    std::vector<double> mix(f.size());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * f[i] + b * g[i];
    const auto spec = grid({1, 2, 3});
    const Matrix lhs = multi_scale_pool(Tensor(f.shape(), mix), spec).samples;
    const Matrix rhs = a * multi_scale_pool(f, spec).samples + b * multi_scale_pool(g, spec).samples;
    EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(MultiScalePool, TilingConservation) {
  synthetic::Rng rng(34);
  for (std::size_t hw : {4u, 7u, 8u}) {
    const Tensor f = synthetic::random_tensor({2, 3, hw, hw}, rng);
    const PooledSet p = multi_scale_pool(f, grid({1, 2, 3, 4}));
    for (std::size_t b = 0; b < 2; ++b) {
      const auto gap = p.samples.row(idx(b * p.windows_per_image));
      std::size_t first = 0;
      for (std::size_t s : {1u, 2u, 3u, 4u}) {
        Eigen::RowVectorXd weighted = Eigen::RowVectorXd::Zero(3);
        for (std::size_t k = 0; k < s * s; ++k) {
          const std::size_t n = b * p.windows_per_image + first + k;
          weighted += static_cast<double>(p.meta[n].rect.area()) * p.samples.row(idx(n));
        }
        weighted /= static_cast<double>(hw * hw);
        EXPECT_LE((weighted - gap).cwiseAbs().maxCoeff(), 1e-9);
        first += s * s;
      }
    }
  }
}

TEST(MultiScalePool, Deterministic) {
  synthetic::Rng rng(35);
  const Tensor f = synthetic::random_tensor({2, 4, 8, 8}, rng);
  const PooledSet a = multi_scale_pool(f, grid({1, 2, 4}));
  const PooledSet b = multi_scale_pool(f, grid({1, 2, 4}));
  EXPECT_TRUE(a.samples == b.samples);
}

TEST(MultiScalePool, RejectsWrongRank) {
  EXPECT_TRUE(throws_validation([] { multi_scale_pool(Tensor({2, 3}), grid({1})); }));
}

TEST(PoolAdjoint, InnerProductIdentity) {
  synthetic::Rng rng(36);
  for (const auto& spec : {grid({1, 2, 4}), sliding({2, 3}, {1, 2}, true)}) {
    const Tensor f = synthetic::random_tensor({2, 3, 8, 8}, rng);
    const PooledSet p = multi_scale_pool(f, spec);
    const Matrix g = synthetic::random_matrix(p.rows(), 3, rng);
    const Tensor back = pool_adjoint(g, p.meta, f.shape());
    const double lhs = (p.samples.array() * g.array()).sum();
    double rhs = 0;
    for (std::size_t i = 0; i < f.size(); ++i) rhs += f[i] * back[i];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}
