#include <gtest/gtest.h>

#include "restok/errors.hpp"
#include "restok/geometry.hpp"
#include "restok/ops.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace restok;
using testutil::random_tensor;

namespace {

std::vector<std::pair<int, int>> shapes(const LevelSchedule& s) {
  std::vector<std::pair<int, int>> out;
  for (const auto& g : s.levels) out.emplace_back(g.h, g.w);
  return out;
}

}  // namespace

TEST(LevelSchedule, SingleLevel) {
  const LevelSchedule s = level_schedule(1);
  EXPECT_EQ(shapes(s), (std::vector<std::pair<int, int>>{{1, 1}}));
  EXPECT_EQ(s.total(), 1);
}

TEST(LevelSchedule, EightLevels) {
  const LevelSchedule s = level_schedule(8);
  EXPECT_EQ(shapes(s), (std::vector<std::pair<int, int>>{{1, 1}, {1, 1}, {1, 2}, {2, 2}, {2, 4}, {4, 4}, {4, 8}, {8, 8}}));
  EXPECT_EQ(s.sizes, (std::vector<int>{1, 1, 2, 4, 8, 16, 32, 64}));
  EXPECT_EQ(s.cumulative, (std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128}));
  EXPECT_EQ(s.total(), 128);
}

TEST(LevelSchedule, SixLevels) {
  const LevelSchedule s = level_schedule(6);
  EXPECT_EQ(s.total(), 32);
  EXPECT_EQ(s.levels.back(), (GridShape{4, 4}));
}

TEST(LevelSchedule, CumulativeDoublesBeyondSecondLevel) {
  for (int L = 3; L <= 12; ++L) {
    const LevelSchedule s = level_schedule(L);
    for (int l = 2; l < L; ++l) EXPECT_EQ(s.cumulative[l], 2 * s.cumulative[l - 1]);
    for (int l = 1; l < L; ++l) EXPECT_GT(s.cumulative[l], s.cumulative[l - 1]);
  }
}

TEST(LevelSchedule, LevelOfToken) {
  const LevelSchedule s = level_schedule(5);
  EXPECT_EQ(s.level_of(0), 0);
  EXPECT_EQ(s.level_of(1), 1);
  EXPECT_EQ(s.level_of(3), 2);
  EXPECT_EQ(s.level_of(15), 4);
}

TEST(ScalePyramid, Examples) {
  auto dims = [](const ScalePyramid& p) {
    std::vector<std::pair<int, int>> out;
    for (const auto& g : p.scales) out.emplace_back(g.h, g.w);
    return out;
  };
  EXPECT_EQ(dims(scale_pyramid({16, 16}, 4, 2)), (std::vector<std::pair<int, int>>{{2, 2}, {4, 4}, {8, 8}, {16, 16}}));
  EXPECT_EQ(dims(scale_pyramid({16, 16}, 1, 2)), (std::vector<std::pair<int, int>>{{16, 16}}));
  EXPECT_EQ(dims(scale_pyramid({8, 8}, 4, 2)), (std::vector<std::pair<int, int>>{{1, 1}, {2, 2}, {4, 4}, {8, 8}}));
  EXPECT_EQ(scale_pyramid({8, 8}, 4, 2).total(), 1 + 4 + 16 + 64);
}

TEST(ScalePyramid, NonDivisibleThrows) {
  EXPECT_THROW(scale_pyramid({6, 6}, 3, 2), GeometryError);
  EXPECT_THROW(scale_pyramid({8, 8}, 5, 2), GeometryError);
}

TEST(KeepLengths, Examples) {
  EXPECT_EQ(keep_lengths(level_schedule(8), 4), (std::vector<int>{4, 8, 16, 32, 64, 128}));
  EXPECT_EQ(keep_lengths(level_schedule(1), 1), (std::vector<int>{1}));
  EXPECT_EQ(keep_lengths(level_schedule(6), 4), (std::vector<int>{4, 8, 16, 32}));
}

TEST(KeepLengths, MinimumMustBeABoundary) {
  EXPECT_THROW(keep_lengths(level_schedule(6), 3), ConfigError);
}

TEST(ResidualInit, ConstantField) {
  const Tensor p0({8, 8, 3}, Real(0.3));
  const LevelSchedule s = level_schedule(6);
  const Tensor z = residual_latent_init(p0, s);
  ASSERT_EQ(z.rows(), s.total());
  for (int c = 0; c < 3; ++c) EXPECT_EQ(z.at(0, c), Real(0.3));
  for (int r = 1; r < z.rows(); ++r)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(z.at(r, c), Real(0));
}

TEST(ResidualInit, LengthMatchesScheduleTotal) {
  for (int L = 1; L <= 7; ++L) {
    const LevelSchedule s = level_schedule(L);
    const Tensor z = residual_latent_init(random_tensor({8, 8, 2}, L), s);
    EXPECT_EQ(z.rows(), s.total());
    EXPECT_EQ(z.cols(), 2);
  }
}

TEST(ResidualInit, MatchesLiteralLoop) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Tensor p0 = random_tensor({8, 8, 3}, seed);
    const std::vector<double> ref = oracle::residual_init(p0, 6);
    const Tensor z = residual_latent_init(p0, level_schedule(6));
    ASSERT_EQ(z.size(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(z[i], ref[i], 1e-5) << "seed " << seed;
  }
}

TEST(ResidualInit, NonResidualSamplesInputDirectly) {
  const Tensor p0 = random_tensor({4, 4, 1}, 5);
  const LevelSchedule s = level_schedule(4);
  const Tensor z = residual_latent_init(p0, s, false);
  for (int l = 0; l < s.count(); ++l) {
    const GridShape g = s.levels[l];
    for (int i = 0; i < g.h; ++i)
      for (int j = 0; j < g.w; ++j) EXPECT_EQ(z[s.offset(l) + i * g.w + j], p0[(i * 4 / g.h) * 4 + j * 4 / g.w]);
  }
}

TEST(ResidualInit, PrefixStable) {
  const Tensor p0 = random_tensor({8, 8, 2}, 42);
  const Tensor full = residual_latent_init(p0, level_schedule(7));
  for (int k = 1; k < 7; ++k) {
    const Tensor part = residual_latent_init(p0, level_schedule(k));
    for (std::size_t i = 0; i < part.size(); ++i) ASSERT_EQ(part[i], full[i]) << "k " << k;
  }
}

TEST(ResidualInit, LevelsReconstructOnFinestLattice) {
  // Summing the nearest upsample of every level reproduces p0 at the sample
  // points of the finest level.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor p0 = random_tensor({8, 8, 1}, seed);
    const LevelSchedule s = level_schedule(8);
    const Tensor z = residual_latent_init(p0, s);
    std::vector<double> recon(64, 0.0);
    for (int l = 0; l < s.count(); ++l) {
      const GridShape g = s.levels[l];
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) recon[i * 8 + j] += z[s.offset(l) + (i * g.h / 8) * g.w + j * g.w / 8];
    }
    // level 8 is 8x8, so every cell is on the lattice
    for (int i = 0; i < 64; ++i) EXPECT_NEAR(recon[i], p0[i], 1e-5);
  }
}

TEST(ResidualInit, TapeAndPlainAgree) {
  Tape tape(false);
  const Tensor p0 = random_tensor({8, 8, 4}, 9);
  const LevelSchedule s = level_schedule(6);
  EXPECT_TRUE(bit_identical(residual_latent_init(tape.constant(p0), s).value(), residual_latent_init(p0, s)));
}

TEST(ResidualInit, GridTooSmallThrows) {
  EXPECT_THROW(residual_latent_init(Tensor({4, 4, 1}), level_schedule(8)), GeometryError);
}
