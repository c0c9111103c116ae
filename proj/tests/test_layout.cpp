#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "restok/errors.hpp"
#include "restok/layout.hpp"

using namespace restok;

namespace {

std::vector<std::string> rows_of(const BoolMatrix& m) {
  std::ostringstream os;
  write_mask(os, m, MaskFormat::Ascii);
  std::vector<std::string> out;
  std::istringstream is(os.str());
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

bool injective(const PositionTriples& p) {
  return std::set<PositionTriple>(p.begin(), p.end()).size() == p.size();
}

}  // namespace

TEST(EncoderLayout, SingleScaleSingleLevel) {
  const TokenLayout t = encoder_layout(scale_pyramid({2, 2}, 1, 2), 1, level_schedule(1));
  EXPECT_EQ(rows_of(*t.mask), (std::vector<std::string>{"####.", "####.", "####.", "####.", "#####"}));
}

TEST(EncoderLayout, TwoScalesTwoLevels) {
  // coarse 1x1 at row 0, fine 2x2 at rows 1..4, latents at rows 5 and 6
  const TokenLayout t = encoder_layout(scale_pyramid({2, 2}, 2, 2), 2, level_schedule(2));
  ASSERT_EQ(t.total(), 7);
  EXPECT_EQ(rows_of(*t.mask), (std::vector<std::string>{
                                  "#......",
                                  "#####..",
                                  "#####..",
                                  "#####..",
                                  "#####..",
                                  "######.",
                                  "#######",
                              }));
  ASSERT_EQ(t.groups.size(), 4u);
  EXPECT_EQ(t.groups[0].kind, GroupKind::ImageScale);
  EXPECT_EQ(t.groups[0].size, 1);
  EXPECT_EQ(t.groups[2].kind, GroupKind::LatentLevel);
}

TEST(EncoderLayout, PartialPyramidStartsAtFinest) {
  const ScalePyramid p = scale_pyramid({4, 4}, 3, 2);
  const TokenLayout t = encoder_layout(p, 1, level_schedule(3));
  EXPECT_EQ(t.total(), 16 + 4);
  EXPECT_EQ(t.groups[0].index, 2);
  EXPECT_THROW(encoder_layout(p, 0, level_schedule(3)), GeometryError);
  EXPECT_THROW(encoder_layout(p, 4, level_schedule(3)), GeometryError);
}

TEST(EncoderLayout, Deterministic) {
  const ScalePyramid p = scale_pyramid({8, 8}, 4, 2);
  const LevelSchedule s = level_schedule(6);
  EXPECT_EQ(*encoder_layout(p, 3, s).mask, *encoder_layout(p, 3, s).mask);
  EXPECT_EQ(encoder_layout(p, 3, s).positions, encoder_layout(p, 3, s).positions);
}

TEST(EncoderLayout, CoarserNeverSeesFinerAndLatentsAreCausal) {
  for (int S = 1; S <= 4; ++S) {
    for (int L = 1; L <= 8; ++L) {
      const ScalePyramid p = scale_pyramid({8, 8}, S, 2);
      const LevelSchedule s = level_schedule(L);
      for (int present = 1; present <= S; ++present) {
        const TokenLayout t = encoder_layout(p, present, s);
        ASSERT_EQ(t.total(), t.mask->cols());
        int sum = 0;
        for (const auto& g : t.groups) sum += g.size;
        ASSERT_EQ(sum, t.total());
        for (int r = 0; r < t.total(); ++r) {
          ASSERT_GE(t.mask->row_count(r), 1);
          const TokenGroup& rg = t.groups[t.group_of(r)];
          for (int c = 0; c < t.total(); ++c) {
            const TokenGroup& cg = t.groups[t.group_of(c)];
            const bool allowed = (*t.mask)(r, c);
            if (rg.kind == GroupKind::ImageScale) {
              const bool expect = cg.kind == GroupKind::ImageScale && cg.index <= rg.index;
              ASSERT_EQ(allowed, expect) << S << " " << L << " " << present << " " << r << " " << c;
            } else {
              const bool expect = cg.kind == GroupKind::ImageScale || cg.index <= rg.index;
              ASSERT_EQ(allowed, expect);
            }
          }
        }
        ASSERT_TRUE(injective(t.positions));
      }
    }
  }
}

TEST(GeneratorLayout, VanillaCausal) {
  const TokenLayout t = generator_layout(2, {});
  EXPECT_EQ(rows_of(*t.mask), (std::vector<std::string>{"#..", "##.", "###"}));
}

TEST(GeneratorLayout, SmallGroups) {
  const TokenLayout t = generator_layout(0, {1, 2});
  EXPECT_EQ(rows_of(*t.mask), (std::vector<std::string>{"#...", "##..", "####", "####"}));
}

TEST(GeneratorLayout, DefaultGeometryCounts) {
  const TokenLayout t = generator_layout(4, {4, 8, 16, 32, 64});
  ASSERT_EQ(t.total(), 129);
  const int first_of_last = 1 + 4 + 4 + 8 + 16 + 32;
  EXPECT_EQ(first_of_last, 65);
  int before = 0, own = 0, after = 0;
  for (int c = 0; c < 129; ++c) {
    if (!(*t.mask)(first_of_last, c)) continue;
    if (c < first_of_last) {
      ++before;
    } else if (c < first_of_last + 64) {
      ++own;
    } else {
      ++after;
    }
  }
  EXPECT_EQ(before, 1 + 4 + 4 + 8 + 16 + 32);
  EXPECT_EQ(own, 64);
  EXPECT_EQ(after, 0);
}

TEST(GeneratorLayout, BlockCausalProperty) {
  const std::vector<std::pair<int, std::vector<int>>> cases = {
      {0, {1, 1, 2, 4, 8}}, {1, {1, 2, 4}}, {4, {4, 8, 16}}, {7, {}}, {2, {2, 4, 8, 16, 32, 64}}};
  for (const auto& [ntp, groups] : cases) {
    const TokenLayout t = generator_layout(ntp, groups);
    for (int r = 0; r < t.total(); ++r) {
      const int gr = t.group_of(r);
      for (int c = 0; c < t.total(); ++c) {
        const int gc = t.group_of(c);
        const bool allowed = (*t.mask)(r, c);
        if (allowed) ASSERT_LE(gc, gr);
        if (gc < gr) ASSERT_TRUE(allowed);
        if (gc == gr) {
          const GroupKind k = t.groups[gr].kind;
          ASSERT_EQ(allowed, k == GroupKind::HarGroup || c <= r);
        }
      }
    }
    EXPECT_TRUE(injective(t.positions));
  }
}

TEST(GeneratorLayout, EmptyGroupThrows) {
  EXPECT_THROW(generator_layout(0, {1, 0}), GeometryError);
  EXPECT_THROW(generator_layout(-1, {}), GeometryError);
}

TEST(DecoderLayout, FullyConnectedAndStablePositions) {
  const TokenLayout full = decoder_layout({2, 2}, 8, 8);
  const TokenLayout part = decoder_layout({2, 2}, 2, 8);
  EXPECT_EQ(full.total(), 12);
  EXPECT_EQ(part.total(), 6);
  for (int r = 0; r < 6; ++r) EXPECT_EQ(part.mask->row_count(r), 6);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(part.positions[2 + i], full.positions[8 + i]);
}

TEST(Mrope, DecoderOneLatentTwoByTwo) {
  const PositionTriples p = mrope_positions(RopeMode::Decoder, {{2, 2}}, 1);
  EXPECT_EQ(p, (PositionTriples{{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {1, 1, 0}, {1, 1, 1}}));
}

TEST(Mrope, EncoderSingleTokenEach) {
  const PositionTriples p = mrope_positions(RopeMode::Encoder, {{1, 1}}, 1);
  EXPECT_EQ(p, (PositionTriples{{0, 0, 0}, {1, 1, 1}}));
}

TEST(Mrope, GroupsStartPastLargestId) {
  const PositionTriples p = mrope_positions(RopeMode::Encoder, {{1, 1}, {4, 4}}, 2);
  // 1x1 at t=0; 4x4 at t=1 uses ids up to 3; latents start at 4
  EXPECT_EQ(p[1], (PositionTriple{1, 0, 0}));
  EXPECT_EQ(p[16], (PositionTriple{1, 3, 3}));
  EXPECT_EQ(p[17], (PositionTriple{4, 4, 4}));
  EXPECT_EQ(p[18], (PositionTriple{5, 5, 5}));
  EXPECT_TRUE(injective(p));
}

TEST(Mrope, ImageTokensOfOneScaleNeverShareATriple) {
  const PositionTriples p = mrope_positions(RopeMode::Decoder, {{8, 8}}, 32);
  EXPECT_TRUE(injective(p));
}

TEST(WriteMask, CsvFormat) {
  BoolMatrix m(2, 3);
  m.set(0, 0, true);
  m.set(1, 2, true);
  std::ostringstream os;
  write_mask(os, m, MaskFormat::Csv);
  EXPECT_EQ(os.str(), "1,0,0\n0,0,1\n");
}
