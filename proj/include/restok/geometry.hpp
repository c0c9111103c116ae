#pragma once

#include <utility>
#include <vector>

#include "restok/tape.hpp"

RESTOK_BEGIN_NAMESPACE

struct GridShape {
  int h = 0;
  int w = 0;
  int size() const { return h * w; }
  bool operator==(const GridShape&) const = default;
};

// Latent hierarchy shapes. The first two levels are 1x1; after that the
// pooling target doubles its width on even level indices and its height on
// odd ones, so sizes run 1, 1, 2, 4, 8, ...
struct LevelSchedule {
  std::vector<GridShape> levels;
  std::vector<int> sizes;
  std::vector<int> cumulative;

  int count() const { return static_cast<int>(levels.size()); }
  int total() const { return cumulative.empty() ? 0 : cumulative.back(); }
  int offset(int level) const { return level == 0 ? 0 : cumulative[static_cast<std::size_t>(level - 1)]; }
  // Level index (0-based) holding latent token i.
  int level_of(int token) const;
};

// Image-token scales, coarse to fine; each finer scale is `factor` times the
// previous one per axis and the finest equals the base grid.
struct ScalePyramid {
  GridShape base;
  int factor = 1;
  std::vector<GridShape> scales;

  int count() const { return static_cast<int>(scales.size()); }
  int total() const;
};

LevelSchedule level_schedule(int levels);
ScalePyramid scale_pyramid(GridShape base, int scales, int factor);

// Cumulative lengths >= min_tokens, ascending. min_tokens must itself be a
// cumulative length.
std::vector<int> keep_lengths(const LevelSchedule& schedule, int min_tokens);

// Residual latent initialization on a base grid p0 [h x w x c]: level 1 is
// the 1x1 nearest sample of p0; each later level samples the running residual
// after subtracting the nearest upsample of the previous level. With
// `residual` false every level samples p0 directly. Returns the levels'
// tokens flattened coarse to fine as [total x c].
Var residual_latent_init(Var p0, const LevelSchedule& schedule, bool residual = true);

// Tape-free variant on plain tensors.
Tensor residual_latent_init(const Tensor& p0, const LevelSchedule& schedule, bool residual = true);

RESTOK_END_NAMESPACE
