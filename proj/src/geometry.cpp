#include "restok/geometry.hpp"

#include <algorithm>
#include <string>

#include "restok/errors.hpp"
#include "restok/ops.hpp"

RESTOK_BEGIN_NAMESPACE

int LevelSchedule::level_of(int token) const {
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), token);
  if (token < 0 || it == cumulative.end()) {
    throw GeometryError("latent token " + std::to_string(token) + " outside schedule");
  }
  return static_cast<int>(it - cumulative.begin());
}

int ScalePyramid::total() const {
  int n = 0;
  for (const auto& s : scales) n += s.size();
  return n;
}

LevelSchedule level_schedule(int levels) {
  if (levels < 1) throw GeometryError("level_schedule needs at least one level");
  LevelSchedule s;
  int h = 1, w = 1;
  s.levels.push_back({h, w});
  for (int l = 2; l <= levels; ++l) {
    s.levels.push_back({h, w});
    if (l % 2 == 0) {
      w *= 2;
    } else {
      h *= 2;
    }
  }
  int acc = 0;
  for (const auto& g : s.levels) {
    s.sizes.push_back(g.size());
    acc += g.size();
    s.cumulative.push_back(acc);
  }
  return s;
}

ScalePyramid scale_pyramid(GridShape base, int scales, int factor) {
  if (scales < 1 || factor < 1 || base.h < 1 || base.w < 1) {
    throw GeometryError("scale_pyramid: invalid arguments");
  }
  int div = 1;
  for (int s = 1; s < scales; ++s) div *= factor;
  if (base.h % div != 0 || base.w % div != 0) {
    throw GeometryError("scale_pyramid: base " + std::to_string(base.h) + "x" +
                        std::to_string(base.w) + " not divisible by " + std::to_string(div));
  }
  ScalePyramid p;
  p.base = base;
  p.factor = factor;
  for (int s = 0; s < scales; ++s) {
    p.scales.push_back({base.h / div, base.w / div});
    div = std::max(1, div / factor);
  }
  p.scales.back() = base;
  return p;
}

std::vector<int> keep_lengths(const LevelSchedule& schedule, int min_tokens) {
  if (std::find(schedule.cumulative.begin(), schedule.cumulative.end(), min_tokens) ==
      schedule.cumulative.end()) {
    throw ConfigError("minimum kept tokens " + std::to_string(min_tokens) +
                      " is not a cumulative level length");
  }
  std::vector<int> out;
  for (int c : schedule.cumulative) {
    if (c >= min_tokens) out.push_back(c);
  }
  return out;
}

namespace {

void check_init_geometry(const std::vector<int>& shape, const LevelSchedule& schedule) {
  if (shape.size() != 3) throw DimensionError("residual_latent_init expects [h x w x c]");
  for (const auto& g : schedule.levels) {
    if (shape[0] % g.h != 0 || shape[1] % g.w != 0) {
      throw GeometryError("residual_latent_init: base grid " + shape_string(shape) +
                          " not divisible by level " + std::to_string(g.h) + "x" +
                          std::to_string(g.w));
    }
  }
}

}  // namespace

Var residual_latent_init(Var p0, const LevelSchedule& schedule, bool residual) {
  const auto& shape = p0.shape();
  check_init_geometry(shape, schedule);
  const int h = shape[0], w = shape[1], c = shape[2];
  std::vector<Var> levels;
  Var running = p0;
  Var prev;
  for (int l = 0; l < schedule.count(); ++l) {
    const GridShape g = schedule.levels[static_cast<std::size_t>(l)];
    if (residual && l > 0) {
      running = sub(running, nearest_resize(prev, h, w));
    }
    prev = nearest_resize(running, g.h, g.w);
    levels.push_back(reshape(prev, {g.size(), c}));
  }
  return concat_rows(levels);
}

Tensor residual_latent_init(const Tensor& p0, const LevelSchedule& schedule, bool residual) {
  Tape tape(false);
  return residual_latent_init(tape.constant(p0), schedule, residual).value();
}

RESTOK_END_NAMESPACE
