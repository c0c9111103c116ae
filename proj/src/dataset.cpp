#include "restok/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

namespace {

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Signed distance-like coverage in [0, 1] with a one pixel soft edge.
double coverage(double inside_distance) { return std::clamp(inside_distance + 0.5, 0.0, 1.0); }

double shape_coverage(int shape, double dx, double dy, double radius) {
  switch (shape) {
    case 0:  // disk
      return coverage(radius - std::hypot(dx, dy));
    case 1:  // square
      return coverage(radius * 0.85 - std::max(std::abs(dx), std::abs(dy)));
    case 2: {  // ring
      const double r = std::hypot(dx, dy);
      return coverage(std::min(radius - r, r - radius * 0.5));
    }
    default:  // plus sign
      return coverage(std::max(std::min(radius - std::abs(dx), radius * 0.35 - std::abs(dy)),
                               std::min(radius - std::abs(dy), radius * 0.35 - std::abs(dx))));
  }
}

}  // namespace

Tensor synthetic_image(int index, int label, int size, int num_classes, std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);

  // every class owns a hue; the outline is drawn per image
  const double hue = label / static_cast<double>(num_classes) + 0.02 * (u(rng) - 0.5);
  const int shape = static_cast<int>(u(rng) * 4) % 4;
  const Rgb fg = hsv(hue, 0.75 + 0.2 * u(rng), 0.75 + 0.2 * u(rng));

  const double bg_hue = u(rng);
  const Rgb bg0 = hsv(bg_hue, 0.05 * u(rng), 0.3 + 0.1 * u(rng));
  const Rgb bg1 = hsv(bg_hue + 0.1, 0.05 * u(rng), 0.3 + 0.1 * u(rng));
  const double angle = 2 * M_PI * u(rng);
  const double gx = std::cos(angle), gy = std::sin(angle);

  const double radius = size * (0.3 + 0.08 * u(rng));
  const double margin = radius + 1;
  const double cx = margin + (size - 2 * margin) * u(rng);
  const double cy = margin + (size - 2 * margin) * u(rng);

  Tensor img({size, size, 3});
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double t = std::clamp(0.5 + ((px / size - 0.5) * gx + (py / size - 0.5) * gy), 0.0, 1.0);
      const double a = shape_coverage(shape, px - cx, py - cy, radius);
      const double bg[3] = {bg0.r + (bg1.r - bg0.r) * t, bg0.g + (bg1.g - bg0.g) * t,
                            bg0.b + (bg1.b - bg0.b) * t};
      const double col[3] = {fg.r, fg.g, fg.b};
      for (int c = 0; c < 3; ++c) {
        img[(std::size_t(y) * size + x) * 3 + c] =
            static_cast<Real>(std::clamp(bg[c] * (1 - a) + col[c] * a, 0.0, 1.0));
      }
    }
  }
  return img;
}

Dataset gen_synthetic_dataset(int n, int size, int num_classes, std::uint64_t seed) {
  if (n < 0) throw ConfigError("dataset size must be non-negative");
  if (size < 8) throw ConfigError("synthetic images need at least 8 pixels per side, got " + std::to_string(size));
  if (num_classes < 1) throw ConfigError("dataset needs at least one class");
  Dataset ds;
  ds.num_classes = num_classes;
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;
    ds.labels.push_back(label);
    ds.images.push_back(synthetic_image(i, label, size, num_classes, seed));
  }
  return ds;
}

RESTOK_END_NAMESPACE
