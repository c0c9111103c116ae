#pragma once

#include <cstdint>
#include <vector>

#include "restok/tensor.hpp"

RESTOK_BEGIN_NAMESPACE

struct Dataset {
  std::vector<Tensor> images;  // [size x size x 3], values in [0, 1]
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }
};

// Procedural images: one colored shape per image over a low-saturation
// gradient. Class c draws shape c % 4 in hue (c / 4) of the palette; the
// position, scale, tint and background vary per image. Labels cycle through
// the classes. Each image depends only on (seed, index).
Dataset gen_synthetic_dataset(int n, int size, int num_classes, std::uint64_t seed);

// The image at `index` of gen_synthetic_dataset(.., seed).
Tensor synthetic_image(int index, int label, int size, int num_classes, std::uint64_t seed);

RESTOK_END_NAMESPACE
