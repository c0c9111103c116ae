#pragma once

#include <string>
#include <vector>

#include "restok/tensor.hpp"

RESTOK_BEGIN_NAMESPACE

// Binary PPM (P6), 8 bits per channel. Values are clamped to [0, 1] and
// rounded on write.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Tiles equally sized images row-major, `columns` per row.
Tensor tile_images(const std::vector<Tensor>& images, int columns);

RESTOK_END_NAMESPACE
