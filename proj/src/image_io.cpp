#include "restok/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "restok/errors.hpp"

RESTOK_BEGIN_NAMESPACE

void write_ppm(const std::string& path, const Tensor& image) {
  require_rank(image, 3, "write_ppm");
  if (image.dim(2) != 3) throw DimensionError("write_ppm needs 3 channels");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write image " + path);
  out << "P6\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<unsigned char> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(double(image[i]), 0.0, 1.0) * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageError("missing image " + path);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w < 1 || h < 1 || maxval != 255) throw DataError(path + " is not an 8-bit P6 image");
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw DataError("truncated image " + path);
  Tensor img({h, w, 3});
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<Real>(bytes[i] / 255.0);
  return img;
}

Tensor tile_images(const std::vector<Tensor>& images, int columns) {
  if (images.empty()) return Tensor();
  const int h = images[0].dim(0), w = images[0].dim(1), c = images[0].dim(2);
  columns = std::max(1, std::min(columns, static_cast<int>(images.size())));
  const int rows = (static_cast<int>(images.size()) + columns - 1) / columns;
  Tensor out({rows * h, columns * w, c});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].shape() != images[0].shape()) throw DimensionError("tile_images: mixed shapes");
    const int oy = static_cast<int>(n) / columns * h, ox = static_cast<int>(n) % columns * w;
    for (int y = 0; y < h; ++y) {
      std::copy_n(images[n].data() + std::size_t(y) * w * c, std::size_t(w) * c,
                  out.data() + (std::size_t(oy + y) * columns * w + ox) * c);
    }
  }
  return out;
}

RESTOK_END_NAMESPACE
