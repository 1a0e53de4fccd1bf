#include "fpd/image.hpp"

#include "fpd/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace fpd {

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const FeatureMap& rgb) {
  if (rgb.channels() != 3) throw ValidationError("write_ppm: expected 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << rgb.width() << " " << rgb.height() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(rgb.cells()) * 3);
  for (Index i = 0; i < rgb.values().size(); ++i) buf[static_cast<std::size_t>(i)] = to_byte(rgb.values().data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

FeatureMap read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PPM: " + path.string());
  in.get();
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!in) throw IoError("truncated PPM: " + path.string());
  Matrix m(static_cast<Index>(w) * h, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) m.data()[i] = buf[i] / 255.0;
  return FeatureMap(h, w, std::move(m));
}

void write_pgm(const std::filesystem::path& path, const Matrix& gray) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << gray.cols() << " " << gray.rows() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(gray.size()));
  for (Index i = 0; i < gray.size(); ++i) buf[static_cast<std::size_t>(i)] = to_byte(gray.data()[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

FeatureMap crop_resize(const FeatureMap& image, const Box& box, int size) {
  if (!box.valid()) throw ValidationError("crop_resize: empty box");
  const int c = image.channels();
  Matrix out(static_cast<Index>(size) * size, c);
  const double sx = box.width() / size, sy = box.height() / size;
  for (int y = 0; y < size; ++y) {
    const double fy = std::clamp(box.y1 + (y + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, image.height() - 1);
    const double ly = fy - y0;
    for (int x = 0; x < size; ++x) {
      const double fx = std::clamp(box.x1 + (x + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, image.width() - 1);
      const double lx = fx - x0;
      const auto& v = image.values();
      const Index w = image.width();
      out.row(static_cast<Index>(y) * size + x) =
          (1 - ly) * ((1 - lx) * v.row(y0 * w + x0) + lx * v.row(y0 * w + x1)) +
          ly * ((1 - lx) * v.row(y1 * w + x0) + lx * v.row(y1 * w + x1));
    }
  }
  return FeatureMap(size, size, std::move(out));
}

Matrix upsample_nearest(const Matrix& grid, int out_h, int out_w) {
  Matrix out(out_h, out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x)
      out(y, x) = grid(static_cast<Index>(y) * grid.rows() / out_h, static_cast<Index>(x) * grid.cols() / out_w);
  return out;
}

Matrix normalize_unit(const Matrix& grid) {
  if (grid.size() == 0) return grid;
  const double lo = grid.minCoeff(), hi = grid.maxCoeff();
  if (!(hi > lo)) return Matrix::Zero(grid.rows(), grid.cols());
  return ((grid.array() - lo) / (hi - lo)).matrix();
}

}  // namespace fpd
