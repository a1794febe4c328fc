#include "kd/pgm.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "kd/error.hpp"

namespace kd {

std::vector<std::uint8_t> rescale_to_bytes(const Eigen::VectorXd& values) {
  std::vector<std::uint8_t> bytes(values.size());
  const double lo = values.minCoeff();
  const double hi = values.maxCoeff();
  if (lo == hi) {
    std::fill(bytes.begin(), bytes.end(), std::uint8_t{128});
    return bytes;
  }
  const double scale = 255.0 / (hi - lo);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(
        std::lround((values[i] - lo) * scale));
  }
  return bytes;
}

void write_pgm(const std::filesystem::path& path, const Eigen::VectorXd& values,
               int width, int height) {
  if (static_cast<Eigen::Index>(width) * height != values.size()) {
    throw ShapeError("pixel count does not match " + std::to_string(width) +
                     "x" + std::to_string(height));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P5\n" << width << ' ' << height << "\n255\n";
  auto bytes = rescale_to_bytes(values);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path,
                                   int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string magic;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || maxval != 255 || width <= 0 || height <= 0) {
    throw FormatError("'" + path.string() + "' is not a maxval-255 P5 file");
  }
  in.get();  // single whitespace after the header
  std::vector<std::uint8_t> bytes(std::size_t(width) * height);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!in) throw IoError("'" + path.string() + "': truncated pixel data");
  return bytes;
}

}  // namespace kd
