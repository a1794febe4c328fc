#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kd/image_set.hpp"

namespace kdtest {

/// Smooth nonconstant random image with pixels in (0, 1): uniform noise
/// pushed through one 3x3 box-blur pass, then squeezed into [0.05, 0.95].
inline kd::Image smooth_random_image(std::mt19937_64& rng, int width,
                                     int height) {
  auto uniform = [&rng]() { return (rng() >> 11) * 0x1.0p-53; };
  Eigen::MatrixXd noise(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) noise(r, c) = uniform();
  }
  kd::Image img(width * height);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double sum = 0;
      int n = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
          sum += noise(rr, cc);
          ++n;
        }
      }
      img[r * width + c] = 0.05 + 0.9 * (sum / n);
    }
  }
  return img;
}

/// Writes `set` as an IDX image/label file pair (pixels quantized to
/// bytes by round(v * 255)). Returns the two paths.
inline std::pair<std::filesystem::path, std::filesystem::path> write_idx(
    const std::filesystem::path& dir, const std::string& stem,
    const kd::LabeledImageSet& set) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  fs::path image_path = dir / (stem + "-images-idx3-ubyte");
  fs::path label_path = dir / (stem + "-labels-idx1-ubyte");

  auto put_be = [](std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };

  std::ofstream images(image_path, std::ios::binary);
  put_be(images, 0x00000803);
  put_be(images, static_cast<std::uint32_t>(set.size()));
  put_be(images, static_cast<std::uint32_t>(set.height));
  put_be(images, static_cast<std::uint32_t>(set.width));
  for (const kd::Image& img : set.images) {
    for (Eigen::Index i = 0; i < img.size(); ++i) {
      images.put(static_cast<char>(std::lround(img[i] * 255.0)));
    }
  }
  images.close();

  std::ofstream labels(label_path, std::ios::binary);
  put_be(labels, 0x00000801);
  put_be(labels, static_cast<std::uint32_t>(set.size()));
  for (int l : set.labels) labels.put(static_cast<char>(l));
  labels.close();

  return {image_path, label_path};
}

/// Fresh scratch directory under the system temp root; unique per call.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("kd_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace kdtest
