#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace kd {

/// One flattened grayscale character, row-major, pixel values in [0, 1].
using Image = Eigen::VectorXd;

/// A labeled collection of equally-sized images.
struct LabeledImageSet {
  std::vector<Image> images;
  std::vector<int> labels;
  int width = 0;
  int height = 0;
  int class_count = 0;

  std::size_t size() const { return images.size(); }
  int dimension() const { return width * height; }

  /// Throws if any structural invariant is violated (length, pixel
  /// range, label range).
  void validate() const;
};

/// Reads an IDX image/label file pair (big-endian headers, magic
/// 0x00000803 for images and 0x00000801 for labels). Pixels are scaled
/// from [0,255] bytes to [0,1] by division by 255.
LabeledImageSet load_idx(const std::filesystem::path& image_path,
                         const std::filesystem::path& label_path);

/// Reads `label p1 ... pD` text rows, one sample per line, pixels
/// already in [0,1]. '#'-prefixed and blank lines are ignored.
LabeledImageSet load_delimited(const std::filesystem::path& path, int width,
                               int height);

/// Embeds every image centrally in a zero frame `margin` pixels wide on
/// each side.
LabeledImageSet pad_margin(const LabeledImageSet& set, int margin);

/// Draws exactly `per_class` samples of every class without replacement
/// using a seeded deterministic generator. First result: the subset;
/// second: the remainder. Same seed, same split.
std::pair<LabeledImageSet, LabeledImageSet> stratified_sample(
    const LabeledImageSet& set, int per_class, std::uint64_t seed);

/// Order-sensitive 64-bit FNV-1a hash over dimensions, labels and pixel
/// bytes; used to stamp model manifests with the data they were built from.
std::uint64_t fingerprint(const LabeledImageSet& set);

}  // namespace kd
