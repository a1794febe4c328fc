#include "kd/image_set.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "kd/error.hpp"
#include "kd/text.hpp"

namespace kd {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const std::string& context) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw IoError(context + ": truncated header");
  return (std::uint32_t(bytes[0]) << 24) | (std::uint32_t(bytes[1]) << 16) |
         (std::uint32_t(bytes[2]) << 8) | std::uint32_t(bytes[3]);
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return in;
}

int infer_class_count(const std::vector<int>& labels) {
  int max_label = -1;
  for (int l : labels) max_label = std::max(max_label, l);
  return max_label + 1;
}

// Deterministic unbiased-enough bounded draw; avoids the
// implementation-defined std::uniform_int_distribution.
std::size_t bounded(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace

void LabeledImageSet::validate() const {
  if (images.size() != labels.size()) {
    throw ConsistencyError("image/label count mismatch");
  }
  const int dim = dimension();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].size() != dim) {
      throw ShapeError("image " + std::to_string(i) + " has length " +
                       std::to_string(images[i].size()) + ", expected " +
                       std::to_string(dim));
    }
    if ((images[i].array() < 0.0).any() || (images[i].array() > 1.0).any()) {
      throw RangeError("image " + std::to_string(i) +
                       " has a pixel outside [0,1]");
    }
    if (labels[i] < 0 || labels[i] >= class_count) {
      throw RangeError("label " + std::to_string(labels[i]) + " at sample " +
                       std::to_string(i) + " outside [0," +
                       std::to_string(class_count) + ")");
    }
  }
}

LabeledImageSet load_idx(const std::filesystem::path& image_path,
                         const std::filesystem::path& label_path) {
  auto image_in = open_binary(image_path);
  const std::string ictx = "'" + image_path.string() + "'";
  std::uint32_t magic = read_be_u32(image_in, ictx);
  if (magic != kImageMagic) {
    std::ostringstream msg;
    msg << ictx << ": bad image magic 0x" << std::hex << magic;
    throw FormatError(msg.str());
  }
  std::uint32_t count = read_be_u32(image_in, ictx);
  std::uint32_t rows = read_be_u32(image_in, ictx);
  std::uint32_t cols = read_be_u32(image_in, ictx);

  auto label_in = open_binary(label_path);
  const std::string lctx = "'" + label_path.string() + "'";
  std::uint32_t label_magic = read_be_u32(label_in, lctx);
  if (label_magic != kLabelMagic) {
    std::ostringstream msg;
    msg << lctx << ": bad label magic 0x" << std::hex << label_magic;
    throw FormatError(msg.str());
  }
  std::uint32_t label_count = read_be_u32(label_in, lctx);
  if (label_count != count) {
    throw ConsistencyError("image count " + std::to_string(count) +
                           " != label count " + std::to_string(label_count));
  }

  LabeledImageSet set;
  set.width = static_cast<int>(cols);
  set.height = static_cast<int>(rows);
  set.images.reserve(count);
  set.labels.reserve(count);

  const std::size_t pixels = std::size_t(rows) * cols;
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    image_in.read(reinterpret_cast<char*>(buf.data()),
                  static_cast<std::streamsize>(pixels));
    if (!image_in) {
      throw IoError(ictx + ": truncated at image " + std::to_string(i));
    }
    Image img(pixels);
    for (std::size_t p = 0; p < pixels; ++p) img[p] = buf[p] / 255.0;
    set.images.push_back(std::move(img));
  }
  std::vector<unsigned char> raw_labels(count);
  label_in.read(reinterpret_cast<char*>(raw_labels.data()), count);
  if (!label_in) throw IoError(lctx + ": truncated label data");
  for (std::uint32_t i = 0; i < count; ++i) {
    set.labels.push_back(raw_labels[i]);
  }
  set.class_count = infer_class_count(set.labels);
  set.validate();
  return set;
}

LabeledImageSet load_delimited(const std::filesystem::path& path, int width,
                               int height) {
  if (width <= 0 || height <= 0) {
    throw ConfigError("delimited load needs positive width and height");
  }
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  LabeledImageSet set;
  set.width = width;
  set.height = height;
  const std::size_t dim = std::size_t(width) * height;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    auto fields = split_fields(line);
    if (fields.size() != dim + 1) {
      throw FormatError("'" + path.string() + "' line " +
                        std::to_string(line_no) + ": expected " +
                        std::to_string(dim + 1) + " fields, found " +
                        std::to_string(fields.size()));
    }
    const std::string ctx =
        "'" + path.string() + "' line " + std::to_string(line_no);
    std::int64_t label = parse_int(fields[0], ctx);
    if (label < 0) throw RangeError(ctx + ": negative label");
    Image img(dim);
    for (std::size_t p = 0; p < dim; ++p) {
      double v = parse_double(fields[p + 1], ctx);
      if (v < -1e-9 || v > 1.0 + 1e-9) {
        throw RangeError(ctx + ": pixel " + std::to_string(p) + " = " +
                         format_double(v) + " outside [0,1]");
      }
      img[p] = std::clamp(v, 0.0, 1.0);
    }
    set.images.push_back(std::move(img));
    set.labels.push_back(static_cast<int>(label));
  }
  set.class_count = infer_class_count(set.labels);
  set.validate();
  return set;
}

LabeledImageSet pad_margin(const LabeledImageSet& set, int margin) {
  if (margin < 0) throw ConfigError("margin must be >= 0");
  if (margin == 0) return set;

  LabeledImageSet out;
  out.width = set.width + 2 * margin;
  out.height = set.height + 2 * margin;
  out.class_count = set.class_count;
  out.labels = set.labels;
  out.images.reserve(set.images.size());
  for (const Image& img : set.images) {
    Image padded = Image::Zero(std::size_t(out.width) * out.height);
    for (int r = 0; r < set.height; ++r) {
      for (int c = 0; c < set.width; ++c) {
        padded[std::size_t(r + margin) * out.width + (c + margin)] =
            img[std::size_t(r) * set.width + c];
      }
    }
    out.images.push_back(std::move(padded));
  }
  return out;
}

std::pair<LabeledImageSet, LabeledImageSet> stratified_sample(
    const LabeledImageSet& set, int per_class, std::uint64_t seed) {
  if (per_class < 0) throw ConfigError("per_class must be >= 0");

  std::vector<std::vector<std::size_t>> by_class(set.class_count);
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    by_class[set.labels[i]].push_back(i);
  }
  for (int c = 0; c < set.class_count; ++c) {
    if (by_class[c].size() < static_cast<std::size_t>(per_class)) {
      throw CapacityError("class " + std::to_string(c) + " has only " +
                          std::to_string(by_class[c].size()) +
                          " samples, need " + std::to_string(per_class));
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<char> selected(set.size(), 0);
  for (int c = 0; c < set.class_count; ++c) {
    auto& pool = by_class[c];
    // Partial Fisher-Yates: the first per_class entries form the draw.
    for (int k = 0; k < per_class; ++k) {
      std::size_t j = k + bounded(rng, pool.size() - k);
      std::swap(pool[k], pool[j]);
      selected[pool[k]] = 1;
    }
  }

  LabeledImageSet take, rest;
  take.width = rest.width = set.width;
  take.height = rest.height = set.height;
  take.class_count = rest.class_count = set.class_count;
  for (std::size_t i = 0; i < set.size(); ++i) {
    auto& dst = selected[i] ? take : rest;
    dst.images.push_back(set.images[i]);
    dst.labels.push_back(set.labels[i]);
  }
  return {std::move(take), std::move(rest)};
}

std::uint64_t fingerprint(const LabeledImageSet& set) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  std::int64_t header[3] = {set.width, set.height, set.class_count};
  mix(header, sizeof(header));
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::int32_t label = set.labels[i];
    mix(&label, sizeof(label));
    mix(set.images[i].data(), sizeof(double) * set.images[i].size());
  }
  return h;
}

}  // namespace kd
