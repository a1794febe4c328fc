#include "kd/persist.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "kd/error.hpp"
#include "kd/text.hpp"

namespace kd {

namespace {

constexpr int kFormatVersion = 1;

void put_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char bytes[4] = {
      static_cast<unsigned char>(v),
      static_cast<unsigned char>(v >> 8),
      static_cast<unsigned char>(v >> 16),
      static_cast<unsigned char>(v >> 24),
  };
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t get_u32_le(std::istream& in, const std::string& context) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw IntegrityError(context + ": truncated array header");
  return std::uint32_t(bytes[0]) | (std::uint32_t(bytes[1]) << 8) |
         (std::uint32_t(bytes[2]) << 16) | (std::uint32_t(bytes[3]) << 24);
}

void put_f64_le(std::ostream& out, const double* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(n * sizeof(double)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      auto bits = std::bit_cast<std::uint64_t>(data[i]);
      unsigned char bytes[8];
      for (int b = 0; b < 8; ++b) {
        bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
      }
      out.write(reinterpret_cast<const char*>(bytes), 8);
    }
  }
}

void get_f64_le(std::istream& in, double* data, std::size_t n,
                const std::string& context) {
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(data),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IntegrityError(context + ": truncated array data");
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      unsigned char bytes[8];
      in.read(reinterpret_cast<char*>(bytes), 8);
      if (!in) throw IntegrityError(context + ": truncated array data");
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= std::uint64_t(bytes[b]) << (8 * b);
      data[i] = std::bit_cast<double>(bits);
    }
  }
}

// Row-major on disk; Eigen matrices are column-major in memory.
void write_array(std::ostream& out, const Eigen::MatrixXd& a) {
  put_u32_le(out, static_cast<std::uint32_t>(a.rows()));
  put_u32_le(out, static_cast<std::uint32_t>(a.cols()));
  if (a.cols() == 1) {
    put_f64_le(out, a.data(), static_cast<std::size_t>(a.rows()));
  } else {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
        row_major = a;
    put_f64_le(out, row_major.data(), static_cast<std::size_t>(a.size()));
  }
}

Eigen::MatrixXd read_array(std::istream& in, std::uint32_t expect_rows,
                           std::uint32_t expect_cols,
                           const std::string& context) {
  std::uint32_t rows = get_u32_le(in, context);
  std::uint32_t cols = get_u32_le(in, context);
  if (rows != expect_rows || cols != expect_cols) {
    throw IntegrityError(context + ": array is " + std::to_string(rows) + "x" +
                         std::to_string(cols) + ", manifest implies " +
                         std::to_string(expect_rows) + "x" +
                         std::to_string(expect_cols));
  }
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> a(
      rows, cols);
  get_f64_le(in, a.data(), std::size_t(rows) * cols, context);
  return a;
}

std::filesystem::path class_file(const std::filesystem::path& dir, int m) {
  return dir / ("class_" + std::to_string(m) + ".bin");
}

}  // namespace

void save_model(const Classifier& classifier, const ModelMeta& meta,
                const std::filesystem::path& dir) {
  classifier.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create model directory '" + dir.string() +
                  "': " + ec.message());
  }

  const int m = classifier.class_count();
  const int dim = classifier.dimension();
  const int q = classifier.subspace_dim();
  const int k = static_cast<int>(classifier.models.front().kernels.size());
  for (const ClassModel& model : classifier.models) {
    if (static_cast<int>(model.kernels.size()) != k) {
      throw ModelError("all classes must hold the same kernel count");
    }
  }

  const auto manifest_path = dir / "manifest.txt";
  std::ofstream manifest(manifest_path);
  if (!manifest) {
    throw IoError("cannot write '" + manifest_path.string() + "'");
  }
  manifest << "format_version = " << kFormatVersion << "\n";
  manifest << "classes = " << m << "\n";
  manifest << "dimension = " << dim << "\n";
  manifest << "kernels_per_class = " << k << "\n";
  manifest << "subspace_dim = " << q << "\n";
  manifest << "poly_order = " << meta.poly_order << "\n";
  manifest << "sigma_d2 = "
           << format_double(classifier.models.front().variances.sigma_d2)
           << "\n";
  manifest << "sigma_o2 = "
           << format_double(classifier.models.front().variances.sigma_o2)
           << "\n";
  manifest << "seed = " << meta.seed << "\n";
  manifest << "dataset_fingerprint = " << meta.dataset_fingerprint << "\n";
  for (int c = 0; c < m; ++c) {
    manifest << "log_prior_" << c << " = "
             << format_double(classifier.log_priors[c]) << "\n";
  }
  for (int c = 0; c < m; ++c) {
    manifest << "kernel_ids_" << c << " =";
    for (const Kernel& kernel : classifier.models[c].kernels) {
      manifest << ' ' << kernel.sample_id;
    }
    manifest << "\n";
  }
  if (!meta.note.empty()) manifest << "note = " << meta.note << "\n";
  manifest.flush();
  if (!manifest.good()) {
    throw IoError("failed writing '" + manifest_path.string() + "'");
  }

  for (int c = 0; c < m; ++c) {
    const auto path = class_file(dir, c);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    const ClassModel& model = classifier.models[c];
    Eigen::MatrixXd weights(k, 1);
    for (int i = 0; i < k; ++i) {
      const Kernel& kernel = model.kernels[i];
      write_array(out, kernel.basis.center);
      write_array(out, kernel.basis.u);
      write_array(out, kernel.basis.x_tilde);
      weights(i, 0) = kernel.weight;
    }
    write_array(out, weights);
    out.flush();
    if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
  }
}

SavedModel load_model(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream manifest(manifest_path);
  if (!manifest) {
    throw IoError("cannot open '" + manifest_path.string() + "'");
  }

  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(manifest, line)) {
    if (is_comment_or_blank(line)) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("'" + manifest_path.string() +
                        "': manifest line without '=': " + line);
    }
    auto trim = [](std::string s) {
      auto b = s.find_first_not_of(" \t\r");
      auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }

  auto require = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw IntegrityError("manifest is missing key '" + key + "'");
    }
    return it->second;
  };

  const auto version = parse_int(require("format_version"), "format_version");
  if (version != kFormatVersion) {
    throw VersionError("unsupported model format version " +
                       std::to_string(version));
  }
  const int m = static_cast<int>(parse_int(require("classes"), "classes"));
  const int dim = static_cast<int>(parse_int(require("dimension"), "dimension"));
  const int k = static_cast<int>(
      parse_int(require("kernels_per_class"), "kernels_per_class"));
  const int q =
      static_cast<int>(parse_int(require("subspace_dim"), "subspace_dim"));
  if (m < 1 || dim < 1 || k < 1 || q < 1) {
    throw IntegrityError("manifest declares non-positive dimensions");
  }

  VarianceParams variances;
  variances.sigma_d2 = parse_double(require("sigma_d2"), "sigma_d2");
  variances.sigma_o2 = parse_double(require("sigma_o2"), "sigma_o2");

  SavedModel result;
  result.meta.seed = parse_uint(require("seed"), "seed");
  result.meta.dataset_fingerprint =
      parse_uint(require("dataset_fingerprint"), "dataset_fingerprint");
  result.meta.poly_order =
      static_cast<int>(parse_int(require("poly_order"), "poly_order"));
  if (auto it = kv.find("note"); it != kv.end()) result.meta.note = it->second;

  result.classifier.log_priors.resize(m);
  for (int c = 0; c < m; ++c) {
    const std::string key = "log_prior_" + std::to_string(c);
    result.classifier.log_priors[c] = parse_double(require(key), key);
  }

  for (int c = 0; c < m; ++c) {
    const std::string ctx = "class " + std::to_string(c);
    std::vector<std::int64_t> ids;
    {
      const std::string key = "kernel_ids_" + std::to_string(c);
      for (auto field : split_fields(require(key))) {
        ids.push_back(parse_int(field, key));
      }
      if (static_cast<int>(ids.size()) != k) {
        throw IntegrityError(ctx + ": manifest lists " +
                             std::to_string(ids.size()) + " kernel ids, not " +
                             std::to_string(k));
      }
    }

    const auto path = class_file(dir, c);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");

    ClassModel model;
    model.class_index = c;
    model.variances = variances;
    model.kernels.reserve(k);
    for (int i = 0; i < k; ++i) {
      Kernel kernel;
      kernel.sample_id = ids[i];
      kernel.basis.center = read_array(in, dim, 1, ctx);
      kernel.basis.u = read_array(in, dim, q, ctx);
      kernel.basis.x_tilde = read_array(in, dim, 1, ctx);
      try {
        kernel.basis.validate();
      } catch (const IntegrityError& e) {
        throw IntegrityError(ctx + ", kernel " + std::to_string(i) + ": " +
                             e.what());
      }
      model.kernels.push_back(std::move(kernel));
    }
    Eigen::MatrixXd weights = read_array(in, k, 1, ctx);
    for (int i = 0; i < k; ++i) model.kernels[i].weight = weights(i, 0);
    if (in.peek() != std::char_traits<char>::eof()) {
      throw IntegrityError(ctx + ": trailing bytes after the weight array");
    }
    try {
      model.validate();
    } catch (const ModelError& e) {
      throw IntegrityError(ctx + ": " + e.what());
    }
    result.classifier.models.push_back(std::move(model));
  }

  try {
    result.classifier.validate();
  } catch (const ModelError& e) {
    throw IntegrityError(e.what());
  }
  return result;
}

}  // namespace kd
