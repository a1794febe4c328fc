#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "kd/classify.hpp"

namespace kd {

/// Provenance recorded next to the arrays; none of it affects inference.
struct ModelMeta {
  std::uint64_t seed = 0;
  std::uint64_t dataset_fingerprint = 0;
  int poly_order = 0;
  std::string note;  // optional free text, excluded from integrity checks
};

struct SavedModel {
  Classifier classifier;
  ModelMeta meta;
};

/// Writes `manifest.txt` plus one `class_<m>.bin` per class into `dir`.
/// Arrays are little-endian float64, row-major, each preceded by a
/// (rows, cols) pair of little-endian uint32. Identical classifiers
/// produce byte-identical containers.
void save_model(const Classifier& classifier, const ModelMeta& meta,
                const std::filesystem::path& dir);

/// Restores a container, re-validating every model invariant
/// (orthonormal bases, weight sums, dimension bookkeeping).
SavedModel load_model(const std::filesystem::path& dir);

}  // namespace kd
