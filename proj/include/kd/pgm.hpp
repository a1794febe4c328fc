#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace kd {

/// Rescales values linearly (min -> 0, max -> 255; a constant array maps
/// to 128 everywhere) and writes binary PGM: `P5`, dimensions, maxval
/// 255, then raw bytes row-major.
void write_pgm(const std::filesystem::path& path, const Eigen::VectorXd& values,
               int width, int height);

/// The byte image write_pgm would emit, for round-trip checks.
std::vector<std::uint8_t> rescale_to_bytes(const Eigen::VectorXd& values);

/// Reads a binary PGM written by write_pgm.
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path,
                                   int& width, int& height);

}  // namespace kd
