#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace kd {

/// Per-sample class posteriors from some classifier, aligned by sample
/// index to an evaluation set.
struct PosteriorTable {
  Eigen::MatrixXd rows;  // one row per sample, one column per class
  std::string source_name;

  std::size_t size() const { return rows.rows(); }
  int class_count() const { return static_cast<int>(rows.cols()); }

  /// Rows sum to 1 within 1e-6, entries nonnegative.
  void validate() const;
};

/// Reads `index p1 ... pM` rows ('#' comments allowed). Indices must
/// cover 0..expected_rows-1 exactly once, in any order.
PosteriorTable load_posterior_table(const std::filesystem::path& path,
                                    std::size_t expected_rows, int class_count);

/// Writes the same format, shortest-round-trip doubles.
void save_posterior_table(const std::filesystem::path& path,
                          const PosteriorTable& table);

/// Plain label list, one integer per line ('#' comments allowed).
std::vector<int> load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path,
                 const std::vector<int>& labels);

/// Trust the discriminative argmax when its confidence strictly exceeds
/// tau; otherwise fall back to the generative argmax.
int cascade(const Eigen::VectorXd& discriminative,
            const Eigen::VectorXd& generative, double tau);

/// Argmax of w * discriminative + (1 - w) * generative.
int stack(const Eigen::VectorXd& discriminative,
          const Eigen::VectorXd& generative, double w);

enum class HybridMode { kCascade, kStack };

/// Error rate of the combiner at one parameter value over aligned tables.
double hybrid_error(HybridMode mode, const PosteriorTable& discriminative,
                    const PosteriorTable& generative,
                    const std::vector<int>& labels, double parameter);

struct TuneResult {
  double parameter = 0;        // winning grid value
  double mean_fold_error = 0;  // its cross-validation score
  /// (parameter, mean fold error) for every grid point, in grid order.
  std::vector<std::pair<double, double>> grid_errors;
};

/// Evaluates every grid value by seeded stratified k-fold error and
/// returns the minimizer (ties: smallest parameter).
TuneResult tune(HybridMode mode, const PosteriorTable& discriminative,
                const PosteriorTable& generative,
                const std::vector<int>& labels,
                const std::vector<double>& grid, int folds,
                std::uint64_t seed);

/// Text report of a tuning run: grid table plus the chosen value.
void write_tune_report(std::ostream& out, const TuneResult& result);

/// Evenly spaced grid {0, step, 2 step, ..., 1}.
std::vector<double> default_parameter_grid(double step = 0.01);

}  // namespace kd
