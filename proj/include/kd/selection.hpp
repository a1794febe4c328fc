#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <utility>
#include <vector>

#include "kd/density.hpp"
#include "kd/distortion.hpp"
#include "kd/image_set.hpp"

namespace kd {

/// Settings for the iterative kernel-selection loop.
struct SelectionConfig {
  int kernel_count = 100;
  int iterations = 500;
  /// Scale C of the assignment probabilities exp(-distance / C);
  /// nullopt picks the mean of all finite pairwise distances.
  std::optional<double> assignment_scale;
  std::uint64_t seed = 0;
  int poly_order = 3;
  int subspace_dim = 40;
  VarianceParams variances{0.9, 0.03};
  int threads = 0;  // 0 = all hardware threads

  void validate() const;
};

/// What happened in one remove/add iteration.
struct IterationRecord {
  int iteration = 0;  // 1-based
  double q_m = 0;     // total log-likelihood after the swap
  std::int64_t removed_id = -1;
  std::int64_t added_id = -1;
  /// Candidates passed over because their basis construction degenerated.
  std::vector<std::int64_t> skipped;
  /// log_kernel_density evaluations spent in this iteration.
  std::size_t density_evals = 0;
};

struct SelectionTrace {
  double initial_q = 0;
  std::size_t initial_density_evals = 0;
  std::vector<std::int64_t> init_skipped;
  std::vector<IterationRecord> records;
};

/// Writes the trace as tab-delimited `iteration q_m removed_id added_id`
/// rows (iteration 0 carries the initial likelihood with ids -1);
/// skipped candidates appear as '#' comment lines.
void write_trace(std::ostream& out, const SelectionTrace& trace);
void write_trace(const std::filesystem::path& path,
                 const SelectionTrace& trace);

/// Per-sample, per-kernel likelihood cache. `shifted(i,k)` holds
/// exp(log p_k(x_i) - shift(i)) with shift(i) the row maximum, so row
/// normalization is exact and mixture sums never underflow to all-zero.
struct LikelihoodMatrix {
  Eigen::MatrixXd log_values;
  Eigen::MatrixXd shifted;
  Eigen::VectorXd shift;

  Eigen::Index rows() const { return log_values.rows(); }
  Eigen::Index cols() const { return log_values.cols(); }
  /// Recomputes shifted/shift after log_values changed.
  void rebuild_rows();
};

/// Evaluates every kernel of `model` on every sample.
LikelihoodMatrix likelihood_matrix(const std::vector<Image>& samples,
                                   const ClassModel& model, int threads = 0);

/// Row-normalizes the cache, sums column responsibilities, normalizes to
/// mixture weights.
Eigen::VectorXd kernel_weights(const LikelihoodMatrix& w);

/// Sum over samples of log_mixture, recomputed from scratch.
double total_log_likelihood(const std::vector<Image>& samples,
                            const ClassModel& model, int threads = 0);

/// Same quantity computed from the cache and an explicit weight vector.
double total_log_likelihood_cached(const LikelihoodMatrix& w,
                                   const Eigen::VectorXd& weights);

/// Index of the kernel whose removal (with weights renormalized) costs
/// the least total log-likelihood; ties go to the lowest index.
int most_expendable_kernel(const ClassModel& model, const LikelihoodMatrix& w);

/// Full symmetric Euclidean distance matrix with +infinity on the
/// diagonal (self-pairs are excluded everywhere downstream).
Eigen::MatrixXd pairwise_distances(const std::vector<Image>& samples,
                                   int threads = 0);

/// Mean of the finite entries; the "auto" assignment scale.
double mean_finite_distance(const Eigen::MatrixXd& distances);

/// Assignment value a_l for every sample: column sums of the
/// row-normalized exp(-D/C) matrix whose rows are the non-kernel samples.
Eigen::VectorXd addition_values(const Eigen::MatrixXd& distances,
                                const std::vector<std::int64_t>& kernel_ids,
                                double c, int threads = 0);

/// Non-kernel sample with the largest assignment value; ties go to the
/// lowest sample index.
std::int64_t best_addition(const Eigen::MatrixXd& distances,
                           const std::vector<std::int64_t>& kernel_ids,
                           double c, int threads = 0);

/// Runs the full loop: seeded random initialization, then
/// `config.iterations` remove/add swaps, recomputing weights each time.
std::pair<ClassModel, SelectionTrace> select_kernels(
    const std::vector<Image>& samples, const SelectionConfig& config,
    const std::vector<DistortionOperator>& operators, int class_index = 0);

}  // namespace kd
