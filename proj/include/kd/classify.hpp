#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

#include "kd/density.hpp"
#include "kd/image_set.hpp"

namespace kd {

/// MAP classifier: one mixture model per class plus log priors.
struct Classifier {
  std::vector<ClassModel> models;
  Eigen::VectorXd log_priors;

  int class_count() const { return static_cast<int>(models.size()); }
  int dimension() const {
    return models.empty() ? 0 : models.front().dimension();
  }
  int subspace_dim() const {
    return models.empty() ? 0 : models.front().subspace_dim();
  }

  /// Priors sum to 1 (1e-9); all models share dimension and q.
  void validate() const;
};

/// Uniform log priors over `class_count` classes.
Eigen::VectorXd uniform_log_priors(int class_count);

/// Empirical log priors from training labels (class frequency).
Eigen::VectorXd empirical_log_priors(const std::vector<int>& labels,
                                     int class_count);

/// Softmax over log_mixture + log_prior; sums to 1.
Eigen::VectorXd posterior(const Image& x, const Classifier& classifier);

/// Argmax of the posterior; ties go to the lowest class index.
int predict(const Image& x, const Classifier& classifier);

/// Evaluation summary over a labeled set.
struct Metrics {
  double error_rate = 0;
  Eigen::MatrixXi confusion;        // rows true, columns predicted
  Eigen::VectorXd per_class_error;  // fraction wrong per true class

  std::size_t total() const { return confusion.sum(); }
};

/// Classifies every sample (concurrently, deterministic aggregation) and
/// tallies the confusion matrix.
Metrics evaluate(const LabeledImageSet& test, const Classifier& classifier,
                 int threads = 0);

/// Key/value report plus a confusion-matrix block; bit-stable for
/// identical inputs.
void write_metrics(std::ostream& out, const Metrics& metrics);
std::string format_metrics(const Metrics& metrics);

}  // namespace kd
