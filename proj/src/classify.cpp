#include "kd/classify.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "kd/error.hpp"
#include "kd/parallel.hpp"
#include "kd/text.hpp"

namespace kd {

void Classifier::validate() const {
  if (models.empty()) throw ModelError("classifier has no class models");
  if (log_priors.size() != static_cast<Eigen::Index>(models.size())) {
    throw ModelError("prior vector length does not match class count");
  }
  if (std::abs(log_priors.array().exp().sum() - 1.0) > 1e-9) {
    throw ModelError("class priors do not sum to 1");
  }
  const int dim = dimension();
  const int q = subspace_dim();
  for (const ClassModel& m : models) {
    m.validate();
    if (m.dimension() != dim || m.subspace_dim() != q) {
      throw ModelError("class models disagree on dimension or subspace size");
    }
  }
}

Eigen::VectorXd uniform_log_priors(int class_count) {
  if (class_count < 1) throw ConfigError("need at least one class");
  return Eigen::VectorXd::Constant(class_count,
                                   -std::log(double(class_count)));
}

Eigen::VectorXd empirical_log_priors(const std::vector<int>& labels,
                                     int class_count) {
  if (class_count < 1) throw ConfigError("need at least one class");
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(class_count);
  for (int l : labels) {
    if (l < 0 || l >= class_count) throw RangeError("label out of range");
    counts[l] += 1;
  }
  if ((counts.array() == 0).any()) {
    throw CapacityError("empirical priors need every class present");
  }
  return (counts / counts.sum()).array().log();
}

Eigen::VectorXd posterior(const Image& x, const Classifier& classifier) {
  const auto m = classifier.models.size();
  Eigen::VectorXd score(m);
  for (std::size_t i = 0; i < m; ++i) {
    score[i] = log_mixture(x, classifier.models[i]) + classifier.log_priors[i];
  }
  double shift = score.maxCoeff();
  Eigen::VectorXd p = (score.array() - shift).exp();
  return p / p.sum();
}

int predict(const Image& x, const Classifier& classifier) {
  Eigen::VectorXd p = posterior(x, classifier);
  int best = 0;
  for (Eigen::Index i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = static_cast<int>(i);
  }
  return best;
}

Metrics evaluate(const LabeledImageSet& test, const Classifier& classifier,
                 int threads) {
  const int m = classifier.class_count();
  for (int label : test.labels) {
    if (label < 0 || label >= m) {
      throw RangeError("test label " + std::to_string(label) +
                       " outside [0," + std::to_string(m) + ")");
    }
  }

  std::vector<int> predicted(test.size());
  parallel_for(
      test.size(),
      [&](std::size_t i) { predicted[i] = predict(test.images[i], classifier); },
      threads);

  Metrics metrics;
  metrics.confusion = Eigen::MatrixXi::Zero(m, m);
  for (std::size_t i = 0; i < test.size(); ++i) {
    metrics.confusion(test.labels[i], predicted[i]) += 1;
  }
  metrics.per_class_error.resize(m);
  for (int c = 0; c < m; ++c) {
    double row_total = metrics.confusion.row(c).sum();
    metrics.per_class_error[c] =
        row_total == 0 ? 0.0
                       : 1.0 - metrics.confusion(c, c) / row_total;
  }
  metrics.error_rate =
      test.size() == 0
          ? 0.0
          : 1.0 - double(metrics.confusion.trace()) / double(test.size());
  return metrics;
}

void write_metrics(std::ostream& out, const Metrics& metrics) {
  const auto m = metrics.confusion.rows();
  out << "samples = " << metrics.total() << "\n";
  out << "classes = " << m << "\n";
  out << "correct = " << metrics.confusion.trace() << "\n";
  out << "error_rate = " << format_double(metrics.error_rate) << "\n";
  out << "[per_class_error]\n";
  for (Eigen::Index c = 0; c < m; ++c) {
    out << c << " = " << format_double(metrics.per_class_error[c]) << "\n";
  }
  out << "[confusion]\n";
  for (Eigen::Index r = 0; r < m; ++r) {
    for (Eigen::Index c = 0; c < m; ++c) {
      if (c > 0) out << '\t';
      out << metrics.confusion(r, c);
    }
    out << '\n';
  }
}

std::string format_metrics(const Metrics& metrics) {
  std::ostringstream out;
  write_metrics(out, metrics);
  return out.str();
}

}  // namespace kd
