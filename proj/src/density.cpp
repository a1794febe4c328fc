#include "kd/density.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "kd/error.hpp"

namespace kd {

void VarianceParams::validate() const {
  if (!(sigma_d2 > 0.0) || !(sigma_o2 > 0.0)) {
    throw ConfigError("variances must be strictly positive");
  }
}

double log_kernel_density(const Image& x, const DistortionBasis& basis,
                          const VarianceParams& v) {
  v.validate();
  const auto dim = basis.u.rows();
  if (x.size() != dim) {
    throw ShapeError("sample length " + std::to_string(x.size()) +
                     " does not match kernel dimension " +
                     std::to_string(dim));
  }
  const auto q = basis.u.cols();

  Eigen::VectorXd d = x - basis.center;
  double explained = (basis.u.transpose() * d).squaredNorm();
  double amplitude = basis.x_tilde.dot(d);
  double e_d = explained + amplitude * amplitude;
  // The complement energy comes from subtraction; tiny negatives are
  // rounding noise and are clamped.
  double e_o = std::max(0.0, d.squaredNorm() - e_d);

  return -0.5 * (e_d / v.sigma_d2 + e_o / v.sigma_o2 +
                 (q + 1) * std::log(v.sigma_d2) +
                 (dim - q - 1) * std::log(v.sigma_o2) +
                 dim * std::log(2.0 * std::numbers::pi));
}

Eigen::MatrixXd dense_covariance_oracle(const DistortionBasis& basis,
                                        const VarianceParams& v) {
  v.validate();
  const auto dim = basis.u.rows();
  if (dim > 144) {
    throw ConfigError("dense covariance oracle is for reference checks at "
                      "small dimensions (<= 144), got " +
                      std::to_string(dim));
  }
  Eigen::MatrixXd explained = basis.u * basis.u.transpose() +
                              basis.x_tilde * basis.x_tilde.transpose();
  return v.sigma_d2 * explained +
         v.sigma_o2 * (Eigen::MatrixXd::Identity(dim, dim) - explained);
}

void ClassModel::validate() const {
  if (kernels.empty()) throw ModelError("class model has no kernels");
  variances.validate();
  const int dim = dimension();
  const int q = subspace_dim();
  double weight_sum = 0;
  for (const Kernel& k : kernels) {
    if (k.weight < 0) throw ModelError("negative kernel weight");
    weight_sum += k.weight;
    if (k.basis.dimension() != dim || k.basis.subspace_dim() != q) {
      throw ModelError("kernels disagree on dimension or subspace size");
    }
  }
  if (std::abs(weight_sum - 1.0) > 1e-9) {
    throw ModelError("kernel weights sum to " + std::to_string(weight_sum) +
                     ", expected 1");
  }
}

double log_mixture(const Image& x, const ClassModel& model) {
  if (model.kernels.empty()) throw ModelError("class model has no kernels");

  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> terms;
  terms.reserve(model.kernels.size());
  for (const Kernel& k : model.kernels) {
    if (k.weight == 0.0) continue;
    double t = std::log(k.weight) + log_kernel_density(x, k.basis, model.variances);
    terms.push_back(t);
    max_term = std::max(max_term, t);
  }
  if (terms.empty()) throw ModelError("all kernel weights are zero");

  double sum = 0;
  for (double t : terms) sum += std::exp(t - max_term);
  return max_term + std::log(sum);
}

}  // namespace kd
