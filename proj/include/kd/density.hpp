#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <vector>

#include "kd/distortion.hpp"
#include "kd/image_set.hpp"

namespace kd {

/// The two shared variances of the structured covariance: sigma_d2 on
/// the explained (distortion + amplitude) subspace, sigma_o2 on the
/// orthogonal remainder.
struct VarianceParams {
  double sigma_d2 = 0;
  double sigma_o2 = 0;

  void validate() const;
};

/// Log density of x under the structured Gaussian centered at
/// basis.center. Computed from subspace energies only, O(dim * q):
/// never materializes the covariance.
double log_kernel_density(const Image& x, const DistortionBasis& basis,
                          const VarianceParams& v);

/// Explicit covariance sigma_d2 (U U' + xt xt') + sigma_o2 (I - U U' -
/// xt xt'). Test oracle; only sensible for small dimensions.
Eigen::MatrixXd dense_covariance_oracle(const DistortionBasis& basis,
                                        const VarianceParams& v);

/// One mixture component: subspace data plus mixture weight and the
/// index of the training sample the center came from (-1 if unknown).
struct Kernel {
  DistortionBasis basis;
  double weight = 0;
  std::int64_t sample_id = -1;
};

/// One class's mixture of structured Gaussians.
struct ClassModel {
  int class_index = 0;
  std::vector<Kernel> kernels;
  VarianceParams variances;

  int dimension() const {
    return kernels.empty() ? 0 : kernels.front().basis.dimension();
  }
  int subspace_dim() const {
    return kernels.empty() ? 0 : kernels.front().basis.subspace_dim();
  }

  /// Weights sum to 1 (1e-9), all nonnegative, uniform q and dimension.
  void validate() const;
};

/// log sum_k w_k p_k(x), max-shifted for stability; zero-weight kernels
/// are skipped.
double log_mixture(const Image& x, const ClassModel& model);

}  // namespace kd
