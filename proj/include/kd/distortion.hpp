#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <array>
#include <vector>

#include "kd/image_set.hpp"

namespace kd {

enum class DistortionMode {
  kXTranslation,
  kYTranslation,
  kXExpansion,
  kYExpansion,
  kRotation,
};

/// A first-order distortion perturbation: the sparse map applied to a
/// flattened image is the deviation from identity, already scaled by
/// `step`. Its operator norm stays below 1 for step in (0, 1].
struct DistortionOperator {
  DistortionMode mode;
  Eigen::SparseMatrix<double> matrix;
  double step = 0;
};

/// Builds the five perturbations (x/y translation, x/y expansion,
/// rotation) on a width x height grid.
///
/// Derivatives are central differences (f[i+1] - f[i-1]) / 2 evaluated
/// only where both neighbors exist; boundary rows/columns map to zero,
/// so constant images are annihilated exactly. Expansion and rotation
/// multiply by pixel coordinates measured from the image center and
/// normalized to [-1, 1].
std::vector<DistortionOperator> build_operators(int width, int height,
                                                double step);

/// Exponent tuples (a1..a5) with 1 <= sum <= max_degree, ordered by
/// total degree then lexicographically. For max_degree 3 there are 55.
std::vector<std::array<int, 5>> monomial_exponents(int max_degree);

/// One unit-normalized column per monomial P1^a1 ... P5^a5 applied to
/// `center` (mode 5 acts first); zero-norm columns are dropped.
Eigen::MatrixXd build_distortion_matrix(
    const Image& center, const std::vector<DistortionOperator>& operators,
    int max_degree);

/// Orthonormal subspace data attached to one kernel center: the top-q
/// left singular vectors of its distortion matrix plus the unit residual
/// of the center against that subspace.
struct DistortionBasis {
  Eigen::MatrixXd u;        // dimension x q, orthonormal columns
  Eigen::VectorXd x_tilde;  // unit amplitude direction, orthogonal to u
  Eigen::VectorXd center;   // the kernel center itself

  int subspace_dim() const { return static_cast<int>(u.cols()); }
  int dimension() const { return static_cast<int>(u.rows()); }

  /// Re-checks orthonormality and unit norms; throws kd::IntegrityError.
  void validate() const;
};

/// Truncated SVD of the distortion matrix plus Gram-Schmidt of the
/// center against it.
DistortionBasis distortion_basis(const Image& center,
                                 const Eigen::MatrixXd& distortion_matrix,
                                 int q);

/// Convenience: distortion matrix then basis in one call.
DistortionBasis build_basis(const Image& center,
                            const std::vector<DistortionOperator>& operators,
                            int max_degree, int q);

}  // namespace kd
