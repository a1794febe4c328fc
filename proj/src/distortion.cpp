#include "kd/distortion.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <map>
#include <string>

#include "kd/error.hpp"

namespace kd {

namespace {

using Triplet = Eigen::Triplet<double>;

// Column coordinate in [-1, 1], measured from the image center.
double coord(int index, int extent) {
  return (index - (extent - 1) / 2.0) / (extent / 2.0);
}

Eigen::SparseMatrix<double> assemble(int dim, std::vector<Triplet>& triplets) {
  Eigen::SparseMatrix<double> m(dim, dim);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  return m;
}

}  // namespace

std::vector<DistortionOperator> build_operators(int width, int height,
                                                double step) {
  if (width < 3 || height < 3) {
    throw SizeError("distortion operators need width and height >= 3, got " +
                    std::to_string(width) + "x" + std::to_string(height));
  }
  if (!(step > 0.0) || step > 1.0) {
    throw ConfigError("operator step must be in (0, 1]");
  }

  const int dim = width * height;
  auto at = [width](int r, int c) { return r * width + c; };

  std::vector<Triplet> dx, dy, xexp, yexp, rot;
  for (int r = 0; r < height; ++r) {
    const double v = coord(r, height);
    for (int c = 0; c < width; ++c) {
      const double u = coord(c, width);
      const int row = at(r, c);
      if (c >= 1 && c + 1 < width) {
        // d/dx taps
        dx.emplace_back(row, at(r, c + 1), 0.5 * step);
        dx.emplace_back(row, at(r, c - 1), -0.5 * step);
        xexp.emplace_back(row, at(r, c + 1), 0.5 * step * u);
        xexp.emplace_back(row, at(r, c - 1), -0.5 * step * u);
        rot.emplace_back(row, at(r, c + 1), -0.5 * step * v);
        rot.emplace_back(row, at(r, c - 1), 0.5 * step * v);
      }
      if (r >= 1 && r + 1 < height) {
        // d/dy taps
        dy.emplace_back(row, at(r + 1, c), 0.5 * step);
        dy.emplace_back(row, at(r - 1, c), -0.5 * step);
        yexp.emplace_back(row, at(r + 1, c), 0.5 * step * v);
        yexp.emplace_back(row, at(r - 1, c), -0.5 * step * v);
        rot.emplace_back(row, at(r + 1, c), 0.5 * step * u);
        rot.emplace_back(row, at(r - 1, c), -0.5 * step * u);
      }
    }
  }

  std::vector<DistortionOperator> ops;
  ops.push_back({DistortionMode::kXTranslation, assemble(dim, dx), step});
  ops.push_back({DistortionMode::kYTranslation, assemble(dim, dy), step});
  ops.push_back({DistortionMode::kXExpansion, assemble(dim, xexp), step});
  ops.push_back({DistortionMode::kYExpansion, assemble(dim, yexp), step});
  ops.push_back({DistortionMode::kRotation, assemble(dim, rot), step});
  return ops;
}

std::vector<std::array<int, 5>> monomial_exponents(int max_degree) {
  if (max_degree < 1) throw ConfigError("polynomial order must be >= 1");
  std::vector<std::array<int, 5>> tuples;
  for (int degree = 1; degree <= max_degree; ++degree) {
    // Enumerate tuples of the given total degree in lexicographic order.
    std::array<int, 5> t{};
    auto recurse = [&](auto&& self, int pos, int remaining) -> void {
      if (pos == 4) {
        t[4] = remaining;
        tuples.push_back(t);
        return;
      }
      for (int a = 0; a <= remaining; ++a) {
        t[pos] = a;
        self(self, pos + 1, remaining - a);
      }
    };
    recurse(recurse, 0, degree);
  }
  return tuples;
}

Eigen::MatrixXd build_distortion_matrix(
    const Image& center, const std::vector<DistortionOperator>& operators,
    int max_degree) {
  if (operators.empty()) throw ConfigError("no distortion operators given");
  const auto dim = center.size();
  if (operators[0].matrix.rows() != dim) {
    throw ShapeError("center length does not match operator dimension");
  }
  if (center.norm() == 0.0) throw DegeneracyError("kernel center is zero");

  const auto tuples = monomial_exponents(max_degree);
  const double drop_threshold = 1e-14 * center.norm();

  // Columns share work through a memo: strip one application of the
  // leftmost operator (mode 5 acts first, mode 1 last).
  std::map<std::array<int, 5>, Eigen::VectorXd> memo;
  std::vector<Eigen::VectorXd> kept;
  kept.reserve(tuples.size());
  for (const auto& t : tuples) {
    int j = 0;
    while (t[j] == 0) ++j;
    auto parent = t;
    parent[j] -= 1;
    const Eigen::VectorXd& base =
        (parent == std::array<int, 5>{}) ? center : memo.at(parent);
    Eigen::VectorXd col = operators[j].matrix * base;
    double norm = col.norm();
    if (norm > drop_threshold) {
      kept.push_back(col / norm);
    }
    memo.emplace(t, std::move(col));
  }
  if (kept.empty()) {
    throw DegeneracyError("every distortion column is zero");
  }

  Eigen::MatrixXd a(dim, kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) a.col(i) = kept[i];
  return a;
}

void DistortionBasis::validate() const {
  if (center.size() != u.rows() || x_tilde.size() != u.rows()) {
    throw IntegrityError("basis fields disagree on dimension");
  }
  Eigen::MatrixXd gram = u.transpose() * u;
  gram.diagonal().array() -= 1.0;
  if (gram.cwiseAbs().maxCoeff() > 1e-10) {
    throw IntegrityError("basis columns are not orthonormal");
  }
  if (std::abs(x_tilde.norm() - 1.0) > 1e-12) {
    throw IntegrityError("amplitude direction is not unit norm");
  }
  if ((u.transpose() * x_tilde).cwiseAbs().maxCoeff() > 1e-10) {
    throw IntegrityError("amplitude direction not orthogonal to basis");
  }
}

DistortionBasis distortion_basis(const Image& center,
                                 const Eigen::MatrixXd& distortion_matrix,
                                 int q) {
  if (center.size() != distortion_matrix.rows()) {
    throw ShapeError("center length does not match distortion matrix");
  }
  if (q < 1 || q > distortion_matrix.cols() ||
      static_cast<Eigen::Index>(q) > center.size() - 1) {
    throw ConfigError("subspace dimension q=" + std::to_string(q) +
                      " must be in [1, min(" +
                      std::to_string(distortion_matrix.cols()) + ", " +
                      std::to_string(center.size() - 1) + ")]");
  }

  Eigen::BDCSVD<Eigen::MatrixXd> svd(distortion_matrix, Eigen::ComputeThinU);
  DistortionBasis basis;
  basis.u = svd.matrixU().leftCols(q);
  basis.center = center;

  Eigen::VectorXd residual = center - basis.u * (basis.u.transpose() * center);
  double norm = residual.norm();
  if (norm < 1e-10) {
    throw DegeneracyError("center lies inside its own distortion subspace");
  }
  basis.x_tilde = residual / norm;
  return basis;
}

DistortionBasis build_basis(const Image& center,
                            const std::vector<DistortionOperator>& operators,
                            int max_degree, int q) {
  return distortion_basis(
      center, build_distortion_matrix(center, operators, max_degree), q);
}

}  // namespace kd
