#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "kd/density.hpp"
#include "kd/distortion.hpp"
#include "kd/error.hpp"
#include "support/test_util.hpp"

using namespace kd;

namespace {

// Independent dense evaluation: factor R and evaluate the Gaussian
// log-density the long way.
double dense_log_density(const Image& x, const Image& center,
                         const Eigen::MatrixXd& r) {
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  REQUIRE(llt.info() == Eigen::Success);
  Eigen::VectorXd d = x - center;
  Eigen::VectorXd solved = llt.solve(d);
  double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (d.dot(solved) + log_det +
                 d.size() * std::log(2.0 * std::numbers::pi));
}

DistortionBasis random_basis(std::mt19937_64& rng, int side, int q,
                             Image* center_out = nullptr) {
  Image center = kdtest::smooth_random_image(rng, side, side);
  auto ops = build_operators(side, side, 0.5);
  if (center_out) *center_out = center;
  return build_basis(center, ops, 2, q);
}

}  // namespace

TEST_CASE("log_kernel_density at the center is pure normalization") {
  std::mt19937_64 rng(21);
  Image center;
  DistortionBasis basis = random_basis(rng, 8, 5, &center);
  VarianceParams v{0.9, 0.03};

  const int dim = 64, q = 5;
  double expected = -0.5 * ((q + 1) * std::log(v.sigma_d2) +
                            (dim - q - 1) * std::log(v.sigma_o2) +
                            dim * std::log(2.0 * std::numbers::pi));
  CHECK(log_kernel_density(center, basis, v) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log_kernel_density matches the dense covariance oracle") {
  std::mt19937_64 rng(22);
  VarianceParams v{0.9, 0.03};
  for (int trial = 0; trial < 25; ++trial) {
    Image center;
    DistortionBasis basis = random_basis(rng, 8, 5, &center);
    Eigen::MatrixXd r = dense_covariance_oracle(basis, v);
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    CHECK(log_kernel_density(x, basis, v) ==
          doctest::Approx(dense_log_density(x, center, r)).epsilon(1e-10));
  }
}

TEST_CASE("dense_covariance_oracle has the stated eigenstructure") {
  std::mt19937_64 rng(23);
  DistortionBasis basis = random_basis(rng, 8, 5);
  VarianceParams v{0.8, 0.05};
  Eigen::MatrixXd r = dense_covariance_oracle(basis, v);
  const int dim = 64, q = 5;

  CHECK(r.trace() ==
        doctest::Approx((q + 1) * v.sigma_d2 + (dim - q - 1) * v.sigma_o2)
            .epsilon(1e-9));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eigen(r);
  double log_det = eigen.eigenvalues().array().log().sum();
  CHECK(log_det == doctest::Approx((q + 1) * std::log(v.sigma_d2) +
                                   (dim - q - 1) * std::log(v.sigma_o2))
                       .epsilon(1e-8));

  CHECK((r * basis.x_tilde - v.sigma_d2 * basis.x_tilde).cwiseAbs().maxCoeff() <
        1e-9);
}

TEST_CASE("equal variances collapse to the isotropic Gaussian") {
  std::mt19937_64 rng(24);
  VarianceParams v{0.25, 0.25};
  for (int trial = 0; trial < 10; ++trial) {
    Image center;
    DistortionBasis basis = random_basis(rng, 8, 5, &center);
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    double d2 = (x - center).squaredNorm();
    double iso = -0.5 * (d2 / 0.25 + 64 * std::log(2 * std::numbers::pi * 0.25));
    CHECK(std::abs(log_kernel_density(x, basis, v) - iso) < 1e-8);
  }
}

TEST_CASE("energy decomposition: explained plus residual equals total") {
  std::mt19937_64 rng(25);
  Image center;
  DistortionBasis basis = random_basis(rng, 8, 6, &center);
  for (int trial = 0; trial < 50; ++trial) {
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    Eigen::VectorXd d = x - center;
    double e_d = (basis.u.transpose() * d).squaredNorm() +
                 std::pow(basis.x_tilde.dot(d), 2);
    double frame_energy =
        e_d + (d - basis.u * (basis.u.transpose() * d) -
               basis.x_tilde * basis.x_tilde.dot(d))
                  .squaredNorm();
    CHECK(std::abs(frame_energy - d.squaredNorm()) <=
          1e-8 * d.squaredNorm());
  }
}

TEST_CASE("density is invariant to rotations inside the subspace") {
  std::mt19937_64 rng(26);
  Image center;
  DistortionBasis basis = random_basis(rng, 8, 6, &center);
  VarianceParams v{0.9, 0.03};

  Eigen::MatrixXd noise(6, 6);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c)
      noise(r, c) = (rng() >> 11) * 0x1.0p-53 - 0.5;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(noise);
  Eigen::MatrixXd rotation = qr.householderQ();

  DistortionBasis rotated = basis;
  rotated.u = basis.u * rotation;

  for (int trial = 0; trial < 20; ++trial) {
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    CHECK(std::abs(log_kernel_density(x, basis, v) -
                   log_kernel_density(x, rotated, v)) < 1e-9);
  }
}

TEST_CASE("variance penalties act on the matching subspaces") {
  std::mt19937_64 rng(27);
  Image center;
  DistortionBasis basis = random_basis(rng, 8, 5, &center);

  // displacement fully inside the distortion subspace, large enough that
  // the quadratic term dominates the determinant term on (0, 1]
  Eigen::VectorXd a = Eigen::VectorXd::Zero(5);
  a[0] = 2.0;
  a[2] = -2.2;
  Image inside = center + basis.u * a;

  double previous = log_kernel_density(inside, basis, {1.0, 0.05});
  for (double sigma_d2 : {0.5, 0.2, 0.05, 0.01}) {
    double current = log_kernel_density(inside, basis, {sigma_d2, 0.05});
    CHECK(current < previous);
    previous = current;
  }

  // displacement orthogonal to [x_tilde, U]: only the determinant term
  // responds to sigma_d2
  Image probe = kdtest::smooth_random_image(rng, 8, 8);
  Eigen::VectorXd d = probe - center;
  d -= basis.u * (basis.u.transpose() * d);
  d -= basis.x_tilde * basis.x_tilde.dot(d);
  Image orthogonal = center + d;

  double lo = log_kernel_density(orthogonal, basis, {0.3, 0.05});
  double hi = log_kernel_density(orthogonal, basis, {0.9, 0.05});
  double determinant_shift = -0.5 * (5 + 1) * (std::log(0.3) - std::log(0.9));
  CHECK(lo - hi == doctest::Approx(determinant_shift).epsilon(1e-9));
}

TEST_CASE("density integrates to 1 (importance-sampled self-check)") {
  std::mt19937_64 rng(28);
  Image center;
  // N = 4 keeps the dense factorization cheap
  DistortionBasis basis = random_basis(rng, 4, 3, &center);
  VarianceParams v{0.7, 0.08};
  Eigen::MatrixXd r = dense_covariance_oracle(basis, v);
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  REQUIRE(llt.info() == Eigen::Success);
  Eigen::MatrixXd chol = llt.matrixL();

  auto normal = [&rng]() {
    double u1 = std::max((rng() >> 11) * 0x1.0p-53, 1e-12);
    double u2 = (rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2 * std::numbers::pi * u2);
  };

  double mean_ratio = 0;
  const int samples = 4000;
  for (int s = 0; s < samples; ++s) {
    Eigen::VectorXd z(16);
    for (int i = 0; i < 16; ++i) z[i] = normal();
    Image x = center + chol * z;
    double log_p = log_kernel_density(x, basis, v);
    double log_q = dense_log_density(x, center, r);
    mean_ratio += std::exp(log_p - log_q);
  }
  mean_ratio /= samples;
  CHECK(mean_ratio == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("log_mixture reduces, collapses duplicates, and matches brute force") {
  std::mt19937_64 rng(29);
  auto ops = build_operators(8, 8, 0.5);
  VarianceParams v{0.9, 0.05};

  auto make_kernel = [&](double weight) {
    Kernel k;
    k.basis = build_basis(kdtest::smooth_random_image(rng, 8, 8), ops, 2, 5);
    k.weight = weight;
    return k;
  };

  SUBCASE("single kernel") {
    ClassModel model;
    model.variances = v;
    model.kernels.push_back(make_kernel(1.0));
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    CHECK(log_mixture(x, model) ==
          log_kernel_density(x, model.kernels[0].basis, v));
  }
  SUBCASE("duplicate kernels at half weight collapse") {
    ClassModel model;
    model.variances = v;
    model.kernels.push_back(make_kernel(0.5));
    model.kernels.push_back(model.kernels[0]);
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    CHECK(log_mixture(x, model) ==
          doctest::Approx(log_kernel_density(x, model.kernels[0].basis, v))
              .epsilon(1e-12));
  }
  SUBCASE("ten kernels match an extended-precision direct sum") {
    ClassModel model;
    model.variances = v;
    double weight_sum = 0;
    std::vector<double> raw;
    for (int i = 0; i < 10; ++i) {
      raw.push_back(0.3 + (rng() >> 11) * 0x1.0p-53);
      weight_sum += raw.back();
    }
    for (int i = 0; i < 10; ++i) model.kernels.push_back(make_kernel(raw[i] / weight_sum));

    for (int trial = 0; trial < 10; ++trial) {
      Image x = kdtest::smooth_random_image(rng, 8, 8);
      long double direct = 0;
      for (const Kernel& k : model.kernels) {
        direct += static_cast<long double>(k.weight) *
                  std::exp(static_cast<long double>(
                      log_kernel_density(x, k.basis, v)));
      }
      double expected = static_cast<double>(std::log(direct));
      CHECK(log_mixture(x, model) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
  SUBCASE("zero-weight kernels are skipped; all-zero weights are an error") {
    ClassModel model;
    model.variances = v;
    model.kernels.push_back(make_kernel(1.0));
    model.kernels.push_back(make_kernel(0.0));
    Image x = kdtest::smooth_random_image(rng, 8, 8);
    CHECK(log_mixture(x, model) ==
          log_kernel_density(x, model.kernels[0].basis, v));

    model.kernels[0].weight = 0;
    CHECK_THROWS_AS(log_mixture(x, model), ModelError);
  }
}

TEST_CASE("shape and parameter validation") {
  std::mt19937_64 rng(30);
  DistortionBasis basis = random_basis(rng, 8, 5);
  CHECK_THROWS_AS(log_kernel_density(Image::Zero(10).eval(), basis,
                                     VarianceParams{0.5, 0.5}),
                  ShapeError);
  CHECK_THROWS_AS(log_kernel_density(Image::Zero(64).eval(), basis,
                                     VarianceParams{0.0, 0.5}),
                  ConfigError);

  // the dense oracle stays a small-dimension reference path
  std::mt19937_64 rng2(31);
  Image big_center = kdtest::smooth_random_image(rng2, 16, 16);
  auto big_ops = build_operators(16, 16, 0.5);
  DistortionBasis big = build_basis(big_center, big_ops, 1, 4);
  CHECK_THROWS_AS(dense_covariance_oracle(big, VarianceParams{0.5, 0.5}),
                  ConfigError);
}
