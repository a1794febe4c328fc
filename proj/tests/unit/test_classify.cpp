#include <doctest.h>

#include <cmath>
#include <random>

#include "kd/classify.hpp"
#include "kd/distortion.hpp"
#include "kd/error.hpp"
#include "support/test_util.hpp"

using namespace kd;

namespace {

constexpr int kSide = 8;

Classifier toy_classifier(int classes, int kernels_per_class,
                          std::uint64_t seed, VarianceParams v = {0.9, 0.05}) {
  std::mt19937_64 rng(seed);
  auto ops = build_operators(kSide, kSide, 0.5);
  Classifier classifier;
  for (int m = 0; m < classes; ++m) {
    ClassModel model;
    model.class_index = m;
    model.variances = v;
    for (int k = 0; k < kernels_per_class; ++k) {
      Kernel kernel;
      kernel.basis =
          build_basis(kdtest::smooth_random_image(rng, kSide, kSide), ops, 2, 5);
      kernel.weight = 1.0 / kernels_per_class;
      kernel.sample_id = m * kernels_per_class + k;
      model.kernels.push_back(std::move(kernel));
    }
    classifier.models.push_back(std::move(model));
  }
  classifier.log_priors = uniform_log_priors(classes);
  return classifier;
}

}  // namespace

TEST_CASE("posterior is uniform when every class looks the same") {
  Classifier classifier = toy_classifier(1, 2, 61);
  // three identical class models
  classifier.models.push_back(classifier.models[0]);
  classifier.models.push_back(classifier.models[0]);
  classifier.models[1].class_index = 1;
  classifier.models[2].class_index = 2;
  classifier.log_priors = uniform_log_priors(3);
  classifier.validate();

  std::mt19937_64 rng(62);
  Image x = kdtest::smooth_random_image(rng, kSide, kSide);
  Eigen::VectorXd p = posterior(x, classifier);
  for (int m = 0; m < 3; ++m) {
    CHECK(p[m] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
  CHECK(std::abs(p.sum() - 1.0) < 1e-12);
}

TEST_CASE("two-class posterior ratio follows the likelihood gap") {
  Classifier classifier = toy_classifier(2, 2, 63);
  std::mt19937_64 rng(64);
  Image x = kdtest::smooth_random_image(rng, kSide, kSide);

  double g = log_mixture(x, classifier.models[0]) -
             log_mixture(x, classifier.models[1]);
  Eigen::VectorXd p = posterior(x, classifier);
  CHECK(p[0] / p[1] == doctest::Approx(std::exp(g)).epsilon(1e-9));
}

TEST_CASE("three-class posterior matches extended-precision Bayes") {
  Classifier classifier = toy_classifier(3, 2, 65);
  classifier.log_priors =
      (Eigen::VectorXd(3) << std::log(0.5), std::log(0.3), std::log(0.2))
          .finished();
  classifier.validate();

  std::mt19937_64 rng(66);
  for (int trial = 0; trial < 10; ++trial) {
    Image x = kdtest::smooth_random_image(rng, kSide, kSide);
    long double joint[3], total = 0;
    long double shift = -1e30L;
    long double score[3];
    for (int m = 0; m < 3; ++m) {
      score[m] = static_cast<long double>(log_mixture(x, classifier.models[m])) +
                 static_cast<long double>(classifier.log_priors[m]);
      shift = std::max(shift, score[m]);
    }
    for (int m = 0; m < 3; ++m) {
      joint[m] = std::exp(score[m] - shift);
      total += joint[m];
    }
    Eigen::VectorXd p = posterior(x, classifier);
    for (int m = 0; m < 3; ++m) {
      CHECK(p[m] == doctest::Approx(static_cast<double>(joint[m] / total))
                        .epsilon(1e-12));
    }
  }
}

TEST_CASE("predict takes the dominant class and breaks ties low") {
  SUBCASE("an input equal to a class-2 kernel center") {
    Classifier classifier = toy_classifier(3, 2, 67, {0.5, 0.01});
    Image x = classifier.models[2].kernels[0].basis.center;
    CHECK(predict(x, classifier) == 2);
  }
  SUBCASE("identical models tie to class 0") {
    Classifier classifier = toy_classifier(1, 2, 68);
    classifier.models.push_back(classifier.models[0]);
    classifier.models[1].class_index = 1;
    classifier.log_priors = uniform_log_priors(2);
    std::mt19937_64 rng(69);
    Image x = kdtest::smooth_random_image(rng, kSide, kSide);
    CHECK(predict(x, classifier) == 0);
  }
  SUBCASE("agrees with the posterior argmax on many random inputs") {
    Classifier classifier = toy_classifier(4, 2, 70);
    std::mt19937_64 rng(71);
    for (int trial = 0; trial < 1000; ++trial) {
      Image x = kdtest::smooth_random_image(rng, kSide, kSide);
      Eigen::VectorXd p = posterior(x, classifier);
      int arg = 0;
      for (int m = 1; m < 4; ++m) {
        if (p[m] > p[arg]) arg = m;
      }
      CHECK(predict(x, classifier) == arg);
    }
  }
}

TEST_CASE("uniform priors reduce prediction to the likelihood argmax") {
  Classifier classifier = toy_classifier(3, 2, 72);
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 50; ++trial) {
    Image x = kdtest::smooth_random_image(rng, kSide, kSide);
    int by_likelihood = 0;
    double best = log_mixture(x, classifier.models[0]);
    for (int m = 1; m < 3; ++m) {
      double v = log_mixture(x, classifier.models[m]);
      if (v > best) {
        best = v;
        by_likelihood = m;
      }
    }
    CHECK(predict(x, classifier) == by_likelihood);
  }
}

TEST_CASE("raising a class prior never steals its own argmax") {
  Classifier classifier = toy_classifier(3, 2, 74);
  std::mt19937_64 rng(75);
  for (int trial = 0; trial < 50; ++trial) {
    Image x = kdtest::smooth_random_image(rng, kSide, kSide);
    int before = predict(x, classifier);

    Classifier boosted = classifier;
    Eigen::VectorXd priors = classifier.log_priors.array().exp();
    priors[before] *= 3.0;
    priors /= priors.sum();
    boosted.log_priors = priors.array().log();
    CHECK(predict(x, boosted) == before);
  }
}

TEST_CASE("evaluate fills the confusion matrix consistently") {
  Classifier classifier = toy_classifier(3, 2, 76, {0.5, 0.01});

  LabeledImageSet test;
  test.width = kSide;
  test.height = kSide;
  test.class_count = 3;
  // kernel centers themselves: all should be classified correctly
  for (int m = 0; m < 3; ++m) {
    for (const Kernel& k : classifier.models[m].kernels) {
      test.images.push_back(k.basis.center);
      test.labels.push_back(m);
    }
  }

  Metrics metrics = evaluate(test, classifier, 2);
  CHECK(metrics.error_rate == 0.0);
  CHECK(metrics.confusion.trace() == 6);
  CHECK(metrics.total() == test.size());
  for (int c = 0; c < 3; ++c) CHECK(metrics.per_class_error[c] == 0.0);

  SUBCASE("error_rate tracks the confusion diagonal") {
    test.labels[0] = 1;  // plant one mistake
    Metrics withers = evaluate(test, classifier);
    CHECK(withers.error_rate ==
          doctest::Approx(1.0 - withers.confusion.trace() / 6.0));
    CHECK(withers.total() == 6);
  }
  SUBCASE("label outside the model range is rejected") {
    test.labels[0] = 7;
    CHECK_THROWS_AS(evaluate(test, classifier), RangeError);
  }
  SUBCASE("reports are bit-stable") {
    CHECK(format_metrics(metrics) == format_metrics(metrics));
    CHECK(format_metrics(metrics).find("error_rate = 0") != std::string::npos);
    CHECK(format_metrics(metrics).find("[confusion]") != std::string::npos);
  }
}

TEST_CASE("classifier validation catches prior and shape defects") {
  Classifier classifier = toy_classifier(2, 2, 77);
  SUBCASE("priors must normalize") {
    classifier.log_priors = Eigen::VectorXd::Zero(2);  // sums to 2
    CHECK_THROWS_AS(classifier.validate(), ModelError);
  }
  SUBCASE("empirical priors from labels") {
    Eigen::VectorXd p = empirical_log_priors({0, 0, 0, 1}, 2);
    CHECK(std::exp(p[0]) == doctest::Approx(0.75));
    CHECK(std::exp(p[1]) == doctest::Approx(0.25));
    CHECK_THROWS_AS(empirical_log_priors({0, 0}, 2), CapacityError);
  }
}
