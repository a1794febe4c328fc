#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "kd/classify.hpp"
#include "kd/distortion.hpp"
#include "kd/error.hpp"
#include "kd/persist.hpp"
#include "support/test_util.hpp"

using namespace kd;
namespace fs = std::filesystem;

namespace {

constexpr int kSide = 8;
constexpr int kDim = kSide * kSide;
constexpr int kQ = 5;
constexpr int kKernels = 3;

Classifier toy_classifier(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto ops = build_operators(kSide, kSide, 0.5);
  Classifier classifier;
  for (int m = 0; m < 2; ++m) {
    ClassModel model;
    model.class_index = m;
    model.variances = {0.9, 0.03};
    double total = 0;
    std::vector<double> raw;
    for (int k = 0; k < kKernels; ++k) {
      raw.push_back(1.0 + double(rng() % 5));
      total += raw.back();
    }
    for (int k = 0; k < kKernels; ++k) {
      Kernel kernel;
      kernel.basis =
          build_basis(kdtest::smooth_random_image(rng, kSide, kSide), ops, 2, kQ);
      kernel.weight = raw[k] / total;
      kernel.sample_id = 100 * m + k;
      model.kernels.push_back(std::move(kernel));
    }
    classifier.models.push_back(std::move(model));
  }
  classifier.log_priors =
      (Eigen::VectorXd(2) << std::log(0.4), std::log(0.6)).finished();
  classifier.validate();
  return classifier;
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("save/load reproduces mixture values bit-exactly") {
  auto dir = kdtest::scratch_dir("persist_rt");
  Classifier original = toy_classifier(91);
  ModelMeta meta;
  meta.seed = 7;
  meta.dataset_fingerprint = 0xabcdef;
  meta.poly_order = 2;
  save_model(original, meta, dir / "model");

  SavedModel loaded = load_model(dir / "model");
  CHECK(loaded.meta.seed == 7);
  CHECK(loaded.meta.dataset_fingerprint == 0xabcdef);
  CHECK(loaded.meta.poly_order == 2);
  CHECK(loaded.classifier.log_priors == original.log_priors);

  std::mt19937_64 rng(92);
  for (int probe = 0; probe < 100; ++probe) {
    Image x = kdtest::smooth_random_image(rng, kSide, kSide);
    for (int m = 0; m < 2; ++m) {
      CHECK(log_mixture(x, loaded.classifier.models[m]) ==
            log_mixture(x, original.models[m]));
    }
  }
  for (int m = 0; m < 2; ++m) {
    for (int k = 0; k < kKernels; ++k) {
      CHECK(loaded.classifier.models[m].kernels[k].sample_id ==
            original.models[m].kernels[k].sample_id);
      CHECK(loaded.classifier.models[m].kernels[k].weight ==
            original.models[m].kernels[k].weight);
      CHECK(loaded.classifier.models[m].kernels[k].basis.u ==
            original.models[m].kernels[k].basis.u);
    }
  }
}

TEST_CASE("identical classifiers produce byte-identical containers") {
  auto dir = kdtest::scratch_dir("persist_bytes");
  Classifier classifier = toy_classifier(93);
  ModelMeta meta;
  meta.poly_order = 2;
  save_model(classifier, meta, dir / "a");
  save_model(classifier, meta, dir / "b");

  for (const char* name : {"manifest.txt", "class_0.bin", "class_1.bin"}) {
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
}

TEST_CASE("class files follow the documented byte layout") {
  auto dir = kdtest::scratch_dir("persist_layout");
  save_model(toy_classifier(94), ModelMeta{}, dir / "model");
  // per kernel: center (8 + dim*8) + U (8 + dim*q*8) + x_tilde (8 + dim*8),
  // then the weight vector (8 + K*8); headers are two uint32 = 8 bytes
  const std::uintmax_t expected =
      kKernels * (8 + kDim * 8 + 8 + kDim * kQ * 8 + 8 + kDim * 8) + 8 +
      kKernels * 8;
  CHECK(fs::file_size(dir / "model" / "class_0.bin") == expected);
}

TEST_CASE("evaluation is unchanged across a round trip") {
  auto dir = kdtest::scratch_dir("persist_eval");
  Classifier classifier = toy_classifier(95);

  LabeledImageSet probe;
  probe.width = kSide;
  probe.height = kSide;
  probe.class_count = 2;
  std::mt19937_64 rng(96);
  for (int i = 0; i < 40; ++i) {
    probe.images.push_back(kdtest::smooth_random_image(rng, kSide, kSide));
    probe.labels.push_back(int(rng() % 2));
  }

  Metrics before = evaluate(probe, classifier);
  save_model(classifier, ModelMeta{}, dir / "model");
  Metrics after = evaluate(probe, load_model(dir / "model").classifier);
  CHECK(before.error_rate == after.error_rate);
  CHECK(before.confusion == after.confusion);
}

TEST_CASE("corrupted containers are refused") {
  auto dir = kdtest::scratch_dir("persist_corrupt");
  save_model(toy_classifier(97), ModelMeta{}, dir / "model");

  SUBCASE("truncated array file names the class") {
    auto path = dir / "model" / "class_1.bin";
    fs::resize_file(path, fs::file_size(path) - 16);
    try {
      load_model(dir / "model");
      FAIL("expected IntegrityError");
    } catch (const IntegrityError& e) {
      CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
  }
  SUBCASE("hand-edited weight that breaks the sum") {
    auto path = dir / "model" / "class_0.bin";
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-8, std::ios::end);  // last weight entry
    double bogus = 0.9;
    f.write(reinterpret_cast<const char*>(&bogus), 8);
    f.close();
    CHECK_THROWS_AS(load_model(dir / "model"), IntegrityError);
  }
  SUBCASE("non-orthonormal basis from corruption") {
    auto path = dir / "model" / "class_0.bin";
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    // second column entry of the first U array: header(8) + center(8+512)
    // + U header (8) => first U payload byte at 536
    f.seekp(536 + 8 * 3);
    double bogus = 2.5;
    f.write(reinterpret_cast<const char*>(&bogus), 8);
    f.close();
    CHECK_THROWS_AS(load_model(dir / "model"), IntegrityError);
  }
  SUBCASE("version bump is refused") {
    auto manifest = dir / "model" / "manifest.txt";
    auto text = slurp(manifest);
    std::string s(text.begin(), text.end());
    s.replace(s.find("format_version = 1"), 18, "format_version = 9");
    std::ofstream(manifest) << s;
    CHECK_THROWS_AS(load_model(dir / "model"), VersionError);
  }
  SUBCASE("trailing garbage is refused") {
    auto path = dir / "model" / "class_0.bin";
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f << "extra";
    f.close();
    CHECK_THROWS_AS(load_model(dir / "model"), IntegrityError);
  }
}

TEST_CASE("save surfaces filesystem failures with path context") {
  auto dir = kdtest::scratch_dir("persist_ro");
  std::ofstream(dir / "blocked") << "a regular file";
  CHECK_THROWS_AS(
      save_model(toy_classifier(98), ModelMeta{}, dir / "blocked" / "model"),
      IoError);
}

TEST_CASE("missing container directory raises IoError") {
  CHECK_THROWS_AS(load_model("/nonexistent/nowhere"), IoError);
}
