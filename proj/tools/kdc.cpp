// Command-line pipeline for the kernel-distortion classifier: train,
// evaluate, combine with an external discriminative classifier, sweep
// parameters, and dump kernel bases as images.

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kd/classify.hpp"
#include "kd/error.hpp"
#include "kd/hybrid.hpp"
#include "kd/image_set.hpp"
#include "kd/parallel.hpp"
#include "kd/persist.hpp"
#include "kd/pgm.hpp"
#include "kd/selection.hpp"
#include "kd/text.hpp"

namespace fs = std::filesystem;

namespace {

struct DataOptions {
  std::string images;
  std::string labels;
  std::string format = "idx";
  int width = 0;
  int height = 0;
  int margin = 1;
};

struct TrainOptions {
  DataOptions data;
  int per_class = 0;  // 0 = use everything
  std::uint64_t seed = 0;
  int kernels = 100;
  int poly_order = 3;
  int subspace_dim = 40;
  double sigma_d2 = 0.9;
  double sigma_o2 = 0.03;
  int iterations = 500;
  std::string assignment_scale = "auto";
  std::string priors = "empirical";
  double step = 0.5;
  int threads = 0;
};

void add_data_flags(CLI::App* cmd, DataOptions& d, const std::string& role) {
  cmd->add_option("--" + role + "-images", d.images,
                  role + " image file (IDX) or combined data file (delim)")
      ->required();
  cmd->add_option("--" + role + "-labels", d.labels,
                  role + " label file (IDX format only)");
  cmd->add_option("--format", d.format, "input format")
      ->check(CLI::IsMember({"idx", "delim"}))
      ->capture_default_str();
  cmd->add_option("--width", d.width, "image width (delim format)");
  cmd->add_option("--height", d.height, "image height (delim format)");
  cmd->add_option("--margin", d.margin, "zero margin added on each side")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, TrainOptions& t) {
  add_data_flags(cmd, t.data, "train");
  cmd->add_option("--per-class", t.per_class,
                  "stratified subset size per class (0 = all)")
      ->capture_default_str();
  cmd->add_option("--seed", t.seed, "seed for subsetting and initialization")
      ->capture_default_str();
  cmd->add_option("--kernels", t.kernels, "kernels per class")
      ->capture_default_str();
  cmd->add_option("--poly-order", t.poly_order,
                  "highest total power of the distortion monomials")
      ->capture_default_str();
  cmd->add_option("--subspace-dim", t.subspace_dim,
                  "distortion subspace dimension q")
      ->capture_default_str();
  cmd->add_option("--sigma-d2", t.sigma_d2, "distortion subspace variance")
      ->capture_default_str();
  cmd->add_option("--sigma-o2", t.sigma_o2, "orthogonal subspace variance")
      ->capture_default_str();
  cmd->add_option("--iterations", t.iterations, "kernel-selection iterations")
      ->capture_default_str();
  cmd->add_option("--assignment-scale", t.assignment_scale,
                  "assignment probability scale C, or 'auto'")
      ->capture_default_str();
  cmd->add_option("--priors", t.priors, "class prior estimate")
      ->check(CLI::IsMember({"empirical", "uniform"}))
      ->capture_default_str();
  cmd->add_option("--step", t.step, "distortion operator step")
      ->capture_default_str();
  cmd->add_option("--threads", t.threads, "worker threads (0 = all cores)")
      ->capture_default_str();
}

kd::LabeledImageSet load_data(const DataOptions& d) {
  kd::LabeledImageSet set;
  if (d.format == "idx") {
    if (d.labels.empty()) {
      throw kd::ConfigError("IDX input needs a label file");
    }
    set = kd::load_idx(d.images, d.labels);
  } else {
    if (d.width <= 0 || d.height <= 0) {
      throw kd::ConfigError("delimited input needs --width and --height");
    }
    set = kd::load_delimited(d.images, d.width, d.height);
  }
  return kd::pad_margin(set, d.margin);
}

struct TrainedModel {
  kd::Classifier classifier;
  std::vector<kd::SelectionTrace> traces;
  std::uint64_t data_fingerprint = 0;
};

TrainedModel train_classifier(const kd::LabeledImageSet& full,
                              const TrainOptions& t) {
  kd::LabeledImageSet train = full;
  if (t.per_class > 0) {
    train = kd::stratified_sample(full, t.per_class, t.seed).first;
  }
  if (train.class_count < 1) {
    throw kd::CapacityError("training set has no classes");
  }

  kd::SelectionConfig config;
  config.kernel_count = t.kernels;
  config.iterations = t.iterations;
  config.seed = t.seed;
  config.poly_order = t.poly_order;
  config.subspace_dim = t.subspace_dim;
  config.variances = {t.sigma_d2, t.sigma_o2};
  if (t.assignment_scale != "auto") {
    config.assignment_scale =
        kd::parse_double(t.assignment_scale, "--assignment-scale");
  }
  config.validate();

  const int classes = train.class_count;
  std::vector<std::vector<kd::Image>> per_class(classes);
  for (std::size_t i = 0; i < train.size(); ++i) {
    per_class[train.labels[i]].push_back(train.images[i]);
  }

  const auto operators = kd::build_operators(train.width, train.height, t.step);

  const int outer = std::min(kd::resolve_threads(t.threads), classes);
  const int inner = std::max(1, kd::resolve_threads(t.threads) / outer);

  TrainedModel out;
  out.data_fingerprint = kd::fingerprint(train);
  out.classifier.models.resize(classes);
  out.traces.resize(classes);
  kd::parallel_for(
      classes,
      [&](std::size_t m) {
        kd::SelectionConfig local = config;
        local.seed = config.seed + m;  // decorrelate class initializations
        local.threads = inner;
        try {
          auto [model, trace] = kd::select_kernels(per_class[m], local,
                                                   operators,
                                                   static_cast<int>(m));
          out.classifier.models[m] = std::move(model);
          out.traces[m] = std::move(trace);
        } catch (const kd::Error& e) {
          throw kd::Error("class " + std::to_string(m) + ": " + e.what());
        }
      },
      outer);

  out.classifier.log_priors =
      t.priors == "uniform" ? kd::uniform_log_priors(classes)
                            : kd::empirical_log_priors(train.labels, classes);
  out.classifier.validate();
  return out;
}

kd::PosteriorTable posterior_table(const kd::LabeledImageSet& set,
                                   const kd::Classifier& classifier,
                                   int threads) {
  kd::PosteriorTable table;
  table.source_name = "kernel-distortion";
  table.rows.resize(set.size(), classifier.class_count());
  kd::parallel_for(
      set.size(),
      [&](std::size_t i) {
        table.rows.row(i) =
            kd::posterior(set.images[i], classifier).transpose();
      },
      threads);
  return table;
}

int run_train(const TrainOptions& t, const std::string& out_dir) {
  TrainedModel trained = train_classifier(load_data(t.data), t);

  kd::ModelMeta meta;
  meta.seed = t.seed;
  meta.dataset_fingerprint = trained.data_fingerprint;
  meta.poly_order = t.poly_order;
  kd::save_model(trained.classifier, meta, out_dir);
  for (std::size_t m = 0; m < trained.traces.size(); ++m) {
    kd::write_trace(
        fs::path(out_dir) / ("trace_class_" + std::to_string(m) + ".tsv"),
        trained.traces[m]);
  }
  std::cout << "model written to " << out_dir << " ("
            << trained.classifier.class_count() << " classes)\n";
  return 0;
}

int run_eval(const std::string& model_dir, const DataOptions& data,
             int threads, const std::string& report_path,
             const std::string& posteriors_path,
             const std::string& labels_path) {
  kd::SavedModel saved = kd::load_model(model_dir);
  kd::LabeledImageSet test = load_data(data);
  if (test.dimension() != saved.classifier.dimension()) {
    throw kd::ConfigError("test data has dimension " +
                          std::to_string(test.dimension()) +
                          " after margin, model expects " +
                          std::to_string(saved.classifier.dimension()));
  }
  if (test.class_count > saved.classifier.class_count()) {
    throw kd::ConfigError("test set has more classes than the model");
  }
  test.class_count = saved.classifier.class_count();

  kd::Metrics metrics = kd::evaluate(test, saved.classifier, threads);
  std::ostringstream report;
  kd::write_metrics(report, metrics);
  std::cout << report.str();
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw kd::IoError("cannot write '" + report_path + "'");
    out << report.str();
  }
  if (!posteriors_path.empty()) {
    kd::save_posterior_table(posteriors_path,
                             posterior_table(test, saved.classifier, threads));
  }
  if (!labels_path.empty()) {
    kd::save_labels(labels_path, test.labels);
  }
  return 0;
}

int run_hybrid(const std::string& disc_path, const std::string& gen_path,
               const std::string& labels_path, const std::string& mode_name,
               std::optional<double> parameter, bool tune_requested,
               double grid_step, int folds, std::uint64_t seed,
               const std::string& report_path) {
  const std::vector<int> labels = kd::load_labels(labels_path);
  if (labels.empty()) throw kd::CapacityError("label file is empty");

  // class count comes from the first data row of the discriminative table
  int classes = 0;
  {
    std::ifstream in(disc_path);
    if (!in) throw kd::IoError("cannot open '" + disc_path + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (kd::is_comment_or_blank(line)) continue;
      classes = static_cast<int>(kd::split_fields(line).size()) - 1;
      break;
    }
  }
  if (classes < 2) {
    throw kd::FormatError("'" + disc_path + "' has no usable posterior rows");
  }

  kd::PosteriorTable disc =
      kd::load_posterior_table(disc_path, labels.size(), classes);
  kd::PosteriorTable gen =
      kd::load_posterior_table(gen_path, labels.size(), classes);
  const kd::HybridMode mode = mode_name == "cascade" ? kd::HybridMode::kCascade
                                                     : kd::HybridMode::kStack;

  std::ostringstream report;
  report << "mode = " << mode_name << "\n";
  if (tune_requested) {
    kd::TuneResult tuned =
        kd::tune(mode, disc, gen, labels,
                 kd::default_parameter_grid(grid_step), folds, seed);
    kd::write_tune_report(report, tuned);
    report << "error_at_tuned = "
           << kd::format_double(
                  kd::hybrid_error(mode, disc, gen, labels, tuned.parameter))
           << "\n";
  } else {
    if (!parameter) {
      throw kd::ConfigError("hybrid needs --param or --tune");
    }
    report << "parameter = " << kd::format_double(*parameter) << "\n";
    report << "error = "
           << kd::format_double(
                  kd::hybrid_error(mode, disc, gen, labels, *parameter))
           << "\n";
  }
  std::cout << report.str();
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw kd::IoError("cannot write '" + report_path + "'");
    out << report.str();
  }
  return 0;
}

int run_sweep(const std::string& axis, const std::vector<std::string>& values,
              const TrainOptions& base, const DataOptions& test_data,
              const std::string& out_path) {
  kd::LabeledImageSet train_full = load_data(base.data);
  kd::LabeledImageSet test = load_data(test_data);

  std::ostringstream table;
  table << "# " << axis << "\terror\n";
  for (const std::string& value : values) {
    TrainOptions t = base;
    try {
      if (axis == "q") {
        t.subspace_dim = static_cast<int>(kd::parse_int(value, "sweep value"));
      } else if (axis == "p") {
        t.poly_order = static_cast<int>(kd::parse_int(value, "sweep value"));
      } else {  // variance-ratio: sigma_o2 fixed, sigma_d2 = ratio * sigma_o2
        double ratio = kd::parse_double(value, "sweep value");
        t.sigma_d2 = ratio * t.sigma_o2;
      }
      TrainedModel trained = train_classifier(train_full, t);
      if (test.dimension() != trained.classifier.dimension()) {
        throw kd::ConfigError("test dimension mismatch");
      }
      kd::LabeledImageSet aligned = test;
      aligned.class_count = trained.classifier.class_count();
      kd::Metrics metrics =
          kd::evaluate(aligned, trained.classifier, base.threads);
      table << value << '\t' << kd::format_double(metrics.error_rate) << '\n';
    } catch (const std::exception& e) {
      table << value << "\tNA\t# " << e.what() << '\n';
    }
  }
  std::cout << table.str();
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw kd::IoError("cannot write '" + out_path + "'");
    out << table.str();
  }
  return 0;
}

int run_inspect(const std::string& model_dir, int class_index,
                int kernel_index, const std::string& out_dir) {
  kd::SavedModel saved = kd::load_model(model_dir);
  const auto& models = saved.classifier.models;
  if (class_index < 0 || class_index >= static_cast<int>(models.size())) {
    throw kd::ConfigError("class index out of range");
  }
  const auto& kernels = models[class_index].kernels;
  if (kernel_index < 0 || kernel_index >= static_cast<int>(kernels.size())) {
    throw kd::ConfigError("kernel index out of range");
  }
  const kd::DistortionBasis& basis = kernels[kernel_index].basis;
  const int dim = basis.dimension();
  const int side = static_cast<int>(std::lround(std::sqrt(double(dim))));
  if (side * side != dim) {
    throw kd::ConfigError("model images are not square, cannot render");
  }

  fs::create_directories(out_dir);
  const std::string stem = "class" + std::to_string(class_index) + "_kernel" +
                           std::to_string(kernel_index);
  kd::write_pgm(fs::path(out_dir) / (stem + "_center.pgm"), basis.center, side,
                side);
  const int shown = std::min(3, basis.subspace_dim());
  for (int i = 0; i < shown; ++i) {
    kd::write_pgm(fs::path(out_dir) / (stem + "_u" + std::to_string(i) + ".pgm"),
                  basis.u.col(i), side, side);
  }
  std::cout << "wrote " << (1 + shown) << " images to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kernel-distortion generative classifier pipeline"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a key=value file");

  // train
  TrainOptions train_opts;
  std::string train_out;
  CLI::App* train = app.add_subcommand("train", "fit per-class kernel models");
  add_train_flags(train, train_opts);
  train->add_option("--out", train_out, "output model directory")->required();

  // eval
  DataOptions eval_data;
  std::string eval_model, eval_report, eval_posteriors, eval_labels;
  int eval_threads = 0;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model");
  eval->add_option("--model", eval_model, "model directory")->required();
  add_data_flags(eval, eval_data, "test");
  eval->add_option("--threads", eval_threads, "worker threads");
  eval->add_option("--report", eval_report, "metrics report file");
  eval->add_option("--emit-posteriors", eval_posteriors,
                   "write the generative posterior table here");
  eval->add_option("--emit-labels", eval_labels,
                   "write the test labels here (one per line)");

  // hybrid
  std::string hy_disc, hy_gen, hy_labels, hy_mode, hy_report;
  std::optional<double> hy_param;
  bool hy_tune = false;
  double hy_grid_step = 0.01;
  int hy_folds = 10;
  std::uint64_t hy_seed = 0;
  CLI::App* hybrid = app.add_subcommand(
      "hybrid", "combine generative and discriminative posteriors");
  hybrid->add_option("--discriminative", hy_disc, "discriminative table")
      ->required();
  hybrid->add_option("--generative", hy_gen, "generative table")->required();
  hybrid->add_option("--labels", hy_labels, "true labels, one per line")
      ->required();
  hybrid->add_option("--mode", hy_mode, "combination rule")
      ->check(CLI::IsMember({"cascade", "stack"}))
      ->required();
  hybrid->add_option("--param", hy_param, "threshold tau / weight w");
  hybrid->add_flag("--tune", hy_tune, "grid-search the parameter by k-fold CV");
  hybrid->add_option("--grid-step", hy_grid_step, "tuning grid resolution")
      ->capture_default_str();
  hybrid->add_option("--folds", hy_folds, "cross-validation folds")
      ->capture_default_str();
  hybrid->add_option("--seed", hy_seed, "fold partition seed")
      ->capture_default_str();
  hybrid->add_option("--report", hy_report, "report file");

  // sweep
  TrainOptions sweep_opts;
  DataOptions sweep_test;
  std::string sweep_axis, sweep_out;
  std::vector<std::string> sweep_values;
  CLI::App* sweep =
      app.add_subcommand("sweep", "train/evaluate across one parameter axis");
  sweep->add_option("--axis", sweep_axis, "swept parameter")
      ->check(CLI::IsMember({"q", "p", "variance-ratio"}))
      ->required();
  sweep->add_option("--values", sweep_values, "comma separated values")
      ->required()
      ->delimiter(',');
  add_train_flags(sweep, sweep_opts);
  sweep->add_option("--test-images", sweep_test.images, "test images")
      ->required();
  sweep->add_option("--test-labels", sweep_test.labels, "test labels");
  sweep->add_option("--out", sweep_out, "results table file");

  // inspect
  std::string ins_model, ins_out;
  int ins_class = 0, ins_kernel = 0;
  CLI::App* inspect = app.add_subcommand(
      "inspect", "dump a kernel center and its leading basis vectors");
  inspect->add_option("--model", ins_model, "model directory")->required();
  inspect->add_option("--class", ins_class, "class index")->required();
  inspect->add_option("--kernel", ins_kernel, "kernel index")->required();
  inspect->add_option("--out", ins_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(train_opts, train_out);
    if (*eval) {
      return run_eval(eval_model, eval_data, eval_threads, eval_report,
                      eval_posteriors, eval_labels);
    }
    if (*hybrid) {
      return run_hybrid(hy_disc, hy_gen, hy_labels, hy_mode, hy_param, hy_tune,
                        hy_grid_step, hy_folds, hy_seed, hy_report);
    }
    if (*sweep) {
      sweep_test.format = sweep_opts.data.format;
      sweep_test.width = sweep_opts.data.width;
      sweep_test.height = sweep_opts.data.height;
      sweep_test.margin = sweep_opts.data.margin;
      return run_sweep(sweep_axis, sweep_values, sweep_opts, sweep_test,
                       sweep_out);
    }
    if (*inspect) return run_inspect(ins_model, ins_class, ins_kernel, ins_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
