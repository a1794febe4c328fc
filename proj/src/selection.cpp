#include "kd/selection.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "kd/error.hpp"
#include "kd/parallel.hpp"
#include "kd/text.hpp"

namespace kd {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Fixed block width for deterministic parallel reductions: partials are
// combined in block order, so results do not depend on the thread count.
constexpr std::size_t kReduceBlock = 64;

}  // namespace

void SelectionConfig::validate() const {
  if (kernel_count < 2) throw ConfigError("kernel_count must be >= 2");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (poly_order < 1) throw ConfigError("poly_order must be >= 1");
  if (subspace_dim < 1) throw ConfigError("subspace_dim must be >= 1");
  if (assignment_scale && !(*assignment_scale > 0)) {
    throw ConfigError("assignment scale must be positive");
  }
  variances.validate();
}

void LikelihoodMatrix::rebuild_rows() {
  const auto n = log_values.rows();
  shift.resize(n);
  shifted.resize(n, log_values.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    double m = log_values.row(i).maxCoeff();
    shift[i] = m;
    shifted.row(i) = (log_values.row(i).array() - m).exp();
  }
}

LikelihoodMatrix likelihood_matrix(const std::vector<Image>& samples,
                                   const ClassModel& model, int threads) {
  if (samples.empty()) throw CapacityError("likelihood matrix needs samples");
  if (model.kernels.empty()) throw ModelError("class model has no kernels");
  const auto count = samples.size();
  const auto k = model.kernels.size();
  LikelihoodMatrix w;
  w.log_values.resize(count, k);
  parallel_for(
      count,
      [&](std::size_t i) {
        for (std::size_t j = 0; j < k; ++j) {
          w.log_values(i, j) =
              log_kernel_density(samples[i], model.kernels[j].basis,
                                 model.variances);
        }
      },
      threads);
  w.rebuild_rows();
  return w;
}

Eigen::VectorXd kernel_weights(const LikelihoodMatrix& w) {
  const auto rows = w.shifted.rows();
  const auto cols = w.shifted.cols();
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    double row_sum = w.shifted.row(i).sum();
    if (!(row_sum > 0)) {
      throw NumericError("likelihood row " + std::to_string(i) +
                         " underflowed to zero");
    }
    alpha += w.shifted.row(i).transpose() / row_sum;
  }
  return alpha / alpha.sum();
}

double total_log_likelihood(const std::vector<Image>& samples,
                            const ClassModel& model, int threads) {
  model.validate();
  std::vector<double> per_sample(samples.size());
  parallel_for(
      samples.size(),
      [&](std::size_t i) { per_sample[i] = log_mixture(samples[i], model); },
      threads);
  double total = 0;
  for (double v : per_sample) total += v;
  return total;
}

double total_log_likelihood_cached(const LikelihoodMatrix& w,
                                   const Eigen::VectorXd& weights) {
  if (weights.size() != w.cols()) {
    throw ShapeError("weight vector does not match cache width");
  }
  double total = 0;
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double mix = w.shifted.row(i).dot(weights);
    total += w.shift[i] + std::log(mix);
  }
  return total;
}

int most_expendable_kernel(const ClassModel& model,
                           const LikelihoodMatrix& w) {
  const auto k = w.cols();
  const auto rows = w.rows();
  if (k < 2) throw ConfigError("need at least two kernels to remove one");
  if (static_cast<std::size_t>(k) != model.kernels.size()) {
    throw ShapeError("cache width does not match kernel count");
  }

  double shift_total = w.shift.sum();
  int best = 0;
  double best_q = -kInf;
  for (Eigen::Index removed = 0; removed < k; ++removed) {
    double keep = 1.0 - model.kernels[removed].weight;
    double q = -kInf;
    if (keep > 0) {
      // Excluded sums are formed directly rather than by subtracting the
      // removed column from a cached total, which cancels catastrophically
      // when that kernel dominates a row.
      double acc = 0;
      bool dead = false;
      for (Eigen::Index i = 0; i < rows && !dead; ++i) {
        double mix = 0;
        for (Eigen::Index j = 0; j < k; ++j) {
          if (j == removed) continue;
          mix += model.kernels[j].weight * w.shifted(i, j);
        }
        if (mix <= 0) {
          dead = true;
        } else {
          acc += std::log(mix);
        }
      }
      if (!dead) {
        q = shift_total + acc - rows * std::log(keep);
      }
    }
    if (q > best_q) {
      best_q = q;
      best = static_cast<int>(removed);
    }
  }
  return best;
}

Eigen::MatrixXd pairwise_distances(const std::vector<Image>& samples,
                                   int threads) {
  const auto count = samples.size();
  Eigen::MatrixXd d(count, count);
  parallel_for(
      count,
      [&](std::size_t i) {
        d(i, i) = kInf;
        for (std::size_t j = i + 1; j < count; ++j) {
          double dist = (samples[i] - samples[j]).norm();
          d(i, j) = dist;
          d(j, i) = dist;
        }
      },
      threads);
  return d;
}

double mean_finite_distance(const Eigen::MatrixXd& distances) {
  double sum = 0;
  std::size_t n = 0;
  for (Eigen::Index j = 0; j < distances.cols(); ++j) {
    for (Eigen::Index i = 0; i < distances.rows(); ++i) {
      double v = distances(i, j);
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
  }
  if (n == 0) throw CapacityError("distance matrix has no finite entries");
  return sum / static_cast<double>(n);
}

Eigen::VectorXd addition_values(const Eigen::MatrixXd& distances,
                                const std::vector<std::int64_t>& kernel_ids,
                                double c, int threads) {
  if (!(c > 0)) throw ConfigError("assignment scale must be positive");
  const auto count = distances.rows();
  std::vector<char> is_kernel(count, 0);
  for (std::int64_t id : kernel_ids) {
    if (id < 0 || id >= count) throw RangeError("kernel id out of range");
    is_kernel[id] = 1;
  }
  std::vector<std::int64_t> free_ids;
  for (Eigen::Index i = 0; i < count; ++i) {
    if (!is_kernel[i]) free_ids.push_back(i);
  }
  if (free_ids.empty()) {
    throw CapacityError("no non-kernel samples left to add");
  }

  // Per-block partials, combined in block order: deterministic for any
  // thread count.
  const std::size_t blocks = (free_ids.size() + kReduceBlock - 1) / kReduceBlock;
  std::vector<Eigen::VectorXd> partial(blocks);
  parallel_for(
      blocks,
      [&](std::size_t b) {
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(count);
        Eigen::VectorXd row(count);
        const std::size_t begin = b * kReduceBlock;
        const std::size_t end = std::min(begin + kReduceBlock, free_ids.size());
        for (std::size_t r = begin; r < end; ++r) {
          const auto s = free_ids[r];
          // Shift by the row minimum before exponentiating; the shift
          // cancels in the normalization.
          double m = kInf;
          for (Eigen::Index l = 0; l < count; ++l) {
            m = std::min(m, distances(s, l));
          }
          double row_sum = 0;
          for (Eigen::Index l = 0; l < count; ++l) {
            double dist = distances(s, l);
            double p = std::isfinite(dist) ? std::exp(-(dist - m) / c) : 0.0;
            row[l] = p;
            row_sum += p;
          }
          acc += row / row_sum;
        }
        partial[b] = std::move(acc);
      },
      threads);

  Eigen::VectorXd a = Eigen::VectorXd::Zero(count);
  for (const auto& p : partial) a += p;
  return a;
}

std::int64_t best_addition(const Eigen::MatrixXd& distances,
                           const std::vector<std::int64_t>& kernel_ids,
                           double c, int threads) {
  Eigen::VectorXd a = addition_values(distances, kernel_ids, c, threads);
  std::vector<char> is_kernel(distances.rows(), 0);
  for (std::int64_t id : kernel_ids) is_kernel[id] = 1;
  std::int64_t best = -1;
  double best_value = -kInf;
  for (Eigen::Index l = 0; l < a.size(); ++l) {
    if (is_kernel[l]) continue;
    if (a[l] > best_value) {
      best_value = a[l];
      best = l;
    }
  }
  return best;
}

namespace {

void apply_weights(ClassModel& model, const Eigen::VectorXd& weights) {
  for (std::size_t k = 0; k < model.kernels.size(); ++k) {
    model.kernels[k].weight = weights[k];
  }
}

// Refreshes one cache column after a kernel swap.
void replace_column(LikelihoodMatrix& w, const std::vector<Image>& samples,
                    const ClassModel& model, int column, int threads) {
  parallel_for(
      samples.size(),
      [&](std::size_t i) {
        w.log_values(i, column) = log_kernel_density(
            samples[i], model.kernels[column].basis, model.variances);
      },
      threads);
  w.rebuild_rows();
}

}  // namespace

std::pair<ClassModel, SelectionTrace> select_kernels(
    const std::vector<Image>& samples, const SelectionConfig& config,
    const std::vector<DistortionOperator>& operators, int class_index) {
  config.validate();
  const auto count = static_cast<std::int64_t>(samples.size());
  const int k = config.kernel_count;
  if (count <= k) {
    throw CapacityError("need more samples than kernels: " +
                        std::to_string(count) + " <= " + std::to_string(k));
  }

  SelectionTrace trace;

  // Seeded random initialization: walk a shuffled sample order, keeping
  // the first K whose bases build cleanly.
  std::mt19937_64 rng(config.seed);
  std::vector<std::int64_t> order(count);
  for (std::int64_t i = 0; i < count; ++i) order[i] = i;
  for (std::int64_t i = count - 1; i > 0; --i) {
    std::swap(order[i], order[rng() % (i + 1)]);
  }

  ClassModel model;
  model.class_index = class_index;
  model.variances = config.variances;
  std::vector<std::int64_t> kernel_ids;

  // First K draws build concurrently; degenerate draws (rare) are
  // repaired by walking the rest of the shuffled order. The resulting id
  // set matches a one-by-one walk exactly.
  {
    std::vector<std::optional<Kernel>> batch(k);
    parallel_for(
        static_cast<std::size_t>(k),
        [&](std::size_t slot) {
          const std::int64_t id = order[slot];
          try {
            Kernel kernel;
            kernel.basis = build_basis(samples[id], operators,
                                       config.poly_order, config.subspace_dim);
            kernel.sample_id = id;
            batch[slot] = std::move(kernel);
          } catch (const DegeneracyError&) {
            batch[slot] = std::nullopt;
          }
        },
        config.threads);
    for (std::size_t slot = 0; slot < batch.size(); ++slot) {
      if (batch[slot]) {
        kernel_ids.push_back(order[slot]);
        model.kernels.push_back(std::move(*batch[slot]));
      } else {
        trace.init_skipped.push_back(order[slot]);
      }
    }
  }
  for (std::int64_t walk = k;
       static_cast<int>(kernel_ids.size()) < k && walk < count; ++walk) {
    const std::int64_t id = order[walk];
    try {
      Kernel kernel;
      kernel.basis = build_basis(samples[id], operators, config.poly_order,
                                 config.subspace_dim);
      kernel.sample_id = id;
      model.kernels.push_back(std::move(kernel));
      kernel_ids.push_back(id);
    } catch (const DegeneracyError&) {
      trace.init_skipped.push_back(id);
    }
  }
  if (static_cast<int>(kernel_ids.size()) < k) {
    throw DegeneracyError("only " + std::to_string(kernel_ids.size()) +
                          " of " + std::to_string(k) +
                          " initial kernels could be built");
  }

  Eigen::MatrixXd distances = pairwise_distances(samples, config.threads);
  const double scale = config.assignment_scale
                           ? *config.assignment_scale
                           : mean_finite_distance(distances);

  LikelihoodMatrix cache = likelihood_matrix(samples, model, config.threads);
  trace.initial_density_evals = samples.size() * model.kernels.size();
  Eigen::VectorXd weights = kernel_weights(cache);
  apply_weights(model, weights);
  trace.initial_q = total_log_likelihood_cached(cache, weights);

  for (int iter = 1; iter <= config.iterations; ++iter) {
    IterationRecord record;
    record.iteration = iter;

    const int removed = most_expendable_kernel(model, cache);
    record.removed_id = model.kernels[removed].sample_id;

    // Candidates are ranked against the pre-removal kernel set, so the
    // kernel leaving this iteration can never come straight back.
    Eigen::VectorXd values =
        addition_values(distances, kernel_ids, scale, config.threads);
    std::vector<std::int64_t> ranked;
    ranked.reserve(count - k);
    {
      std::vector<char> is_kernel(count, 0);
      for (std::int64_t id : kernel_ids) is_kernel[id] = 1;
      for (std::int64_t l = 0; l < count; ++l) {
        if (!is_kernel[l]) ranked.push_back(l);
      }
    }
    std::sort(ranked.begin(), ranked.end(),
              [&values](std::int64_t a, std::int64_t b) {
                if (values[a] != values[b]) return values[a] > values[b];
                return a < b;
              });

    Kernel incoming;
    std::int64_t added = -1;
    for (std::int64_t candidate : ranked) {
      try {
        incoming.basis = build_basis(samples[candidate], operators,
                                     config.poly_order, config.subspace_dim);
        incoming.sample_id = candidate;
        added = candidate;
        break;
      } catch (const DegeneracyError&) {
        record.skipped.push_back(candidate);
      }
    }
    if (added < 0) {
      throw DegeneracyError("iteration " + std::to_string(iter) +
                            ": no addition candidate survived");
    }
    record.added_id = added;

    incoming.weight = 0;
    model.kernels[removed] = std::move(incoming);
    kernel_ids[removed] = added;
    replace_column(cache, samples, model, removed, config.threads);
    record.density_evals = samples.size();

    weights = kernel_weights(cache);
    apply_weights(model, weights);
    record.q_m = total_log_likelihood_cached(cache, weights);
    trace.records.push_back(std::move(record));
  }

  model.validate();
  return {std::move(model), std::move(trace)};
}

void write_trace(std::ostream& out, const SelectionTrace& trace) {
  out << "# iteration\tq_m\tremoved_id\tadded_id\n";
  for (std::int64_t id : trace.init_skipped) {
    out << "# init skipped degenerate sample " << id << "\n";
  }
  out << 0 << '\t' << format_double(trace.initial_q) << "\t-1\t-1\n";
  for (const IterationRecord& r : trace.records) {
    for (std::int64_t id : r.skipped) {
      out << "# iteration " << r.iteration << " skipped degenerate candidate "
          << id << "\n";
    }
    out << r.iteration << '\t' << format_double(r.q_m) << '\t' << r.removed_id
        << '\t' << r.added_id << '\n';
  }
}

void write_trace(const std::filesystem::path& path,
                 const SelectionTrace& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write trace to '" + path.string() + "'");
  write_trace(out, trace);
  if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
}

}  // namespace kd
