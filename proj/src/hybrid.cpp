#include "kd/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "kd/error.hpp"
#include "kd/parallel.hpp"
#include "kd/text.hpp"

namespace kd {

namespace {

int argmax_lowest(const Eigen::VectorXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

void check_alignment(const PosteriorTable& a, const PosteriorTable& b,
                     const std::vector<int>& labels) {
  if (a.rows.rows() != b.rows.rows() || a.rows.cols() != b.rows.cols()) {
    throw ConsistencyError("posterior tables disagree on shape");
  }
  if (labels.size() != a.size()) {
    throw ConsistencyError("label count does not match posterior tables");
  }
  for (int l : labels) {
    if (l < 0 || l >= a.class_count()) {
      throw RangeError("label " + std::to_string(l) + " out of range");
    }
  }
}

}  // namespace

void PosteriorTable::validate() const {
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    if ((rows.row(i).array() < 0).any()) {
      throw ValidationError(source_name + ": negative probability in row " +
                            std::to_string(i));
    }
    double sum = rows.row(i).sum();
    if (std::abs(sum - 1.0) > 1e-6) {
      throw ValidationError(source_name + ": row " + std::to_string(i) +
                            " sums to " + format_double(sum));
    }
  }
}

PosteriorTable load_posterior_table(const std::filesystem::path& path,
                                    std::size_t expected_rows,
                                    int class_count) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");

  PosteriorTable table;
  table.source_name = path.filename().string();
  table.rows.resize(expected_rows, class_count);
  std::vector<char> seen(expected_rows, 0);

  std::string line;
  std::size_t line_no = 0;
  std::size_t filled = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    auto fields = split_fields(line);
    const std::string ctx =
        "'" + path.string() + "' line " + std::to_string(line_no);
    if (fields.size() != static_cast<std::size_t>(class_count) + 1) {
      throw FormatError(ctx + ": expected index plus " +
                        std::to_string(class_count) + " probabilities");
    }
    std::int64_t index = parse_int(fields[0], ctx);
    if (index < 0 || index >= static_cast<std::int64_t>(expected_rows)) {
      throw ConsistencyError(ctx + ": sample index " + std::to_string(index) +
                             " outside [0," + std::to_string(expected_rows) +
                             ")");
    }
    if (seen[index]) {
      throw ConsistencyError(ctx + ": duplicate sample index " +
                             std::to_string(index));
    }
    seen[index] = 1;
    ++filled;
    for (int c = 0; c < class_count; ++c) {
      table.rows(index, c) = parse_double(fields[c + 1], ctx);
    }
  }
  if (filled != expected_rows) {
    throw ConsistencyError("'" + path.string() + "': found " +
                           std::to_string(filled) + " rows, expected " +
                           std::to_string(expected_rows));
  }
  table.validate();
  return table;
}

void save_posterior_table(const std::filesystem::path& path,
                          const PosteriorTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "# sample_index";
  for (int c = 0; c < table.class_count(); ++c) out << "\tp" << c;
  out << "\n";
  for (Eigen::Index i = 0; i < table.rows.rows(); ++i) {
    out << i;
    for (Eigen::Index c = 0; c < table.rows.cols(); ++c) {
      out << '\t' << format_double(table.rows(i, c));
    }
    out << '\n';
  }
  if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
}

std::vector<int> load_labels(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<int> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_comment_or_blank(line)) continue;
    auto fields = split_fields(line);
    const std::string ctx =
        "'" + path.string() + "' line " + std::to_string(line_no);
    if (fields.size() != 1) throw FormatError(ctx + ": expected one label");
    labels.push_back(static_cast<int>(parse_int(fields[0], ctx)));
  }
  return labels;
}

void save_labels(const std::filesystem::path& path,
                 const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  for (int l : labels) out << l << '\n';
  if (!out.good()) throw IoError("failed writing '" + path.string() + "'");
}

int cascade(const Eigen::VectorXd& discriminative,
            const Eigen::VectorXd& generative, double tau) {
  if (discriminative.size() != generative.size()) {
    throw ShapeError("posterior vectors disagree on class count");
  }
  if (discriminative.maxCoeff() > tau) return argmax_lowest(discriminative);
  return argmax_lowest(generative);
}

int stack(const Eigen::VectorXd& discriminative,
          const Eigen::VectorXd& generative, double w) {
  if (discriminative.size() != generative.size()) {
    throw ShapeError("posterior vectors disagree on class count");
  }
  Eigen::VectorXd combined = w * discriminative + (1.0 - w) * generative;
  return argmax_lowest(combined);
}

double hybrid_error(HybridMode mode, const PosteriorTable& discriminative,
                    const PosteriorTable& generative,
                    const std::vector<int>& labels, double parameter) {
  check_alignment(discriminative, generative, labels);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    int decided = mode == HybridMode::kCascade
                      ? cascade(discriminative.rows.row(i).transpose(),
                                generative.rows.row(i).transpose(), parameter)
                      : stack(discriminative.rows.row(i).transpose(),
                              generative.rows.row(i).transpose(), parameter);
    if (decided != labels[i]) ++wrong;
  }
  return labels.empty() ? 0.0 : double(wrong) / double(labels.size());
}

TuneResult tune(HybridMode mode, const PosteriorTable& discriminative,
                const PosteriorTable& generative,
                const std::vector<int>& labels,
                const std::vector<double>& grid, int folds,
                std::uint64_t seed) {
  check_alignment(discriminative, generative, labels);
  if (grid.empty()) throw ConfigError("parameter grid is empty");
  for (double g : grid) {
    if (g < 0 || g > 1) throw ConfigError("grid values must lie in [0,1]");
  }
  if (folds < 2) throw ConfigError("need at least 2 folds");
  if (labels.size() < static_cast<std::size_t>(folds)) {
    throw CapacityError("fewer samples than folds");
  }

  // Seeded stratified partition: shuffle within each class, deal
  // round-robin to folds.
  const int m = discriminative.class_count();
  std::vector<int> fold_of(labels.size());
  std::mt19937_64 rng(seed);
  for (int c = 0; c < m; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng() % i]);
    }
    for (std::size_t r = 0; r < members.size(); ++r) {
      fold_of[members[r]] = static_cast<int>(r % folds);
    }
  }

  auto decide = [&](std::size_t i, double parameter) {
    return mode == HybridMode::kCascade
               ? cascade(discriminative.rows.row(i).transpose(),
                         generative.rows.row(i).transpose(), parameter)
               : stack(discriminative.rows.row(i).transpose(),
                       generative.rows.row(i).transpose(), parameter);
  };

  TuneResult result;
  result.grid_errors.resize(grid.size());
  parallel_for(grid.size(), [&](std::size_t g) {
    const double parameter = grid[g];
    double error_sum = 0;
    for (int f = 0; f < folds; ++f) {
      std::size_t wrong = 0, total = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        if (fold_of[i] != f) continue;
        ++total;
        if (decide(i, parameter) != labels[i]) ++wrong;
      }
      if (total > 0) error_sum += double(wrong) / double(total);
    }
    result.grid_errors[g] = {parameter, error_sum / folds};
  });

  result.parameter = result.grid_errors.front().first;
  result.mean_fold_error = result.grid_errors.front().second;
  for (const auto& [parameter, error] : result.grid_errors) {
    if (error < result.mean_fold_error ||
        (error == result.mean_fold_error && parameter < result.parameter)) {
      result.parameter = parameter;
      result.mean_fold_error = error;
    }
  }
  return result;
}

void write_tune_report(std::ostream& out, const TuneResult& result) {
  out << "# parameter\tmean_fold_error\n";
  for (const auto& [parameter, error] : result.grid_errors) {
    out << format_double(parameter) << '\t' << format_double(error) << '\n';
  }
  out << "tuned_parameter = " << format_double(result.parameter) << "\n";
  out << "tuned_mean_fold_error = " << format_double(result.mean_fold_error)
      << "\n";
}

std::vector<double> default_parameter_grid(double step) {
  if (!(step > 0) || step > 1) throw ConfigError("grid step must be in (0,1]");
  std::vector<double> grid;
  for (int i = 0;; ++i) {
    double v = i * step;
    if (v >= 1.0) break;
    grid.push_back(v);
  }
  grid.push_back(1.0);
  return grid;
}

}  // namespace kd
