#pragma once

#include "civkit/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace civkit {

/// Outcome, endogenous regressor, covariates and an integer-coded categorical
/// instrument. Validated at construction and immutable afterwards.
class Dataset {
 public:
  /// Throws ValidationError unless all columns have the same length n >= 2,
  /// every code lies in [0, G) with each code present, and y, d, x are finite.
  Dataset(Vector y, Vector d, Matrix x, Codes z, std::vector<std::string> category_labels,
          std::vector<std::string> covariate_names = {});

  const Vector& y() const { return y_; }
  const Vector& d() const { return d_; }
  const Matrix& x() const { return x_; }
  const Codes& z() const { return z_; }
  const std::vector<std::string>& category_labels() const { return labels_; }
  const std::vector<std::string>& covariate_names() const { return x_names_; }

  Index n() const { return y_.size(); }
  Index num_covariates() const { return x_.cols(); }
  int num_categories() const { return static_cast<int>(labels_.size()); }

  /// Per-category observation counts.
  std::vector<Index> category_counts() const;

  bool operator==(const Dataset& other) const;

 private:
  Vector y_;
  Vector d_;
  Matrix x_;
  Codes z_;
  std::vector<std::string> labels_;
  std::vector<std::string> x_names_;
};

/// Dense codes in first-appearance order plus the distinct labels in that order.
struct Factorized {
  Codes codes;
  std::vector<std::string> labels;
};

Factorized factorize(const std::vector<std::string>& raw);

/// Column-name mapping for CSV ingestion.
struct CsvSchema {
  std::string y;
  std::string d;
  std::string z;
  std::vector<std::string> x;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset parse_csv(const std::string& text, const CsvSchema& schema);

/// Writes y, d, z, x columns with round-trip precision so that load_csv
/// reproduces the dataset bit for bit.
void write_csv(const Dataset& data, const std::filesystem::path& path,
               const CsvSchema& schema = {"y", "d", "z", {}});

/// Sufficient statistics of a residual vector for K-conditional-means.
template <class Scalar = double>
struct CategoryStats {
  std::vector<Index> counts;
  VectorX<Scalar> means;
  /// Permutation sorting means ascending, ties by code ascending.
  std::vector<int> order;

  int num_categories() const { return static_cast<int>(counts.size()); }
};

/// Per-category counts and residual means. Throws ValidationError on
/// non-finite residuals, out-of-range codes or empty categories.
CategoryStats<double> category_stats(const Eigen::Ref<const Vector>& residuals, const Codes& z,
                                     std::optional<int> num_categories = std::nullopt);

/// Sorting permutation used by category_stats; exposed for stats built by hand.
template <class Scalar>
std::vector<int> sort_order(const VectorX<Scalar>& means);

}  // namespace civkit

#include "civkit/detail/sort_order.hpp"
