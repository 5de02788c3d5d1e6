#pragma once

// Projections used by the estimators, computed from group sums and small
// Gram matrices. Nothing here builds an n x G dummy matrix or an n x n
// projection.

#include "civkit/types.hpp"

#include <string>
#include <vector>

namespace civkit {

/// What to do when a covariate is collinear with the others (or, for the
/// within projection, with the category dummies).
enum class AliasPolicy {
  kError,  ///< throw RankError
  kDrop,   ///< drop the aliased column; its coefficient is reported as 0
};

/// Category means of v.
Vector group_means(const Eigen::Ref<const Vector>& v, const Codes& z, const std::vector<Index>& counts);

/// Projection onto span([category dummies, X]).
///
/// Fitted values are mean_z(v) + (x - mean_z(x))' pi_within(v) and the
/// leverage is 1/n_z + xt' (Xt' Xt)^{-1} xt with Xt the within-demeaned X.
class WithinProjection {
 public:
  WithinProjection(const Codes& z, int num_categories, const Matrix& x,
                   AliasPolicy policy = AliasPolicy::kError,
                   const std::vector<std::string>& names = {});

  /// Within-regression coefficients of v on X (zeros for aliased columns).
  Vector coefficients(const Eigen::Ref<const Vector>& v) const;
  Vector fitted(const Eigen::Ref<const Vector>& v) const;
  Vector residuals(const Eigen::Ref<const Vector>& v) const { return v - fitted(v); }
  Vector leverage() const;

  /// Dimension of the projection space.
  Index rank() const { return num_categories_ + static_cast<Index>(kept_.size()); }
  const std::vector<Index>& aliased() const { return aliased_; }
  const std::vector<Index>& counts() const { return counts_; }

 private:
  Codes z_;
  int num_categories_;
  std::vector<Index> counts_;
  std::vector<Index> kept_;
  std::vector<Index> aliased_;
  Matrix within_x_;  // kept columns only
  Eigen::LLT<Matrix> gram_;
  Index num_covariates_;
};

/// Projection onto span([1, X]) (or span(X) without the intercept).
class CovariateProjection {
 public:
  CovariateProjection(const Matrix& x, bool intercept);

  Vector fitted(const Eigen::Ref<const Vector>& v) const;
  Vector residuals(const Eigen::Ref<const Vector>& v) const { return v - fitted(v); }
  Vector leverage() const;
  Index rank() const { return design_.cols(); }

 private:
  Matrix design_;  // linearly independent columns of [1, X]
  Eigen::LLT<Matrix> gram_;
};

namespace detail {

/// Indices of a maximal linearly independent subset of the columns of m,
/// ascending. Columns are judged after scaling by `scale` (one entry per
/// column); a pivot below tol counts as dependent.
std::vector<Index> independent_columns(const Matrix& m, const Vector& scale, double tol = 1e-9);

}  // namespace detail

}  // namespace civkit
