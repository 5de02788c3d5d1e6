#include "civkit/projection.hpp"

#include "civkit/error.hpp"

#include <algorithm>
#include <sstream>

namespace civkit {

namespace detail {

std::vector<Index> independent_columns(const Matrix& m, const Vector& scale, double tol) {
  if (m.cols() == 0) return {};
  Matrix scaled = m;
  for (Index j = 0; j < m.cols(); ++j) scaled.col(j) /= scale[j];
  Eigen::ColPivHouseholderQR<Matrix> qr(scaled);
  const auto& r = qr.matrixQR();
  const Index diag = std::min(r.rows(), r.cols());
  std::vector<Index> kept;
  for (Index i = 0; i < diag; ++i) {
    if (std::abs(r(i, i)) > tol) kept.push_back(qr.colsPermutation().indices()[i]);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

}  // namespace detail

namespace {

Vector column_scale(const Matrix& x) {
  Vector scale(x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double norm = x.col(j).norm();
    scale[j] = norm > 0.0 ? norm : 1.0;
  }
  return scale;
}

Matrix select_columns(const Matrix& m, const std::vector<Index>& cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

}  // namespace

Vector group_means(const Eigen::Ref<const Vector>& v, const Codes& z, const std::vector<Index>& counts) {
  Vector means = Vector::Zero(static_cast<Index>(counts.size()));
  for (size_t i = 0; i < z.size(); ++i) means[z[i]] += v[static_cast<Index>(i)];
  for (size_t g = 0; g < counts.size(); ++g) means[static_cast<Index>(g)] /= static_cast<double>(counts[g]);
  return means;
}

WithinProjection::WithinProjection(const Codes& z, int num_categories, const Matrix& x,
                                   AliasPolicy policy, const std::vector<std::string>& names)
    : z_(z), num_categories_(num_categories), num_covariates_(x.cols()) {
  counts_.assign(static_cast<size_t>(num_categories), 0);
  for (int code : z) ++counts_[static_cast<size_t>(code)];

  Matrix within = x;
  for (Index j = 0; j < x.cols(); ++j) {
    const Vector means = group_means(x.col(j), z, counts_);
    for (size_t i = 0; i < z.size(); ++i) within(static_cast<Index>(i), j) -= means[z[i]];
  }
  // Scale by the raw column norm so a covariate constant within categories
  // reads as aliased even when demeaning leaves round-off behind.
  kept_ = detail::independent_columns(within, column_scale(x));
  for (Index j = 0; j < x.cols(); ++j) {
    if (std::find(kept_.begin(), kept_.end(), j) == kept_.end()) aliased_.push_back(j);
  }
  if (!aliased_.empty() && policy == AliasPolicy::kError) {
    std::ostringstream msg;
    msg << "within-category covariate cross-product is singular: covariate(s)";
    for (Index j : aliased_) {
      msg << ' ' << (static_cast<size_t>(j) < names.size() ? names[static_cast<size_t>(j)] : "x" + std::to_string(j + 1));
    }
    msg << " constant within categories or collinear with other covariates";
    const Eigen::JacobiSVD<Matrix> svd(within);
    throw RankError(msg.str(), svd.singularValues().size() ? svd.singularValues().minCoeff() : 0.0);
  }
  within_x_ = select_columns(within, kept_);
  if (!kept_.empty()) gram_.compute(within_x_.transpose() * within_x_);
}

Vector WithinProjection::coefficients(const Eigen::Ref<const Vector>& v) const {
  Vector pi = Vector::Zero(num_covariates_);
  if (kept_.empty()) return pi;
  const Vector sub = gram_.solve(within_x_.transpose() * v);
  for (size_t j = 0; j < kept_.size(); ++j) pi[kept_[j]] = sub[static_cast<Index>(j)];
  return pi;
}

Vector WithinProjection::fitted(const Eigen::Ref<const Vector>& v) const {
  const Vector means = group_means(v, z_, counts_);
  Vector out(v.size());
  for (size_t i = 0; i < z_.size(); ++i) out[static_cast<Index>(i)] = means[z_[i]];
  if (!kept_.empty()) out.noalias() += within_x_ * gram_.solve(within_x_.transpose() * v);
  return out;
}

Vector WithinProjection::leverage() const {
  Vector h(static_cast<Index>(z_.size()));
  for (size_t i = 0; i < z_.size(); ++i) {
    h[static_cast<Index>(i)] = 1.0 / static_cast<double>(counts_[static_cast<size_t>(z_[i])]);
  }
  if (!kept_.empty()) {
    const Matrix l_inv_xt = gram_.matrixL().solve(within_x_.transpose());
    h += l_inv_xt.colwise().squaredNorm().transpose();
  }
  return h;
}

CovariateProjection::CovariateProjection(const Matrix& x, bool intercept) {
  const Index n = x.rows();
  Matrix full(n, x.cols() + (intercept ? 1 : 0));
  if (intercept) full.col(0).setOnes();
  full.rightCols(x.cols()) = x;
  design_ = select_columns(full, detail::independent_columns(full, column_scale(full)));
  if (design_.cols() > 0) gram_.compute(design_.transpose() * design_);
}

Vector CovariateProjection::fitted(const Eigen::Ref<const Vector>& v) const {
  if (design_.cols() == 0) return Vector::Zero(v.size());
  return design_ * gram_.solve(design_.transpose() * v);
}

Vector CovariateProjection::leverage() const {
  if (design_.cols() == 0) return Vector::Zero(design_.rows());
  const Matrix l_inv = gram_.matrixL().solve(design_.transpose());
  return l_inv.colwise().squaredNorm().transpose();
}

}  // namespace civkit
