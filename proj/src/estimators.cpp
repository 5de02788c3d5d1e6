#include "civkit/estimators.hpp"

#include "civkit/error.hpp"

#include <cmath>
#include <sstream>

namespace civkit {

namespace {

constexpr double kSingularTol = 1e-10;
constexpr double kLeverageTol = 1e-10;

Vector column_rms(const Matrix& m) {
  Vector s(m.cols());
  for (Index j = 0; j < m.cols(); ++j) {
    const double rms = m.col(j).norm() / std::sqrt(static_cast<double>(m.rows()));
    s[j] = rms > 0.0 ? rms : 1.0;
  }
  return s;
}

void demean_columns(Matrix& m) { m.rowwise() -= m.colwise().mean(); }

// Throws RankError when E_n[f w'] is singular relative to the scale of the
// raw (pre-demeaning) columns.
void check_moment_matrix(const Matrix& a, const Vector& f_scale, const Vector& w_scale) {
  const Matrix normalized = f_scale.cwiseInverse().asDiagonal() * a * w_scale.cwiseInverse().asDiagonal();
  const Eigen::JacobiSVD<Matrix> svd_norm(normalized);
  if (svd_norm.singularValues().minCoeff() <= kSingularTol) {
    const Eigen::JacobiSVD<Matrix> svd(a);
    std::ostringstream msg;
    msg << "moment matrix E_n[F W'] is singular (smallest singular value "
        << svd.singularValues().minCoeff() << "); the instrument is irrelevant or collinear with X";
    throw RankError(msg.str(), svd.singularValues().minCoeff());
  }
}

std::string aliased_warning(const Dataset& data, const std::vector<Index>& aliased) {
  std::string msg = "covariate(s)";
  for (Index j : aliased) msg += " " + data.covariate_names()[static_cast<size_t>(j)];
  return msg + " collinear with the category dummies; within coefficient set to 0";
}

Vector expand_by_code(const Eigen::Ref<const Vector>& per_category, const Codes& z) {
  Vector out(static_cast<Index>(z.size()));
  for (size_t i = 0; i < z.size(); ++i) out[static_cast<Index>(i)] = per_category[z[i]];
  return out;
}

void check_leverage(const Dataset& data, const Vector& lev, const std::string& estimator,
                    const char* projection) {
  for (Index i = 0; i < lev.size(); ++i) {
    if (lev[i] >= 1.0 - kLeverageTol) {
      const auto& label = data.category_labels()[static_cast<size_t>(data.z()[static_cast<size_t>(i)])];
      throw JackknifeUndefinedError(estimator + " undefined: observation " + std::to_string(i + 1) +
                                        " has leverage 1 under the " + projection +
                                        " projection (category '" + label + "')",
                                    label);
    }
  }
}

// Leave-one-out fitted value (p_i - h_i v_i) / (1 - h_i).
Vector leave_one_out(const Vector& projected, const Vector& lev, const Eigen::Ref<const Vector>& v) {
  return (projected.array() - lev.array() * v.array()) / (1.0 - lev.array());
}

}  // namespace

std::string to_string(JiveVariant variant) {
  switch (variant) {
    case JiveVariant::kJive1: return "JIVE";
    case JiveVariant::kIjive: return "IJIVE";
    case JiveVariant::kUjive: return "UJIVE";
  }
  return "JIVE";
}

FirstStage estimate_pi_within(const Dataset& data, AliasPolicy policy) {
  FirstStage fs;
  if (data.num_covariates() == 0) {
    fs.pi_hat = Vector(0);
    fs.residuals = data.d();
    return fs;
  }
  const WithinProjection within(data.z(), data.num_categories(), data.x(), policy,
                                data.covariate_names());
  fs.pi_hat = within.coefficients(data.d());
  fs.residuals = data.d() - data.x() * fs.pi_hat;
  fs.aliased = within.aliased();
  return fs;
}

Matrix sandwich_cov(const Eigen::Ref<const Matrix>& fhat, const Eigen::Ref<const Matrix>& w,
                    const Eigen::Ref<const Vector>& uhat) {
  const auto n = static_cast<double>(fhat.rows());
  const Matrix a = fhat.transpose() * w / n;
  const Eigen::FullPivLU<Matrix> lu(a);
  if (!lu.isInvertible()) {
    const Eigen::JacobiSVD<Matrix> svd(a);
    throw RankError("sandwich bread E_n[F W'] is singular", svd.singularValues().minCoeff());
  }
  const Matrix weighted = fhat.array().colwise() * uhat.array().square();
  const Matrix b = weighted.transpose() * fhat / n;
  const Matrix a_inv = lu.inverse();
  const Matrix c = a_inv * b * a_inv.transpose() / n;
  return (c + c.transpose()) / 2.0;
}

IvFit iv_fit(const Dataset& data, const Eigen::Ref<const Vector>& first_stage, std::string tag,
             const FitOptions& options) {
  const Index n = data.n();
  const Index p = data.num_covariates() + 1;
  if (first_stage.size() != n) throw ValidationError("first-stage vector has wrong length");
  if (!first_stage.allFinite()) throw NumericalError("non-finite first-stage instrument");

  Matrix f(n, p), w(n, p);
  f.col(0) = first_stage;
  w.col(0) = data.d();
  f.rightCols(p - 1) = data.x();
  w.rightCols(p - 1) = data.x();
  Vector y = data.y();
  const Vector f_scale = column_rms(f);
  const Vector w_scale = column_rms(w);
  if (options.intercept) {
    demean_columns(f);
    demean_columns(w);
    y.array() -= y.mean();
  }

  const Matrix a = f.transpose() * w / static_cast<double>(n);
  check_moment_matrix(a, f_scale, w_scale);

  IvFit fit;
  fit.estimator_tag = std::move(tag);
  fit.theta = a.fullPivLu().solve(f.transpose() * y / static_cast<double>(n));
  const Vector u = y - w * fit.theta;
  fit.cov = sandwich_cov(f, w, u);
  fit.se = fit.cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return fit;
}

IvFit civ_fit(const Dataset& data, int k, const FitOptions& options) {
  if (k < 2) {
    throw DomainError("CIV needs k >= 2 support points (k = " + std::to_string(k) +
                      " makes the instrument constant)");
  }
  FirstStage fs = estimate_pi_within(data, AliasPolicy::kDrop);
  const auto stats = category_stats(fs.residuals, data.z(), data.num_categories());
  auto model = fit_kcmeans(stats, k);
  if (model.k_effective < 2) {
    throw WeakInstrumentError("K-conditional-means found a single support point; the CIV instrument is constant");
  }

  Vector instrument(data.n());
  for (Index i = 0; i < data.n(); ++i) instrument[i] = model.predict(data.z()[static_cast<size_t>(i)]);
  if (data.num_covariates() > 0) instrument += data.x() * fs.pi_hat;

  IvFit fit = iv_fit(data, instrument, "CIV (K=" + std::to_string(k) + ")", options);
  if (model.k_effective < k) {
    fit.warnings.push_back("k_effective = " + std::to_string(model.k_effective) + " < k = " +
                           std::to_string(k) + " (fewer distinct category means than clusters)");
  }
  if (!fs.aliased.empty()) fit.warnings.push_back(aliased_warning(data, fs.aliased));
  fit.first_stage = CivFirstStage{std::move(model), std::move(fs.pi_hat)};
  return fit;
}

IvFit oracle_fit(const Dataset& data, const Eigen::Ref<const Vector>& m0,
                 const Eigen::Ref<const Vector>& pi0, const FitOptions& options) {
  if (m0.size() != data.num_categories()) throw ValidationError("m0 must have one value per category");
  if (pi0.size() != data.num_covariates()) throw ValidationError("pi0 must have one value per covariate");
  Vector instrument = expand_by_code(m0, data.z());
  if (data.num_covariates() > 0) instrument += data.x() * pi0;
  return iv_fit(data, instrument, "Oracle", options);
}

IvFit tsls_fit(const Dataset& data, const FitOptions& options) {
  const WithinProjection within(data.z(), data.num_categories(), data.x(), AliasPolicy::kDrop);
  IvFit fit = iv_fit(data, within.fitted(data.d()), "TSLS", options);
  if (!within.aliased().empty()) fit.warnings.push_back(aliased_warning(data, within.aliased()));
  return fit;
}

Vector leverage(const Dataset& data, AliasPolicy policy) {
  const WithinProjection within(data.z(), data.num_categories(), data.x(), policy,
                                data.covariate_names());
  return within.leverage();
}

Vector jive_instrument(const Dataset& data, JiveVariant variant, const FitOptions& options) {
  const std::string tag = to_string(variant);
  const WithinProjection full(data.z(), data.num_categories(), data.x(), AliasPolicy::kDrop);
  const CovariateProjection covariates(data.x(), options.intercept);
  const Vector& d = data.d();

  const Vector p_full = full.fitted(d);
  const Vector h_full = full.leverage();
  switch (variant) {
    case JiveVariant::kJive1:
      check_leverage(data, h_full, tag, "instrument");
      return leave_one_out(p_full, h_full, d);
    case JiveVariant::kUjive: {
      const Vector h_cov = covariates.leverage();
      check_leverage(data, h_full, tag, "instrument");
      check_leverage(data, h_cov, tag, "covariate");
      return leave_one_out(p_full, h_full, d) - leave_one_out(covariates.fitted(d), h_cov, d);
    }
    case JiveVariant::kIjive: {
      // Partial X out first: with M = M_X, span(M Z) has projection P_full - P_X,
      // so (P_full - P_X) M d = P_full d - P_X d.
      const Vector p_cov = covariates.fitted(d);
      const Vector h_tilde = h_full - covariates.leverage();
      check_leverage(data, h_tilde, tag, "partialled instrument");
      const Vector d_tilde = d - p_cov;
      return leave_one_out(p_full - p_cov, h_tilde, d_tilde);
    }
  }
  throw DomainError("unknown jackknife variant");
}

IvFit jive_fit(const Dataset& data, JiveVariant variant, const FitOptions& options) {
  const Vector instrument = jive_instrument(data, variant, options);
  IvFit fit = iv_fit(data, instrument, to_string(variant), options);
  if (data.num_covariates() > 0) {
    const WithinProjection full(data.z(), data.num_categories(), data.x(), AliasPolicy::kDrop);
    if (!full.aliased().empty()) fit.warnings.push_back(aliased_warning(data, full.aliased()));
  }
  return fit;
}

double smallest_generalized_root(const Eigen::Matrix2d& a, const Eigen::Matrix2d& b) {
  // det(b - k a) = qa k^2 + qb k + qc
  const double qa = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  const double qb = -(a(0, 0) * b(1, 1) + a(1, 1) * b(0, 0) - a(0, 1) * b(1, 0) - a(1, 0) * b(0, 1));
  const double qc = b(0, 0) * b(1, 1) - b(0, 1) * b(1, 0);
  if (!(qa > 0.0)) throw NumericalError("LIML: residual cross-product W'M W is singular");
  double disc = qb * qb - 4.0 * qa * qc;
  if (disc < 0.0) {
    if (disc < -1e-10 * qb * qb) {
      throw NumericalError("LIML: negative discriminant in the kappa quadratic");
    }
    disc = 0.0;
  }
  const double q = -0.5 * (qb + std::copysign(std::sqrt(disc), qb));
  const double r1 = q / qa;
  const double r2 = q != 0.0 ? qc / q : r1;
  return std::min(r1, r2);
}

IvFit liml_fit(const Dataset& data, const FitOptions& options) {
  if (data.num_categories() < 2) throw DomainError("LIML needs at least 2 categories");
  const WithinProjection full(data.z(), data.num_categories(), data.x(), AliasPolicy::kDrop);
  const CovariateProjection covariates(data.x(), options.intercept);

  Eigen::Matrix<double, Eigen::Dynamic, 2> wbar(data.n(), 2);
  wbar.col(0) = data.y();
  wbar.col(1) = data.d();
  Eigen::Matrix<double, Eigen::Dynamic, 2> resid_full(data.n(), 2), resid_cov(data.n(), 2);
  for (Index j = 0; j < 2; ++j) {
    resid_full.col(j) = full.residuals(wbar.col(j));
    resid_cov.col(j) = covariates.residuals(wbar.col(j));
  }
  const Eigen::Matrix2d a = wbar.transpose() * resid_full;
  const Eigen::Matrix2d b = wbar.transpose() * resid_cov;
  const double kappa = smallest_generalized_root((a + a.transpose()) / 2.0, (b + b.transpose()) / 2.0);

  // k-class instrument for D: (I - kappa M_{[Z,X]}) D. X is in span([Z, X]) so
  // its own instrument is X.
  const Vector instrument = data.d() - kappa * resid_full.col(1);
  IvFit fit = iv_fit(data, instrument, "LIML", options);
  fit.kappa = kappa;
  if (kappa < 1.0 - 1e-8) {
    std::ostringstream msg;
    msg << "LIML kappa = " << kappa << " < 1";
    fit.warnings.push_back(msg.str());
  }
  if (!full.aliased().empty()) fit.warnings.push_back(aliased_warning(data, full.aliased()));
  return fit;
}

}  // namespace civkit
