#pragma once

// IV estimators with a single categorical instrument and J exogenous
// covariates. Every estimator reduces to a just-identified IV of Y on
// W = (D, X') with instrument F = (f, X'), where f is the estimator-specific
// first-stage value, followed by a heteroskedasticity-robust sandwich.
//
// An intercept is included by default. It is partialled out of Y, W and F
// before the moments are formed, so theta = (tau, beta) excludes it; the
// sandwich computed on the demeaned system equals the (tau, beta) block of the
// full-system sandwich.

#include "civkit/dataset.hpp"
#include "civkit/kcmeans.hpp"
#include "civkit/projection.hpp"
#include "civkit/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace civkit {

struct FitOptions {
  bool intercept = true;
};

struct FirstStage {
  Vector pi_hat;
  /// D - X' pi_hat (not demeaned).
  Vector residuals;
  /// Covariates dropped as collinear with the category dummies.
  std::vector<Index> aliased;
};

struct CivFirstStage {
  KCMeansModel<double> model;
  Vector pi_hat;
};

struct IvFit {
  /// (tau, beta_1, ..., beta_J)
  Vector theta;
  /// Var(theta_hat), symmetric.
  Matrix cov;
  Vector se;
  std::string estimator_tag;
  std::optional<CivFirstStage> first_stage;
  /// k-class parameter (LIML only).
  std::optional<double> kappa;
  std::vector<std::string> warnings;

  double tau() const { return theta[0]; }
  double tau_se() const { return se[0]; }
};

enum class JiveVariant { kJive1, kIjive, kUjive };

std::string to_string(JiveVariant variant);

/// Within-category regression of D on X with category fixed effects.
/// J = 0 gives an empty pi_hat and residuals = d.
FirstStage estimate_pi_within(const Dataset& data, AliasPolicy policy = AliasPolicy::kError);

/// n^{-1} A^{-1} B A^{-T} with A = E_n[f w'], B = E_n[u^2 f f'], symmetrized.
Matrix sandwich_cov(const Eigen::Ref<const Matrix>& fhat, const Eigen::Ref<const Matrix>& w,
                    const Eigen::Ref<const Vector>& uhat);

/// Just-identified IV of Y on (D, X) with instruments (first_stage, X).
IvFit iv_fit(const Dataset& data, const Eigen::Ref<const Vector>& first_stage, std::string tag,
             const FitOptions& options = {});

/// Categorical IV: K-conditional-means first stage on D - X' pi_hat.
IvFit civ_fit(const Dataset& data, int k, const FitOptions& options = {});

/// Infeasible estimator with known m0 (indexed by category code) and pi0.
IvFit oracle_fit(const Dataset& data, const Eigen::Ref<const Vector>& m0,
                 const Eigen::Ref<const Vector>& pi0, const FitOptions& options = {});

IvFit tsls_fit(const Dataset& data, const FitOptions& options = {});

/// Diagonal of the projection onto [category dummies, X].
Vector leverage(const Dataset& data, AliasPolicy policy = AliasPolicy::kError);

/// Leave-one-out first-stage values of the jackknife variant. Entry i does not
/// depend on (y_i, d_i).
Vector jive_instrument(const Dataset& data, JiveVariant variant, const FitOptions& options = {});

IvFit jive_fit(const Dataset& data, JiveVariant variant, const FitOptions& options = {});

/// LIML with kappa the smallest root of det(B - kappa A) = 0,
/// A = W'M_{[Z,X]}W, B = W'M_X W, W = [Y, D].
IvFit liml_fit(const Dataset& data, const FitOptions& options = {});

/// Smallest root of det(b - kappa a) = 0 for symmetric 2x2 a, b.
double smallest_generalized_root(const Eigen::Matrix2d& a, const Eigen::Matrix2d& b);

}  // namespace civkit
