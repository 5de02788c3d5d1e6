#include "civkit/error.hpp"
#include "civkit/estimators.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <random>

using namespace civkit;

namespace {

double rel_diff(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

double rel_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-300, b.cwiseAbs().maxCoeff());
}

Dataset with_y(const Dataset& data, const Vector& y) {
  return Dataset(y, data.d(), data.x(), data.z(), data.category_labels(), data.covariate_names());
}

Dataset with_d(const Dataset& data, const Vector& d) {
  return Dataset(data.y(), d, data.x(), data.z(), data.category_labels(), data.covariate_names());
}

Dataset with_x(const Dataset& data, const Matrix& x) {
  return Dataset(data.y(), data.d(), x, data.z(), data.category_labels());
}

Dataset two_group(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> normal;
  Codes z(static_cast<size_t>(n));
  Vector y(n), d(n);
  for (int i = 0; i < n; ++i) {
    z[static_cast<size_t>(i)] = i % 2;
    d[i] = 0.8 * z[static_cast<size_t>(i)] + normal(rng);
    y[i] = 1.3 * d[i] + 0.5 * normal(rng);
  }
  return Dataset(y, d, Matrix(n, 0), z, {"a", "b"});
}

double wald_ratio(const Dataset& data) {
  double y0 = 0, y1 = 0, d0 = 0, d1 = 0, n0 = 0, n1 = 0;
  for (Index i = 0; i < data.n(); ++i) {
    if (data.z()[static_cast<size_t>(i)] == 0) {
      y0 += data.y()[i];
      d0 += data.d()[i];
      ++n0;
    } else {
      y1 += data.y()[i];
      d1 += data.d()[i];
      ++n1;
    }
  }
  return (y1 / n1 - y0 / n0) / (d1 / n1 - d0 / n0);
}

void check_psd(const IvFit& fit) {
  CHECK((fit.cov - fit.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, fit.cov.cwiseAbs().maxCoeff()));
  const Eigen::SelfAdjointEigenSolver<Matrix> es(fit.cov);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  CHECK(fit.se.allFinite());
  CHECK(fit.se.size() == fit.theta.size());
}

}  // namespace

TEST_CASE("within first stage") {
  std::mt19937_64 rng(11);

  SUBCASE("no covariates") {
    const auto data = oracle::random_dataset(rng, 40, 5, 0);
    const auto fs = estimate_pi_within(data);
    CHECK(fs.pi_hat.size() == 0);
    CHECK(fs.residuals == data.d());
  }

  SUBCASE("covariate constant within categories is a rank error") {
    const auto base = oracle::random_dataset(rng, 60, 6, 1);
    Matrix x(base.n(), 1);
    for (Index i = 0; i < base.n(); ++i) x(i, 0) = 2.0 * base.z()[static_cast<size_t>(i)] - 3.0;
    const auto data = with_x(base, x);
    CHECK_THROWS_AS(estimate_pi_within(data), RankError);
    CHECK_THROWS_AS(leverage(data), RankError);
    const auto fs = estimate_pi_within(data, AliasPolicy::kDrop);
    CHECK(fs.pi_hat[0] == 0.0);
    CHECK(fs.aliased == std::vector<Index>{0});
    CHECK(fs.residuals == data.d());
  }

  SUBCASE("matches dense fixed-effects regression and recovers the slope") {
    const auto data = oracle::random_dataset(rng, 4000, 40, 1);
    const auto fs = estimate_pi_within(data);
    const Eigen::MatrixXd h = oracle::full_design(data);
    const Eigen::VectorXd coef = h.colPivHouseholderQr().solve(data.d());
    CHECK(fs.pi_hat[0] == doctest::Approx(coef[data.num_categories()]).epsilon(1e-9));
    CHECK(rel_diff(fs.residuals, Vector(data.d() - data.x() * fs.pi_hat)) == 0.0);
    // Within variance of x is ~1 and residual variance ~1, so SE ~ 1/sqrt(n).
    CHECK(std::abs(fs.pi_hat[0] - 0.4) < 3.0 / std::sqrt(4000.0) * 1.1);
  }
}

TEST_CASE("saturated CIV equals TSLS") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 60; ++trial) {
    const int g = 2 + static_cast<int>(rng() % 20);
    const int j = static_cast<int>(rng() % 4);
    const auto data = oracle::random_dataset(rng, g * 2 + static_cast<int>(rng() % 300), g, j);
    const auto civ = civ_fit(data, g);
    const auto tsls = tsls_fit(data);
    CHECK(rel_diff(civ.theta, tsls.theta) <= 1e-8);
    CHECK(civ.first_stage.has_value());
    CHECK(civ.first_stage->model.k_effective == g);
  }
}

TEST_CASE("TSLS and oracle match the dense IV computation") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 40; ++trial) {
    const int g = 2 + static_cast<int>(rng() % 8);
    const int j = static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, 3 * g + 20, g, j);
    const Eigen::MatrixXd proj = oracle::projection(oracle::full_design(data));
    const auto dense = oracle::dense_iv(data, proj * data.d());
    const auto fit = tsls_fit(data);
    CHECK(rel_diff(fit.theta, dense.theta) <= 1e-9);
    CHECK(rel_diff(fit.cov, dense.cov) <= 1e-9);

    std::normal_distribution<double> normal;
    Vector m0(g), pi0(j);
    for (int c = 0; c < g; ++c) m0[c] = normal(rng);
    for (int c = 0; c < j; ++c) pi0[c] = normal(rng);
    Vector inst(data.n());
    for (Index i = 0; i < data.n(); ++i) inst[i] = m0[data.z()[static_cast<size_t>(i)]];
    if (j > 0) inst += data.x() * pi0;
    const auto od = oracle::dense_iv(data, inst);
    const auto of = oracle_fit(data, m0, pi0);
    CHECK(rel_diff(of.theta, od.theta) <= 1e-9);
    CHECK(rel_diff(of.cov, od.cov) <= 1e-9);

    const auto nd = oracle::dense_iv(data, proj * data.d(), false);
    const auto nf = tsls_fit(data, FitOptions{false});
    CHECK(rel_diff(nf.theta, nd.theta) <= 1e-9);
  }
}

TEST_CASE("just-identified design collapses to the Wald ratio") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const auto data = two_group(rng, 50 + trial);
    const double wald = wald_ratio(data);
    CHECK(civ_fit(data, 2).tau() == doctest::Approx(wald).epsilon(1e-8));
    CHECK(tsls_fit(data).tau() == doctest::Approx(wald).epsilon(1e-8));
    const auto liml = liml_fit(data);
    CHECK(*liml.kappa == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(liml.tau() == doctest::Approx(wald).epsilon(1e-8));
    // JIVE1's leave-one-out instrument varies within a category, so it is the
    // Wald ratio only in the limit; it must still match its dense definition.
    const auto loo = oracle::leave_one_out_refit(oracle::full_design(data), data.d());
    CHECK(jive_fit(data, JiveVariant::kJive1).tau() ==
          doctest::Approx(oracle::dense_iv(data, loo).theta[0]).epsilon(1e-9));
  }
}

TEST_CASE("leverage") {
  std::mt19937_64 rng(51);

  SUBCASE("dummy-only leverage is 1/n_z") {
    const auto data = oracle::random_dataset(rng, 37, 6, 0);
    const auto lev = leverage(data);
    const auto counts = data.category_counts();
    for (Index i = 0; i < data.n(); ++i) {
      CHECK(lev[i] == doctest::Approx(1.0 / static_cast<double>(counts[static_cast<size_t>(data.z()[static_cast<size_t>(i)])])));
    }
  }

  SUBCASE("singleton category has leverage exactly 1") {
    Vector y(5), d(5);
    y << 1, 2, 3, 4, 5;
    d << 0.5, 1.5, 0.2, 2.0, 3.0;
    const Dataset data(y, d, Matrix(5, 0), {0, 0, 1, 1, 2}, {"a", "b", "lonely"});
    CHECK(leverage(data)[4] == 1.0);
  }

  SUBCASE("small instance matches the dense projection diagonal") {
    for (int trial = 0; trial < 20; ++trial) {
      const auto data = oracle::random_dataset(rng, 30, 5, 2);
      const Eigen::VectorXd dense = oracle::projection(oracle::full_design(data)).diagonal();
      CHECK((leverage(data) - dense).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }

  SUBCASE("trace equals G + J") {
    for (int trial = 0; trial < 200; ++trial) {
      const int g = 1 + static_cast<int>(rng() % 30);
      const int j = static_cast<int>(rng() % 4);
      const auto data = oracle::random_dataset(rng, g * 2 + j + 5 + static_cast<int>(rng() % 200), g, j);
      CHECK(leverage(data).sum() == doctest::Approx(static_cast<double>(g + j)).epsilon(1e-8));
    }
  }
}

TEST_CASE("jackknife instruments match literal leave-one-out refits") {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 25; ++trial) {
    const int g = 2 + static_cast<int>(rng() % 5);
    const int j = static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, 3 * g + 15, g, j, 3);
    const Eigen::MatrixXd h = oracle::full_design(data);
    const Eigen::MatrixXd xc = oracle::with_intercept(data.x());

    const Eigen::VectorXd jive1 = oracle::leave_one_out_refit(h, data.d());
    const Eigen::VectorXd ujive = jive1 - oracle::leave_one_out_refit(xc, data.d());
    const Eigen::MatrixXd m_x = Eigen::MatrixXd::Identity(data.n(), data.n()) - oracle::projection(xc);
    const Eigen::VectorXd ijive = oracle::leave_one_out_refit(m_x * oracle::dummies(data), m_x * data.d());

    CHECK((jive_instrument(data, JiveVariant::kJive1) - jive1).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((jive_instrument(data, JiveVariant::kUjive) - ujive).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK((jive_instrument(data, JiveVariant::kIjive) - ijive).cwiseAbs().maxCoeff() <= 1e-9);

    CHECK(rel_diff(jive_fit(data, JiveVariant::kJive1).theta, oracle::dense_iv(data, jive1).theta) <= 1e-8);
    CHECK(rel_diff(jive_fit(data, JiveVariant::kUjive).theta, oracle::dense_iv(data, ujive).theta) <= 1e-8);
    CHECK(rel_diff(jive_fit(data, JiveVariant::kIjive).theta, oracle::dense_iv(data, ijive).theta) <= 1e-8);
  }
}

TEST_CASE("leave-one-out instrument ignores the observation's own outcome") {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> normal(0.0, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = 2 + static_cast<int>(rng() % 10);
    const int j = trial % 2 == 0 ? 0 : 1 + static_cast<int>(rng() % 2);
    const auto data = oracle::random_dataset(rng, 3 * g + static_cast<int>(rng() % 60), g, j);
    const auto i = static_cast<Index>(rng() % static_cast<unsigned>(data.n()));
    Vector y = data.y(), d = data.d();
    y[i] += normal(rng);
    d[i] += normal(rng);
    const Dataset moved(y, d, data.x(), data.z(), data.category_labels());
    for (auto variant : {JiveVariant::kJive1, JiveVariant::kUjive}) {
      const double before = jive_instrument(data, variant)[i];
      const double after = jive_instrument(moved, variant)[i];
      CHECK(after == doctest::Approx(before).epsilon(1e-9).scale(1.0));
    }
  }
}

TEST_CASE("jackknife is undefined with a singleton category") {
  Vector y(7), d(7);
  y << 1, 2, 3, 4, 5, 6, 7;
  d << 0.5, 1.5, 0.2, 2.0, 3.0, 0.1, 1.1;
  const Dataset data(y, d, Matrix(7, 0), {0, 0, 0, 1, 1, 1, 2}, {"a", "b", "lonely"});
  for (auto variant : {JiveVariant::kJive1, JiveVariant::kUjive}) {
    try {
      jive_fit(data, variant);
      FAIL("expected JackknifeUndefinedError");
    } catch (const JackknifeUndefinedError& e) {
      CHECK(e.category() == "lonely");
      CHECK(std::string(e.what()).find("lonely") != std::string::npos);
    }
  }
  CHECK_NOTHROW(tsls_fit(data));
}

TEST_CASE("LIML kappa matches the dense generalized eigenvalue") {
  std::mt19937_64 rng(81);
  for (int trial = 0; trial < 30; ++trial) {
    const int g = 3 + static_cast<int>(rng() % 6);
    const int j = static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, 4 * g + 20, g, j, 2, 0.5);
    const auto fit = liml_fit(data);
    REQUIRE(fit.kappa.has_value());
    CHECK(*fit.kappa == doctest::Approx(oracle::dense_liml_kappa(data)).epsilon(1e-9));
    CHECK(*fit.kappa >= 1.0 - 1e-8);
    CHECK(fit.warnings.empty());

    // k-class estimate from the dense formula.
    const Eigen::MatrixXd m_full =
        Eigen::MatrixXd::Identity(data.n(), data.n()) - oracle::projection(oracle::full_design(data));
    const Eigen::VectorXd inst = data.d() - *fit.kappa * (m_full * data.d());
    CHECK(rel_diff(fit.theta, oracle::dense_iv(data, inst).theta) <= 1e-8);
  }
}

TEST_CASE("smallest generalized root") {
  Eigen::Matrix2d a = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d b;
  b << 3, 0, 0, 5;
  CHECK(smallest_generalized_root(a, b) == doctest::Approx(3.0));
  b << 2, 1, 1, 2;  // eigenvalues 1, 3
  CHECK(smallest_generalized_root(a, b) == doctest::Approx(1.0));
  CHECK_THROWS_AS(smallest_generalized_root(Eigen::Matrix2d::Zero(), b), NumericalError);
}

TEST_CASE("sandwich covariance") {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> normal;

  SUBCASE("zero residuals give a zero matrix") {
    Matrix f = Matrix::Random(20, 3), w = Matrix::Random(20, 3);
    CHECK(sandwich_cov(f, w, Vector::Zero(20)).isZero(0.0));
  }

  SUBCASE("scalar case") {
    const int n = 25;
    Matrix f(n, 1), w(n, 1);
    Vector u(n);
    double fu2 = 0, fw = 0;
    for (int i = 0; i < n; ++i) {
      f(i, 0) = 1.0 + normal(rng);
      w(i, 0) = 2.0 + normal(rng);
      u[i] = normal(rng);
      fu2 += u[i] * u[i] * f(i, 0) * f(i, 0) / n;
      fw += f(i, 0) * w(i, 0) / n;
    }
    CHECK(sandwich_cov(f, w, u)(0, 0) == doctest::Approx(fu2 / (n * fw * fw)).epsilon(1e-12));
  }

  SUBCASE("random instances match the extended-precision oracle") {
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 30 + static_cast<int>(rng() % 100);
      const int p = 1 + static_cast<int>(rng() % 4);
      Matrix f(n, p), w(n, p);
      Vector u(n);
      for (int i = 0; i < n; ++i) {
        for (int c = 0; c < p; ++c) {
          f(i, c) = normal(rng);
          w(i, c) = f(i, c) + 0.5 * normal(rng);
        }
        u[i] = normal(rng);
      }
      CHECK(rel_diff(sandwich_cov(f, w, u), oracle::dense_sandwich(f, w, u)) <= 1e-9);
    }
  }

  SUBCASE("singular bread") {
    Matrix f = Matrix::Zero(10, 2);
    CHECK_THROWS_AS(sandwich_cov(f, Matrix::Random(10, 2), Vector::Ones(10)), RankError);
  }
}

TEST_CASE("input errors") {
  std::mt19937_64 rng(101);
  const auto data = oracle::random_dataset(rng, 60, 6, 1);
  CHECK_THROWS_AS(civ_fit(data, 1), DomainError);
  CHECK_THROWS_AS(civ_fit(data, 0), DomainError);
  CHECK_THROWS_AS(oracle_fit(data, Vector::Constant(6, 0.7), Vector::Zero(1)), RankError);
  CHECK_THROWS_AS(oracle_fit(data, Vector::Zero(5), Vector::Zero(1)), ValidationError);

  // Identical category means of D leave a single support point.
  Vector d(6), y(6);
  d << 1, 2, 2, 1, 3, 0;
  y << 1, 2, 3, 4, 5, 6;
  const Dataset flat(y, d, Matrix(6, 0), {0, 0, 1, 1, 2, 2}, {"a", "b", "c"});
  CHECK_THROWS_AS(civ_fit(flat, 2), WeakInstrumentError);
}

TEST_CASE("saturating k beyond the distinct means warns") {
  std::mt19937_64 rng(111);
  const auto data = oracle::random_dataset(rng, 40, 4, 0);
  const auto fit = civ_fit(data, 6);
  CHECK(fit.first_stage->model.k_effective == 4);
  CHECK(fit.warnings.size() == 1);
  CHECK(rel_diff(fit.theta, tsls_fit(data).theta) <= 1e-8);
}

TEST_CASE("translation invariance") {
  std::mt19937_64 rng(121);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = 2 + static_cast<int>(rng() % 10);
    const int j = static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, 4 * g + 30, g, j);
    const double c = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
    const Vector y_shift = (data.y().array() + c).matrix();

    // Implicit intercept: every coefficient is unchanged.
    const auto shifted = with_y(data, y_shift);
    CHECK(rel_diff(tsls_fit(shifted).theta, tsls_fit(data).theta) <= 1e-9);
    CHECK(rel_diff(civ_fit(shifted, 2).theta, civ_fit(data, 2).theta) <= 1e-9);

    // Explicit intercept column and no implicit one: tau is invariant.
    Matrix x1(data.n(), j + 1);
    x1 << Vector::Ones(data.n()), data.x();
    const auto explicit_base = with_x(data, x1);
    const auto explicit_shift = with_y(explicit_base, y_shift);
    const FitOptions raw{false};
    const double tau0 = jive_fit(explicit_base, JiveVariant::kJive1, raw).tau();
    const double tau1 = jive_fit(explicit_shift, JiveVariant::kJive1, raw).tau();
    CHECK(tau1 == doctest::Approx(tau0).epsilon(1e-9).scale(1.0));
    const double c0 = civ_fit(explicit_base, 2, raw).tau();
    CHECK(civ_fit(explicit_shift, 2, raw).tau() == doctest::Approx(c0).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("scale equivariance in D") {
  std::mt19937_64 rng(131);
  std::uniform_real_distribution<double> coef(0.2, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = 3 + static_cast<int>(rng() % 10);
    const int j = static_cast<int>(rng() % 3);
    const auto data = oracle::random_dataset(rng, 4 * g + 30, g, j, 2, 1.5);
    const double a = trial % 2 == 0 ? coef(rng) : -coef(rng);
    const auto scaled = with_d(data, a * data.d());
    auto same = [&](const IvFit& base, const IvFit& moved) {
      CHECK(moved.tau() == doctest::Approx(base.tau() / a).epsilon(1e-8).scale(1.0));
    };
    same(civ_fit(data, 2), civ_fit(scaled, 2));
    same(tsls_fit(data), tsls_fit(scaled));
    for (auto v : {JiveVariant::kJive1, JiveVariant::kIjive, JiveVariant::kUjive}) same(jive_fit(data, v), jive_fit(scaled, v));
    same(liml_fit(data), liml_fit(scaled));
  }
}

TEST_CASE("covariance is symmetric positive semidefinite") {
  std::mt19937_64 rng(141);
  for (int trial = 0; trial < 200; ++trial) {
    const int g = 2 + static_cast<int>(rng() % 15);
    const int j = static_cast<int>(rng() % 4);
    const auto data = oracle::random_dataset(rng, 3 * g + 20 + static_cast<int>(rng() % 200), g, j);
    check_psd(civ_fit(data, 2));
    check_psd(tsls_fit(data));
    check_psd(jive_fit(data, JiveVariant::kJive1));
    check_psd(jive_fit(data, JiveVariant::kIjive));
    check_psd(jive_fit(data, JiveVariant::kUjive));
    check_psd(liml_fit(data));
  }
}

TEST_CASE("estimator tags") {
  std::mt19937_64 rng(151);
  const auto data = oracle::random_dataset(rng, 80, 4, 1);
  CHECK(civ_fit(data, 3).estimator_tag == "CIV (K=3)");
  CHECK(tsls_fit(data).estimator_tag == "TSLS");
  CHECK(jive_fit(data, JiveVariant::kIjive).estimator_tag == "IJIVE");
  CHECK(liml_fit(data).estimator_tag == "LIML");
  CHECK(oracle_fit(data, Vector::LinSpaced(4, 0, 1), Vector::Zero(1)).estimator_tag == "Oracle");
}
