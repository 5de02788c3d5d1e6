#pragma once

// Simulation design with a 40-category instrument, a binary covariate that
// determines the parity of the category, and an optimal instrument taking
// k0 evenly spaced values on [0, C] over k0 consecutive blocks of categories.

#include "civkit/dataset.hpp"
#include "civkit/estimators.hpp"
#include "civkit/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace civkit {

struct SimConfig {
  int k0 = 2;
  int g = 40;
  int expected_nz = 20;
  double tau0 = 0.0;
  bool heterogeneous = true;
  /// pi0(X) = tau0 + amplitude (1 - 2X) when heterogeneous.
  double hetero_amplitude = 0.5;
  /// First-stage amplitude C; NaN selects 0.85 (k0 = 2) or 1.153 (k0 = 4).
  double c = std::numeric_limits<double>::quiet_NaN();
  double sigma_v2 = 0.9;
  double rho_uv = 0.6;
  int replications = 1000;
  std::uint64_t seed = 20240101;

  Index n() const { return static_cast<Index>(g) * expected_nz; }
  double amplitude_c() const;
  /// Throws ValidationError on inconsistent parameters.
  void validate() const;
};

/// Optimal instrument at 1-indexed category z in {1, ..., g}.
double m0_value(const SimConfig& config, int z);

/// Population Var(m0(Z)) with Z uniform on the g categories.
double m0_variance(const SimConfig& config);

/// Platform-stable random stream: mt19937_64 with 53-bit uniforms and
/// Box-Muller normals. Replication r of master seed s always sees the same draws.
class SimRng {
 public:
  SimRng(std::uint64_t master_seed, std::uint64_t stream);

  double uniform();
  /// Two independent standard normals.
  std::pair<double, double> normal_pair();

 private:
  std::mt19937_64 engine_;
};

struct SimDraw {
  Dataset data;
  /// E_n pi0(X): the per-replication estimand.
  double truth = 0.0;
  /// Optimal instrument by category code of `data`.
  Vector m0;
  /// First-stage covariate coefficients (gamma0 = 0).
  Vector pi0;
  /// n Var_n(m0(Z)) / sigma_v2.
  double concentration = 0.0;
};

/// Draws one replication. Categories are coded in first-appearance order,
/// exactly as load_csv would code the dumped file; labels are "1".."g".
SimDraw simulate_dgp(const SimConfig& config, std::uint64_t replication);

struct EstimatorSpec {
  enum class Kind { kOracle, kCiv, kTsls, kJive, kIjive, kUjive, kLiml };
  Kind kind = Kind::kOracle;
  int k = 0;  // CIV only

  /// Display label, e.g. "CIV (K=2)".
  std::string label() const;
  /// Parses oracle, civ2 / civ:2, tsls, jive, ijive, ujive, liml.
  static EstimatorSpec parse(const std::string& name);
};

std::vector<EstimatorSpec> parse_estimator_list(const std::string& csv);
std::vector<EstimatorSpec> default_estimators();

/// Runs one estimator on a replication; throws on estimator failure.
IvFit run_estimator(const EstimatorSpec& spec, const SimDraw& draw);

struct ReplicationRecord {
  bool ok = false;
  double estimate = 0.0;
  double se = 0.0;
  double truth = 0.0;
  std::string error;
};

struct EstimatorSummary {
  std::string label;
  Index n_ok = 0;
  Index n_failed = 0;
  std::optional<double> bias;
  std::optional<double> mae;
  std::optional<double> rp05;
  std::optional<double> iqr1090;
};

struct SimSummary {
  SimConfig config;
  std::vector<EstimatorSpec> estimators;
  std::vector<EstimatorSummary> rows;
  /// records[r][e]: replication r, estimator e.
  std::vector<std::vector<ReplicationRecord>> records;
  double mean_concentration = 0.0;
};

/// Type-7 (linear interpolation) sample quantile; `sorted` ascending, nonempty.
double quantile_type7(const std::vector<double>& sorted, double p);

EstimatorSummary summarize(const std::string& label, const std::vector<ReplicationRecord>& records);

/// Worker count: explicit value if positive, else CIVKIT_THREADS, else 1.
int resolve_threads(int requested);

/// Calls fn(i) for i in [0, count) on up to `threads` workers.
void parallel_for(Index count, int threads, const std::function<void(Index)>& fn);

SimSummary run_replications(const SimConfig& config, const std::vector<EstimatorSpec>& estimators,
                            int threads = 1);

struct PowerPoint {
  double tau0 = 0.0;
  std::string estimator;
  double rejection_rate = 0.0;
  Index n_failed = 0;
};

/// Rejection rates of H0: tau = 0 over a grid of true tau0 values. Every grid
/// point reuses the same replication seeds.
std::vector<PowerPoint> power_curve(const SimConfig& config, const std::vector<double>& tau_grid,
                                    const std::vector<EstimatorSpec>& estimators, int threads = 1);

/// Inclusive linspace; throws DomainError for steps < 2 or min >= max.
std::vector<double> linspace(double lo, double hi, int steps);

void write_summary_csv(const SimSummary& summary, std::ostream& out);
void write_summary_json(const SimSummary& summary, std::ostream& out);
void write_records_csv(const SimSummary& summary, std::ostream& out);
void write_power_csv(const std::vector<PowerPoint>& points, std::ostream& out);

/// Shortest round-trip decimal representation.
std::string format_number(double v);

}  // namespace civkit
