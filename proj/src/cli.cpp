#include "civkit/cli.hpp"

#include "civkit/dataset.hpp"
#include "civkit/error.hpp"
#include "civkit/estimators.hpp"
#include "civkit/montecarlo.hpp"
#include "civkit/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace civkit::cli {

namespace {

using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitRequest {
  std::string label;
  EstimatorSpec spec;
};

std::vector<FitRequest> resolve_fit_estimators(const std::string& list, std::optional<int> k) {
  std::vector<FitRequest> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::string lower;
    for (char c : item) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    EstimatorSpec spec;
    if (lower == "civ") {
      if (!k) throw UsageError("estimator 'civ' requires --k");
      spec = {EstimatorSpec::Kind::kCiv, *k};
      if (*k < 2) throw UsageError("--k must be at least 2");
    } else if (lower == "oracle") {
      throw UsageError("the oracle estimator needs the true instrument and is available in simulations only");
    } else {
      try {
        spec = EstimatorSpec::parse(item);
      } catch (const DomainError& e) {
        throw UsageError(e.what());
      }
    }
    out.push_back({spec.label(), spec});
  }
  if (out.empty()) throw UsageError("no estimator requested");
  return out;
}

IvFit fit_one(const EstimatorSpec& spec, const Dataset& data, const FitOptions& options) {
  using K = EstimatorSpec::Kind;
  switch (spec.kind) {
    case K::kCiv: return civ_fit(data, spec.k, options);
    case K::kTsls: return tsls_fit(data, options);
    case K::kJive: return jive_fit(data, JiveVariant::kJive1, options);
    case K::kIjive: return jive_fit(data, JiveVariant::kIjive, options);
    case K::kUjive: return jive_fit(data, JiveVariant::kUjive, options);
    case K::kLiml: return liml_fit(data, options);
    case K::kOracle: break;
  }
  throw UsageError("estimator not available for observational data");
}

std::string error_kind(const Error& e) {
  if (dynamic_cast<const JackknifeUndefinedError*>(&e)) return "jackknife_undefined";
  if (dynamic_cast<const WeakInstrumentError*>(&e)) return "weak_instrument";
  if (dynamic_cast<const RankError*>(&e)) return "rank";
  if (dynamic_cast<const NumericalError*>(&e)) return "numerical";
  if (dynamic_cast<const DomainError*>(&e)) return "domain";
  return "data";
}

template <class Writer>
void emit(const std::string& path, std::ostream& out, Writer&& write) {
  if (path.empty() || path == "-") {
    write(out);
    return;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw DataError("cannot write '" + path + "'");
  write(file);
}

struct FitFlags {
  std::string data, y, d, z, estimators, out, format = "json";
  std::vector<std::string> x;
  std::optional<int> k;
  bool no_intercept = false;
};

int cmd_fit(const FitFlags& flags, const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (flags.format != "json" && flags.format != "csv") throw UsageError("--format must be json or csv");
  const auto requests = resolve_fit_estimators(flags.estimators, flags.k);
  const auto started = std::chrono::steady_clock::now();

  Dataset data = load_csv(flags.data, CsvSchema{flags.y, flags.d, flags.z, flags.x});
  FitOptions options;
  options.intercept = !flags.no_intercept;

  json report;
  report["command"] = "fit";
  report["argv"] = args;
  report["version"] = kVersion;
  json config;
  config["data"] = flags.data;
  config["y"] = flags.y;
  config["d"] = flags.d;
  config["z"] = flags.z;
  config["x"] = flags.x;
  config["estimators"] = flags.estimators;
  config["k"] = flags.k ? json(*flags.k) : json();
  config["intercept"] = options.intercept;
  report["config"] = config;
  report["data"] = {{"n", data.n()}, {"categories", data.num_categories()}, {"covariates", data.num_covariates()}};

  std::vector<std::string> param_names{flags.d};
  for (const auto& name : data.covariate_names()) param_names.push_back(name);

  json results = json::array();
  json warnings = json::array();
  struct CsvRow {
    std::string estimator, parameter, status, message;
    double estimate = 0, se = 0;
  };
  std::vector<CsvRow> csv_rows;
  bool failed = false;
  for (const auto& req : requests) {
    json entry;
    entry["estimator"] = req.label;
    try {
      const IvFit fit = fit_one(req.spec, data, options);
      entry["status"] = "ok";
      json coefs = json::array();
      for (Index j = 0; j < fit.theta.size(); ++j) {
        const double est = fit.theta[j];
        const double se = fit.se[j];
        coefs.push_back({{"name", param_names[static_cast<size_t>(j)]},
                         {"estimate", est},
                         {"se", se},
                         {"ci_low", est - kNormalCritical95 * se},
                         {"ci_high", est + kNormalCritical95 * se}});
        csv_rows.push_back({req.label, param_names[static_cast<size_t>(j)], "ok", "", est, se});
      }
      entry["coefficients"] = std::move(coefs);
      if (fit.first_stage) {
        const auto& model = fit.first_stage->model;
        json fs;
        fs["k"] = model.k;
        fs["k_effective"] = model.k_effective;
        fs["support"] = std::vector<double>(model.alphas.data(), model.alphas.data() + model.alphas.size());
        fs["objective"] = model.objective;
        json groups = json::object();
        for (int code = 0; code < model.num_categories(); ++code) {
          groups[data.category_labels()[static_cast<size_t>(code)]] = model.assignment[static_cast<size_t>(code)];
        }
        fs["assignment"] = std::move(groups);
        fs["pi_hat"] = std::vector<double>(fit.first_stage->pi_hat.data(),
                                           fit.first_stage->pi_hat.data() + fit.first_stage->pi_hat.size());
        entry["first_stage"] = std::move(fs);
      }
      if (fit.kappa) entry["kappa"] = *fit.kappa;
      entry["warnings"] = fit.warnings;
      for (const auto& w : fit.warnings) warnings.push_back(req.label + ": " + w);
    } catch (const Error& e) {
      failed = true;
      entry["status"] = "error";
      entry["error_type"] = error_kind(e);
      entry["message"] = e.what();
      if (const auto* jk = dynamic_cast<const JackknifeUndefinedError*>(&e)) entry["category"] = jk->category();
      if (const auto* rk = dynamic_cast<const RankError*>(&e)) entry["smallest_singular_value"] = rk->smallest_singular_value();
      csv_rows.push_back({req.label, "", "error", e.what(), 0, 0});
      err << req.label << ": " << e.what() << '\n';
    }
    results.push_back(std::move(entry));
  }
  report["estimators"] = std::move(results);
  report["warnings"] = std::move(warnings);
  report["timing_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  emit(flags.out, out, [&](std::ostream& os) {
    if (flags.format == "json") {
      os << report.dump(2) << '\n';
      return;
    }
    os << "estimator,parameter,estimate,se,ci_low,ci_high,status,message\n";
    for (const auto& row : csv_rows) {
      std::string msg = row.message;
      std::replace(msg.begin(), msg.end(), '"', '\'');
      os << '"' << row.estimator << "\"," << row.parameter << ',';
      if (row.status == "ok") {
        os << format_number(row.estimate) << ',' << format_number(row.se) << ','
           << format_number(row.estimate - kNormalCritical95 * row.se) << ','
           << format_number(row.estimate + kNormalCritical95 * row.se);
      } else {
        os << ",,,";
      }
      os << ',' << row.status << ",\"" << msg << "\"\n";
    }
  });
  return failed ? kNumericalFailure : kSuccess;
}

struct SimFlags {
  int k0 = 2;
  int g = 40;
  int enz = 20;
  double tau0 = 0.0;
  bool hetero = true;
  double amplitude = 0.5;
  std::optional<double> c;
  int reps = 1000;
  std::uint64_t seed = SimConfig{}.seed;
  std::string estimators;
  std::string out;
  std::string format = "csv";
  std::string dump_data;
  std::string raw;
  int threads = 0;
  // power only
  double tau_min = -0.3;
  double tau_max = 0.3;
  int tau_steps = 13;
};

SimConfig make_config(const SimFlags& f) {
  SimConfig cfg;
  cfg.k0 = f.k0;
  cfg.g = f.g;
  cfg.expected_nz = f.enz;
  cfg.tau0 = f.tau0;
  cfg.heterogeneous = f.hetero;
  cfg.hetero_amplitude = f.amplitude;
  if (f.c) cfg.c = *f.c;
  cfg.replications = f.reps;
  cfg.seed = f.seed;
  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

std::vector<EstimatorSpec> resolve_sim_estimators(const std::string& list, std::vector<EstimatorSpec> fallback) {
  if (list.empty()) return fallback;
  try {
    return parse_estimator_list(list);
  } catch (const DomainError& e) {
    throw UsageError(e.what());
  }
}

int cmd_simulate(const SimFlags& flags, std::ostream& out) {
  if (flags.format != "json" && flags.format != "csv") throw UsageError("--format must be json or csv");
  const SimConfig cfg = make_config(flags);
  const auto estimators = resolve_sim_estimators(flags.estimators, default_estimators());
  const auto summary = run_replications(cfg, estimators, resolve_threads(flags.threads));
  emit(flags.out, out, [&](std::ostream& os) {
    if (flags.format == "json") {
      write_summary_json(summary, os);
    } else {
      write_summary_csv(summary, os);
    }
  });
  if (!flags.raw.empty()) {
    emit(flags.raw, out, [&](std::ostream& os) { write_records_csv(summary, os); });
  }
  if (!flags.dump_data.empty()) {
    write_csv(simulate_dgp(cfg, 0).data, flags.dump_data, CsvSchema{"y", "d", "z", {"x"}});
  }
  return kSuccess;
}

int cmd_power(const SimFlags& flags, std::ostream& out) {
  std::vector<double> grid;
  try {
    grid = linspace(flags.tau_min, flags.tau_max, flags.tau_steps);
  } catch (const DomainError& e) {
    throw UsageError(std::string(e.what()) + " (--tau-min/--tau-max/--tau-steps)");
  }
  const SimConfig cfg = make_config(flags);
  using K = EstimatorSpec::Kind;
  const auto estimators = resolve_sim_estimators(
      flags.estimators, {{K::kOracle, 0}, {K::kCiv, 2}, {K::kTsls, 0}, {K::kJive, 0}, {K::kLiml, 0}});
  const auto points = power_curve(cfg, grid, estimators, resolve_threads(flags.threads));
  emit(flags.out, out, [&](std::ostream& os) { write_power_csv(points, os); });
  return kSuccess;
}

void add_sim_flags(CLI::App* cmd, SimFlags& f) {
  cmd->add_option("--k0", f.k0, "true number of instrument support points")->check(CLI::IsMember({2, 4}));
  cmd->add_option("--g", f.g, "number of observed categories");
  cmd->add_option("--enz", f.enz, "expected observations per category");
  cmd->add_option("--hetero", f.hetero, "covariate-dependent effects (true/false)");
  cmd->add_option("--amplitude", f.amplitude, "heterogeneity amplitude a in tau0 + a(1 - 2X)");
  cmd->add_option("--c", f.c, "first-stage amplitude C (default 0.85 for k0=2, 1.153 for k0=4)");
  cmd->add_option("--reps", f.reps, "replications");
  cmd->add_option("--seed", f.seed, "master random seed");
  cmd->add_option("--estimators", f.estimators, "comma-separated list, e.g. oracle,civ2,civ4,tsls,jive,ijive,ujive,liml");
  cmd->add_option("--out", f.out, "output path (default stdout)");
  cmd->add_option("--threads", f.threads, "worker threads (default CIVKIT_THREADS or 1)");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"civkit: categorical instrumental variables"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  FitFlags fit;
  auto* fit_cmd = app.add_subcommand("fit", "fit IV estimators to a CSV dataset");
  fit_cmd->add_option("--data", fit.data, "CSV file with a header row")->required();
  fit_cmd->add_option("--y", fit.y, "outcome column")->required();
  fit_cmd->add_option("--d", fit.d, "endogenous regressor column")->required();
  fit_cmd->add_option("--z", fit.z, "categorical instrument column")->required();
  fit_cmd->add_option("--x", fit.x, "covariate column (repeatable)");
  fit_cmd->add_option("--estimator", fit.estimators, "civ,tsls,jive,ijive,ujive,liml (comma-separated)")->required();
  fit_cmd->add_option("--k", fit.k, "support points for civ");
  fit_cmd->add_option("--out", fit.out, "report path (default stdout)");
  fit_cmd->add_option("--format", fit.format, "json or csv");
  fit_cmd->add_flag("--no-intercept", fit.no_intercept, "omit the intercept");

  SimFlags sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo summary table");
  add_sim_flags(sim_cmd, sim);
  sim_cmd->add_option("--tau0", sim.tau0, "true average effect");
  sim_cmd->add_option("--format", sim.format, "csv or json");
  sim_cmd->add_option("--dump-data", sim.dump_data, "write replication 0's dataset as CSV");
  sim_cmd->add_option("--raw", sim.raw, "write per-replication estimates as CSV");

  SimFlags pow;
  auto* pow_cmd = app.add_subcommand("power", "rejection rates of H0: tau = 0 over a tau0 grid");
  add_sim_flags(pow_cmd, pow);
  pow_cmd->add_option("--tau-min", pow.tau_min, "grid start");
  pow_cmd->add_option("--tau-max", pow.tau_max, "grid end");
  pow_cmd->add_option("--tau-steps", pow.tau_steps, "grid points (>= 2)");

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsage;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, args, out, err);
    if (*sim_cmd) return cmd_simulate(sim, out);
    if (*pow_cmd) return cmd_power(pow, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kNumericalFailure;
  }
  return kUsage;
}

}  // namespace civkit::cli
