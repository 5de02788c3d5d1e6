#include "civkit/montecarlo.hpp"

#include "civkit/error.hpp"
#include "civkit/version.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <mutex>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <ostream>
#include <thread>

namespace civkit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

nlohmann::ordered_json config_json(const SimConfig& c) {
  nlohmann::ordered_json j;
  j["k0"] = c.k0;
  j["g"] = c.g;
  j["expected_nz"] = c.expected_nz;
  j["n"] = c.n();
  j["tau0"] = c.tau0;
  j["heterogeneous"] = c.heterogeneous;
  j["hetero_amplitude"] = c.hetero_amplitude;
  j["c"] = c.amplitude_c();
  j["sigma_v2"] = c.sigma_v2;
  j["rho_uv"] = c.rho_uv;
  j["replications"] = c.replications;
  j["seed"] = c.seed;
  return j;
}

std::vector<std::vector<ReplicationRecord>> simulate_records(const SimConfig& config,
                                                             const std::vector<EstimatorSpec>& estimators,
                                                             int threads, std::vector<double>* concentration) {
  config.validate();
  const auto reps = static_cast<Index>(config.replications);
  std::vector<std::vector<ReplicationRecord>> records(static_cast<size_t>(reps));
  if (concentration) concentration->assign(static_cast<size_t>(reps), 0.0);
  parallel_for(reps, threads, [&](Index r) {
    const SimDraw draw = simulate_dgp(config, static_cast<std::uint64_t>(r));
    auto& row = records[static_cast<size_t>(r)];
    row.resize(estimators.size());
    for (size_t e = 0; e < estimators.size(); ++e) {
      auto& rec = row[e];
      rec.truth = draw.truth;
      try {
        const IvFit fit = run_estimator(estimators[e], draw);
        rec.estimate = fit.tau();
        rec.se = fit.tau_se();
        rec.ok = std::isfinite(rec.estimate) && std::isfinite(rec.se);
        if (!rec.ok) rec.error = "non-finite estimate";
      } catch (const Error& err) {
        rec.ok = false;
        rec.error = err.what();
      }
    }
    if (concentration) (*concentration)[static_cast<size_t>(r)] = draw.concentration;
  });
  return records;
}

}  // namespace

double SimConfig::amplitude_c() const {
  if (!std::isnan(c)) return c;
  if (k0 == 2) return 0.85;
  if (k0 == 4) return 1.153;
  throw ValidationError("no default first-stage amplitude for k0 = " + std::to_string(k0) + "; set c");
}

void SimConfig::validate() const {
  if (k0 < 2) throw ValidationError("k0 must be at least 2");
  if (g < 2 || g % 2 != 0) throw ValidationError("g must be even and at least 2");
  if (g % k0 != 0) throw ValidationError("g must be divisible by k0");
  if (expected_nz < 1) throw ValidationError("expected_nz must be at least 1");
  if (!(sigma_v2 > rho_uv * rho_uv)) throw ValidationError("need sigma_v2 > rho_uv^2");
  if (replications < 1) throw ValidationError("replications must be at least 1");
  if (!std::isfinite(tau0) || !std::isfinite(hetero_amplitude)) throw ValidationError("non-finite effect parameters");
  (void)amplitude_c();
}

double m0_value(const SimConfig& config, int z) {
  const int block = config.g / config.k0;
  const int group = (z + block - 1) / block;  // ceil(z / block), 1-indexed
  return config.amplitude_c() * static_cast<double>(group - 1) / static_cast<double>(config.k0 - 1);
}

double m0_variance(const SimConfig& config) {
  double mean = 0.0, sq = 0.0;
  for (int z = 1; z <= config.g; ++z) {
    const double m = m0_value(config, z);
    mean += m;
    sq += m * m;
  }
  mean /= config.g;
  return sq / config.g - mean * mean;
}

SimRng::SimRng(std::uint64_t master_seed, std::uint64_t stream)
    : engine_(splitmix64(splitmix64(master_seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL))) {}

double SimRng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::pair<double, double> SimRng::normal_pair() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

SimDraw simulate_dgp(const SimConfig& config, std::uint64_t replication) {
  config.validate();
  SimRng rng(config.seed, replication);
  const Index n = config.n();
  const int half = config.g / 2;
  const double v_loading = std::sqrt(config.sigma_v2 - config.rho_uv * config.rho_uv);
  const double amplitude = config.heterogeneous ? config.hetero_amplitude : 0.0;

  Vector y(n), d(n);
  Matrix x(n, 1);
  std::vector<std::string> raw_z(static_cast<size_t>(n));
  std::vector<double> m_obs(static_cast<size_t>(n));
  double effect_sum = 0.0;
  for (Index i = 0; i < n; ++i) {
    const bool xi = rng.uniform() < 0.5;
    const int slot = std::min(static_cast<int>(rng.uniform() * half), half - 1);
    // X = 0 only on even categories, X = 1 only on odd ones.
    const int z = xi ? 2 * slot + 1 : 2 * slot + 2;
    const auto [e1, e2] = rng.normal_pair();
    const double u = e1;
    const double v = config.rho_uv * e1 + v_loading * e2;
    const double m = m0_value(config, z);
    const double effect = config.tau0 + amplitude * (1.0 - 2.0 * (xi ? 1.0 : 0.0));
    x(i, 0) = xi ? 1.0 : 0.0;
    d[i] = m + v;
    y[i] = d[i] * effect + u;
    raw_z[static_cast<size_t>(i)] = std::to_string(z);
    m_obs[static_cast<size_t>(i)] = m;
    effect_sum += effect;
  }

  auto f = factorize(raw_z);
  Vector m0(static_cast<Index>(f.labels.size()));
  for (size_t c = 0; c < f.labels.size(); ++c) m0[static_cast<Index>(c)] = m0_value(config, std::stoi(f.labels[c]));

  double m_mean = 0.0;
  for (double m : m_obs) m_mean += m;
  m_mean /= static_cast<double>(n);
  double m_var = 0.0;
  for (double m : m_obs) m_var += (m - m_mean) * (m - m_mean);
  m_var /= static_cast<double>(n);

  SimDraw draw{Dataset(std::move(y), std::move(d), std::move(x), std::move(f.codes), std::move(f.labels), {"x"}),
               effect_sum / static_cast<double>(n), std::move(m0), Vector::Zero(1),
               static_cast<double>(n) * m_var / config.sigma_v2};
  return draw;
}

std::string EstimatorSpec::label() const {
  switch (kind) {
    case Kind::kOracle: return "Oracle";
    case Kind::kCiv: return "CIV (K=" + std::to_string(k) + ")";
    case Kind::kTsls: return "TSLS";
    case Kind::kJive: return "JIVE";
    case Kind::kIjive: return "IJIVE";
    case Kind::kUjive: return "UJIVE";
    case Kind::kLiml: return "LIML";
  }
  return "?";
}

EstimatorSpec EstimatorSpec::parse(const std::string& raw) {
  std::string name;
  for (char ch : raw) {
    if (!std::isspace(static_cast<unsigned char>(ch))) name.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  using K = Kind;
  if (name == "oracle") return {K::kOracle, 0};
  if (name == "tsls" || name == "2sls") return {K::kTsls, 0};
  if (name == "jive" || name == "jive1") return {K::kJive, 0};
  if (name == "ijive") return {K::kIjive, 0};
  if (name == "ujive") return {K::kUjive, 0};
  if (name == "liml") return {K::kLiml, 0};
  if (name.rfind("civ", 0) == 0) {
    std::string digits = name.substr(3);
    if (!digits.empty() && digits.front() == ':') digits.erase(0, 1);
    int k = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size() || k < 2) {
      throw DomainError("CIV estimator needs a support size >= 2, e.g. civ2 or civ:4 (got '" + raw + "')");
    }
    return {K::kCiv, k};
  }
  throw DomainError("unknown estimator '" + raw + "'");
}

std::vector<EstimatorSpec> parse_estimator_list(const std::string& csv) {
  std::vector<EstimatorSpec> out;
  size_t start = 0;
  while (start <= csv.size()) {
    const size_t comma = csv.find(',', start);
    const std::string item = csv.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(EstimatorSpec::parse(item));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (out.empty()) throw DomainError("empty estimator list");
  return out;
}

std::vector<EstimatorSpec> default_estimators() {
  using K = EstimatorSpec::Kind;
  return {{K::kOracle, 0}, {K::kCiv, 2}, {K::kCiv, 4}, {K::kTsls, 0},
          {K::kJive, 0},   {K::kIjive, 0}, {K::kUjive, 0}, {K::kLiml, 0}};
}

IvFit run_estimator(const EstimatorSpec& spec, const SimDraw& draw) {
  using K = EstimatorSpec::Kind;
  switch (spec.kind) {
    case K::kOracle: return oracle_fit(draw.data, draw.m0, draw.pi0);
    case K::kCiv: return civ_fit(draw.data, spec.k);
    case K::kTsls: return tsls_fit(draw.data);
    case K::kJive: return jive_fit(draw.data, JiveVariant::kJive1);
    case K::kIjive: return jive_fit(draw.data, JiveVariant::kIjive);
    case K::kUjive: return jive_fit(draw.data, JiveVariant::kUjive);
    case K::kLiml: return liml_fit(draw.data);
  }
  throw DomainError("unhandled estimator");
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw DomainError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

EstimatorSummary summarize(const std::string& label, const std::vector<ReplicationRecord>& records) {
  EstimatorSummary s;
  s.label = label;
  std::vector<double> abs_err, estimates;
  double err_sum = 0.0;
  Index rejections = 0;
  for (const auto& rec : records) {
    if (!rec.ok) {
      ++s.n_failed;
      continue;
    }
    const double err = rec.estimate - rec.truth;
    err_sum += err;
    abs_err.push_back(std::abs(err));
    estimates.push_back(rec.estimate);
    if (std::abs(err) / rec.se > kNormalCritical95) ++rejections;
  }
  s.n_ok = static_cast<Index>(estimates.size());
  if (s.n_ok == 0) return s;
  const auto count = static_cast<double>(s.n_ok);
  std::sort(abs_err.begin(), abs_err.end());
  std::sort(estimates.begin(), estimates.end());
  s.bias = err_sum / count;
  s.mae = quantile_type7(abs_err, 0.5);
  s.rp05 = static_cast<double>(rejections) / count;
  s.iqr1090 = quantile_type7(estimates, 0.9) - quantile_type7(estimates, 0.1);
  return s;
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CIVKIT_THREADS")) {
    int value = 0;
    const std::string s(env);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec == std::errc() && ptr == s.data() + s.size() && value > 0) return value;
  }
  return 1;
}

void parallel_for(Index count, int threads, const std::function<void(Index)>& fn) {
  const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), std::max<Index>(count, 1)));
  if (workers <= 1) {
    for (Index i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Index i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

SimSummary run_replications(const SimConfig& config, const std::vector<EstimatorSpec>& estimators,
                            int threads) {
  SimSummary summary;
  summary.config = config;
  summary.estimators = estimators;
  std::vector<double> concentration;
  summary.records = simulate_records(config, estimators, threads, &concentration);
  // Ordered fold over replication index; independent of the worker count.
  for (size_t e = 0; e < estimators.size(); ++e) {
    std::vector<ReplicationRecord> column;
    column.reserve(summary.records.size());
    for (const auto& row : summary.records) column.push_back(row[e]);
    summary.rows.push_back(summarize(estimators[e].label(), column));
  }
  double total = 0.0;
  for (double c : concentration) total += c;
  summary.mean_concentration = total / static_cast<double>(concentration.size());
  return summary;
}

std::vector<PowerPoint> power_curve(const SimConfig& config, const std::vector<double>& tau_grid,
                                    const std::vector<EstimatorSpec>& estimators, int threads) {
  std::vector<PowerPoint> points;
  for (double tau : tau_grid) {
    if (!std::isfinite(tau)) throw DomainError("non-finite tau in power grid");
    SimConfig cfg = config;
    cfg.tau0 = tau;
    const auto records = simulate_records(cfg, estimators, threads, nullptr);
    for (size_t e = 0; e < estimators.size(); ++e) {
      PowerPoint pt;
      pt.tau0 = tau;
      pt.estimator = estimators[e].label();
      Index ok = 0, rejections = 0;
      for (const auto& row : records) {
        const auto& rec = row[e];
        if (!rec.ok) {
          ++pt.n_failed;
          continue;
        }
        ++ok;
        if (std::abs(rec.estimate) / rec.se > kNormalCritical95) ++rejections;
      }
      pt.rejection_rate = ok > 0 ? static_cast<double>(rejections) / static_cast<double>(ok)
                                 : std::numeric_limits<double>::quiet_NaN();
      points.push_back(pt);
    }
  }
  return points;
}

std::vector<double> linspace(double lo, double hi, int steps) {
  if (steps < 2) throw DomainError("grid needs at least 2 steps");
  if (!(lo < hi)) throw DomainError("grid minimum must be below its maximum");
  std::vector<double> grid(static_cast<size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    grid[static_cast<size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(steps - 1);
  }
  grid.back() = hi;
  return grid;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

void write_summary_csv(const SimSummary& summary, std::ostream& out) {
  auto cell = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string(); };
  out << "estimator,bias,mae,rp05,iqr1090,n_ok,n_failed\n";
  for (const auto& row : summary.rows) {
    out << '"' << row.label << "\"," << cell(row.bias) << ',' << cell(row.mae) << ',' << cell(row.rp05) << ','
        << cell(row.iqr1090) << ',' << row.n_ok << ',' << row.n_failed << '\n';
  }
}

void write_summary_json(const SimSummary& summary, std::ostream& out) {
  nlohmann::ordered_json j;
  const auto config = config_json(summary.config);
  j["metadata"] = {{"tool", "civkit"},
                   {"version", kVersion},
                   {"revision", kRevision},
                   {"config_digest", [&] {
                      char buf[17];
                      std::snprintf(buf, sizeof(buf), "%016llx",
                                    static_cast<unsigned long long>(fnv1a(config.dump())));
                      return std::string(buf);
                    }()}};
  j["config"] = config;
  j["mean_concentration"] = summary.mean_concentration;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& row : summary.rows) {
    nlohmann::ordered_json r;
    r["estimator"] = row.label;
    auto opt = [](const std::optional<double>& v) { return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(); };
    r["bias"] = opt(row.bias);
    r["mae"] = opt(row.mae);
    r["rp05"] = opt(row.rp05);
    r["iqr1090"] = opt(row.iqr1090);
    r["n_ok"] = row.n_ok;
    r["n_failed"] = row.n_failed;
    rows.push_back(std::move(r));
  }
  j["estimators"] = std::move(rows);
  out << j.dump(2) << '\n';
}

void write_records_csv(const SimSummary& summary, std::ostream& out) {
  out << "replication,estimator,estimate,se,truth,ok,error\n";
  for (size_t r = 0; r < summary.records.size(); ++r) {
    for (size_t e = 0; e < summary.estimators.size(); ++e) {
      const auto& rec = summary.records[r][e];
      std::string error = rec.error;
      std::replace(error.begin(), error.end(), '"', '\'');
      out << r << ",\"" << summary.estimators[e].label() << "\"," << (rec.ok ? format_number(rec.estimate) : "")
          << ',' << (rec.ok ? format_number(rec.se) : "") << ',' << format_number(rec.truth) << ','
          << (rec.ok ? 1 : 0) << ",\"" << error << "\"\n";
    }
  }
}

void write_power_csv(const std::vector<PowerPoint>& points, std::ostream& out) {
  out << "tau0,estimator,rejection_rate\n";
  for (const auto& pt : points) {
    out << format_number(pt.tau0) << ",\"" << pt.estimator << "\"," << format_number(pt.rejection_rate) << '\n';
  }
}

}  // namespace civkit
