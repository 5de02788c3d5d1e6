#include "civkit/dataset.hpp"

#include "civkit/error.hpp"

#include <charconv>
#include <cstring>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace civkit {

namespace {

std::string trim(std::string_view s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return std::string(s.substr(begin, end - begin + 1));
}

// RFC 4180 style record splitting; quoted fields may contain commas and "".
std::vector<std::vector<std::string>> split_records(const std::string& text) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  size_t i = 0;
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\n':
        record.push_back(std::move(field));
        field.clear();
        if (any || record.size() > 1 || !record.front().empty()) records.push_back(std::move(record));
        record.clear();
        any = false;
        break;
      default:
        field.push_back(c);
        if (c != '\r') any = true;
    }
  }
  if (any || !field.empty()) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  for (auto& r : records) {
    if (!r.empty() && !r.back().empty() && r.back().back() == '\r') r.back().pop_back();
  }
  return records;
}

double parse_number(const std::string& cell, const std::string& column, long row) {
  const std::string s = trim(cell);
  if (s.empty()) {
    throw ParseError("missing value in column '" + column + "' at row " + std::to_string(row), row);
  }
  double value = 0.0;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError("non-numeric value '" + s + "' in column '" + column + "' at row " +
                         std::to_string(row),
                     row);
  }
  return value;
}

bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos || s != trim(s);
}

std::string quote(const std::string& s) {
  if (!needs_quotes(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Dataset::Dataset(Vector y, Vector d, Matrix x, Codes z, std::vector<std::string> category_labels,
                 std::vector<std::string> covariate_names)
    : y_(std::move(y)),
      d_(std::move(d)),
      x_(std::move(x)),
      z_(std::move(z)),
      labels_(std::move(category_labels)),
      x_names_(std::move(covariate_names)) {
  const Index n = y_.size();
  if (n < 2) throw ValidationError("dataset needs at least 2 observations, got " + std::to_string(n));
  if (d_.size() != n || x_.rows() != n || static_cast<Index>(z_.size()) != n) {
    throw ValidationError("columns y, d, x, z must have identical length");
  }
  if (!y_.allFinite()) throw ValidationError("non-finite value in y");
  if (!d_.allFinite()) throw ValidationError("non-finite value in d");
  if (!x_.allFinite()) throw ValidationError("non-finite value in x");
  const int g = static_cast<int>(labels_.size());
  if (g == 0) throw ValidationError("no categories");
  std::vector<char> seen(static_cast<size_t>(g), 0);
  for (int code : z_) {
    if (code < 0 || code >= g) {
      throw ValidationError("category code " + std::to_string(code) + " outside [0, " +
                            std::to_string(g) + ")");
    }
    seen[static_cast<size_t>(code)] = 1;
  }
  for (int c = 0; c < g; ++c) {
    if (!seen[static_cast<size_t>(c)]) {
      throw ValidationError("category '" + labels_[static_cast<size_t>(c)] + "' has no observations");
    }
  }
  if (x_names_.empty()) {
    for (Index j = 0; j < x_.cols(); ++j) x_names_.push_back("x" + std::to_string(j + 1));
  } else if (static_cast<Index>(x_names_.size()) != x_.cols()) {
    throw ValidationError("covariate name count does not match x columns");
  }
}

std::vector<Index> Dataset::category_counts() const {
  std::vector<Index> counts(labels_.size(), 0);
  for (int code : z_) ++counts[static_cast<size_t>(code)];
  return counts;
}

bool Dataset::operator==(const Dataset& other) const {
  // Bitwise comparison of the numeric columns.
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::equal(a.data(), a.data() + a.size(), b.data(), [](double u, double v) {
             return std::memcmp(&u, &v, sizeof(double)) == 0;
           });
  };
  return same(y_, other.y_) && same(d_, other.d_) && same(x_, other.x_) && z_ == other.z_ &&
         labels_ == other.labels_ && x_names_ == other.x_names_;
}

Factorized factorize(const std::vector<std::string>& raw) {
  Factorized out;
  out.codes.reserve(raw.size());
  std::unordered_map<std::string, int> index;
  for (const auto& label : raw) {
    auto [it, inserted] = index.try_emplace(label, static_cast<int>(out.labels.size()));
    if (inserted) out.labels.push_back(label);
    out.codes.push_back(it->second);
  }
  return out;
}

Dataset parse_csv(const std::string& text, const CsvSchema& schema) {
  const auto records = split_records(text);
  if (records.empty()) throw EmptyInputError("empty input: no header row");
  if (records.size() == 1) throw EmptyInputError("empty input: header row but no data");

  std::vector<std::string> header;
  for (const auto& h : records.front()) header.push_back(trim(h));
  auto column = [&](const std::string& name, const char* role) -> size_t {
    for (size_t j = 0; j < header.size(); ++j) {
      if (header[j] == name) return j;
    }
    throw SchemaError(std::string("column '") + name + "' (" + role + ") not found in header");
  };
  const size_t iy = column(schema.y, "y");
  const size_t id = column(schema.d, "d");
  const size_t iz = column(schema.z, "z");
  std::vector<size_t> ix;
  for (const auto& name : schema.x) ix.push_back(column(name, "x"));

  const Index n = static_cast<Index>(records.size()) - 1;
  Vector y(n), d(n);
  Matrix x(n, static_cast<Index>(ix.size()));
  std::vector<std::string> raw_z;
  raw_z.reserve(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto& rec = records[static_cast<size_t>(i + 1)];
    const long row = static_cast<long>(i + 1);
    if (rec.size() != header.size()) {
      throw ParseError("row " + std::to_string(row) + " has " + std::to_string(rec.size()) +
                           " fields, header has " + std::to_string(header.size()),
                       row);
    }
    y[i] = parse_number(rec[iy], schema.y, row);
    d[i] = parse_number(rec[id], schema.d, row);
    for (size_t j = 0; j < ix.size(); ++j) {
      x(i, static_cast<Index>(j)) = parse_number(rec[ix[j]], schema.x[j], row);
    }
    std::string label = trim(rec[iz]);
    if (label.empty()) {
      throw ParseError("missing value in column '" + schema.z + "' at row " + std::to_string(row), row);
    }
    raw_z.push_back(std::move(label));
  }
  auto f = factorize(raw_z);
  return Dataset(std::move(y), std::move(d), std::move(x), std::move(f.codes), std::move(f.labels),
                 schema.x);
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), schema);
}

void write_csv(const Dataset& data, const std::filesystem::path& path, const CsvSchema& schema) {
  std::vector<std::string> x_names = schema.x;
  if (x_names.empty()) x_names = data.covariate_names();
  if (static_cast<Index>(x_names.size()) != data.num_covariates()) {
    throw SchemaError("covariate name count does not match dataset");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << quote(schema.y) << ',' << quote(schema.d) << ',' << quote(schema.z);
  for (const auto& name : x_names) out << ',' << quote(name);
  out << '\n';
  for (Index i = 0; i < data.n(); ++i) {
    out << format_double(data.y()[i]) << ',' << format_double(data.d()[i]) << ','
        << quote(data.category_labels()[static_cast<size_t>(data.z()[static_cast<size_t>(i)])]);
    for (Index j = 0; j < data.num_covariates(); ++j) out << ',' << format_double(data.x()(i, j));
    out << '\n';
  }
}

CategoryStats<double> category_stats(const Eigen::Ref<const Vector>& residuals, const Codes& z,
                                     std::optional<int> num_categories) {
  if (static_cast<Index>(z.size()) != residuals.size()) {
    throw ValidationError("residuals and codes differ in length");
  }
  if (!residuals.allFinite()) throw ValidationError("non-finite residual");
  int g = num_categories.value_or(0);
  if (!num_categories) {
    for (int code : z) g = std::max(g, code + 1);
  }
  CategoryStats<double> stats;
  stats.counts.assign(static_cast<size_t>(g), 0);
  stats.means = Vector::Zero(g);
  for (size_t i = 0; i < z.size(); ++i) {
    const int code = z[i];
    if (code < 0 || code >= g) throw ValidationError("category code out of range");
    ++stats.counts[static_cast<size_t>(code)];
    stats.means[code] += residuals[static_cast<Index>(i)];
  }
  for (int c = 0; c < g; ++c) {
    if (stats.counts[static_cast<size_t>(c)] == 0) {
      throw ValidationError("category " + std::to_string(c) + " has no observations");
    }
    stats.means[c] /= static_cast<double>(stats.counts[static_cast<size_t>(c)]);
  }
  stats.order = sort_order(stats.means);
  return stats;
}

}  // namespace civkit
