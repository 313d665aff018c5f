#include "sorscn/datastream.hpp"

#include "sorscn/errors.hpp"
#include "sorscn/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_map>

namespace sorscn::data {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

bool parse_double(const std::string& text, double& value) {
  if (text.empty()) return false;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  return ec == std::errc() && ptr == last && std::isfinite(value);
}

}  // namespace

ColumnSpec ColumnSpec::parse(const std::string& raw) {
  const std::string text = trim(raw);
  ColumnSpec spec;
  if (text.rfind("lag(", 0) == 0 && text.back() == ')') {
    const std::string body = text.substr(4, text.size() - 5);
    const auto comma = body.rfind(',');
    if (comma == std::string::npos) throw ConfigError("lag spec needs 'lag(column,k)': " + text);
    spec.column = trim(body.substr(0, comma));
    const std::string k = trim(body.substr(comma + 1));
    long long lag = 0;
    auto [ptr, ec] = std::from_chars(k.data(), k.data() + k.size(), lag);
    if (ec != std::errc() || ptr != k.data() + k.size() || lag < 0) {
      throw ConfigError("lag must be a non-negative integer: " + text);
    }
    spec.lag = static_cast<Index>(lag);
  } else {
    spec.column = text;
  }
  if (spec.column.empty()) throw ConfigError("empty column name in schema");
  return spec;
}

std::string ColumnSpec::label() const {
  return lag == 0 ? column : "lag(" + column + "," + std::to_string(lag) + ")";
}

SeriesDataset parse_csv(std::istream& in, const Schema& schema) {
  if (schema.inputs.empty() || schema.targets.empty()) {
    throw ConfigError("schema needs at least one input and one target");
  }
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) {
      header = split_commas(line);
      break;
    }
  }
  if (header.empty()) throw EmptyFile("CSV file is empty");
  std::unordered_map<std::string, std::size_t> column_index;
  for (std::size_t i = 0; i < header.size(); ++i) column_index.emplace(header[i], i);

  auto locate = [&](const ColumnSpec& c) {
    auto it = column_index.find(c.column);
    if (it == column_index.end()) throw MissingColumn(c.column);
    return it->second;
  };
  std::vector<std::size_t> in_cols, out_cols;
  Index max_lag = 0;
  for (const auto& c : schema.inputs) {
    in_cols.push_back(locate(c));
    max_lag = std::max(max_lag, c.lag);
  }
  for (const auto& c : schema.targets) {
    out_cols.push_back(locate(c));
    max_lag = std::max(max_lag, c.lag);
  }

  std::vector<std::vector<double>> rows;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_number;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row_number) + " has " + std::to_string(cells.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_double(cells[c], values[c])) throw NonNumericCell(row_number, c + 1, cells[c]);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw EmptyFile("CSV file has a header but no data rows");
  const auto n_rows = static_cast<Index>(rows.size());
  if (n_rows <= max_lag) throw DataError("not enough rows for the requested lags");

  SeriesDataset ds;
  ds.row_offset = max_lag;
  const Index n = n_rows - max_lag;
  ds.inputs.resize(static_cast<Index>(schema.inputs.size()), n);
  ds.targets.resize(static_cast<Index>(schema.targets.size()), n);
  auto fill = [&](MatrixXd& m, const std::vector<ColumnSpec>& specs, const std::vector<std::size_t>& cols,
                  std::vector<std::string>& names) {
    for (std::size_t f = 0; f < specs.size(); ++f) {
      names.push_back(specs[f].label());
      for (Index t = 0; t < n; ++t) {
        m(static_cast<Index>(f), t) = rows[static_cast<std::size_t>(t + max_lag - specs[f].lag)][cols[f]];
      }
    }
  };
  fill(ds.inputs, schema.inputs, in_cols, ds.input_names);
  fill(ds.targets, schema.targets, out_cols, ds.target_names);
  return ds;
}

SeriesDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  return parse_csv(in, schema);
}

void write_csv(std::ostream& out, const SeriesDataset& ds) {
  std::vector<std::string> names = ds.input_names;
  names.insert(names.end(), ds.target_names.begin(), ds.target_names.end());
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << "\n";
  char buf[64];
  for (Index t = 0; t < ds.samples(); ++t) {
    bool first = true;
    auto emit = [&](double v) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out << (first ? "" : ",") << std::string_view(buf, static_cast<std::size_t>(ptr - buf));
      first = false;
    };
    for (Index i = 0; i < ds.inputs.rows(); ++i) emit(ds.inputs(i, t));
    for (Index i = 0; i < ds.targets.rows(); ++i) emit(ds.targets(i, t));
    out << "\n";
  }
}

std::optional<Normalization> normalization_from_string(const std::string& s) {
  if (s == "none") return Normalization::none;
  if (s == "minmax") return Normalization::minmax;
  if (s == "zscore") return Normalization::zscore;
  return std::nullopt;
}

const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::none: return "none";
    case Normalization::minmax: return "minmax";
    case Normalization::zscore: return "zscore";
  }
  return "unknown";
}

AffineMap AffineMap::fit(const MatrixXd& x, Normalization kind) {
  AffineMap m;
  const Index rows = x.rows();
  m.offset = VectorXd::Zero(rows);
  m.scale = VectorXd::Ones(rows);
  if (kind == Normalization::none || x.cols() == 0) return m;
  for (Index i = 0; i < rows; ++i) {
    if (kind == Normalization::minmax) {
      const double lo = x.row(i).minCoeff();
      const double hi = x.row(i).maxCoeff();
      m.offset(i) = lo;
      m.scale(i) = hi > lo ? hi - lo : 1.0;
    } else {
      const double mean = x.row(i).mean();
      const double sd = std::sqrt((x.row(i).array() - mean).square().mean());
      m.offset(i) = mean;
      m.scale(i) = sd > 0 ? sd : 1.0;
    }
  }
  return m;
}

MatrixXd AffineMap::apply(const MatrixXd& x) const {
  return ((x.colwise() - offset).array().colwise() / scale.array()).matrix();
}

MatrixXd AffineMap::invert(const MatrixXd& x) const {
  return ((x.array().colwise() * scale.array()).matrix().colwise() + offset);
}

Splits split_and_washout(const SeriesDataset& ds, Index train_end, Index washout) {
  const Index n = ds.samples();
  if (train_end <= 0 || train_end >= n) {
    throw PreconditionViolation("train_end must leave non-empty train and test segments");
  }
  if (washout < 0) throw PreconditionViolation("washout must be >= 0");
  if (washout >= train_end || washout >= n - train_end) {
    throw WashoutTooLarge("washout " + std::to_string(washout) + " must be shorter than every segment");
  }
  Splits s;
  s.train = {ds.inputs.leftCols(train_end), ds.targets.leftCols(train_end), 0, washout};
  s.test = {ds.inputs.rightCols(n - train_end), ds.targets.rightCols(n - train_end), train_end, washout};
  s.validation = s.test;
  return s;
}

Segment make_validation(const Segment& test, const VectorXd& input_std, const VectorXd& target_std,
                        std::uint64_t seed) {
  if (input_std.size() != test.inputs.rows() || target_std.size() != test.targets.rows()) {
    throw DimensionMismatch("one noise level per feature required");
  }
  if ((input_std.array() < 0).any() || (target_std.array() < 0).any()) {
    throw PreconditionViolation("noise_std must be >= 0");
  }
  Segment v = test;
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  // Draw order is fixed (inputs then targets, column-major) so a seed fully
  // determines the result, including rows whose std is zero.
  for (Index t = 0; t < v.inputs.cols(); ++t) {
    for (Index i = 0; i < v.inputs.rows(); ++i) v.inputs(i, t) += input_std(i) * unit(rng);
  }
  for (Index t = 0; t < v.targets.cols(); ++t) {
    for (Index i = 0; i < v.targets.rows(); ++i) v.targets(i, t) += target_std(i) * unit(rng);
  }
  return v;
}

Segment make_validation(const Segment& test, double noise_std, std::uint64_t seed) {
  return make_validation(test, VectorXd::Constant(test.inputs.rows(), noise_std),
                         VectorXd::Constant(test.targets.rows(), noise_std), seed);
}

Normalizer fit_normalizer(const Segment& train, Normalization kind) {
  return {AffineMap::fit(train.inputs, kind), AffineMap::fit(train.targets, kind)};
}

Segment normalize(const Segment& s, const Normalizer& n) {
  Segment out = s;
  out.inputs = n.inputs.apply(s.inputs);
  out.targets = n.targets.apply(s.targets);
  return out;
}

std::optional<Generator> generator_from_string(const std::string& s) {
  if (s == "regime_switch_narma") return Generator::regime_switch_narma;
  if (s == "drifting_sine") return Generator::drifting_sine;
  if (s == "variance_burst") return Generator::variance_burst;
  return std::nullopt;
}

const char* to_string(Generator g) {
  switch (g) {
    case Generator::regime_switch_narma: return "regime_switch_narma";
    case Generator::drifting_sine: return "drifting_sine";
    case Generator::variance_burst: return "variance_burst";
  }
  return "unknown";
}

void SyntheticStreamSpec::validate() const {
  if (segment_lengths.empty()) throw ConfigError("synthetic spec needs at least one segment");
  for (Index len : segment_lengths) {
    if (len < 1) throw ConfigError("synthetic segment lengths must be >= 1");
  }
  if (!(noise_std >= 0)) throw ConfigError("synthetic noise_std must be >= 0");
}

namespace {

// y(n+1) = a y(n) + b y(n) y(n-1) + c u(n-delay) u(n) + d
struct NarmaRegime {
  double a, b, c, d;
  int delay;
};

constexpr NarmaRegime kNarmaRegimes[] = {
    {0.4, 0.4, 1.2, 0.1, 2},
    {0.2, -0.3, 2.0, 0.25, 1},
    {0.55, 0.2, 0.8, 0.05, 4},
};

struct SineRegime {
  double amplitude, period;
};

constexpr SineRegime kSineRegimes[] = {{1.0, 50.0}, {0.6, 31.0}, {1.4, 80.0}};

}  // namespace

SeriesDataset generate_synthetic(const SyntheticStreamSpec& spec) {
  spec.validate();
  Index n = 0;
  std::vector<std::size_t> regime_of;
  for (std::size_t s = 0; s < spec.segment_lengths.size(); ++s) {
    n += spec.segment_lengths[s];
    regime_of.insert(regime_of.end(), static_cast<std::size_t>(spec.segment_lengths[s]), s);
  }
  Rng rng = make_stream(spec.seed, {static_cast<std::uint64_t>(spec.generator)});
  std::uniform_real_distribution<double> unif01(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  VectorXd u(n), y(n + 1);  // y(0) is the pre-series value feeding the first lag
  y.setZero();
  switch (spec.generator) {
    case Generator::regime_switch_narma: {
      for (Index t = 0; t < n; ++t) {
        const auto& r = kNarmaRegimes[regime_of[static_cast<std::size_t>(t)] % 3];
        u(t) = 0.5 * unif01(rng);
        const double y1 = y(t);
        const double y2 = t > 0 ? y(t - 1) : 0.0;
        const double ud = t >= r.delay ? u(t - r.delay) : 0.0;
        y(t + 1) = std::clamp(r.a * y1 + r.b * y1 * y2 + r.c * ud * u(t) + r.d, -2.0, 2.0);
      }
      break;
    }
    case Generator::drifting_sine: {
      for (Index t = 0; t < n; ++t) {
        const auto& r = kSineRegimes[regime_of[static_cast<std::size_t>(t)] % 3];
        u(t) = std::sin(2.0 * M_PI * static_cast<double>(t) / 37.0);
        y(t + 1) = r.amplitude * std::sin(2.0 * M_PI * static_cast<double>(t) / r.period) + 0.5 * u(t);
      }
      break;
    }
    case Generator::variance_burst: {
      for (Index t = 0; t < n; ++t) {
        const bool burst = regime_of[static_cast<std::size_t>(t)] % 2 == 1;
        u(t) = 2.0 * unif01(rng) - 1.0;
        y(t + 1) = 0.7 * y(t) + 0.5 * u(t) + (burst ? 0.8 : 0.1) * normal(rng);
      }
      break;
    }
  }
  if (spec.noise_std > 0) {
    for (Index t = 1; t <= n; ++t) y(t) += spec.noise_std * normal(rng);
  }

  SeriesDataset ds;
  ds.inputs.resize(2, n);
  ds.targets.resize(1, n);
  ds.inputs.row(0) = u.transpose();
  ds.inputs.row(1) = y.head(n).transpose();
  ds.targets.row(0) = y.tail(n).transpose();
  ds.input_names = {"u", "y_prev"};
  ds.target_names = {"y"};
  Index at = 0;
  for (std::size_t s = 0; s + 1 < spec.segment_lengths.size(); ++s) {
    at += spec.segment_lengths[s];
    ds.drift_points.push_back(at);
  }
  return ds;
}

}  // namespace sorscn::data
