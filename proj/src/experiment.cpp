#include "sorscn/experiment.hpp"

#include "sorscn/random.hpp"

#include <boost/crc.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace sorscn::experiment {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::esn: return "esn";
    case Variant::rscn: return "rscn";
    case Variant::sorscn1: return "sorscn1";
    case Variant::sorscn2: return "sorscn2";
  }
  return "unknown";
}

std::optional<Variant> variant_from_string(const std::string& s) {
  for (auto v : {Variant::esn, Variant::rscn, Variant::sorscn1, Variant::sorscn2}) {
    if (s == to_string(v)) return v;
  }
  return std::nullopt;
}

namespace {

bool self_organizing(Variant v) { return v == Variant::sorscn1 || v == Variant::sorscn2; }

std::optional<RefitScope> refit_scope_from_string(const std::string& s) {
  for (auto r : {RefitScope::window, RefitScope::recent, RefitScope::history}) {
    if (s == to_string(r)) return r;
  }
  return std::nullopt;
}

json::json_pointer pointer_for(const std::string& dotted) {
  if (dotted.empty()) throw ConfigError("empty configuration key");
  std::string ptr;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (part.empty()) throw ConfigError("malformed configuration key '" + dotted + "'");
    ptr += "/" + part;
  }
  return json::json_pointer(ptr);
}

// Every object key of `user` must exist in `reference`; arrays are not descended.
void check_known_keys(const json& user, const json& reference, const std::string& prefix) {
  if (!user.is_object() || !reference.is_object()) return;
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw ConfigError("unknown configuration key '" + path + "'");
    check_known_keys(it.value(), reference.at(it.key()), path);
  }
}

class Reader {
 public:
  explicit Reader(const json& root) : root_(root) {}

  template <typename T>
  T get(const std::string& dotted) const {
    const json& node = at(dotted);
    try {
      if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!node.is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<T>) {
          if (node.is_number_unsigned() || node.get<std::int64_t>() >= 0) return node.get<T>();
          throw ConfigError("");
        }
      }
      if constexpr (std::is_floating_point_v<T>) {
        if (!node.is_number()) throw ConfigError("");
      }
      return node.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("configuration key '" + dotted + "' has the wrong type: " + node.dump());
    }
  }

  const json& at(const std::string& dotted) const {
    const auto ptr = pointer_for(dotted);
    if (!root_.contains(ptr)) throw ConfigError("missing configuration key '" + dotted + "'");
    return root_.at(ptr);
  }

 private:
  const json& root_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

json default_config() {
  return json::parse(R"({
    "dataset": {
      "source": "synthetic",
      "path": "",
      "schema": {"inputs": ["u", "y_prev"], "targets": ["y"]},
      "synthetic": {
        "generator": "regime_switch_narma",
        "segment_lengths": [1000, 400, 400],
        "noise_std": 0.02,
        "seed": 2024
      },
      "train_end": 800,
      "washout": 50,
      "normalization": "minmax",
      "validation": {"noise_fraction": 0.05, "seed": 17}
    },
    "model": {
      "variants": ["esn", "rscn", "sorscn1", "sorscn2"],
      "block_size": 10,
      "max_nodes": 300,
      "theta": 0.9,
      "construction": {
        "seed_block_size": 0,
        "error_tolerance": 1e-5,
        "lambda_grid": [0.5, 1, 5, 10, 30, 50, 100],
        "r_grid": [0.9, 0.99, 0.999, 0.9999, 0.99999],
        "candidates_per_setting": 100,
        "j_step": 2,
        "mu_rule": "decaying",
        "ridge": 0.0,
        "rank_cutoff": 1e-10
      },
      "esn": {"nodes": 300, "input_scale": 0.5, "density": 0.02, "ridge": 0.0},
      "self_organize": {
        "window": 40,
        "kappa_lo": 0.5,
        "kappa_hi": 1.5,
        "refit_scope": "recent",
        "refit_buffer": 200,
        "guard_epsilon": 1e-12,
        "base": {"gamma": 0.6},
        "improved": {"alpha": 0.5, "gamma": 1.0}
      }
    },
    "run": {"trials": 50, "seed": 1, "out": "out"},
    "sweep": {
      "trials": 5,
      "axes": [
        {"key": "model.max_nodes", "values": [100, 200, 300]},
        {"key": "model.theta", "values": [0.5, 0.7, 0.9]}
      ]
    }
  })");
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override must look like key=value: '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  const auto ptr = pointer_for(key);
  if (!cfg.contains(ptr.parent_pointer()) || !cfg.at(ptr.parent_pointer()).is_object()) {
    throw ConfigError("override targets an unknown section: '" + key + "'");
  }
  cfg[ptr] = std::move(value);
}

ExperimentConfig resolve_config(const json& user, const std::vector<std::string>& overrides) {
  if (!user.is_object()) throw ConfigError("configuration must be a JSON object");
  const json defaults = default_config();
  check_known_keys(user, defaults, "");
  json merged = defaults;
  merged.merge_patch(user);
  for (const auto& o : overrides) apply_override(merged, o);
  check_known_keys(merged, defaults, "");
  return parse_config(merged);
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json user;
  try {
    user = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  auto cfg = resolve_config(user, overrides);
  if (cfg.dataset.source == DatasetConfig::Source::csv) {
    std::filesystem::path p(cfg.dataset.path);
    if (p.is_relative() && !std::filesystem::exists(p)) {
      const auto beside = std::filesystem::path(path).parent_path() / p;
      if (std::filesystem::exists(beside)) cfg.dataset.path = beside.string();
    }
  }
  return cfg;
}

ExperimentConfig parse_config(const json& resolved) {
  ExperimentConfig cfg;
  cfg.resolved = resolved;
  const Reader r(resolved);

  auto& d = cfg.dataset;
  const auto source = r.get<std::string>("dataset.source");
  if (source == "csv") {
    d.source = DatasetConfig::Source::csv;
  } else if (source == "synthetic") {
    d.source = DatasetConfig::Source::synthetic;
  } else {
    throw ConfigError("dataset.source must be 'csv' or 'synthetic', got '" + source + "'");
  }
  d.path = r.get<std::string>("dataset.path");
  require(d.source != DatasetConfig::Source::csv || !d.path.empty(), "dataset.path is required for csv sources");
  for (const auto& s : r.get<std::vector<std::string>>("dataset.schema.inputs")) {
    d.schema.inputs.push_back(data::ColumnSpec::parse(s));
  }
  for (const auto& s : r.get<std::vector<std::string>>("dataset.schema.targets")) {
    d.schema.targets.push_back(data::ColumnSpec::parse(s));
  }
  require(!d.schema.inputs.empty() && !d.schema.targets.empty(),
          "dataset.schema needs at least one input and one target");
  const auto generator = data::generator_from_string(r.get<std::string>("dataset.synthetic.generator"));
  require(generator.has_value(), "unknown dataset.synthetic.generator");
  d.synthetic.generator = *generator;
  d.synthetic.segment_lengths = r.get<std::vector<Index>>("dataset.synthetic.segment_lengths");
  d.synthetic.noise_std = r.get<double>("dataset.synthetic.noise_std");
  d.synthetic.seed = r.get<std::uint64_t>("dataset.synthetic.seed");
  d.synthetic.validate();
  d.train_end = r.get<Index>("dataset.train_end");
  d.washout = r.get<Index>("dataset.washout");
  require(d.train_end > 0, "dataset.train_end must be positive");
  require(d.washout >= 0, "dataset.washout must be >= 0");
  const auto norm = data::normalization_from_string(r.get<std::string>("dataset.normalization"));
  require(norm.has_value(), "dataset.normalization must be none, minmax or zscore");
  d.normalization = *norm;
  d.validation_noise_fraction = r.get<double>("dataset.validation.noise_fraction");
  require(d.validation_noise_fraction >= 0, "dataset.validation.noise_fraction must be >= 0");
  d.validation_seed = r.get<std::uint64_t>("dataset.validation.seed");

  auto& m = cfg.model;
  for (const auto& s : r.get<std::vector<std::string>>("model.variants")) {
    const auto v = variant_from_string(s);
    require(v.has_value(), "unknown model variant '" + s + "'");
    m.variants.push_back(*v);
  }
  require(!m.variants.empty(), "model.variants must not be empty");
  m.block_size = r.get<Index>("model.block_size");
  m.max_nodes = r.get<Index>("model.max_nodes");
  m.theta = r.get<double>("model.theta");
  require(m.block_size >= 1, "model.block_size must be >= 1");
  require(m.max_nodes >= m.block_size, "model.max_nodes must be >= model.block_size");
  require(m.theta > 0 && m.theta <= 1, "model.theta must lie in (0, 1]");

  auto& c = m.construction;
  c.seed_block_size = r.get<Index>("model.construction.seed_block_size");
  c.error_tolerance = r.get<double>("model.construction.error_tolerance");
  c.lambda_grid = r.get<std::vector<double>>("model.construction.lambda_grid");
  c.r_grid = r.get<std::vector<double>>("model.construction.r_grid");
  c.candidates_per_setting = r.get<Index>("model.construction.candidates_per_setting");
  c.j_step = r.get<Index>("model.construction.j_step");
  const auto mu_rule = r.get<std::string>("model.construction.mu_rule");
  require(mu_rule == "decaying" || mu_rule == "zero", "model.construction.mu_rule must be decaying or zero");
  c.mu_rule = mu_rule == "zero" ? MuRule::zero : MuRule::decaying;
  c.ridge = r.get<double>("model.construction.ridge");
  c.rank_cutoff = r.get<double>("model.construction.rank_cutoff");
  c.block_size = m.block_size;
  c.max_blocks = std::max<Index>(1, m.max_nodes / m.block_size);
  c.theta = m.theta;
  try {
    construction_config(m, 0, 0).validate();
  } catch (const PreconditionViolation& e) {
    throw ConfigError(e.what());
  }

  auto& e = m.esn;
  e.nodes = r.get<Index>("model.esn.nodes");
  e.input_scale = r.get<double>("model.esn.input_scale");
  e.density = r.get<double>("model.esn.density");
  e.ridge = r.get<double>("model.esn.ridge");
  e.theta = m.theta;
  require(e.nodes >= 1, "model.esn.nodes must be >= 1");
  require(e.input_scale > 0, "model.esn.input_scale must be positive");
  require(e.density > 0 && e.density <= 1, "model.esn.density must lie in (0, 1]");
  require(e.ridge >= 0, "model.esn.ridge must be >= 0");

  auto& so = m.self_organize;
  so.window = r.get<Index>("model.self_organize.window");
  so.kappa_lo = r.get<double>("model.self_organize.kappa_lo");
  so.kappa_hi = r.get<double>("model.self_organize.kappa_hi");
  const auto scope = refit_scope_from_string(r.get<std::string>("model.self_organize.refit_scope"));
  require(scope.has_value(), "model.self_organize.refit_scope must be window, recent or history");
  so.scope = *scope;
  so.refit_buffer = r.get<Index>("model.self_organize.refit_buffer");
  so.gamma_base = r.get<double>("model.self_organize.base.gamma");
  so.alpha = r.get<double>("model.self_organize.improved.alpha");
  so.gamma_improved = r.get<double>("model.self_organize.improved.gamma");
  require(so.window >= 1, "model.self_organize.window must be >= 1");
  require(so.kappa_lo >= 0 && so.kappa_hi > so.kappa_lo, "need 0 <= kappa_lo < kappa_hi");
  require(so.refit_buffer >= 1, "model.self_organize.refit_buffer must be >= 1");
  require(so.gamma_base >= 0 && so.gamma_base <= 1, "model.self_organize.base.gamma must lie in [0, 1]");
  require(so.alpha >= 0, "model.self_organize.improved.alpha must be >= 0");
  require(so.gamma_improved >= 0, "model.self_organize.improved.gamma must be >= 0");
  require(r.get<double>("model.self_organize.guard_epsilon") > 0, "guard_epsilon must be positive");

  cfg.run.trials = r.get<Index>("run.trials");
  cfg.run.seed = r.get<std::uint64_t>("run.seed");
  cfg.run.out = r.get<std::string>("run.out");
  require(cfg.run.trials >= 1, "run.trials must be >= 1");

  cfg.sweep.trials = r.get<Index>("sweep.trials");
  require(cfg.sweep.trials >= 1, "sweep.trials must be >= 1");
  const json& axes = r.at("sweep.axes");
  require(axes.is_array() && !axes.empty(), "sweep.axes must be a non-empty list");
  const json defaults = default_config();
  for (const auto& a : axes) {
    require(a.is_object() && a.contains("key") && a.contains("values") && a.at("key").is_string() &&
                a.at("values").is_array() && !a.at("values").empty(),
            "each sweep axis needs a key and a non-empty values list");
    SweepAxis axis{a.at("key").get<std::string>(), {}};
    require(defaults.contains(pointer_for(axis.key)), "unknown sweep key '" + axis.key + "'");
    for (const auto& v : a.at("values")) axis.values.push_back(v);
    cfg.sweep.axes.push_back(std::move(axis));
  }
  return cfg;
}

std::string ExperimentConfig::fingerprint() const {
  boost::crc_32_type crc;
  const std::string text = resolved.dump();
  crc.process_bytes(text.data(), text.size());
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
  return buf;
}

data::SeriesDataset load_dataset(const DatasetConfig& cfg) {
  if (cfg.source == DatasetConfig::Source::csv) return data::load_csv(cfg.path, cfg.schema);
  return data::generate_synthetic(cfg.synthetic);
}

PreparedData prepare_data(const DatasetConfig& cfg) { return prepare_data(cfg, load_dataset(cfg)); }

PreparedData prepare_data(const DatasetConfig& cfg, const data::SeriesDataset& ds) {
  const Index train_end = cfg.train_end - ds.row_offset;
  if (train_end <= 0 || train_end >= ds.samples()) {
    throw ConfigError("dataset.train_end " + std::to_string(cfg.train_end) + " leaves an empty train or test split (" +
                      std::to_string(ds.samples()) + " usable rows)");
  }
  if (cfg.washout >= train_end || cfg.washout >= ds.samples() - train_end) {
    throw ConfigError("dataset.washout must be shorter than both splits");
  }
  const auto splits = data::split_and_washout(ds, train_end, cfg.washout);
  PreparedData out;
  out.normalizer = data::fit_normalizer(splits.train, cfg.normalization);
  out.train = data::normalize(splits.train, out.normalizer);
  out.test = data::normalize(splits.test, out.normalizer);
  auto row_std = [](const MatrixXd& x) {
    return ((x.colwise() - x.rowwise().mean()).rowwise().squaredNorm() / static_cast<double>(x.cols()))
        .cwiseSqrt()
        .eval();
  };
  const double f = cfg.validation_noise_fraction;
  out.validation = data::make_validation(out.test, f * row_std(out.train.inputs), f * row_std(out.train.targets),
                                         derive_seed(cfg.validation_seed, {0x7a1}));
  for (Index p : ds.drift_points) {
    if (p > train_end && p < ds.samples()) out.drift_points.push_back(p - train_end);
  }
  return out;
}

TrialSeeds trial_seeds(std::uint64_t trial_seed) {
  return {derive_seed(trial_seed, {1}), derive_seed(trial_seed, {2}), derive_seed(trial_seed, {3})};
}

ConstructionConfig<double> construction_config(const ModelConfig& m, std::uint64_t seed, Index washout) {
  ConstructionConfig<double> c = m.construction;
  c.block_size = m.block_size;
  c.max_blocks = std::max<Index>(1, m.max_nodes / m.block_size);
  c.theta = m.theta;
  c.washout = washout;
  c.rng_seed = seed;
  return c;
}

StreamSettings<double> stream_settings(const ModelConfig& m, Variant v, std::uint64_t seed, Index washout) {
  StreamSettings<double> s;
  const auto& so = m.self_organize;
  s.window = so.window;
  s.washout = washout;
  s.variant = v == Variant::sorscn1 ? MsaVariant::base : MsaVariant::improved;
  s.alpha = so.alpha;
  s.gamma = v == Variant::sorscn1 ? so.gamma_base : so.gamma_improved;
  s.scope = so.scope;
  s.refit_buffer = so.refit_buffer;
  s.seed = seed;
  return s;
}

ConstructionResult<double> build_rscn(const ExperimentConfig& cfg, const PreparedData& data,
                                      std::uint64_t trial_seed) {
  const auto seeds = trial_seeds(trial_seed);
  const auto cc = construction_config(cfg.model, seeds.construction, data.train.washout);
  return build_initial(cc, data.train.inputs, data.train.targets, &data.validation.inputs,
                       &data.validation.targets);
}

namespace {

ErrorInterval<double> interval_for(const ExperimentConfig& cfg, const ConstructionResult<double>& built) {
  const auto& so = cfg.model.self_organize;
  return calibrate_interval(built.train_residual, so.window, so.kappa_lo, so.kappa_hi);
}

}  // namespace

BuiltModel build_model(const ExperimentConfig& cfg, const PreparedData& data, Variant v,
                       std::uint64_t trial_seed) {
  BuiltModel out;
  if (v == Variant::esn) {
    auto e = cfg.model.esn;
    e.washout = data.train.washout;
    e.rng_seed = trial_seeds(trial_seed).esn;
    out.model = build_esn(e, data.train.inputs, data.train.targets);
    return out;
  }
  auto built = build_rscn(cfg, data, trial_seed);
  if (self_organizing(v)) out.interval = interval_for(cfg, built);
  out.model = std::move(built.model);
  return out;
}

StreamResult<double> stream_segment(const ExperimentConfig& cfg, const PreparedData& data,
                                    const EnsembleModel<double>& model, const ErrorInterval<double>& interval,
                                    Variant v, const data::Segment& segment, std::uint64_t trial_seed) {
  if (!self_organizing(v)) throw PreconditionViolation("only sorscn1 and sorscn2 run on a stream");
  const auto seeds = trial_seeds(trial_seed);
  const auto cc = construction_config(cfg.model, seeds.construction, data.train.washout);
  const auto settings = stream_settings(cfg.model, v, seeds.stream, segment.washout);
  TrainingHistory<double> history{&data.train.inputs, &data.train.targets, data.train.washout};
  return run_stream(model, segment.inputs, segment.targets, cc, interval, settings, history);
}

namespace {

MatrixXd scored_targets(const data::Segment& s) { return s.targets.rightCols(s.effective()); }

double static_nrmse(const EnsembleModel<double>& model, const data::Segment& s) {
  return nrmse(predict(model, s.inputs, s.washout), scored_targets(s));
}

Index node_count(const EnsembleModel<double>& m) { return m.state_size(); }

}  // namespace

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  const auto n = static_cast<double>(values.size());
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / n;
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / (n - 1));
  }
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  return s;
}

bool ExperimentReport::any_all_failed() const {
  return std::any_of(variants.begin(), variants.end(), [](const VariantReport& v) { return v.all_failed; });
}

const VariantReport* ExperimentReport::find(Variant v) const {
  for (const auto& r : variants) {
    if (r.variant == v) return &r;
  }
  return nullptr;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) { return run_experiment(cfg, prepare_data(cfg.dataset)); }

ExperimentReport run_experiment(const ExperimentConfig& cfg, const PreparedData& data) {
  ExperimentReport report;
  report.config = cfg;
  for (auto v : cfg.model.variants) report.variants.push_back(VariantReport{v, {}, 0, {}, {}, 0, false, false});

  for (Index i = 0; i < cfg.run.trials; ++i) {
    const std::uint64_t seed = cfg.run.seed + static_cast<std::uint64_t>(i);
    // The incremental variants share one initial construction per trial.
    std::optional<ConstructionResult<double>> initial;
    std::string initial_error;
    auto shared_initial = [&]() -> const ConstructionResult<double>& {
      if (!initial && initial_error.empty()) {
        try {
          initial = build_rscn(cfg, data, seed);
        } catch (const std::exception& e) {
          initial_error = e.what();
        }
      }
      if (!initial) throw Error(initial_error);
      return *initial;
    };

    for (auto& vr : report.variants) {
      TrialRecord rec;
      rec.index = i;
      rec.seed = seed;
      try {
        if (vr.variant == Variant::esn) {
          const auto built = build_model(cfg, data, Variant::esn, seed);
          rec.validation_nrmse = static_nrmse(built.model, data.validation);
          rec.test_nrmse = static_nrmse(built.model, data.test);
          rec.blocks = built.model.block_count();
          rec.nodes = node_count(built.model);
        } else if (vr.variant == Variant::rscn) {
          const auto& built = shared_initial();
          rec.validation_nrmse = static_nrmse(built.model, data.validation);
          rec.test_nrmse = static_nrmse(built.model, data.test);
          rec.blocks = built.model.block_count();
          rec.nodes = node_count(built.model);
        } else {
          const auto& built = shared_initial();
          const auto interval = interval_for(cfg, built);
          const auto val = stream_segment(cfg, data, built.model, interval, vr.variant, data.validation, seed);
          rec.validation_nrmse = nrmse(val.predictions, scored_targets(data.validation));
          auto test = stream_segment(cfg, data, built.model, interval, vr.variant, data.test, seed);
          rec.test_nrmse = nrmse(test.predictions, scored_targets(data.test));
          rec.blocks = test.model.block_count();
          rec.nodes = node_count(test.model);
          rec.timeline = std::move(test.verdicts);
        }
        if (!std::isfinite(rec.validation_nrmse) || !std::isfinite(rec.test_nrmse)) {
          throw Error("non-finite NRMSE");
        }
        rec.ok = true;
      } catch (const std::exception& e) {
        rec = TrialRecord{};
        rec.index = i;
        rec.seed = seed;
        rec.error = e.what();
      }
      vr.trials.push_back(std::move(rec));
    }
  }

  for (auto& vr : report.variants) {
    std::vector<double> val, test;
    std::map<Index, int> node_freq;
    for (const auto& t : vr.trials) {
      if (!t.ok) continue;
      val.push_back(t.validation_nrmse);
      test.push_back(t.test_nrmse);
      ++node_freq[t.nodes];
    }
    vr.completed = val.size();
    vr.validation = summarize(val);
    vr.test = summarize(test);
    vr.degenerate = vr.completed < 2;
    vr.all_failed = vr.completed == 0;
    int best = 0;
    for (const auto& [nodes, count] : node_freq) {
      if (count > best) {
        best = count;
        vr.nodes_mode = nodes;
      }
    }
  }
  return report;
}

namespace {

// Lexicographic comparison of axis values; numbers compare numerically.
bool values_less(const std::vector<json>& a, const std::vector<json>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < b[i]) return true;
    if (b[i] < a[i]) return false;
  }
  return false;
}

}  // namespace

GridResult grid_search(const ExperimentConfig& cfg, Variant variant) {
  GridResult g;
  g.variant = variant;
  const auto& axes = cfg.sweep.axes;
  if (axes.empty()) throw ConfigError("grid search needs at least one axis");
  for (const auto& a : axes) {
    if (a.values.empty()) throw ConfigError("sweep axis '" + a.key + "' has no values");
    g.axes.push_back(a.key);
  }
  // Every point is parsed before any is run so an invalid combination fails fast.
  std::vector<ExperimentConfig> configs;
  std::vector<std::size_t> idx(axes.size(), 0);
  while (true) {
    json point = cfg.resolved;
    GridPoint gp;
    for (std::size_t k = 0; k < axes.size(); ++k) {
      point[pointer_for(axes[k].key)] = axes[k].values[idx[k]];
      gp.values.push_back(axes[k].values[idx[k]]);
    }
    point["run"]["trials"] = cfg.sweep.trials;
    point["model"]["variants"] = json::array({to_string(variant)});
    try {
      configs.push_back(parse_config(point));
    } catch (const ConfigError& e) {
      throw ConfigError("sweep point " + json(gp.values).dump() + ": " + e.what());
    }
    configs.back().dataset.path = cfg.dataset.path;
    g.points.push_back(std::move(gp));

    std::size_t k = axes.size();
    while (k > 0) {
      --k;
      if (++idx[k] < axes[k].values.size()) break;
      idx[k] = 0;
      if (k == 0) {
        k = axes.size() + 1;
        break;
      }
    }
    if (k == axes.size() + 1) break;
  }

  std::optional<PreparedData> shared;
  bool touches_dataset = false;
  for (const auto& a : axes) touches_dataset = touches_dataset || a.key.rfind("dataset.", 0) == 0;
  if (!touches_dataset) shared = prepare_data(cfg.dataset);
  for (std::size_t p = 0; p < g.points.size(); ++p) {
    auto& gp = g.points[p];
    gp.report = shared ? run_experiment(configs[p], *shared) : run_experiment(configs[p]);
    gp.excluded = gp.report.variants.front().all_failed;
  }

  for (std::size_t p = 0; p < g.points.size(); ++p) {
    const auto& gp = g.points[p];
    if (gp.excluded) continue;
    if (!g.best) {
      g.best = p;
      continue;
    }
    const auto& cur = g.points[*g.best];
    const double a = gp.report.variants.front().validation.mean;
    const double b = cur.report.variants.front().validation.mean;
    if (a < b || (a == b && values_less(gp.values, cur.values))) g.best = p;
  }
  return g;
}

json verdict_to_json(const WindowVerdict& v) {
  json j;
  j["window_index"] = v.window_index;
  j["sample_begin"] = v.sample_begin;
  j["sample_end"] = v.sample_end;
  j["error_norm"] = v.error_norm;
  j["action"] = to_string(v.action);
  j["blocks_before"] = v.blocks_before;
  j["blocks_after"] = v.blocks_after;
  j["j_m"] = v.j_m;
  j["updates_applied"] = v.updates_applied;
  j["note"] = v.note;
  return j;
}

namespace {

json summary_json(const Summary& s) { return json{{"mean", s.mean}, {"std", s.std}, {"median", s.median}}; }

json variant_json(const VariantReport& vr) {
  json trials = json::array();
  for (const auto& t : vr.trials) {
    json tj;
    tj["index"] = t.index;
    tj["seed"] = t.seed;
    tj["status"] = t.ok ? "ok" : "failed";
    if (t.ok) {
      tj["validation_nrmse"] = t.validation_nrmse;
      tj["test_nrmse"] = t.test_nrmse;
      tj["blocks"] = t.blocks;
      tj["nodes"] = t.nodes;
      json tl = json::array();
      for (const auto& v : t.timeline) tl.push_back(verdict_to_json(v));
      tj["timeline"] = std::move(tl);
    } else {
      tj["error"] = t.error;
    }
    trials.push_back(std::move(tj));
  }
  json a;
  a["completed"] = vr.completed;
  a["failed"] = vr.trials.size() - vr.completed;
  a["validation_nrmse"] = summary_json(vr.validation);
  a["test_nrmse"] = summary_json(vr.test);
  a["nodes_mode"] = vr.nodes_mode;
  a["degenerate"] = vr.degenerate;
  a["all_failed"] = vr.all_failed;
  return json{{"name", to_string(vr.variant)}, {"aggregate", std::move(a)}, {"trials", std::move(trials)}};
}

}  // namespace

json report_to_json(const ExperimentReport& r, const std::string& generated_at) {
  json j;
  j["format"] = "sorscn-report";
  j["version"] = 1;
  j["generated_at"] = generated_at;
  j["fingerprint"] = r.config.fingerprint();
  j["config"] = r.config.resolved;
  json vs = json::array();
  for (const auto& v : r.variants) vs.push_back(variant_json(v));
  j["variants"] = std::move(vs);
  return j;
}

std::string report_table(const ExperimentReport& r) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-9s %6s %6s  %-23s %-23s %11s %7s\n", "variant", "trials", "failed",
                "validation NRMSE", "testing NRMSE", "test median", "N mode");
  out << line;
  for (const auto& v : r.variants) {
    const auto failed = v.trials.size() - v.completed;
    if (v.all_failed) {
      std::snprintf(line, sizeof line, "%-9s %6zu %6zu  %-23s %-23s %11s %7s\n", to_string(v.variant),
                    v.trials.size(), failed, "-", "-", "-", "-");
    } else {
      char val[64], test[64];
      std::snprintf(val, sizeof val, "%.4f +/- %.4f", v.validation.mean, v.validation.std);
      std::snprintf(test, sizeof test, "%.4f +/- %.4f", v.test.mean, v.test.std);
      std::snprintf(line, sizeof line, "%-9s %6zu %6zu  %-23s %-23s %11.4f %7lld\n", to_string(v.variant),
                    v.trials.size(), failed, val, test, v.test.median, static_cast<long long>(v.nodes_mode));
    }
    out << line;
  }
  out << "config fingerprint " << r.config.fingerprint() << "\n";
  return out.str();
}

std::string timeline_jsonl(const ExperimentReport& r) {
  std::string out;
  for (const auto& v : r.variants) {
    for (const auto& t : v.trials) {
      for (const auto& w : t.timeline) {
        json j;
        j["variant"] = to_string(v.variant);
        j["trial"] = t.index;
        j.update(verdict_to_json(w));
        out += j.dump();
        out += '\n';
      }
    }
  }
  return out;
}

json grid_to_json(const GridResult& g, const std::string& generated_at) {
  json j;
  j["format"] = "sorscn-sweep";
  j["version"] = 1;
  j["generated_at"] = generated_at;
  j["variant"] = to_string(g.variant);
  j["axes"] = g.axes;
  json points = json::array();
  for (const auto& p : g.points) {
    const auto& vr = p.report.variants.front();
    json pj;
    pj["values"] = p.values;
    pj["excluded"] = p.excluded;
    pj["aggregate"] = variant_json(vr).at("aggregate");
    points.push_back(std::move(pj));
  }
  j["points"] = std::move(points);
  if (g.best) {
    j["best"] = {{"index", *g.best}, {"values", g.points[*g.best].values}};
  } else {
    j["best"] = nullptr;
  }
  if (!g.points.empty()) j["fingerprint"] = g.points.front().report.config.fingerprint();
  return j;
}

std::string grid_surface_csv(const GridResult& g) {
  std::ostringstream out;
  for (const auto& a : g.axes) out << a << ",";
  out << "completed,failed,validation_mean,validation_std,test_mean,test_std,nodes_mode,excluded\n";
  for (const auto& p : g.points) {
    const auto& vr = p.report.variants.front();
    for (const auto& v : p.values) out << (v.is_string() ? v.get<std::string>() : v.dump()) << ",";
    out << vr.completed << "," << vr.trials.size() - vr.completed << ",";
    if (p.excluded) {
      out << ",,,,,";
    } else {
      out << json(vr.validation.mean).dump() << "," << json(vr.validation.std).dump() << ","
          << json(vr.test.mean).dump() << "," << json(vr.test.std).dump() << "," << vr.nodes_mode << ",";
    }
    out << (p.excluded ? "true" : "false") << "\n";
  }
  return out.str();
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace sorscn::experiment
