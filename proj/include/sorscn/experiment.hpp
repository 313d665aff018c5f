#pragma once

// Experiment configuration, NRMSE scoring, the multi-trial variant comparison
// and grid search, and report rendering.

#include "sorscn/construct.hpp"
#include "sorscn/datastream.hpp"
#include "sorscn/esn.hpp"
#include "sorscn/self_organize.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sorscn {

/// sqrt(sum of squared errors / (n * sum of per-output population variances)).
template <typename D1, typename D2>
typename D1::Scalar nrmse(const Eigen::MatrixBase<D1>& predictions, const Eigen::MatrixBase<D2>& targets) {
  using Scalar = typename D1::Scalar;
  if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols()) {
    throw DimensionMismatch("nrmse: predictions and targets differ in shape");
  }
  const Index n = targets.cols();
  if (n < 1) throw EmptyWindow("nrmse needs at least one sample");
  const Vector<Scalar> mean = targets.rowwise().mean();
  const Scalar variance = (targets.colwise() - mean).squaredNorm() / static_cast<Scalar>(n);
  if (!(variance > 0)) throw ZeroVariance("nrmse: targets are constant");
  return std::sqrt((predictions - targets).squaredNorm() / (static_cast<Scalar>(n) * variance));
}

namespace experiment {

using json = nlohmann::ordered_json;

enum class Variant { esn, rscn, sorscn1, sorscn2 };

const char* to_string(Variant v);
std::optional<Variant> variant_from_string(const std::string& s);

struct DatasetConfig {
  enum class Source { csv, synthetic } source{Source::synthetic};
  std::string path;
  data::Schema schema;
  data::SyntheticStreamSpec synthetic;
  Index train_end{0};  // in source rows; rows consumed by lags are subtracted
  Index washout{0};
  data::Normalization normalization{data::Normalization::minmax};
  double validation_noise_fraction{0.05};  // of each feature's training std
  std::uint64_t validation_seed{0};
};

struct SelfOrganizeConfig {
  Index window{40};
  double kappa_lo{0.5};
  double kappa_hi{1.5};
  RefitScope scope{RefitScope::recent};
  Index refit_buffer{200};
  double gamma_base{0.6};
  double alpha{0.5};
  double gamma_improved{1.0};
};

struct ModelConfig {
  std::vector<Variant> variants;
  Index block_size{10};
  Index max_nodes{300};
  double theta{0.9};
  ConstructionConfig<double> construction;  // block_size, max_blocks and theta filled from above
  EsnConfig<double> esn;
  SelfOrganizeConfig self_organize;
};

struct RunConfig {
  Index trials{50};
  std::uint64_t seed{1};
  std::string out{"out"};
};

struct SweepAxis {
  std::string key;
  std::vector<json> values;
};

struct SweepConfig {
  Index trials{5};
  std::vector<SweepAxis> axes;
};

struct ExperimentConfig {
  json resolved;  // the full configuration after defaults and overrides
  DatasetConfig dataset;
  ModelConfig model;
  RunConfig run;
  SweepConfig sweep;

  std::string fingerprint() const;
};

json default_config();

/// Sets `dotted.key=value`; the value is parsed as JSON and taken as a plain
/// string when that fails.
void apply_override(json& cfg, const std::string& assignment);

/// Defaults, then the user document, then overrides. Unknown keys, bad types and
/// out-of-range values raise ConfigError.
ExperimentConfig resolve_config(const json& user, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const json& resolved);

/// Normalized splits ready for modelling.
struct PreparedData {
  data::Segment train;
  data::Segment validation;
  data::Segment test;
  data::Normalizer normalizer;
  std::vector<Index> drift_points;  // relative to the start of the test segment
};

data::SeriesDataset load_dataset(const DatasetConfig& cfg);
PreparedData prepare_data(const DatasetConfig& cfg);
PreparedData prepare_data(const DatasetConfig& cfg, const data::SeriesDataset& ds);

/// Per-trial derived seeds.
struct TrialSeeds {
  std::uint64_t construction;
  std::uint64_t esn;
  std::uint64_t stream;
};
TrialSeeds trial_seeds(std::uint64_t trial_seed);

ConstructionConfig<double> construction_config(const ModelConfig& m, std::uint64_t seed, Index washout);
StreamSettings<double> stream_settings(const ModelConfig& m, Variant v, std::uint64_t seed, Index washout);

struct TrialRecord {
  Index index{0};
  std::uint64_t seed{0};
  bool ok{false};
  double validation_nrmse{0};
  double test_nrmse{0};
  std::size_t blocks{0};
  Index nodes{0};
  std::vector<WindowVerdict> timeline;  // test stream, self-organizing variants only
  std::string error;
};

struct Summary {
  double mean{0};
  double std{0};  // sample standard deviation, 0 for a single trial
  double median{0};
};

Summary summarize(const std::vector<double>& values);

struct VariantReport {
  Variant variant{Variant::esn};
  std::vector<TrialRecord> trials;
  std::size_t completed{0};
  Summary validation;
  Summary test;
  Index nodes_mode{0};
  bool degenerate{false};  // fewer than two completed trials
  bool all_failed{false};
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<VariantReport> variants;

  bool any_all_failed() const;
  const VariantReport* find(Variant v) const;
};

/// One model of the given variant trained on `data.train` with the trial's seeds.
struct BuiltModel {
  EnsembleModel<double> model;
  ErrorInterval<double> interval;  // calibrated for self-organizing variants
};

/// Shared initial construction for rscn / sorscn1 / sorscn2.
ConstructionResult<double> build_rscn(const ExperimentConfig& cfg, const PreparedData& data,
                                      std::uint64_t trial_seed);
BuiltModel build_model(const ExperimentConfig& cfg, const PreparedData& data, Variant v,
                       std::uint64_t trial_seed);

/// Prequential run of a self-organizing variant over a segment.
StreamResult<double> stream_segment(const ExperimentConfig& cfg, const PreparedData& data,
                                    const EnsembleModel<double>& model, const ErrorInterval<double>& interval,
                                    Variant v, const data::Segment& segment, std::uint64_t trial_seed);

ExperimentReport run_experiment(const ExperimentConfig& cfg);
ExperimentReport run_experiment(const ExperimentConfig& cfg, const PreparedData& data);

struct GridPoint {
  std::vector<json> values;  // one per axis
  ExperimentReport report;
  bool excluded{false};  // every trial failed
};

struct GridResult {
  std::vector<std::string> axes;
  Variant variant{Variant::sorscn2};
  std::vector<GridPoint> points;
  std::optional<std::size_t> best;
};

/// Runs `cfg.sweep.trials` trials of `variant` per point of the axes' Cartesian
/// product and picks the lowest mean validation NRMSE. Ties go to the point
/// whose axis values are smaller, comparing axes in the order listed.
GridResult grid_search(const ExperimentConfig& cfg, Variant variant);

json verdict_to_json(const WindowVerdict& v);
json report_to_json(const ExperimentReport& r, const std::string& generated_at);
std::string report_table(const ExperimentReport& r);
std::string timeline_jsonl(const ExperimentReport& r);
json grid_to_json(const GridResult& g, const std::string& generated_at);
std::string grid_surface_csv(const GridResult& g);

std::string utc_timestamp();

}  // namespace experiment
}  // namespace sorscn
