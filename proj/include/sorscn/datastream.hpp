#pragma once

// Series ingestion and preparation: CSV loading with lag features, affine
// normalization fit on training rows, train/test splits with washout
// bookkeeping, noise-derived validation copies and synthetic drifting streams.

#include "sorscn/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace sorscn::data {

/// A column reference, optionally lagged: "u1" or "lag(y,1)".
struct ColumnSpec {
  std::string column;
  Index lag{0};

  static ColumnSpec parse(const std::string& text);
  std::string label() const;
};

struct Schema {
  std::vector<ColumnSpec> inputs;
  std::vector<ColumnSpec> targets;
};

struct SeriesDataset {
  MatrixXd inputs;   // K x n
  MatrixXd targets;  // L x n
  std::vector<std::string> input_names;
  std::vector<std::string> target_names;
  Index row_offset{0};              // source rows dropped at the front by lag features
  std::vector<Index> drift_points;  // regime boundaries, synthetic data only

  Index samples() const { return inputs.cols(); }
};

SeriesDataset parse_csv(std::istream& in, const Schema& schema);
SeriesDataset load_csv(const std::string& path, const Schema& schema);
void write_csv(std::ostream& out, const SeriesDataset& ds);

enum class Normalization { none, minmax, zscore };

std::optional<Normalization> normalization_from_string(const std::string& s);
const char* to_string(Normalization n);

/// Per-row affine map x' = (x - offset) / scale.
struct AffineMap {
  VectorXd offset;
  VectorXd scale;

  static AffineMap fit(const MatrixXd& rows_by_samples, Normalization kind);
  MatrixXd apply(const MatrixXd& x) const;
  MatrixXd invert(const MatrixXd& x) const;
};

struct Normalizer {
  AffineMap inputs;
  AffineMap targets;
};

/// A contiguous piece of a dataset. The first `washout` samples only drive the
/// reservoir and are excluded from fitting and scoring.
struct Segment {
  MatrixXd inputs;
  MatrixXd targets;
  Index begin{0};  // first dataset row
  Index washout{0};

  Index samples() const { return inputs.cols(); }
  Index effective() const { return inputs.cols() - washout; }
};

struct Splits {
  Segment train;
  Segment validation;  // a copy of test until replaced by make_validation
  Segment test;
};

/// Rows [0, train_end) train, [train_end, n) test.
Splits split_and_washout(const SeriesDataset& ds, Index train_end, Index washout);

/// Copy of `test` with independent zero-mean Gaussian noise on every input and
/// target row, using the per-row standard deviations given.
Segment make_validation(const Segment& test, const VectorXd& input_std, const VectorXd& target_std,
                        std::uint64_t seed);
Segment make_validation(const Segment& test, double noise_std, std::uint64_t seed);

Normalizer fit_normalizer(const Segment& train, Normalization kind);
Segment normalize(const Segment& s, const Normalizer& n);

enum class Generator { regime_switch_narma, drifting_sine, variance_burst };

std::optional<Generator> generator_from_string(const std::string& s);
const char* to_string(Generator g);

struct SyntheticStreamSpec {
  Generator generator{Generator::regime_switch_narma};
  std::vector<Index> segment_lengths{600, 600};
  double noise_std{0.0};
  std::uint64_t seed{0};

  void validate() const;
};

/// Inputs [u(n), y(n-1)], target y(n); regimes change at every segment boundary.
SeriesDataset generate_synthetic(const SyntheticStreamSpec& spec);

}  // namespace sorscn::data
