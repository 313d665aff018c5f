#pragma once

// Block-diagonal tanh reservoirs: subreservoir blocks, the ensemble model that
// owns them together with the partitioned readout, and state harvesting.

#include "sorscn/errors.hpp"
#include "sorscn/random.hpp"
#include "sorscn/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sorscn {

template <typename Scalar>
struct SubReservoir {
  Matrix<Scalar> input_weights;     // N x K
  Matrix<Scalar> internal_weights;  // N x N, already spectrally scaled
  Vector<Scalar> bias;              // N
  Scalar scale_lambda{1};
  Scalar spectral_target{1};
  std::uint64_t block_id{0};

  Index size() const { return internal_weights.rows(); }
  Index input_dim() const { return input_weights.cols(); }
};

enum class StructureEventKind { grow, prune, early_stop, stall, cap };

inline const char* to_string(StructureEventKind kind) {
  switch (kind) {
    case StructureEventKind::grow: return "grow";
    case StructureEventKind::prune: return "prune";
    case StructureEventKind::early_stop: return "early_stop";
    case StructureEventKind::stall: return "stall";
    case StructureEventKind::cap: return "cap";
  }
  return "unknown";
}

inline std::optional<StructureEventKind> structure_event_from_string(const std::string& s) {
  for (auto k : {StructureEventKind::grow, StructureEventKind::prune, StructureEventKind::early_stop,
                 StructureEventKind::stall, StructureEventKind::cap}) {
    if (s == to_string(k)) return k;
  }
  return std::nullopt;
}

struct StructureEvent {
  StructureEventKind kind{StructureEventKind::grow};
  std::int64_t sample_index{0};  // position in the series where the event happened
  std::size_t blocks_after{0};
  std::uint64_t block_id{0};  // meaningful for grow events only

  friend bool operator==(const StructureEvent&, const StructureEvent&) = default;
};

/// Ordered subreservoirs plus the readout partitioned column-wise per block.
///
/// The readout always has exactly as many columns as the blocks have nodes;
/// every mutation goes through a member that preserves that.
template <typename Scalar>
class EnsembleModel {
 public:
  using MatrixType = Matrix<Scalar>;
  using VectorType = Vector<Scalar>;

  EnsembleModel() = default;
  EnsembleModel(Index input_dim, Index output_dim)
      : input_dim_(input_dim), output_dim_(output_dim), readout_(output_dim, 0) {
    if (input_dim < 1 || output_dim < 1) {
      throw PreconditionViolation("EnsembleModel needs input_dim >= 1 and output_dim >= 1");
    }
  }

  Index input_dim() const { return input_dim_; }
  Index output_dim() const { return output_dim_; }
  std::size_t block_count() const { return blocks_.size(); }
  Index state_size() const { return offsets_.empty() ? 0 : offsets_.back(); }

  const std::vector<SubReservoir<Scalar>>& blocks() const { return blocks_; }
  const SubReservoir<Scalar>& block(std::size_t k) const { return blocks_.at(k); }
  Index block_offset(std::size_t k) const { return k == 0 ? 0 : offsets_.at(k - 1); }

  const MatrixType& readout() const { return readout_; }
  auto readout_block(std::size_t k) const {
    return readout_.middleCols(block_offset(k), blocks_.at(k).size());
  }
  // Fixed-shape view for in-place updates; cannot be resized through it.
  auto readout_view() { return readout_.block(0, 0, readout_.rows(), readout_.cols()); }

  void set_readout(MatrixType w) {
    if (w.rows() != output_dim_ || w.cols() != state_size()) {
      throw DimensionMismatch("readout must be " + std::to_string(output_dim_) + "x" +
                              std::to_string(state_size()));
    }
    readout_ = std::move(w);
  }

  std::uint64_t next_block_id() const { return next_id_; }

  /// Appends a block with a zero readout partition and returns the id it was assigned.
  std::uint64_t append_block(SubReservoir<Scalar> b) {
    if (b.input_weights.cols() != input_dim_ || b.input_weights.rows() != b.size() ||
        b.internal_weights.cols() != b.size() || b.bias.size() != b.size() || b.size() < 1) {
      throw DimensionMismatch("block shape inconsistent with model input dimension");
    }
    b.block_id = next_id_++;
    const Index n = b.size();
    offsets_.push_back(state_size() + n);
    blocks_.push_back(std::move(b));
    readout_.conservativeResize(output_dim_, state_size());
    readout_.rightCols(n).setZero();
    return blocks_.back().block_id;
  }

  /// Keeps the blocks at the given positions (relative order preserved) and
  /// their readout columns.
  void retain(std::span<const std::size_t> positions) {
    std::vector<std::size_t> keep(positions.begin(), positions.end());
    std::sort(keep.begin(), keep.end());
    keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
    if (keep.empty() || keep.back() >= blocks_.size()) {
      throw PreconditionViolation("retain: positions must be a non-empty subset of the blocks");
    }
    std::vector<SubReservoir<Scalar>> blocks;
    Index cols = 0;
    for (auto k : keep) cols += blocks_[k].size();
    MatrixType w(output_dim_, cols);
    Index at = 0;
    for (auto k : keep) {
      w.middleCols(at, blocks_[k].size()) = readout_block(k);
      at += blocks_[k].size();
      blocks.push_back(std::move(blocks_[k]));
    }
    blocks_ = std::move(blocks);
    rebuild_offsets();
    readout_ = std::move(w);
  }

  /// Drops the last `count` blocks.
  void truncate(std::size_t count) {
    if (count > blocks_.size()) throw PreconditionViolation("truncate beyond block count");
    std::vector<std::size_t> keep(blocks_.size() - count);
    std::iota(keep.begin(), keep.end(), std::size_t{0});
    if (keep.empty()) {
      blocks_.clear();
      offsets_.clear();
      readout_.resize(output_dim_, 0);
      return;
    }
    retain(keep);
  }

  const std::vector<StructureEvent>& history() const { return history_; }
  void record(StructureEvent e) { history_.push_back(e); }

  /// Rebuilds a model from persisted parts, validating the invariants.
  static EnsembleModel restore(Index input_dim, Index output_dim,
                               std::vector<SubReservoir<Scalar>> blocks, MatrixType readout,
                               std::vector<StructureEvent> history, std::uint64_t next_id) {
    EnsembleModel m(input_dim, output_dim);
    std::vector<std::uint64_t> ids;
    for (auto& b : blocks) {
      const auto id = b.block_id;
      if (!ids.empty() && id <= ids.back()) {
        throw PreconditionViolation("restored block ids must be unique and increasing");
      }
      ids.push_back(id);
      m.append_block(std::move(b));
      m.blocks_.back().block_id = id;
    }
    m.next_id_ = std::max(next_id, ids.empty() ? 0 : ids.back() + 1);
    m.set_readout(std::move(readout));
    m.history_ = std::move(history);
    return m;
  }

 private:
  void rebuild_offsets() {
    offsets_.clear();
    Index total = 0;
    for (const auto& b : blocks_) {
      total += b.size();
      offsets_.push_back(total);
    }
  }

  Index input_dim_{0};
  Index output_dim_{0};
  std::vector<SubReservoir<Scalar>> blocks_;
  std::vector<Index> offsets_;  // cumulative end row of each block
  MatrixType readout_;
  std::vector<StructureEvent> history_;
  std::uint64_t next_id_{0};
};

/// Reservoir states harvested over [sample_begin, sample_end) of a series,
/// stacked in model block order.
template <typename Scalar>
struct StateMatrix {
  Matrix<Scalar> stacked;            // (sum N) x n
  std::vector<Index> block_offsets;  // J + 1 entries, block k occupies rows [off[k], off[k+1])
  Index sample_begin{0};
  Index sample_end{0};

  std::size_t block_count() const { return block_offsets.empty() ? 0 : block_offsets.size() - 1; }
  Index samples() const { return stacked.cols(); }
  auto block(std::size_t k) const {
    return stacked.middleRows(block_offsets.at(k), block_offsets.at(k + 1) - block_offsets.at(k));
  }
};

/// Dominant eigenvalue magnitude. Power iteration first, stopped on the
/// eigen-residual |Av - lv| and polished with two shifted inverse-iteration
/// steps; falls back to a dense eigensolver when it does not settle (e.g. a
/// complex-conjugate dominant pair).
template <typename Derived>
typename Derived::Scalar dominant_eigen_magnitude(const Eigen::MatrixBase<Derived>& a,
                                                  std::uint64_t seed = 0x5eedULL) {
  using Scalar = typename Derived::Scalar;
  using std::abs;
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionMismatch("dominant_eigen_magnitude needs a non-empty square matrix");
  }
  const Index n = a.rows();
  if (n == 1) return abs(a(0, 0));

  const Scalar tolerance = std::max(Scalar(1e-10), 100 * Eigen::NumTraits<Scalar>::epsilon());
  constexpr int max_iterations = 1000;
  const Matrix<Scalar> m = a;
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(n)}));
  Vector<Scalar> v(n);
  fill_uniform(v, Scalar(-1), Scalar(1), rng);
  v.normalize();
  for (int it = 0; it < max_iterations; ++it) {
    const Vector<Scalar> w = m * v;
    const Scalar lambda = v.dot(w);
    const Scalar est = w.norm();
    if (!(est > 0)) break;
    if ((w - lambda * v).norm() <= tolerance * abs(lambda)) {
      // Converged to a real dominant eigenvalue: sharpen the eigenvector.
      Eigen::PartialPivLU<Matrix<Scalar>> lu(m - lambda * Matrix<Scalar>::Identity(n, n));
      Vector<Scalar> x = v;
      for (int k = 0; k < 2; ++k) {
        const Vector<Scalar> y = lu.solve(x);
        const Scalar norm = y.norm();
        if (!(norm > 0) || !y.allFinite()) break;
        x = y / norm;
      }
      const Scalar refined = abs(x.dot(m * x));
      if (abs(refined - abs(lambda)) <= Scalar(1e-6) * abs(lambda)) return refined;
      break;
    }
    v = w / est;
  }
  Eigen::EigenSolver<Matrix<Scalar>> solver(m, false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

/// Rescales `raw` so its dominant eigenvalue magnitude equals `theta`.
template <typename Derived>
Matrix<typename Derived::Scalar> scale_spectral(const Eigen::MatrixBase<Derived>& raw,
                                                typename Derived::Scalar theta) {
  using Scalar = typename Derived::Scalar;
  if (!(theta > 0 && theta <= 1)) throw PreconditionViolation("theta must lie in (0, 1]");
  const Scalar rho = dominant_eigen_magnitude(raw);
  if (!(rho > Scalar(1e-12))) {
    throw DegenerateMatrix("dominant eigenvalue magnitude too small to rescale");
  }
  return (theta / rho) * raw;
}

/// Draws a block uniform in [-lambda, lambda]. `density` < 1 sparsifies the
/// internal weights (each entry kept with that probability). Degenerate draws
/// are resampled.
template <typename Scalar>
SubReservoir<Scalar> draw_block(Rng& rng, Index nodes, Index inputs, Scalar lambda, Scalar theta,
                                Scalar density = 1) {
  if (nodes < 1 || inputs < 1) throw PreconditionViolation("block needs N >= 1 and K >= 1");
  if (!(lambda > 0)) throw PreconditionViolation("lambda must be positive");
  SubReservoir<Scalar> b;
  b.scale_lambda = lambda;
  b.spectral_target = theta;
  b.input_weights.resize(nodes, inputs);
  b.bias.resize(nodes);
  Matrix<Scalar> raw(nodes, nodes);
  std::uniform_real_distribution<Scalar> keep(0, 1);
  for (int attempt = 0; attempt < 100; ++attempt) {
    fill_uniform(b.input_weights, -lambda, lambda, rng);
    fill_uniform(raw, -lambda, lambda, rng);
    fill_uniform(b.bias, -lambda, lambda, rng);
    if (density < 1) {
      for (Index j = 0; j < nodes; ++j) {
        for (Index i = 0; i < nodes; ++i) {
          if (keep(rng) >= density) raw(i, j) = 0;
        }
      }
    }
    try {
      b.internal_weights = scale_spectral(raw, theta);
      return b;
    } catch (const DegenerateMatrix&) {
    }
  }
  throw DegenerateMatrix("could not draw a non-degenerate internal weight matrix");
}

/// Runs one block over `inputs` (K x n) from `initial` and returns the states
/// of samples [washout, n).
template <typename Scalar, typename Derived>
Matrix<Scalar> harvest_block(const SubReservoir<Scalar>& b, const Eigen::MatrixBase<Derived>& inputs,
                             Index washout, const Vector<Scalar>* initial = nullptr) {
  const Index n = inputs.cols();
  if (inputs.rows() != b.input_dim()) throw DimensionMismatch("input dimension mismatch");
  if (washout < 0 || washout >= n) {
    throw WashoutTooLarge("washout " + std::to_string(washout) + " >= series length " +
                          std::to_string(n));
  }
  if (initial && initial->size() != b.size()) throw DimensionMismatch("initial state size");
  const Matrix<Scalar> driven = (b.input_weights * inputs).colwise() + b.bias;
  Vector<Scalar> x = initial ? *initial : Vector<Scalar>::Zero(b.size());
  Matrix<Scalar> out(b.size(), n - washout);
  for (Index t = 0; t < n; ++t) {
    x = (driven.col(t) + b.internal_weights * x).array().tanh().matrix();
    if (t >= washout) out.col(t - washout) = x;
  }
  return out;
}

/// One recurrence step for every block; blocks only see their own slice of `prev`.
template <typename Scalar, typename D1, typename D2>
Vector<Scalar> step_state(const EnsembleModel<Scalar>& model, const Eigen::MatrixBase<D1>& prev,
                          const Eigen::MatrixBase<D2>& input) {
  if (prev.size() != model.state_size() || input.size() != model.input_dim()) {
    throw DimensionMismatch("step_state: state or input length does not match the model");
  }
  Vector<Scalar> next(model.state_size());
  for (std::size_t k = 0; k < model.block_count(); ++k) {
    const auto& b = model.block(k);
    const Index off = model.block_offset(k);
    next.segment(off, b.size()) =
        (b.input_weights * input + b.internal_weights * prev.segment(off, b.size()) + b.bias)
            .array()
            .tanh()
            .matrix();
  }
  return next;
}

/// Harvests every block over `inputs`, discarding the first `washout` samples.
/// `initial` (stacked, optional) defaults to the zero state.
template <typename Scalar, typename Derived>
StateMatrix<Scalar> harvest_states(const EnsembleModel<Scalar>& model,
                                   const Eigen::MatrixBase<Derived>& inputs, Index washout,
                                   const Vector<Scalar>* initial = nullptr) {
  const Index n = inputs.cols();
  if (washout < 0 || washout >= n) {
    throw WashoutTooLarge("washout " + std::to_string(washout) + " >= series length " +
                          std::to_string(n));
  }
  if (inputs.rows() != model.input_dim()) throw DimensionMismatch("input dimension mismatch");
  if (initial && initial->size() != model.state_size()) {
    throw DimensionMismatch("initial state size");
  }
  StateMatrix<Scalar> s;
  s.sample_begin = washout;
  s.sample_end = n;
  s.stacked.resize(model.state_size(), n - washout);
  s.block_offsets.push_back(0);
  for (std::size_t k = 0; k < model.block_count(); ++k) {
    const auto& b = model.block(k);
    const Index off = model.block_offset(k);
    std::optional<Vector<Scalar>> init;
    if (initial) init = initial->segment(off, b.size());
    s.stacked.middleRows(off, b.size()) = harvest_block(b, inputs, washout, init ? &*init : nullptr);
    s.block_offsets.push_back(off + b.size());
  }
  return s;
}

template <typename Scalar>
Matrix<Scalar> predict(const EnsembleModel<Scalar>& model, const StateMatrix<Scalar>& states) {
  if (states.stacked.rows() != model.state_size()) {
    throw DimensionMismatch("state rows do not match readout columns");
  }
  return model.readout() * states.stacked;
}

/// Harvest-then-readout convenience.
template <typename Scalar, typename Derived>
Matrix<Scalar> predict(const EnsembleModel<Scalar>& model, const Eigen::MatrixBase<Derived>& inputs,
                       Index washout) {
  return predict(model, harvest_states(model, inputs, washout));
}

}  // namespace sorscn
