#pragma once

// Supervised block-incremental construction: candidate scoring under the
// supervisory inequality, candidate search over the (lambda, r) grids,
// least-squares readout refits and the early-stopped construction loop.

#include "sorscn/errors.hpp"
#include "sorscn/random.hpp"
#include "sorscn/reservoir.hpp"
#include "sorscn/types.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace sorscn {

enum class MuRule {
  decaying,  // mu_{j+1} = (1 - r) / (j + 2)
  zero,
};

template <typename Scalar>
struct ConstructionConfig {
  Index block_size{10};
  Index seed_block_size{0};  // > 0: the first block uses this size instead
  Index max_blocks{30};
  Scalar error_tolerance{Scalar(1e-5)};
  std::vector<Scalar> lambda_grid{Scalar(0.5), 1, 5, 10, 30, 50, 100};
  std::vector<Scalar> r_grid{Scalar(0.9), Scalar(0.99), Scalar(0.999), Scalar(0.9999),
                             Scalar(0.99999)};
  Index candidates_per_setting{100};
  Scalar theta{Scalar(0.9)};
  Index j_step{2};
  Index washout{0};
  MuRule mu_rule{MuRule::decaying};
  Scalar ridge{0};
  Scalar rank_cutoff{Scalar(1e-10)};
  std::uint64_t rng_seed{0};

  /// Slack term for the block about to be added when `current_blocks` exist.
  Scalar mu(Scalar r, Index current_blocks) const {
    if (mu_rule == MuRule::zero) return 0;
    return (1 - r) / static_cast<Scalar>(current_blocks + 2);
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw PreconditionViolation("construction config: " + what); };
    if (block_size < 1) fail("block_size must be >= 1");
    if (seed_block_size < 0) fail("seed_block_size must be >= 0");
    if (max_blocks < 1) fail("max_blocks must be >= 1");
    if (!(error_tolerance >= 0)) fail("error_tolerance must be >= 0");
    if (lambda_grid.empty() || r_grid.empty()) fail("grids must be non-empty");
    for (Scalar l : lambda_grid) if (!(l > 0)) fail("every lambda must be positive");
    for (Scalar r : r_grid) if (!(r > 0 && r < 1)) fail("every r must lie in (0, 1)");
    for (Scalar r : r_grid) if (!(r + mu(r, 0) < 1)) fail("r + mu must stay below 1");
    if (candidates_per_setting < 1) fail("candidates_per_setting must be >= 1");
    if (!(theta > 0 && theta <= 1)) fail("theta must lie in (0, 1]");
    if (j_step < 1 || j_step >= max_blocks) fail("need 1 <= j_step < max_blocks");
    if (washout < 0) fail("washout must be >= 0");
    if (!(ridge >= 0)) fail("ridge must be >= 0");
  }
};

template <typename Scalar>
struct CandidateScore {
  Scalar xi_total{0};
  Vector<Scalar> per_output;
  Index candidate_index{0};
  Scalar lambda_used{0};
  Scalar r_used{0};

  bool acceptable() const { return per_output.size() > 0 && (per_output.array() >= 0).all(); }
};

/// Supervisory margin of a candidate block, per output.
///
/// For output q the margin is |P e_q|^2 - (1 - r - mu) |e_q|^2, where P projects
/// onto the span of the candidate's state trajectories (the rows of `states`).
/// With a single-node block this is <e_q, x>^2 / <x, x> - (1 - r - mu) |e_q|^2.
/// The candidate is acceptable when every margin is non-negative.
template <typename D1, typename D2>
CandidateScore<typename D1::Scalar> score_candidate(const Eigen::MatrixBase<D1>& residual,
                                                    const Eigen::MatrixBase<D2>& states,
                                                    typename D1::Scalar r,
                                                    typename D1::Scalar mu) {
  using Scalar = typename D1::Scalar;
  if (residual.cols() != states.cols() || residual.cols() < 1) {
    throw DimensionMismatch("residual and candidate states must share n >= 1 samples");
  }
  if (!(states.squaredNorm() > Scalar(1e-15))) throw ZeroStateNorm("candidate states are all zero");
  CandidateScore<Scalar> score;
  score.r_used = r;
  // Orthonormal basis of the state row space via column-pivoted QR of states^T.
  Eigen::ColPivHouseholderQR<Matrix<Scalar>> qr(states.transpose());
  qr.setThreshold(Scalar(1e-10));
  const Index rank = qr.rank();
  const Matrix<Scalar> coeffs = qr.householderQ().transpose() * residual.transpose();
  const Vector<Scalar> captured = coeffs.topRows(rank).colwise().squaredNorm().transpose();
  const Vector<Scalar> energy = residual.rowwise().squaredNorm();
  score.per_output = captured - (1 - r - mu) * energy;
  score.xi_total = score.per_output.sum();
  return score;
}

template <typename Scalar>
struct Proposal {
  SubReservoir<Scalar> block;
  CandidateScore<Scalar> score;
  Matrix<Scalar> states;  // post-washout states over the harvested inputs
};

template <typename Scalar>
using BlockSampler = std::function<SubReservoir<Scalar>(Rng&, Index nodes, Index inputs,
                                                        Scalar lambda, Scalar theta)>;

/// Searches lambda ascending (outer) and r ascending (inner). For each lambda,
/// `candidates_per_setting` blocks are drawn and scored against `residual`,
/// whose columns align with the trailing columns of the candidate's post-washout
/// states. The first r admitting an acceptable candidate wins; within it the
/// largest xi_total is returned (lowest candidate index on ties).
template <typename Scalar, typename D1, typename D2>
Proposal<Scalar> propose_block(const ConstructionConfig<Scalar>& cfg,
                               const Eigen::MatrixBase<D1>& residual,
                               const Eigen::MatrixBase<D2>& inputs, Index washout,
                               Index current_blocks, std::uint64_t draw_key, Index nodes,
                               const BlockSampler<Scalar>* sampler = nullptr) {
  if (!(residual.norm() > cfg.error_tolerance)) {
    throw PreconditionViolation("propose_block: residual already within tolerance");
  }
  const Index available = inputs.cols() - washout;
  if (residual.cols() > available) {
    throw DimensionMismatch("residual has more samples than the post-washout inputs");
  }
  std::vector<Scalar> lambdas = cfg.lambda_grid;
  std::vector<Scalar> rs = cfg.r_grid;
  std::sort(lambdas.begin(), lambdas.end());
  std::sort(rs.begin(), rs.end());

  struct Scored {
    SubReservoir<Scalar> block;
    Matrix<Scalar> states;
    Vector<Scalar> captured;  // projected residual energy per output
  };
  const Vector<Scalar> energy = residual.rowwise().squaredNorm();
  const Index scored_cols = residual.cols();

  for (std::size_t li = 0; li < lambdas.size(); ++li) {
    std::vector<std::optional<Scored>> pool(static_cast<std::size_t>(cfg.candidates_per_setting));
    for (Index c = 0; c < cfg.candidates_per_setting; ++c) {
      Rng rng = make_stream(cfg.rng_seed, {draw_key, li, static_cast<std::uint64_t>(c)});
      SubReservoir<Scalar> b = sampler ? (*sampler)(rng, nodes, inputs.rows(), lambdas[li], cfg.theta)
                                       : draw_block<Scalar>(rng, nodes, inputs.rows(), lambdas[li],
                                                            cfg.theta);
      Matrix<Scalar> states = harvest_block(b, inputs, washout);
      try {
        auto s = score_candidate(residual, states.rightCols(scored_cols), Scalar(0), Scalar(1));
        // With r = 0, mu = 1 the margin is exactly the captured energy.
        pool[static_cast<std::size_t>(c)] = Scored{std::move(b), std::move(states), s.per_output};
      } catch (const ZeroStateNorm&) {
      }
    }
    for (Scalar r : rs) {
      const Scalar mu = cfg.mu(r, current_blocks);
      const Scalar slack = 1 - r - mu;
      std::optional<Index> best;
      Scalar best_xi = -std::numeric_limits<Scalar>::infinity();
      Vector<Scalar> best_margin;
      for (Index c = 0; c < cfg.candidates_per_setting; ++c) {
        const auto& cand = pool[static_cast<std::size_t>(c)];
        if (!cand) continue;
        Vector<Scalar> margin = cand->captured - slack * energy;
        if (!(margin.array() >= 0).all()) continue;
        const Scalar xi = margin.sum();
        if (xi > best_xi) {
          best_xi = xi;
          best = c;
          best_margin = std::move(margin);
        }
      }
      if (best) {
        auto& cand = *pool[static_cast<std::size_t>(*best)];
        Proposal<Scalar> p;
        p.block = std::move(cand.block);
        p.states = std::move(cand.states);
        p.score.per_output = std::move(best_margin);
        p.score.xi_total = best_xi;
        p.score.candidate_index = *best;
        p.score.lambda_used = lambdas[li];
        p.score.r_used = r;
        return p;
      }
    }
  }
  throw NoCandidateFound("no candidate satisfied the supervisory inequality on any (lambda, r) setting");
}

/// Minimum-norm least-squares readout W minimising |targets - W * stacked|_F.
/// A positive `ridge` switches to the Tikhonov-regularised normal equations.
template <typename D1, typename D2>
Matrix<typename D1::Scalar> refit_readout(const Eigen::MatrixBase<D1>& stacked,
                                          const Eigen::MatrixBase<D2>& targets,
                                          typename D1::Scalar ridge = 0,
                                          typename D1::Scalar rank_cutoff = 1e-10) {
  using Scalar = typename D1::Scalar;
  if (stacked.cols() != targets.cols()) {
    throw DimensionMismatch("states and targets must have the same number of samples");
  }
  if (stacked.rows() == 0) return Matrix<Scalar>(targets.rows(), 0);
  if (ridge > 0) {
    Matrix<Scalar> gram = stacked * stacked.transpose();
    gram.diagonal().array() += ridge;
    return gram.ldlt().solve(stacked * targets.transpose()).transpose();
  }
  Eigen::CompleteOrthogonalDecomposition<Matrix<Scalar>> cod(stacked.transpose());
  cod.setThreshold(rank_cutoff);
  return cod.solve(targets.transpose()).transpose();
}

template <typename Scalar, typename Derived>
Matrix<Scalar> refit_readout(const StateMatrix<Scalar>& states, const Eigen::MatrixBase<Derived>& targets,
                             Scalar ridge = 0, Scalar rank_cutoff = Scalar(1e-10)) {
  return refit_readout(states.stacked, targets, ridge, rank_cutoff);
}

template <typename Scalar>
struct ConstructionResult {
  EnsembleModel<Scalar> model;
  // Norms recorded after each accepted block, before any early-stop truncation.
  std::vector<Scalar> train_residual_norms;
  std::vector<Scalar> validation_residual_norms;
  std::vector<CandidateScore<Scalar>> accepted_scores;
  Matrix<Scalar> train_residual;  // targets - predictions of the returned model, post-washout
  bool stalled{false};
  bool early_stopped{false};
  Index early_stop_at{0};  // block count j at which the early-stop rule fired
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> vstack(const std::vector<Matrix<Scalar>>& parts) {
  Index rows = 0;
  for (const auto& p : parts) rows += p.rows();
  const Index cols = parts.empty() ? 0 : parts.front().cols();
  Matrix<Scalar> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p;
    at += p.rows();
  }
  return out;
}

template <typename Scalar>
bool non_decreasing_tail(const std::vector<Scalar>& v, Index steps) {
  const auto n = static_cast<Index>(v.size());
  if (n < steps + 1) return false;
  for (Index i = n - steps; i < n; ++i) {
    if (v[static_cast<std::size_t>(i - 1)] > v[static_cast<std::size_t>(i)]) return false;
  }
  return true;
}

}  // namespace detail

/// Builds the initial block-incremental network from historical data.
///
/// Blocks are added one at a time through propose_block; after each addition
/// the whole readout is refit by least squares. Construction stops when the
/// training residual reaches the tolerance, the block cap is hit, or the
/// validation residual has not decreased over `j_step` consecutive additions,
/// in which case those `j_step` blocks are removed again. A model always keeps
/// at least one block.
template <typename Scalar, typename D1, typename D2, typename D3 = Matrix<Scalar>,
          typename D4 = Matrix<Scalar>>
ConstructionResult<Scalar> build_initial(const ConstructionConfig<Scalar>& cfg,
                                         const Eigen::MatrixBase<D1>& train_inputs,
                                         const Eigen::MatrixBase<D2>& train_targets,
                                         const Eigen::MatrixBase<D3>* val_inputs = nullptr,
                                         const Eigen::MatrixBase<D4>* val_targets = nullptr,
                                         const BlockSampler<Scalar>* sampler = nullptr) {
  cfg.validate();
  const Index washout = cfg.washout;
  if (train_inputs.cols() != train_targets.cols()) throw DimensionMismatch("train inputs/targets");
  if (train_inputs.cols() <= washout) throw WashoutTooLarge("training series not longer than washout");
  const bool use_validation = val_inputs && val_targets;
  if (use_validation) {
    if (val_inputs->cols() != val_targets->cols() || val_inputs->rows() != train_inputs.rows() ||
        val_targets->rows() != train_targets.rows()) {
      throw DimensionMismatch("validation series must share K and L with training");
    }
    if (val_inputs->cols() <= washout) throw WashoutTooLarge("validation series not longer than washout");
  }

  ConstructionResult<Scalar> out;
  out.model = EnsembleModel<Scalar>(train_inputs.rows(), train_targets.rows());
  auto& model = out.model;
  const Matrix<Scalar> targets = train_targets.rightCols(train_targets.cols() - washout);
  Matrix<Scalar> val_t;
  if (use_validation) val_t = val_targets->rightCols(val_targets->cols() - washout);
  const auto n_h = static_cast<std::int64_t>(train_inputs.cols());

  std::vector<Matrix<Scalar>> train_states;
  std::vector<Matrix<Scalar>> val_states;
  Matrix<Scalar> residual = targets;

  auto refit = [&] {
    const Matrix<Scalar> stacked = detail::vstack(train_states);
    model.set_readout(refit_readout(stacked, targets, cfg.ridge, cfg.rank_cutoff));
    residual = targets - model.readout() * stacked;
  };
  auto add = [&](Proposal<Scalar>&& p) {
    if (use_validation) val_states.push_back(harvest_block(p.block, *val_inputs, washout));
    train_states.push_back(std::move(p.states));
    const auto id = model.append_block(std::move(p.block));
    out.accepted_scores.push_back(p.score);
    refit();
    out.train_residual_norms.push_back(residual.norm());
    if (use_validation) {
      const Matrix<Scalar> vs = detail::vstack(val_states);
      out.validation_residual_norms.push_back((val_t - model.readout() * vs).norm());
    }
    model.record({StructureEventKind::grow, n_h, model.block_count(), id});
  };

  if (!(residual.norm() > cfg.error_tolerance)) {
    // Nothing to fit, but a model keeps at least one block: take the first draw.
    Rng rng = make_stream(cfg.rng_seed, {0, 0, 0});
    const Index nodes = cfg.seed_block_size > 0 ? cfg.seed_block_size : cfg.block_size;
    Proposal<Scalar> p;
    const Scalar lambda = *std::min_element(cfg.lambda_grid.begin(), cfg.lambda_grid.end());
    p.block = sampler ? (*sampler)(rng, nodes, train_inputs.rows(), lambda, cfg.theta)
                      : draw_block<Scalar>(rng, nodes, train_inputs.rows(), lambda, cfg.theta);
    p.states = harvest_block(p.block, train_inputs, washout);
    p.score.per_output = Vector<Scalar>::Zero(train_targets.rows());
    add(std::move(p));
    out.train_residual = residual;
    return out;
  }

  Index j = 0;
  while (true) {
    if (j >= cfg.max_blocks) {
      model.record({StructureEventKind::cap, n_h, model.block_count(), 0});
      break;
    }
    if (!(residual.norm() > cfg.error_tolerance)) break;
    const Index nodes = (j == 0 && cfg.seed_block_size > 0) ? cfg.seed_block_size : cfg.block_size;
    Proposal<Scalar> p;
    try {
      p = propose_block(cfg, residual, train_inputs, washout, j, static_cast<std::uint64_t>(j), nodes,
                        sampler);
    } catch (const NoCandidateFound& e) {
      if (j == 0) throw ConstructionStalled(std::string("no initial block: ") + e.what());
      out.stalled = true;
      model.record({StructureEventKind::stall, n_h, model.block_count(), 0});
      break;
    }
    add(std::move(p));
    ++j;
    if (use_validation && detail::non_decreasing_tail(out.validation_residual_norms, cfg.j_step)) {
      out.early_stopped = true;
      out.early_stop_at = j;
      model.truncate(static_cast<std::size_t>(cfg.j_step));
      train_states.resize(train_states.size() - static_cast<std::size_t>(cfg.j_step));
      refit();
      model.record({StructureEventKind::early_stop, n_h, model.block_count(), 0});
      break;
    }
  }
  out.train_residual = residual;
  return out;
}

}  // namespace sorscn
