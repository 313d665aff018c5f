#pragma once

// Self-organizing stream driver: routes each arriving window by its error
// against a calibrated interval to a no-op, projection updates of the readout,
// or a restructuring pass (sensitivity ranking, pruning to the blocks that
// carry the output, then supervised regrowth on the arriving data).

#include "sorscn/construct.hpp"
#include "sorscn/errors.hpp"
#include "sorscn/online_update.hpp"
#include "sorscn/random.hpp"
#include "sorscn/reservoir.hpp"
#include "sorscn/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace sorscn {

enum class MsaVariant { base, improved };
enum class VerdictAction { none, online_update, restructure };

// Which samples the readout is refit on after regrowth.
enum class RefitScope {
  window,   // the arriving window only
  recent,   // the most recent `refit_buffer` streamed samples (window included)
  history,  // the training data plus everything streamed so far
};

inline const char* to_string(MsaVariant v) { return v == MsaVariant::base ? "base" : "improved"; }

inline const char* to_string(VerdictAction a) {
  switch (a) {
    case VerdictAction::none: return "none";
    case VerdictAction::online_update: return "online_update";
    case VerdictAction::restructure: return "restructure";
  }
  return "unknown";
}

inline const char* to_string(RefitScope s) {
  switch (s) {
    case RefitScope::window: return "window";
    case RefitScope::recent: return "recent";
    case RefitScope::history: return "history";
  }
  return "unknown";
}

template <typename Scalar>
struct ErrorInterval {
  Scalar e_min{0};
  Scalar e_max{std::numeric_limits<Scalar>::infinity()};
  struct Calibration {
    Scalar statistic{0};  // RMS of per-window training residual norms
    Scalar kappa_lo{0};
    Scalar kappa_hi{0};
    Index window{0};
  } calibration;

  void validate() const {
    if (!(e_min >= 0 && e_max > e_min)) throw PreconditionViolation("error interval needs 0 <= e_min < e_max");
  }
};

/// E_min = kappa_lo * s, E_max = kappa_hi * s where s is the RMS over
/// consecutive `window`-sized chunks of the training residual's Frobenius norm.
template <typename Derived>
ErrorInterval<typename Derived::Scalar> calibrate_interval(const Eigen::MatrixBase<Derived>& train_residual,
                                                           Index window,
                                                           typename Derived::Scalar kappa_lo,
                                                           typename Derived::Scalar kappa_hi) {
  using Scalar = typename Derived::Scalar;
  if (window < 1) throw PreconditionViolation("window must be >= 1");
  if (!(kappa_lo >= 0 && kappa_hi > kappa_lo)) throw PreconditionViolation("need 0 <= kappa_lo < kappa_hi");
  const Index n = train_residual.cols();
  if (n < 1) throw EmptyWindow("no training residual to calibrate from");
  Scalar sum_sq = 0;
  Index chunks = 0;
  for (Index b = 0; b + window <= n; b += window, ++chunks) {
    sum_sq += train_residual.middleCols(b, window).squaredNorm();
  }
  if (chunks == 0) {
    sum_sq = train_residual.squaredNorm();
    chunks = 1;
  }
  ErrorInterval<Scalar> interval;
  const Scalar stat = std::sqrt(sum_sq / static_cast<Scalar>(chunks));
  interval.calibration = {stat, kappa_lo, kappa_hi, window};
  interval.e_min = kappa_lo * stat;
  interval.e_max = kappa_hi * stat;
  if (!(interval.e_max > interval.e_min)) {
    // Perfect training fit: keep a strictly positive band.
    interval.e_max = interval.e_min + std::numeric_limits<Scalar>::min();
  }
  return interval;
}

template <typename Scalar>
VerdictAction route(Scalar error_norm, const ErrorInterval<Scalar>& interval) {
  if (error_norm < interval.e_min) return VerdictAction::none;
  if (error_norm <= interval.e_max) return VerdictAction::online_update;
  return VerdictAction::restructure;
}

/// S_k: mean over the window of |W_out^(k) x^(k)(n)|.
template <typename Scalar>
Vector<Scalar> compute_sensitivity(const EnsembleModel<Scalar>& model, const StateMatrix<Scalar>& window_states) {
  if (window_states.samples() == 0) throw EmptyWindow("sensitivity needs at least one sample");
  if (window_states.block_count() != model.block_count()) {
    throw DimensionMismatch("window states do not match the model's blocks");
  }
  Vector<Scalar> s(static_cast<Index>(model.block_count()));
  for (std::size_t k = 0; k < model.block_count(); ++k) {
    const Matrix<Scalar> contribution = model.readout_block(k) * window_states.block(k);
    s(static_cast<Index>(k)) = contribution.colwise().norm().mean();
  }
  return s;
}

template <typename Scalar>
struct CorrelationScores {
  Vector<Scalar> scores;  // C_k
  Vector<Scalar> raw;     // c_k, summed absolute correlation with the other blocks
  std::vector<std::size_t> constant_blocks;
};

/// C_k = 1 - c_k / sum_j c_j with c_k = sum_{k' != k} |pearson(X'^(k), X'^(k'))| over
/// row-major flattened window states. Constant blocks correlate with nothing.
/// When every c_k is zero, C_k = 1 - 1/J.
template <typename Scalar>
CorrelationScores<Scalar> compute_correlation_scores(const StateMatrix<Scalar>& window_states) {
  const std::size_t j = window_states.block_count();
  if (j < 2) throw PreconditionViolation("correlation scores need at least two blocks");
  if (window_states.samples() == 0) throw EmptyWindow("correlation needs at least one sample");
  std::vector<Vector<Scalar>> centered(j);
  std::vector<Scalar> norms(j);
  CorrelationScores<Scalar> out;
  for (std::size_t k = 0; k < j; ++k) {
    const Matrix<Scalar> rows = window_states.block(k).transpose();  // column-major of X^T == row-major of X
    Vector<Scalar> flat = Eigen::Map<const Vector<Scalar>>(rows.data(), rows.size());
    if (k > 0 && flat.size() != centered[0].size()) {
      throw DimensionMismatch("correlation needs equally sized blocks");
    }
    flat.array() -= flat.mean();
    norms[k] = flat.norm();
    if (!(norms[k] > Scalar(0))) out.constant_blocks.push_back(k);
    centered[k] = std::move(flat);
  }
  out.raw = Vector<Scalar>::Zero(static_cast<Index>(j));
  for (std::size_t a = 0; a < j; ++a) {
    for (std::size_t b = a + 1; b < j; ++b) {
      Scalar rho = 0;
      if (norms[a] > 0 && norms[b] > 0) {
        rho = std::abs(centered[a].dot(centered[b]) / (norms[a] * norms[b]));
      }
      out.raw(static_cast<Index>(a)) += rho;
      out.raw(static_cast<Index>(b)) += rho;
    }
  }
  const Scalar total = out.raw.sum();
  if (total > 0) {
    out.scores = (Scalar(1) - out.raw.array() / total).matrix();
  } else {
    out.scores = Vector<Scalar>::Constant(static_cast<Index>(j), 1 - Scalar(1) / static_cast<Scalar>(j));
  }
  return out;
}

template <typename Scalar>
struct SensitivityReport {
  Vector<Scalar> sensitivity;             // S_k in model order
  std::vector<std::size_t> ranking;       // model positions, S descending
  Vector<Scalar> msa_curve;               // M_{J_K}, J_K = 1..J
  Vector<Scalar> correlation_scores;      // C_k in model order (improved only)
  Index j_m{0};
  MsaVariant variant{MsaVariant::base};
  Scalar alpha{0};
  Scalar gamma{0};
  bool threshold_unmet{false};
  std::vector<std::uint64_t> retained_ids;  // the first j_m blocks of the ranking
};

namespace detail {

template <typename Scalar>
Vector<Scalar> normalized_prefix(const std::vector<Scalar>& ranked) {
  const auto j = static_cast<Index>(ranked.size());
  Vector<Scalar> prefix(j);
  Scalar acc = 0;
  for (Index i = 0; i < j; ++i) {
    acc += ranked[static_cast<std::size_t>(i)];
    prefix(i) = acc;
  }
  if (!(acc > 0)) {
    for (Index i = 0; i < j; ++i) prefix(i) = static_cast<Scalar>(i + 1) / static_cast<Scalar>(j);
    return prefix;
  }
  return prefix / acc;
}

}  // namespace detail

/// Ranks blocks by sensitivity and picks the smallest prefix whose model scale
/// adaptability reaches gamma. Passing correlation scores selects the improved
/// curve, which adds alpha times their normalized prefix sum in the same order.
template <typename Scalar>
SensitivityReport<Scalar> select_blocks(const Vector<Scalar>& sensitivity,
                                        const Vector<Scalar>* correlation, Scalar gamma, Scalar alpha,
                                        std::vector<std::uint64_t> block_ids = {}) {
  const auto j = static_cast<std::size_t>(sensitivity.size());
  if (j == 0) throw PreconditionViolation("select_blocks needs at least one block");
  if (block_ids.empty()) {
    block_ids.resize(j);
    std::iota(block_ids.begin(), block_ids.end(), std::uint64_t{0});
  }
  if (block_ids.size() != j) throw DimensionMismatch("one id per block required");
  if (correlation && static_cast<std::size_t>(correlation->size()) != j) {
    throw DimensionMismatch("one correlation score per block required");
  }
  if (!(gamma >= 0)) throw PreconditionViolation("gamma must be >= 0");
  if (!correlation && gamma > 1) throw PreconditionViolation("base MSA threshold must be <= 1");
  if (!(alpha >= 0)) throw PreconditionViolation("alpha must be >= 0");
  if (!(sensitivity.array() >= 0).all()) throw PreconditionViolation("sensitivities must be >= 0");

  SensitivityReport<Scalar> rep;
  rep.sensitivity = sensitivity;
  rep.variant = correlation ? MsaVariant::improved : MsaVariant::base;
  rep.alpha = correlation ? alpha : Scalar(0);
  rep.gamma = gamma;
  rep.ranking.resize(j);
  std::iota(rep.ranking.begin(), rep.ranking.end(), std::size_t{0});
  std::stable_sort(rep.ranking.begin(), rep.ranking.end(), [&](std::size_t a, std::size_t b) {
    const Scalar sa = sensitivity(static_cast<Index>(a));
    const Scalar sb = sensitivity(static_cast<Index>(b));
    if (sa != sb) return sa > sb;
    return block_ids[a] < block_ids[b];
  });

  std::vector<Scalar> ranked_s(j);
  for (std::size_t i = 0; i < j; ++i) ranked_s[i] = sensitivity(static_cast<Index>(rep.ranking[i]));
  rep.msa_curve = detail::normalized_prefix(ranked_s);
  if (correlation) {
    rep.correlation_scores = *correlation;
    std::vector<Scalar> ranked_c(j);
    for (std::size_t i = 0; i < j; ++i) ranked_c[i] = (*correlation)(static_cast<Index>(rep.ranking[i]));
    rep.msa_curve += alpha * detail::normalized_prefix(ranked_c);
  }

  rep.j_m = static_cast<Index>(j);
  rep.threshold_unmet = true;
  for (Index i = 0; i < rep.msa_curve.size(); ++i) {
    if (rep.msa_curve(i) >= gamma) {
      rep.j_m = i + 1;
      rep.threshold_unmet = false;
      break;
    }
  }
  for (Index i = 0; i < rep.j_m; ++i) rep.retained_ids.push_back(block_ids[rep.ranking[static_cast<std::size_t>(i)]]);
  return rep;
}

/// Keeps the report's retained blocks in their original relative order.
template <typename Scalar>
EnsembleModel<Scalar> prune(EnsembleModel<Scalar> model, const SensitivityReport<Scalar>& report,
                            std::int64_t sample_index = 0) {
  if (report.j_m < 1 || report.j_m > static_cast<Index>(model.block_count())) {
    throw PreconditionViolation("prune: j_m must lie in [1, J]");
  }
  std::vector<std::size_t> keep;
  for (std::size_t k = 0; k < model.block_count(); ++k) {
    const auto id = model.block(k).block_id;
    if (std::find(report.retained_ids.begin(), report.retained_ids.end(), id) != report.retained_ids.end()) {
      keep.push_back(k);
    }
  }
  if (static_cast<Index>(keep.size()) != report.j_m) {
    throw PreconditionViolation("prune: report does not match the model's block ids");
  }
  if (keep.size() != model.block_count()) model.retain(keep);
  model.record({StructureEventKind::prune, sample_index, model.block_count(), 0});
  return model;
}

/// Data for a regrowth pass. The stream columns [0, t) are everything seen so
/// far; the trailing `window` columns are the arriving window.
template <typename Scalar>
struct RegrowInput {
  const Matrix<Scalar>* stream_inputs{nullptr};
  const Matrix<Scalar>* stream_targets{nullptr};
  Index window{0};
  Index fit_columns{0};  // trailing stream columns used by the readout refit (>= window)
  // Training data appended to the refit when non-null (history scope).
  const Matrix<Scalar>* history_inputs{nullptr};
  const Matrix<Scalar>* history_targets{nullptr};
  Index history_washout{0};
  // State of each block at stream column 0; blocks not listed start at zero.
  std::map<std::uint64_t, Vector<Scalar>> initial_states;
  std::int64_t sample_index{0};
  std::uint64_t draw_key{0};
};

template <typename Scalar>
struct RegrowResult {
  EnsembleModel<Scalar> model;
  Matrix<Scalar> window_residual;
  Scalar residual_before{0};
  Scalar residual_after{0};
  bool stalled{false};
  bool capped{false};
  std::vector<CandidateScore<Scalar>> scores;
  Vector<Scalar> final_state;  // stacked state of every block at column t - 1
};

/// Adds blocks that satisfy the supervisory inequality against the window
/// residual, refitting the whole readout after each addition, until the window
/// residual drops to the tolerance or below interval.e_max, or the cap is hit.
template <typename Scalar>
RegrowResult<Scalar> regrow(EnsembleModel<Scalar> model, const RegrowInput<Scalar>& in,
                            const ConstructionConfig<Scalar>& cfg, const ErrorInterval<Scalar>& interval) {
  if (!in.stream_inputs || !in.stream_targets) throw PreconditionViolation("regrow needs stream data");
  const Matrix<Scalar>& u = *in.stream_inputs;
  const Matrix<Scalar>& y = *in.stream_targets;
  const Index t = u.cols();
  if (y.cols() != t || in.window < 1 || in.window > t || in.fit_columns < in.window || in.fit_columns > t) {
    throw DimensionMismatch("regrow: inconsistent window / fit columns");
  }
  const bool with_history = in.history_inputs && in.history_targets;

  std::vector<Matrix<Scalar>> stream_states;   // N x t per block
  std::vector<Matrix<Scalar>> history_states;  // N x (n_h - washout) per block
  auto harvest_for = [&](const SubReservoir<Scalar>& b, const Matrix<Scalar>* stream_cols) {
    if (stream_cols) {
      stream_states.push_back(*stream_cols);
    } else {
      auto it = in.initial_states.find(b.block_id);
      stream_states.push_back(harvest_block(b, u, 0, it == in.initial_states.end() ? nullptr : &it->second));
    }
    if (with_history) history_states.push_back(harvest_block(b, *in.history_inputs, in.history_washout));
  };
  for (const auto& b : model.blocks()) harvest_for(b, nullptr);

  auto window_states = [&] {
    Matrix<Scalar> s(model.state_size(), in.window);
    for (std::size_t k = 0; k < stream_states.size(); ++k) {
      s.middleRows(model.block_offset(k), stream_states[k].rows()) = stream_states[k].rightCols(in.window);
    }
    return s;
  };
  const Matrix<Scalar> window_targets = y.rightCols(in.window);

  RegrowResult<Scalar> out;
  Matrix<Scalar> residual = window_targets - model.readout() * window_states();
  out.residual_before = residual.norm();
  if (!(out.residual_before > interval.e_max)) {
    throw PreconditionViolation("regrow: window residual already within the interval");
  }

  auto refit = [&] {
    Index cols = in.fit_columns;
    if (with_history) cols += in.history_inputs->cols() - in.history_washout;
    Matrix<Scalar> design(model.state_size(), cols);
    Matrix<Scalar> targets(y.rows(), cols);
    Index at = 0;
    if (with_history) {
      const Index h = in.history_inputs->cols() - in.history_washout;
      for (std::size_t k = 0; k < history_states.size(); ++k) {
        design.block(model.block_offset(k), 0, history_states[k].rows(), h) = history_states[k];
      }
      targets.leftCols(h) = in.history_targets->rightCols(h);
      at = h;
    }
    for (std::size_t k = 0; k < stream_states.size(); ++k) {
      design.block(model.block_offset(k), at, stream_states[k].rows(), in.fit_columns) =
          stream_states[k].rightCols(in.fit_columns);
    }
    targets.rightCols(in.fit_columns) = y.rightCols(in.fit_columns);
    model.set_readout(refit_readout(design, targets, cfg.ridge, cfg.rank_cutoff));
    residual = window_targets - model.readout() * window_states();
  };

  const auto cap = static_cast<std::size_t>(cfg.max_blocks);
  if (model.block_count() >= cap) {
    out.capped = true;
    model.record({StructureEventKind::cap, in.sample_index, model.block_count(), 0});
  }
  std::uint64_t attempt = 0;
  while (model.block_count() < cap && residual.norm() > cfg.error_tolerance &&
         residual.norm() > interval.e_max) {
    Proposal<Scalar> p;
    try {
      p = propose_block(cfg, residual, u, 0, static_cast<Index>(model.block_count()),
                        derive_seed(in.draw_key, {attempt++}), cfg.block_size);
    } catch (const NoCandidateFound&) {
      out.stalled = true;
      model.record({StructureEventKind::stall, in.sample_index, model.block_count(), 0});
      break;
    }
    out.scores.push_back(p.score);
    harvest_for(p.block, &p.states);
    const auto id = model.append_block(std::move(p.block));
    refit();
    model.record({StructureEventKind::grow, in.sample_index, model.block_count(), id});
    if (model.block_count() >= cap && residual.norm() > interval.e_max) {
      out.capped = true;
      model.record({StructureEventKind::cap, in.sample_index, model.block_count(), 0});
    }
  }
  out.residual_after = residual.norm();
  out.window_residual = residual;
  out.final_state.resize(model.state_size());
  for (std::size_t k = 0; k < stream_states.size(); ++k) {
    out.final_state.segment(model.block_offset(k), stream_states[k].rows()) = stream_states[k].col(t - 1);
  }
  out.model = std::move(model);
  return out;
}

struct WindowVerdict {
  std::size_t window_index{0};
  Index sample_begin{0};
  Index sample_end{0};
  double error_norm{0};
  VerdictAction action{VerdictAction::none};
  std::size_t blocks_before{0};
  std::size_t blocks_after{0};
  Index j_m{0};  // blocks kept by pruning (restructure only)
  std::size_t updates_applied{0};
  std::string note;  // warnings and recovered failures
};

template <typename Scalar>
struct StreamSettings {
  Index window{40};
  Index washout{0};  // leading stream samples that only advance the state
  MsaVariant variant{MsaVariant::improved};
  Scalar alpha{Scalar(0.5)};
  Scalar gamma{Scalar(0.9)};
  RefitScope scope{RefitScope::window};
  Index refit_buffer{200};
  Scalar guard_epsilon{Scalar(1e-12)};
  std::uint64_t seed{0};
};

template <typename Scalar>
struct StreamResult {
  EnsembleModel<Scalar> model;
  std::vector<WindowVerdict> verdicts;
  Matrix<Scalar> predictions;  // made before each window's update, columns [washout, n)
};

/// Optional training data for the history refit scope.
template <typename Scalar>
struct TrainingHistory {
  const Matrix<Scalar>* inputs{nullptr};
  const Matrix<Scalar>* targets{nullptr};
  Index washout{0};
};

/// Processes the stream window by window, predicting each window with the
/// current model before adapting it.
template <typename Scalar>
StreamResult<Scalar> run_stream(EnsembleModel<Scalar> model, const Matrix<Scalar>& inputs,
                                const Matrix<Scalar>& targets, const ConstructionConfig<Scalar>& cfg,
                                const ErrorInterval<Scalar>& interval, const StreamSettings<Scalar>& settings,
                                TrainingHistory<Scalar> history = {},
                                const Vector<Scalar>* initial_state = nullptr) {
  interval.validate();
  const Index n = inputs.cols();
  if (settings.window < 1) throw PreconditionViolation("window size must be >= 1");
  if (targets.cols() != n || inputs.rows() != model.input_dim() || targets.rows() != model.output_dim()) {
    throw DimensionMismatch("stream shape does not match the model");
  }
  if (settings.washout < 0 || settings.washout >= n) throw WashoutTooLarge("stream washout >= stream length");
  if (model.block_count() == 0) throw PreconditionViolation("run_stream needs a built model");
  if (settings.scope == RefitScope::history && !(history.inputs && history.targets)) {
    throw PreconditionViolation("history refit scope needs the training data");
  }

  StreamResult<Scalar> out;
  out.predictions.resize(model.output_dim(), n - settings.washout);

  std::map<std::uint64_t, Vector<Scalar>> initial_states;
  Vector<Scalar> live = initial_state ? *initial_state : Vector<Scalar>::Zero(model.state_size());
  if (live.size() != model.state_size()) throw DimensionMismatch("initial state size");
  for (std::size_t k = 0; k < model.block_count(); ++k) {
    const auto& b = model.block(k);
    initial_states[b.block_id] = live.segment(model.block_offset(k), b.size());
  }
  if (settings.washout > 0) {
    live = harvest_states(model, inputs.leftCols(settings.washout), settings.washout - 1, &live).stacked.col(0);
  }

  const Matrix<Scalar>* hist_in = settings.scope == RefitScope::history ? history.inputs : nullptr;
  const Matrix<Scalar>* hist_t = settings.scope == RefitScope::history ? history.targets : nullptr;

  std::size_t w = 0;
  for (Index begin = settings.washout; begin < n; begin += settings.window, ++w) {
    const Index end = std::min(begin + settings.window, n);
    const Index len = end - begin;
    WindowVerdict v;
    v.window_index = w;
    v.sample_begin = begin;
    v.sample_end = end;
    v.blocks_before = model.block_count();

    const StateMatrix<Scalar> states = harvest_states(model, inputs.middleCols(begin, len), 0, &live);
    const Matrix<Scalar> window_targets = targets.middleCols(begin, len);
    const Matrix<Scalar> prediction = model.readout() * states.stacked;
    out.predictions.middleCols(begin - settings.washout, len) = prediction;
    v.error_norm = static_cast<double>((window_targets - prediction).norm());
    v.action = route(static_cast<Scalar>(v.error_norm), interval);
    Vector<Scalar> next_live = states.stacked.col(len - 1);

    if (v.action == VerdictAction::online_update) {
      Matrix<Scalar> w_out = model.readout();
      for (Index i = 0; i < len; ++i) {
        if (project_step(w_out, states.stacked.col(i), window_targets.col(i), settings.guard_epsilon) ==
            ProjectionOutcome::applied) {
          ++v.updates_applied;
        }
      }
      model.set_readout(std::move(w_out));
    } else if (v.action == VerdictAction::restructure) {
      try {
        const Vector<Scalar> s = compute_sensitivity(model, states);
        std::optional<Vector<Scalar>> c;
        if (settings.variant == MsaVariant::improved) {
          if (model.block_count() >= 2) {
            auto cs = compute_correlation_scores(states);
            if (!cs.constant_blocks.empty()) v.note += "constant_state;";
            c = std::move(cs.scores);
          } else {
            c = Vector<Scalar>::Ones(1);
          }
        }
        std::vector<std::uint64_t> ids;
        for (const auto& b : model.blocks()) ids.push_back(b.block_id);
        const auto report = select_blocks(s, c ? &*c : nullptr, settings.gamma, settings.alpha, ids);
        if (report.threshold_unmet) v.note += "threshold_unmet;";
        v.j_m = report.j_m;

        // Keep the retained blocks' live state rows before pruning reorders offsets.
        std::vector<std::size_t> keep;
        for (std::size_t k = 0; k < model.block_count(); ++k) {
          if (std::find(report.retained_ids.begin(), report.retained_ids.end(), model.block(k).block_id) !=
              report.retained_ids.end()) {
            keep.push_back(k);
          }
        }
        Matrix<Scalar> kept_states(0, len);
        Vector<Scalar> kept_live(0);
        for (auto k : keep) {
          const Index rows = model.block(k).size();
          kept_states.conservativeResize(kept_states.rows() + rows, Eigen::NoChange);
          kept_states.bottomRows(rows) = states.block(k);
          kept_live.conservativeResize(kept_live.size() + rows);
          kept_live.tail(rows) = next_live.segment(model.block_offset(k), rows);
        }
        EnsembleModel<Scalar> pruned = prune(model, report, static_cast<std::int64_t>(begin));
        Vector<Scalar> pruned_live = kept_live;

        const Scalar pruned_error = (window_targets - pruned.readout() * kept_states).norm();
        if (pruned_error > interval.e_max) {
          const Matrix<Scalar> seen_u = inputs.leftCols(end);
          const Matrix<Scalar> seen_y = targets.leftCols(end);
          RegrowInput<Scalar> in;
          in.stream_inputs = &seen_u;
          in.stream_targets = &seen_y;
          in.window = len;
          const Index streamed = end - settings.washout;
          switch (settings.scope) {
            case RefitScope::window: in.fit_columns = len; break;
            case RefitScope::recent: in.fit_columns = std::max(len, std::min(settings.refit_buffer, streamed)); break;
            case RefitScope::history: in.fit_columns = streamed; break;
          }
          in.history_inputs = hist_in;
          in.history_targets = hist_t;
          in.history_washout = history.washout;
          in.initial_states = initial_states;
          in.sample_index = static_cast<std::int64_t>(begin);
          in.draw_key = derive_seed(settings.seed, {0x5e6f, static_cast<std::uint64_t>(w)});
          auto grown = regrow(std::move(pruned), in, cfg, interval);
          if (grown.stalled) v.note += "stalled;";
          if (grown.capped) v.note += "cap;";
          pruned = std::move(grown.model);
          pruned_live = std::move(grown.final_state);
        }
        model = std::move(pruned);
        next_live = std::move(pruned_live);
      } catch (const Error& e) {
        v.note += std::string("error: ") + e.what() + ";";
        // model and live state are only replaced once restructuring succeeds
      }
    }
    live = std::move(next_live);
    v.blocks_after = model.block_count();
    out.verdicts.push_back(std::move(v));
  }
  out.model = std::move(model);
  return out;
}

}  // namespace sorscn
