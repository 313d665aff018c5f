#pragma once

// Monolithic echo state network baseline: one sparse random reservoir and a
// single least-squares readout. Stored as a one-block EnsembleModel so it
// shares harvesting, prediction and persistence with the incremental models.

#include "sorscn/construct.hpp"
#include "sorscn/random.hpp"
#include "sorscn/reservoir.hpp"

#include <cstdint>

namespace sorscn {

template <typename Scalar>
struct EsnConfig {
  Index nodes{300};
  Scalar input_scale{Scalar(0.5)};  // weights and biases uniform in [-input_scale, input_scale]
  Scalar density{Scalar(0.02)};     // fraction of non-zero internal weights
  Scalar theta{Scalar(0.9)};
  Scalar ridge{0};
  Scalar rank_cutoff{Scalar(1e-10)};
  Index washout{0};
  std::uint64_t rng_seed{0};
};

template <typename Scalar, typename D1, typename D2>
EnsembleModel<Scalar> build_esn(const EsnConfig<Scalar>& cfg, const Eigen::MatrixBase<D1>& inputs,
                                const Eigen::MatrixBase<D2>& targets) {
  if (!(cfg.density > 0 && cfg.density <= 1)) throw PreconditionViolation("ESN density must lie in (0, 1]");
  if (inputs.cols() != targets.cols()) throw DimensionMismatch("ESN inputs/targets");
  EnsembleModel<Scalar> model(inputs.rows(), targets.rows());
  Rng rng = make_stream(cfg.rng_seed, {0xe5e});
  auto block = draw_block<Scalar>(rng, cfg.nodes, inputs.rows(), cfg.input_scale, cfg.theta, cfg.density);
  const Matrix<Scalar> states = harvest_block(block, inputs, cfg.washout);
  const auto id = model.append_block(std::move(block));
  model.set_readout(refit_readout(states, targets.rightCols(targets.cols() - cfg.washout), cfg.ridge,
                                  cfg.rank_cutoff));
  model.record({StructureEventKind::grow, static_cast<std::int64_t>(inputs.cols()), 1, id});
  return model;
}

}  // namespace sorscn
