#pragma once

// Projection-algorithm readout update: the smallest Frobenius change to the
// readout that makes it reproduce the newest sample exactly.

#include "sorscn/errors.hpp"
#include "sorscn/types.hpp"

#include <cstddef>
#include <utility>

namespace sorscn {

enum class ProjectionOutcome { applied, null_state };

/// W <- W + (target - W g) g^T / (g^T g). Skipped (NullState) when g^T g < guard.
template <typename DW, typename DG, typename DT>
ProjectionOutcome project_step(Eigen::MatrixBase<DW>& readout, const Eigen::MatrixBase<DG>& g_hat,
                               const Eigen::MatrixBase<DT>& target,
                               typename DW::Scalar guard_epsilon = 1e-12) {
  using Scalar = typename DW::Scalar;
  if (g_hat.size() != readout.cols() || target.size() != readout.rows()) {
    throw DimensionMismatch("project_step: state or target length does not match the readout");
  }
  const Scalar denom = g_hat.squaredNorm();
  if (!(denom >= guard_epsilon)) return ProjectionOutcome::null_state;
  const Vector<Scalar> innovation = target - readout * g_hat;
  readout.noalias() += (innovation / denom) * g_hat.transpose();
  return ProjectionOutcome::applied;
}

template <typename Scalar>
class ProjectionState {
 public:
  explicit ProjectionState(Matrix<Scalar> readout, Scalar guard_epsilon = Scalar(1e-12))
      : readout_(std::move(readout)), guard_epsilon_(guard_epsilon) {
    if (!(guard_epsilon > 0)) throw PreconditionViolation("guard_epsilon must be positive");
  }

  template <typename DG, typename DT>
  ProjectionOutcome step(const Eigen::MatrixBase<DG>& g_hat, const Eigen::MatrixBase<DT>& target) {
    const auto outcome = project_step(readout_, g_hat, target, guard_epsilon_);
    if (outcome == ProjectionOutcome::applied) ++updates_applied_;
    return outcome;
  }

  const Matrix<Scalar>& readout() const { return readout_; }
  Matrix<Scalar> release() && { return std::move(readout_); }
  Scalar guard_epsilon() const { return guard_epsilon_; }
  std::size_t updates_applied() const { return updates_applied_; }

 private:
  Matrix<Scalar> readout_;
  Scalar guard_epsilon_;
  std::size_t updates_applied_{0};
};

}  // namespace sorscn
