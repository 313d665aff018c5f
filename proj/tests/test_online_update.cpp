#include "oracles.hpp"
#include "sorscn/online_update.hpp"

#include <doctest.h>

using namespace sorscn;

namespace {

// Minimum Frobenius-norm dW with (W + dW) g = y, solved as a constrained least
// squares problem on vec(dW): (g^T kron I_L) vec(dW) = y - W g.
MatrixXd constrained_oracle(const MatrixXd& w, const VectorXd& g, const VectorXd& y) {
  const Index l = w.rows(), n = w.cols();
  MatrixXd a(l, l * n);
  for (Index j = 0; j < n; ++j) a.middleCols(j * l, l) = g(j) * MatrixXd::Identity(l, l);
  const VectorXd vec_dw = oracle::pinv(a, 1e-14) * (y - w * g);
  return Eigen::Map<const MatrixXd>(vec_dw.data(), l, n);
}

}  // namespace

TEST_CASE("projection interpolates the newest sample with a rank-one change") {
  Rng rng(21);
  for (int i = 0; i < 200; ++i) {
    const Index l = 1 + i % 3, n = 2 + i % 15;
    MatrixXd w = oracle::random_matrix(l, n, rng);
    const MatrixXd before = w;
    const VectorXd g = oracle::random_matrix(n, 1, rng);
    const VectorXd y = oracle::random_matrix(l, 1, rng, -5, 5);
    REQUIRE(project_step(w, g, y) == ProjectionOutcome::applied);
    CHECK(((w * g - y).array().abs() <= 1e-10 * (1 + y.array().abs())).all());
    Eigen::JacobiSVD<MatrixXd> svd(w - before);
    CHECK(svd.singularValues().size() >= 1);
    if (svd.singularValues().size() > 1) CHECK(svd.singularValues()(1) <= 1e-12 * (1 + svd.singularValues()(0)));
  }
}

TEST_CASE("projection change is the constrained minimum-norm change") {
  Rng rng(22);
  for (int i = 0; i < 50; ++i) {
    const Index l = 1 + i % 2, n = 3 + i % 6;
    MatrixXd w = oracle::random_matrix(l, n, rng);
    const MatrixXd before = w;
    const VectorXd g = oracle::random_matrix(n, 1, rng);
    const VectorXd y = oracle::random_matrix(l, 1, rng);
    project_step(w, g, y);
    const MatrixXd expected = constrained_oracle(before, g, y);
    CHECK(((w - before) - expected).norm() <= 1e-10 * (1 + expected.norm()));
  }
}

TEST_CASE("zero regressor is a no-op and counted as such") {
  MatrixXd w = MatrixXd::Ones(1, 3);
  CHECK(project_step(w, VectorXd::Zero(3), VectorXd::Constant(1, 4.0)) == ProjectionOutcome::null_state);
  CHECK(w == MatrixXd::Ones(1, 3));
  ProjectionState<double> st(MatrixXd::Ones(1, 3));
  st.step(VectorXd::Zero(3), VectorXd::Constant(1, 4.0));
  st.step(VectorXd::Ones(3), VectorXd::Constant(1, 4.0));
  CHECK(st.updates_applied() == 1);
  CHECK((st.readout() * VectorXd::Ones(3))(0) == doctest::Approx(4.0));
  CHECK_THROWS_AS(ProjectionState<double>(MatrixXd::Ones(1, 3), 0.0), PreconditionViolation);
  CHECK_THROWS_AS(project_step(w, VectorXd::Ones(2), VectorXd::Ones(1)), DimensionMismatch);
}

TEST_CASE("projection applies to a readout view in place") {
  Eigen::Matrix<double, 2, 4> fixed = Eigen::Matrix<double, 2, 4>::Zero();
  auto view = fixed.block(0, 0, 2, 4);
  const Eigen::Vector4d g(1, 0, 2, 0);
  project_step(view, g, Eigen::Vector2d(5, -5));
  CHECK((fixed * g - Eigen::Vector2d(5, -5)).norm() < 1e-12);
}
