#include "oracles.hpp"
#include "sorscn/reservoir.hpp"

#include <doctest.h>

using namespace sorscn;

TEST_CASE("scaled blocks have the requested dominant eigenvalue magnitude") {
  Rng rng(11);
  for (double theta : {0.5, 0.8, 1.0}) {
    for (int i = 0; i < 20; ++i) {
      const MatrixXd raw = oracle::random_matrix(10, 10, rng);
      const MatrixXd w = scale_spectral(raw, theta);
      CHECK(oracle::spectral_radius(w) == doctest::Approx(theta).epsilon(1e-9));
    }
  }
}

TEST_CASE("power iteration agrees with the dense solver, including rotations") {
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const MatrixXd a = oracle::random_matrix(7, 7, rng);
    CHECK(dominant_eigen_magnitude(a) == doctest::Approx(oracle::spectral_radius(a)).epsilon(1e-9));
  }
  // Complex-conjugate dominant pair: power iteration cannot settle.
  MatrixXd rot(2, 2);
  rot << 0, -2, 2, 0;
  CHECK(dominant_eigen_magnitude(rot) == doctest::Approx(2.0).epsilon(1e-12));
  MatrixXd one(1, 1);
  one << -0.3;
  CHECK(dominant_eigen_magnitude(one) == doctest::Approx(0.3));
}

TEST_CASE("degenerate and invalid scaling requests") {
  CHECK_THROWS_AS(scale_spectral(MatrixXd::Zero(4, 4), 0.9), DegenerateMatrix);
  // Nilpotent: every eigenvalue is zero.
  MatrixXd nil = MatrixXd::Zero(3, 3);
  nil(0, 1) = 1;
  nil(1, 2) = 1;
  CHECK_THROWS_AS(scale_spectral(nil, 0.9), DegenerateMatrix);
  CHECK_THROWS_AS(scale_spectral(MatrixXd::Identity(3, 3), 1.5), PreconditionViolation);
  CHECK_THROWS_AS(scale_spectral(MatrixXd::Identity(3, 3), 0.0), PreconditionViolation);
}

TEST_CASE("draw_block respects shapes, ranges and determinism") {
  Rng a(5), b(5);
  const auto x = draw_block<double>(a, 6, 3, 0.5, 0.9);
  const auto y = draw_block<double>(b, 6, 3, 0.5, 0.9);
  CHECK(x.size() == 6);
  CHECK(x.input_dim() == 3);
  CHECK(x.input_weights.cwiseAbs().maxCoeff() <= 0.5);
  CHECK(x.bias.cwiseAbs().maxCoeff() <= 0.5);
  CHECK(x.input_weights == y.input_weights);
  CHECK(x.internal_weights == y.internal_weights);
  CHECK(oracle::spectral_radius(x.internal_weights) == doctest::Approx(0.9).epsilon(1e-9));
  CHECK_THROWS_AS(draw_block<double>(a, 0, 3, 1.0, 0.9), PreconditionViolation);
  CHECK_THROWS_AS(draw_block<double>(a, 3, 3, -1.0, 0.9), PreconditionViolation);

  Rng c(8);
  const auto sparse = draw_block<double>(c, 40, 2, 1.0, 0.9, 0.1);
  const auto nonzero = (sparse.internal_weights.array() != 0).count();
  CHECK(nonzero < 400);
  CHECK(nonzero > 0);
}

TEST_CASE("harvest_block follows the tanh recurrence") {
  Rng rng(9);
  const auto b = draw_block<double>(rng, 4, 2, 1.0, 0.8);
  const MatrixXd u = oracle::random_matrix(2, 12, rng);
  const MatrixXd states = harvest_block(b, u, 3);
  REQUIRE(states.cols() == 9);
  std::vector<double> x(4, 0.0), next(4);
  for (Index t = 0; t < 12; ++t) {
    for (Index i = 0; i < 4; ++i) {
      double acc = b.bias(i);
      for (Index k = 0; k < 2; ++k) acc += b.input_weights(i, k) * u(k, t);
      for (Index k = 0; k < 4; ++k) acc += b.internal_weights(i, k) * x[static_cast<std::size_t>(k)];
      next[static_cast<std::size_t>(i)] = std::tanh(acc);
    }
    x = next;
    if (t >= 3) {
      for (Index i = 0; i < 4; ++i) CHECK(states(i, t - 3) == doctest::Approx(x[static_cast<std::size_t>(i)]).epsilon(1e-13));
    }
  }
  CHECK_THROWS_AS(harvest_block(b, u, 12), WashoutTooLarge);
  CHECK_THROWS_AS(harvest_block(b, MatrixXd::Zero(3, 5), 0), DimensionMismatch);
}

namespace {

EnsembleModel<double> three_blocks(std::uint64_t seed) {
  Rng rng(seed);
  EnsembleModel<double> m(2, 1);
  m.append_block(draw_block<double>(rng, 3, 2, 1.0, 0.9));
  m.append_block(draw_block<double>(rng, 5, 2, 0.5, 0.7));
  m.append_block(draw_block<double>(rng, 2, 2, 2.0, 1.0));
  m.set_readout(oracle::random_matrix(1, 10, rng));
  return m;
}

}  // namespace

TEST_CASE("ensemble keeps readout columns aligned with blocks") {
  auto m = three_blocks(1);
  CHECK(m.block_count() == 3);
  CHECK(m.state_size() == 10);
  CHECK(m.block_offset(1) == 3);
  CHECK(m.block_offset(2) == 8);
  CHECK(m.block(2).block_id == 2);
  const MatrixXd w = m.readout();

  const std::size_t keep[] = {0, 2};
  m.retain(keep);
  CHECK(m.state_size() == 5);
  CHECK(m.readout().leftCols(3) == w.leftCols(3));
  CHECK(m.readout().rightCols(2) == w.rightCols(2));
  CHECK(m.block(1).block_id == 2);

  Rng rng(4);
  const auto id = m.append_block(draw_block<double>(rng, 4, 2, 1.0, 0.9));
  CHECK(id == 3);
  CHECK(m.readout().rightCols(4).isZero());

  m.truncate(1);
  CHECK(m.block_count() == 2);
  CHECK(m.state_size() == 5);
  CHECK_THROWS_AS(m.set_readout(MatrixXd::Zero(1, 4)), DimensionMismatch);
  CHECK_THROWS_AS(m.append_block(draw_block<double>(rng, 4, 3, 1.0, 0.9)), DimensionMismatch);
}

TEST_CASE("states are block diagonal: a block never sees another block's state") {
  auto m = three_blocks(2);
  Rng rng(6);
  const MatrixXd u = oracle::random_matrix(2, 30, rng);
  const auto s = harvest_states(m, u, 5);
  for (std::size_t k = 0; k < m.block_count(); ++k) {
    CHECK((s.block(k) - harvest_block(m.block(k), u, 5)).norm() == 0.0);
  }
  // Stepping the stacked state reproduces harvesting.
  VectorXd x = VectorXd::Zero(m.state_size());
  for (Index t = 0; t < 30; ++t) {
    x = step_state(m, x, u.col(t));
    if (t >= 5) CHECK((s.stacked.col(t - 5) - x).norm() < 1e-14);
  }
  CHECK((predict(m, u, 5) - m.readout() * s.stacked).norm() == 0.0);
}

TEST_CASE("harvest from an initial state continues the trajectory") {
  auto m = three_blocks(3);
  Rng rng(7);
  const MatrixXd u = oracle::random_matrix(2, 40, rng);
  const auto full = harvest_states(m, u, 0);
  const VectorXd mid = full.stacked.col(19);
  const auto tail = harvest_states(m, MatrixXd(u.rightCols(20)), 0, &mid);
  CHECK((tail.stacked - full.stacked.rightCols(20)).norm() < 1e-14);
}

TEST_CASE("restore rebuilds a model and rejects inconsistent parts") {
  const auto m = three_blocks(4);
  auto copy = EnsembleModel<double>::restore(2, 1, m.blocks(), m.readout(), m.history(), m.next_block_id());
  CHECK(copy.readout() == m.readout());
  CHECK(copy.next_block_id() == 3);
  auto blocks = m.blocks();
  std::swap(blocks[0], blocks[1]);
  CHECK_THROWS_AS(EnsembleModel<double>::restore(2, 1, blocks, m.readout(), {}, 3), PreconditionViolation);
  CHECK_THROWS_AS(EnsembleModel<double>::restore(2, 1, m.blocks(), MatrixXd::Zero(1, 3), {}, 3), DimensionMismatch);
}

TEST_CASE("float models work through the same templates") {
  Rng rng(2);
  const auto b = draw_block<float>(rng, 5, 1, 1.0f, 0.9f);
  CHECK(dominant_eigen_magnitude(b.internal_weights) == doctest::Approx(0.9f).epsilon(1e-4));
  EnsembleModel<float> m(1, 1);
  m.append_block(b);
  const Matrix<float> u = Matrix<float>::Random(1, 10);
  CHECK(predict(m, u, 0).cols() == 10);
}
