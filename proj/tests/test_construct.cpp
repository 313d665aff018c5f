#include "oracles.hpp"
#include "sorscn/construct.hpp"

#include <doctest.h>

using namespace sorscn;

namespace {

struct Series {
  MatrixXd u;
  MatrixXd y;
};

// y(n) = 0.6 sin(3 u(n-1)) + 0.3 u(n) u(n-2)
Series toy_series(Index n, std::uint64_t seed) {
  Rng rng(seed);
  Series s{oracle::random_matrix(1, n, rng), MatrixXd::Zero(1, n)};
  for (Index t = 2; t < n; ++t) s.y(0, t) = 0.6 * std::sin(3 * s.u(0, t - 1)) + 0.3 * s.u(0, t) * s.u(0, t - 2);
  return s;
}

ConstructionConfig<double> small_config() {
  ConstructionConfig<double> c;
  c.block_size = 4;
  c.max_blocks = 6;
  c.candidates_per_setting = 20;
  c.lambda_grid = {0.5, 1, 5};
  c.washout = 10;
  c.rng_seed = 77;
  return c;
}

}  // namespace

TEST_CASE("single-node margin reduces to the inner-product form") {
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const MatrixXd e = oracle::random_matrix(2, 30, rng);
    const MatrixXd x = oracle::random_matrix(1, 30, rng);
    const double r = 0.9, mu = 0.02;
    const auto s = score_candidate(e, x, r, mu);
    for (Index q = 0; q < 2; ++q) {
      const double ex = e.row(q).dot(x.row(0));
      const double expected = ex * ex / x.squaredNorm() - (1 - r - mu) * e.row(q).squaredNorm();
      CHECK(s.per_output(q) == doctest::Approx(expected).epsilon(1e-10));
    }
    CHECK(s.xi_total == doctest::Approx(s.per_output.sum()));
  }
}

TEST_CASE("block margin matches an explicit projector") {
  Rng rng(2);
  for (int i = 0; i < 50; ++i) {
    const MatrixXd e = oracle::random_matrix(3, 25, rng);
    MatrixXd x = oracle::random_matrix(5, 25, rng);
    if (i % 5 == 0) x.row(4) = x.row(0) + x.row(1);  // rank deficient
    const auto s = score_candidate(e, x, 0.99, 0.001);
    const VectorXd expected = oracle::supervisory_margin(e, x, 0.99, 0.001);
    CHECK((s.per_output - expected).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(s.acceptable() == (expected.array() >= 0).all());
  }
  CHECK_THROWS_AS(score_candidate(MatrixXd::Ones(1, 5), MatrixXd::Zero(2, 5), 0.9, 0.0), ZeroStateNorm);
  CHECK_THROWS_AS(score_candidate(MatrixXd::Ones(1, 5), MatrixXd::Ones(2, 4), 0.9, 0.0), DimensionMismatch);
}

TEST_CASE("mu rule keeps r + mu below one") {
  ConstructionConfig<double> c;
  CHECK(c.mu(0.9, 0) == doctest::Approx(0.05));
  CHECK(c.mu(0.9, 3) == doctest::Approx(0.02));
  for (double r : c.r_grid) CHECK(r + c.mu(r, 0) < 1);
  c.mu_rule = MuRule::zero;
  CHECK(c.mu(0.9, 0) == 0.0);
  c = ConstructionConfig<double>{};
  c.j_step = 0;
  CHECK_THROWS_AS(c.validate(), PreconditionViolation);
  c = ConstructionConfig<double>{};
  c.r_grid = {1.0};
  CHECK_THROWS_AS(c.validate(), PreconditionViolation);
}

TEST_CASE("refit_readout equals the pseudoinverse solution") {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const Index n = 8 + i % 20, rows = 2 + i % 9;
    MatrixXd x = oracle::random_matrix(rows, n, rng);
    if (i % 3 == 0) x.row(rows - 1) = 2 * x.row(0) - x.row(1);
    const MatrixXd t = oracle::random_matrix(2, n, rng);
    const MatrixXd w = refit_readout(x, t);
    const MatrixXd expected = t * oracle::pinv(x);
    CHECK((w - expected).norm() <= 1e-8 * std::max(1.0, expected.norm()));
  }
}

TEST_CASE("ridge refit solves the regularized normal equations") {
  Rng rng(4);
  const MatrixXd x = oracle::random_matrix(6, 40, rng);
  const MatrixXd t = oracle::random_matrix(1, 40, rng);
  const double lambda = 0.3;
  const MatrixXd w = refit_readout(x, t, lambda);
  const MatrixXd expected =
      t * x.transpose() * (x * x.transpose() + lambda * MatrixXd::Identity(6, 6)).inverse();
  CHECK((w - expected).norm() < 1e-10);
}

TEST_CASE("propose_block returns an admissible, reproducible candidate") {
  const auto s = toy_series(150, 5);
  auto cfg = small_config();
  const MatrixXd residual = s.y.rightCols(140);
  const auto a = propose_block(cfg, residual, s.u, 10, 0, 0, 4);
  const auto b = propose_block(cfg, residual, s.u, 10, 0, 0, 4);
  CHECK(a.block.internal_weights == b.block.internal_weights);
  CHECK(a.score.acceptable());
  const VectorXd margin =
      oracle::supervisory_margin(residual, a.states, a.score.r_used, cfg.mu(a.score.r_used, 0));
  CHECK((margin - a.score.per_output).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((a.states - harvest_block(a.block, s.u, 10)).norm() == 0.0);
  const auto c = propose_block(cfg, residual, s.u, 10, 0, 1, 4);
  CHECK(c.block.internal_weights != a.block.internal_weights);

  CHECK_THROWS_AS(propose_block(cfg, MatrixXd::Zero(1, 140), s.u, 10, 0, 0, 4), PreconditionViolation);
}

TEST_CASE("blocks with all-zero states never pass and construction stalls") {
  const auto s = toy_series(80, 6);
  auto cfg = small_config();
  const BlockSampler<double> dead = [](Rng& rng, Index nodes, Index inputs, double lambda, double theta) {
    auto b = draw_block<double>(rng, nodes, inputs, lambda, theta);
    b.input_weights.setZero();
    b.bias.setZero();
    return b;
  };
  CHECK_THROWS_AS(propose_block(cfg, MatrixXd(s.y.rightCols(70)), s.u, 10, 0, 0, 4, &dead), NoCandidateFound);
  CHECK_THROWS_AS(build_initial(cfg, s.u, s.y, static_cast<const MatrixXd*>(nullptr),
                                static_cast<const MatrixXd*>(nullptr), &dead),
                  ConstructionStalled);
}

TEST_CASE("construction: admissible blocks and a non-increasing training residual") {
  const auto s = toy_series(200, 7);
  auto cfg = small_config();
  cfg.error_tolerance = 0;
  const auto res = build_initial(cfg, s.u, s.y);
  REQUIRE(res.model.block_count() == 6);
  CHECK(res.model.history().back().kind == StructureEventKind::cap);
  const MatrixXd targets = s.y.rightCols(190);
  for (std::size_t j = 1; j < res.train_residual_norms.size(); ++j) {
    CHECK(res.train_residual_norms[j] <= res.train_residual_norms[j - 1] * (1 + 1e-12));
  }
  // Recompute the residual each block faced and check its margin independently.
  MatrixXd stacked(0, 190);
  for (std::size_t j = 0; j < res.model.block_count(); ++j) {
    MatrixXd residual = targets;
    if (stacked.rows() > 0) residual = targets - targets * oracle::pinv(stacked) * stacked;
    const MatrixXd xj = harvest_block(res.model.block(j), s.u, 10);
    const auto& sc = res.accepted_scores[j];
    const VectorXd margin = oracle::supervisory_margin(residual, xj, sc.r_used, cfg.mu(sc.r_used, static_cast<Index>(j)));
    CHECK(margin.minCoeff() >= -1e-9);
    stacked.conservativeResize(stacked.rows() + xj.rows(), Eigen::NoChange);
    stacked.bottomRows(xj.rows()) = xj;
  }
  CHECK((res.train_residual - (targets - predict(res.model, s.u, 10))).norm() < 1e-10);
}

TEST_CASE("early stopping removes the last j_step blocks") {
  const auto s = toy_series(200, 8);
  auto cfg = small_config();
  cfg.error_tolerance = 0;
  cfg.max_blocks = 10;
  cfg.j_step = 2;
  // Validation targets are the negated training targets: every block that
  // helps on training hurts on validation.
  const MatrixXd neg = -s.y;
  const auto res = build_initial(cfg, s.u, s.y, &s.u, &neg);
  CHECK(res.early_stopped);
  CHECK(res.early_stop_at == cfg.j_step + 1);
  CHECK(static_cast<Index>(res.model.block_count()) == res.early_stop_at - cfg.j_step);
  CHECK(res.model.history().back().kind == StructureEventKind::early_stop);
  const MatrixXd targets = s.y.rightCols(190);
  CHECK((res.train_residual - (targets - predict(res.model, s.u, 10))).norm() < 1e-10);
}

TEST_CASE("zero targets still yield a one-block model") {
  const auto s = toy_series(60, 9);
  auto cfg = small_config();
  const auto res = build_initial(cfg, s.u, MatrixXd(MatrixXd::Zero(1, 60)));
  CHECK(res.model.block_count() == 1);
  CHECK(res.model.readout().isZero());
}

TEST_CASE("construction input validation") {
  const auto s = toy_series(30, 10);
  auto cfg = small_config();
  cfg.washout = 30;
  CHECK_THROWS_AS(build_initial(cfg, s.u, s.y), WashoutTooLarge);
  cfg.washout = 0;
  CHECK_THROWS_AS(build_initial(cfg, s.u, MatrixXd(s.y.leftCols(20))), DimensionMismatch);
}
