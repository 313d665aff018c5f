#include "sorscn/datastream.hpp"
#include "sorscn/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <sstream>

using namespace sorscn;
using namespace sorscn::data;

namespace {

Schema schema(std::vector<std::string> in, std::vector<std::string> out) {
  Schema s;
  for (const auto& c : in) s.inputs.push_back(ColumnSpec::parse(c));
  for (const auto& c : out) s.targets.push_back(ColumnSpec::parse(c));
  return s;
}

SeriesDataset ramp(Index n) {
  SeriesDataset ds;
  ds.inputs.resize(1, n);
  ds.targets.resize(1, n);
  for (Index t = 0; t < n; ++t) {
    ds.inputs(0, t) = static_cast<double>(t);
    ds.targets(0, t) = static_cast<double>(2 * t);
  }
  return ds;
}

double variance(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  return (x.array() - x.mean()).square().mean();
}

}  // namespace

TEST_CASE("column specs") {
  CHECK(ColumnSpec::parse(" y ").column == "y");
  const auto lag = ColumnSpec::parse("lag(y, 2)");
  CHECK(lag.column == "y");
  CHECK(lag.lag == 2);
  CHECK(lag.label() == "lag(y,2)");
  CHECK_THROWS_AS(ColumnSpec::parse("lag(y)"), ConfigError);
  CHECK_THROWS_AS(ColumnSpec::parse("lag(y,-1)"), ConfigError);
  CHECK_THROWS_AS(ColumnSpec::parse("  "), ConfigError);
}

TEST_CASE("csv parsing with lag features") {
  std::istringstream in("t,u1,y\n0,0.5,1\n1,0.25,2\n2,1e-1,3\n3,-1,4\n");
  const auto ds = parse_csv(in, schema({"u1", "lag(y,1)"}, {"y"}));
  CHECK(ds.inputs.rows() == 2);
  CHECK(ds.targets.rows() == 1);
  REQUIRE(ds.samples() == 3);
  CHECK(ds.row_offset == 1);
  CHECK(ds.inputs(0, 0) == 0.25);
  CHECK(ds.inputs(0, 1) == 0.1);
  // The lag column equals the raw target one row earlier, exactly.
  for (Index n = 1; n < ds.samples(); ++n) CHECK(ds.inputs(1, n) == ds.targets(0, n - 1));
  CHECK(ds.inputs(1, 0) == 1.0);
  CHECK(ds.input_names[1] == "lag(y,1)");

  std::istringstream plain("u1,y\n1,2\n3,4\n");
  CHECK(parse_csv(plain, schema({"u1"}, {"y"})).samples() == 2);
}

TEST_CASE("csv errors carry their coordinates") {
  std::ostringstream text;
  text << "u,y\n";
  for (int r = 1; r <= 10; ++r) text << r << "," << (r == 7 ? "abc" : "1.5") << "\n";
  std::istringstream in(text.str());
  try {
    parse_csv(in, schema({"u"}, {"y"}));
    FAIL("expected NonNumericCell");
  } catch (const NonNumericCell& e) {
    CHECK(e.row() == 7);
    CHECK(e.column() == 2);
  }
  std::istringstream missing("u,z\n1,2\n");
  try {
    parse_csv(missing, schema({"u"}, {"y"}));
    FAIL("expected MissingColumn");
  } catch (const MissingColumn& e) {
    CHECK(e.column() == "y");
  }
  std::istringstream empty("");
  CHECK_THROWS_AS(parse_csv(empty, schema({"u"}, {"y"})), EmptyFile);
  std::istringstream header_only("u,y\n");
  CHECK_THROWS_AS(parse_csv(header_only, schema({"u"}, {"y"})), EmptyFile);
  std::istringstream ragged("u,y\n1,2\n3\n");
  CHECK_THROWS_AS(parse_csv(ragged, schema({"u"}, {"y"})), DataError);
  std::istringstream nan_cell("u,y\n1,nan\n");
  CHECK_THROWS_AS(parse_csv(nan_cell, schema({"u"}, {"y"})), NonNumericCell);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv", schema({"u"}, {"y"})), DataError);
}

TEST_CASE("csv write and read back is exact") {
  SyntheticStreamSpec spec;
  spec.segment_lengths = {50, 50};
  spec.noise_std = 0.01;
  spec.seed = 3;
  const auto ds = generate_synthetic(spec);
  std::stringstream buf;
  write_csv(buf, ds);
  const auto back = parse_csv(buf, schema(ds.input_names, ds.target_names));
  CHECK(back.inputs == ds.inputs);
  CHECK(back.targets == ds.targets);
}

TEST_CASE("split lengths after washout") {
  // 2394 rows, train 1..1500, washout 100.
  auto s = split_and_washout(ramp(2394), 1500, 100);
  CHECK(s.train.effective() == 1400);
  CHECK(s.test.effective() == 794);
  CHECK(s.test.begin == 1500);
  CHECK(s.test.inputs(0, 0) == 1500.0);
  // 1415 rows, 1000 / 415, washout 30.
  s = split_and_washout(ramp(1415), 1000, 30);
  CHECK(s.train.effective() == 970);
  CHECK(s.test.effective() == 385);
  CHECK(s.validation.inputs == s.test.inputs);

  CHECK_THROWS_AS(split_and_washout(ramp(100), 60, 40), WashoutTooLarge);
  CHECK_THROWS_AS(split_and_washout(ramp(100), 60, 60), WashoutTooLarge);
  CHECK_THROWS_AS(split_and_washout(ramp(100), 100, 5), PreconditionViolation);
  CHECK_THROWS_AS(split_and_washout(ramp(100), 0, 5), PreconditionViolation);
}

TEST_CASE("normalization round-trips and is fit on training rows only") {
  SyntheticStreamSpec spec;
  spec.generator = Generator::variance_burst;
  spec.segment_lengths = {200, 200};
  spec.seed = 5;
  const auto ds = generate_synthetic(spec);
  const auto s = split_and_washout(ds, 200, 10);
  for (auto kind : {Normalization::minmax, Normalization::zscore, Normalization::none}) {
    const auto norm = fit_normalizer(s.train, kind);
    const auto n = normalize(s.test, norm);
    CHECK((norm.inputs.invert(n.inputs) - s.test.inputs).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((norm.targets.invert(n.targets) - s.test.targets).cwiseAbs().maxCoeff() < 1e-12);
    if (kind == Normalization::none) continue;
    const auto from_test = fit_normalizer(s.test, kind);
    CHECK((from_test.targets.scale - norm.targets.scale).norm() > 1e-3);
  }
  const auto mm = fit_normalizer(s.train, Normalization::minmax);
  const MatrixXd t = normalize(s.train, mm).targets;
  CHECK(t.minCoeff() == doctest::Approx(0.0));
  CHECK(t.maxCoeff() == doctest::Approx(1.0));
  // Constant rows map to zero rather than dividing by zero.
  const auto flat = AffineMap::fit(MatrixXd::Constant(2, 5, 3.0), Normalization::zscore);
  CHECK(flat.apply(MatrixXd::Constant(2, 5, 3.0)).isZero());
}

TEST_CASE("validation noise") {
  SeriesDataset zero;
  zero.inputs = MatrixXd::Zero(1, 10100);
  zero.targets = MatrixXd::Zero(1, 10100);
  const auto s = split_and_washout(zero, 100, 10);
  const auto v = make_validation(s.test, 0.1, 42);
  const double sd = std::sqrt(variance(v.targets.row(0)));
  CHECK(s.test.samples() == 10000);
  CHECK(sd == doctest::Approx(0.1).epsilon(0.05));
  CHECK(std::abs(sd - 0.1) <= 0.005);
  CHECK(std::abs(std::sqrt(variance(v.inputs.row(0))) - 0.1) <= 0.005);

  const auto again = make_validation(s.test, 0.1, 42);
  CHECK(again.targets == v.targets);
  CHECK(make_validation(s.test, 0.1, 43).targets != v.targets);
  CHECK(make_validation(s.test, 0.0, 42).targets == s.test.targets);
  CHECK_THROWS_AS(make_validation(s.test, -1.0, 42), PreconditionViolation);
}

TEST_CASE("synthetic generators") {
  SyntheticStreamSpec spec;
  spec.segment_lengths = {300, 300};
  spec.seed = 1;
  const auto narma = generate_synthetic(spec);
  CHECK(narma.samples() == 600);
  REQUIRE(narma.drift_points.size() == 1);
  CHECK(narma.drift_points[0] == 300);
  CHECK(narma.inputs.rows() == 2);
  // y_prev input is the previous target.
  for (Index t = 1; t < 600; ++t) CHECK(narma.inputs(1, t) == narma.targets(0, t - 1));

  spec.generator = Generator::drifting_sine;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  CHECK(a.targets == b.targets);
  CHECK(a.inputs == b.inputs);

  SyntheticStreamSpec burst;
  burst.generator = Generator::variance_burst;
  const auto vb = generate_synthetic(burst);
  REQUIRE(vb.drift_points.size() == 1);
  const Index d = vb.drift_points[0];
  const double before = variance(vb.targets.row(0).head(d));
  const double during = variance(vb.targets.row(0).tail(vb.samples() - d));
  CHECK(during > 4 * before);

  spec.segment_lengths = {10, 0};
  CHECK_THROWS(generate_synthetic(spec));
  spec.segment_lengths = {10};
  spec.noise_std = -1;
  CHECK_THROWS(generate_synthetic(spec));
}
