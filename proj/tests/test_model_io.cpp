#include "oracles.hpp"
#include "sorscn/errors.hpp"
#include "sorscn/model_io.hpp"

#include <boost/crc.hpp>
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace sorscn;
using sorscn::io::decode_model;
using sorscn::io::encode_model;

namespace {

EnsembleModel<double> sample_model() {
  Rng rng(31);
  EnsembleModel<double> m(3, 2);
  m.append_block(draw_block<double>(rng, 4, 3, 1.0, 0.9));
  m.append_block(draw_block<double>(rng, 6, 3, 5.0, 0.7));
  m.append_block(draw_block<double>(rng, 2, 3, 0.5, 1.0));
  const std::size_t keep[] = {0, 2};
  m.retain(keep);  // leaves a gap in the ids
  m.append_block(draw_block<double>(rng, 5, 3, 1.0, 0.9));
  m.set_readout(oracle::random_matrix(2, m.state_size(), rng));
  m.record({StructureEventKind::grow, 12, 3, 3});
  return m;
}

std::string with_valid_crc(std::string body) {
  boost::crc_32_type crc;
  crc.process_bytes(body.data(), body.size());
  char hex[9];
  std::snprintf(hex, sizeof hex, "%08x", static_cast<unsigned>(crc.checksum()));
  return body + "crc32 " + hex + "\n";
}

std::string strip_crc(const std::string& bytes) { return bytes.substr(0, bytes.rfind("crc32 ")); }

}  // namespace

TEST_CASE("save and load reproduce predictions bit for bit") {
  const auto m = sample_model();
  io::ModelMeta meta;
  meta.fingerprint = "0badf00d";
  meta.extra["variant"] = "sorscn2";
  const auto path = (std::filesystem::temp_directory_path() / "sorscn_roundtrip.sorscn").string();
  io::save_model(m, path, meta);
  const auto loaded = io::load_model(path);
  std::filesystem::remove(path);

  CHECK(loaded.version == io::kModelFormatVersion);
  CHECK(loaded.meta.fingerprint == "0badf00d");
  CHECK(loaded.meta.extra["variant"] == "sorscn2");
  CHECK(loaded.model.block_count() == 3);
  CHECK(loaded.model.next_block_id() == m.next_block_id());
  CHECK(loaded.model.history() == m.history());
  for (std::size_t k = 0; k < 3; ++k) CHECK(loaded.model.block(k).block_id == m.block(k).block_id);
  CHECK(loaded.model.readout() == m.readout());

  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const MatrixXd u = oracle::random_matrix(3, 20, rng, -3, 3);
    CHECK(predict(loaded.model, u, 0) == predict(m, u, 0));
  }
  CHECK(encode_model(loaded.model, loaded.meta) == encode_model(m, meta));
}

TEST_CASE("damaged files are rejected as corrupt") {
  const std::string good = encode_model(sample_model());
  CHECK_NOTHROW(decode_model(good));
  CHECK_THROWS_AS(decode_model(good.substr(0, good.size() / 2)), CorruptFile);
  CHECK_THROWS_AS(decode_model(good.substr(0, good.size() - 3)), CorruptFile);
  CHECK_THROWS_AS(decode_model(""), CorruptFile);
  CHECK_THROWS_AS(decode_model("not a model\n"), CorruptFile);
  for (std::size_t at : {std::size_t{20}, good.size() / 3, good.size() - 20}) {
    std::string flipped = good;
    flipped[at] = static_cast<char>(flipped[at] ^ 0x04);
    CHECK_THROWS_AS(decode_model(flipped), CorruptFile);
  }
  // Checksum intact but the payload is inconsistent.
  std::string body = strip_crc(good);
  const auto pos = body.find("\"rows\":");
  REQUIRE(pos != std::string::npos);
  body.replace(pos, 8, "\"rows\":9");
  CHECK_THROWS_AS(decode_model(with_valid_crc(body)), CorruptFile);
  CHECK_THROWS_AS(io::load_model("/nonexistent/model.sorscn"), DataError);
}

TEST_CASE("unknown format versions are refused") {
  std::string body = strip_crc(encode_model(sample_model()));
  body.replace(0, body.find('\n'), "SORSCN-MODEL 3");
  CHECK_THROWS_AS(decode_model(with_valid_crc(body)), VersionMismatch);
  body.replace(0, body.find('\n'), "SORSCN-MODEL 0");
  CHECK_THROWS_AS(decode_model(with_valid_crc(body)), VersionMismatch);
  CHECK_THROWS_AS(encode_model(sample_model(), {}, 3), VersionMismatch);
}

TEST_CASE("version 1 files migrate with predictions preserved") {
  const auto m = sample_model();
  const std::string v1 = encode_model(m, {}, 1);
  CHECK(v1.rfind("SORSCN-MODEL 1\n", 0) == 0);
  CHECK(v1.find("\"history\"") == std::string::npos);
  const auto loaded = decode_model(v1);
  CHECK(loaded.version == 1);
  CHECK(loaded.model.block_count() == 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(loaded.model.block(k).block_id == k);
  CHECK(loaded.model.next_block_id() == 3);
  CHECK(loaded.model.history().empty());
  Rng rng(6);
  const MatrixXd u = oracle::random_matrix(3, 50, rng);
  CHECK(predict(loaded.model, u, 0) == predict(m, u, 0));
  // Re-saving writes the current version.
  CHECK(decode_model(encode_model(loaded.model)).version == io::kModelFormatVersion);
}
