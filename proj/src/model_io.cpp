#include "sorscn/model_io.hpp"

#include <boost/crc.hpp>

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace sorscn::io {

using json = nlohmann::ordered_json;

namespace {

constexpr const char* kMagic = "SORSCN-MODEL";

std::string hex_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_hex_double(const std::string& s) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw CorruptFile("bad number '" + s + "' in model file");
  return v;
}

json encode_matrix(const MatrixXd& m) {
  json data = json::array();
  for (Index i = 0; i < m.size(); ++i) data.push_back(hex_double(m.data()[i]));
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd decode_matrix(const json& j) {
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Index>(data.size()) != rows * cols) {
    throw CorruptFile("matrix payload size does not match its shape");
  }
  MatrixXd m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = parse_hex_double(data[static_cast<std::size_t>(i)].get<std::string>());
  return m;
}

VectorXd decode_vector(const json& j) {
  MatrixXd m = decode_matrix(j);
  if (m.cols() != 1) throw CorruptFile("expected a column vector in model payload");
  return m.col(0);
}

std::string crc_hex(const std::string& bytes) {
  boost::crc_32_type crc;
  crc.process_bytes(bytes.data(), bytes.size());
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", static_cast<unsigned>(crc.checksum()));
  return buf;
}

}  // namespace

std::string encode_model(const EnsembleModel<double>& model, const ModelMeta& meta, int version) {
  if (version != 1 && version != 2) throw VersionMismatch("cannot write model format " + std::to_string(version));
  json p;
  p["input_dim"] = model.input_dim();
  p["output_dim"] = model.output_dim();
  json blocks = json::array();
  for (const auto& b : model.blocks()) {
    json bj;
    if (version >= 2) bj["id"] = b.block_id;
    bj["scale_lambda"] = hex_double(b.scale_lambda);
    bj["spectral_target"] = hex_double(b.spectral_target);
    bj["input_weights"] = encode_matrix(b.input_weights);
    bj["internal_weights"] = encode_matrix(b.internal_weights);
    bj["bias"] = encode_matrix(b.bias);
    blocks.push_back(std::move(bj));
  }
  p["blocks"] = std::move(blocks);
  p["readout"] = encode_matrix(model.readout());
  if (version >= 2) {
    p["next_block_id"] = model.next_block_id();
    json history = json::array();
    for (const auto& e : model.history()) {
      history.push_back({{"kind", to_string(e.kind)},
                         {"sample_index", e.sample_index},
                         {"blocks_after", e.blocks_after},
                         {"block_id", e.block_id}});
    }
    p["history"] = std::move(history);
    p["fingerprint"] = meta.fingerprint;
    p["meta"] = meta.extra;
  }
  std::string body = std::string(kMagic) + " " + std::to_string(version) + "\n" + p.dump() + "\n";
  return body + "crc32 " + crc_hex(body) + "\n";
}

LoadedModel decode_model(const std::string& bytes) {
  const auto header_end = bytes.find('\n');
  if (header_end == std::string::npos) throw CorruptFile("model file has no header line");
  const std::string header = bytes.substr(0, header_end);
  const std::string magic = std::string(kMagic) + " ";
  if (header.rfind(magic, 0) != 0) throw CorruptFile("not a model file (bad magic)");
  int version = 0;
  try {
    std::size_t used = 0;
    version = std::stoi(header.substr(magic.size()), &used);
    if (used != header.size() - magic.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw CorruptFile("model file header has no valid version");
  }
  if (version < 1 || version > kModelFormatVersion) {
    throw VersionMismatch("model format version " + std::to_string(version) + " is not supported (reader handles 1.." +
                          std::to_string(kModelFormatVersion) + ")");
  }

  const auto crc_pos = bytes.rfind("\ncrc32 ");
  if (crc_pos == std::string::npos || crc_pos < header_end) throw CorruptFile("model file is truncated (no checksum)");
  const std::string body = bytes.substr(0, crc_pos + 1);
  std::string stored = bytes.substr(crc_pos + 7);
  if (!stored.empty() && stored.back() == '\n') stored.pop_back();
  if (stored.size() != 8 || stored != crc_hex(body)) throw CorruptFile("model file checksum mismatch");

  LoadedModel out;
  out.version = version;
  try {
    const json p = json::parse(body.substr(header_end + 1));
    const auto k = p.at("input_dim").get<Index>();
    const auto l = p.at("output_dim").get<Index>();
    std::vector<SubReservoir<double>> blocks;
    std::uint64_t seq = 0;
    for (const auto& bj : p.at("blocks")) {
      SubReservoir<double> b;
      b.block_id = version >= 2 ? bj.at("id").get<std::uint64_t>() : seq;
      ++seq;
      b.scale_lambda = parse_hex_double(bj.at("scale_lambda").get<std::string>());
      b.spectral_target = parse_hex_double(bj.at("spectral_target").get<std::string>());
      b.input_weights = decode_matrix(bj.at("input_weights"));
      b.internal_weights = decode_matrix(bj.at("internal_weights"));
      b.bias = decode_vector(bj.at("bias"));
      blocks.push_back(std::move(b));
    }
    MatrixXd readout = decode_matrix(p.at("readout"));
    std::vector<StructureEvent> history;
    std::uint64_t next_id = seq;
    if (version >= 2) {
      next_id = p.at("next_block_id").get<std::uint64_t>();
      for (const auto& ej : p.at("history")) {
        const auto kind = structure_event_from_string(ej.at("kind").get<std::string>());
        if (!kind) throw CorruptFile("unknown history event kind");
        history.push_back({*kind, ej.at("sample_index").get<std::int64_t>(), ej.at("blocks_after").get<std::size_t>(),
                           ej.at("block_id").get<std::uint64_t>()});
      }
      out.meta.fingerprint = p.at("fingerprint").get<std::string>();
      out.meta.extra = p.at("meta");
    }
    out.model = EnsembleModel<double>::restore(k, l, std::move(blocks), std::move(readout), std::move(history), next_id);
  } catch (const CorruptFile&) {
    throw;
  } catch (const json::exception& e) {
    throw CorruptFile(std::string("model payload is malformed: ") + e.what());
  } catch (const Error& e) {
    throw CorruptFile(std::string("model payload is inconsistent: ") + e.what());
  }
  return out;
}

void save_model(const EnsembleModel<double>& model, const std::string& path, const ModelMeta& meta) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write model file '" + path + "'");
  out << encode_model(model, meta);
  if (!out) throw Error("failed writing model file '" + path + "'");
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_model(ss.str());
}

}  // namespace sorscn::io
