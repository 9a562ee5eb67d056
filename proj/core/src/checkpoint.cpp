#include "modwatch/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "modwatch/binary_io.hpp"
#include "modwatch/error.hpp"

namespace modwatch::model {

namespace {

void write_tensor(std::ostream& os, const nn::Tensor& t) {
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims()) io::write_le<std::uint64_t>(os, d);
  io::write_floats(os, t.values());
}

nn::Tensor read_tensor(std::istream& is) {
  const auto rank = io::read_le<std::uint32_t>(is);
  if (rank == 0 || rank > 8) throw DataError("checkpoint tensor has invalid rank " + std::to_string(rank));
  nn::Dims dims(rank);
  for (auto& d : dims) d = io::read_le<std::uint64_t>(is);
  if (nn::element_count(dims) > (std::size_t{1} << 32)) throw DataError("checkpoint tensor too large");
  nn::Tensor t(dims);
  io::read_floats(is, t.values());
  return t;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  checkpoint.spec.validate();
  std::ostringstream os(std::ios::binary);
  os.write("MWCK", 4);
  io::write_le<std::uint32_t>(os, checkpoint_version);
  std::ostringstream kv;
  for (const auto& [k, v] : checkpoint.spec.to_key_values()) kv << "spec." << k << '=' << v << '\n';
  for (const auto& [k, v] : checkpoint.metadata) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ConfigError("checkpoint metadata key/value may not contain '=' or newlines: " + k);
    }
    kv << "meta." << k << '=' << v << '\n';
  }
  io::write_string(os, kv.str());
  const auto& params = checkpoint.params;
  io::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.layer_count()));
  for (const auto& layer : params.layers()) {
    io::write_string(os, layer.name);
    io::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(layer.weights.kind));
    write_tensor(os, layer.weights.kernel);
    write_tensor(os, layer.weights.bias);
  }
  return os.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  io::expect_magic(is, "MWCK", "checkpoint");
  const auto version = io::read_le<std::uint32_t>(is);
  if (version != checkpoint_version) throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::map<std::string, std::string> spec_kv;
  Checkpoint ck;
  std::istringstream kv(io::read_string(is));
  std::string line;
  while (std::getline(kv, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed checkpoint key-value line: " + line);
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key.rfind("spec.", 0) == 0) {
      spec_kv[key.substr(5)] = value;
    } else if (key.rfind("meta.", 0) == 0) {
      ck.metadata[key.substr(5)] = value;
    } else {
      throw DataError("unknown checkpoint key " + key);
    }
  }
  ck.spec = ModelSpec::from_key_values(spec_kv);
  ck.spec.validate();
  const auto layers = io::read_le<std::uint32_t>(is);
  for (std::uint32_t l = 0; l < layers; ++l) {
    auto name = io::read_string(is, 4096);
    const auto kind = io::read_le<std::uint8_t>(is);
    if (kind > 1) throw DataError("unknown layer kind in checkpoint");
    nn::LayerWeights w;
    w.kind = static_cast<nn::LayerKind>(kind);
    w.kernel = read_tensor(is);
    w.bias = read_tensor(is);
    ck.params.add(std::move(name), std::move(w));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes after checkpoint payload");
  Cvae(ck.spec).check_parameters(ck.params);
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write checkpoint " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace modwatch::model
