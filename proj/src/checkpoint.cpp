#include "ppcnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

namespace ppcnn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr std::uint64_t kMaxJsonBytes = 1u << 24;
constexpr std::uint64_t kMaxNameBytes = 1u << 12;
constexpr std::uint64_t kMaxRank = 8;

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const char* what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return v;
}

std::string get_bytes(std::istream& in, std::uint64_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw FormatError(std::string("checkpoint truncated while reading ") + what);
  }
  return s;
}

CheckpointHeader parse_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint: bad magic bytes");
  }
  auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  auto len = get<std::uint64_t>(in, "header length");
  if (len > kMaxJsonBytes) throw FormatError("checkpoint header too large");
  json j;
  try {
    j = json::parse(get_bytes(in, len, "header"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  if (!j.contains("network") || !j.contains("ppconv")) {
    throw FormatError("checkpoint header lacks network or ppconv section");
  }
  return {NetworkSpec::from_json(j["network"]), PPConvOptions::from_json(j["ppconv"])};
}

}  // namespace

void save_checkpoint(std::ostream& out, const Network<float>& net) {
  out.write(kCheckpointMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string header =
      json{{"network", net.spec().to_json()}, {"ppconv", net.options().to_json()}}.dump();
  put<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put<std::uint64_t>(out, net.params().size());
  for (const auto& [name, p] : net.params()) {
    put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint64_t>(out, p.value.rank());
    for (auto e : p.value.shape()) put<std::uint64_t>(out, e);
    out.write(reinterpret_cast<const char*>(p.value.data()),
              static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!out) throw FormatError("failed to write checkpoint");
}

void save_checkpoint(const std::string& path, const Network<float>& net) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  save_checkpoint(out, net);
}

CheckpointHeader read_checkpoint_header(std::istream& in) { return parse_header(in); }

Network<float> load_checkpoint(std::istream& in) {
  CheckpointHeader h = parse_header(in);
  Network<float> net(h.spec, h.options, 0);
  auto count = get<std::uint64_t>(in, "blob count");
  if (count != net.params().size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, network has " +
                      std::to_string(net.params().size()));
  }
  std::set<std::string> seen;
  for (std::uint64_t b = 0; b < count; ++b) {
    auto name_len = get<std::uint64_t>(in, "name length");
    if (name_len > kMaxNameBytes) throw FormatError("checkpoint tensor name too long");
    std::string name = get_bytes(in, name_len, "tensor name");
    Parameter<float>* p = net.params().find(name);
    if (!p) throw FormatError("checkpoint tensor '" + name + "' is not part of the network");
    if (!seen.insert(name).second) throw FormatError("duplicate checkpoint tensor '" + name + "'");
    auto rank = get<std::uint64_t>(in, "rank");
    if (rank > kMaxRank) throw FormatError("checkpoint tensor '" + name + "' has bad rank");
    Shape shape(rank);
    for (auto& e : shape) e = get<std::uint64_t>(in, "extent");
    if (shape != p->value.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) +
                        ", expected " + shape_str(p->value.shape()));
    }
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(p->value.size() * sizeof(float)))) {
      throw FormatError("checkpoint truncated in tensor '" + name + "'");
    }
  }
  return net;
}

Network<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace ppcnn
