#include "diffaug/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "diffaug/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace diffaug {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is written in native little-endian order");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const fs::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError("truncated checkpoint " + path.string());
  }
  return v;
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw SchemaError("/tensors", "checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  json index = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    const Shape& s = t.shape();
    index.push_back({{"name", name},
                     {"shape", {s.n, s.c, s.h, s.w}},
                     {"offset", offset},
                     {"count", t.size()}});
    offset += t.size();
  }
  const json header = {{"format", "diffaug-checkpoint"},
                       {"version", kCheckpointVersion},
                       {"kind", ckpt.kind},
                       {"meta", ckpt.meta},
                       {"tensors", index}};
  const std::string text = header.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    os.write(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(os, kCheckpointVersion);
    put<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : ckpt.tensors) {
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(Real)));
    }
    if (!os) throw IoError("checkpoint write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  char magic[sizeof kCheckpointMagic];
  if (!is.read(magic, sizeof magic) ||
      std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw SchemaError(path.string(), "not a diffaug checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw SchemaError(path.string(), "unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(is, path);
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw IoError("truncated checkpoint header in " + path.string());
  }
  const json header = json::parse(text);
  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) throw SchemaError("/tensors", "tensor shape must have 4 dims");
    Tensor t({dims[0], dims[1], dims[2], dims[3]});
    if (t.size() != entry.at("count").get<std::size_t>()) {
      throw SchemaError("/tensors", "count/shape mismatch for " + entry.at("name").get<std::string>());
    }
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(Real)))) {
      throw IoError("truncated checkpoint payload in " + path.string());
    }
    ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void store_parameters(Checkpoint& ckpt, const nn::ParameterList& params) {
  for (const auto& p : params) ckpt.tensors.emplace_back(p.name, p.var.value());
}

void load_parameters(const Checkpoint& ckpt, const nn::ParameterList& params) {
  for (const auto& p : params) {
    const Tensor& src = ckpt.tensor(p.name);
    if (!(src.shape() == p.var.shape())) {
      throw SchemaError("/tensors", "shape mismatch for '" + p.name + "': checkpoint " +
                                        src.shape().str() + " vs model " + p.var.shape().str());
    }
    ag::Var v = p.var;
    v.mutable_value() = src;
  }
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return fnv1a_hex(ss.str());
}

}  // namespace diffaug
