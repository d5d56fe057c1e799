#include "vislex/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "vislex/digest.hpp"

namespace vislex {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'X', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::vector<unsigned char>& buf, const T& v) {
  const auto* c = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), c, c + sizeof(T));
}

template <typename T>
T get(std::span<const unsigned char> bytes, size_t& off) {
  if (off + sizeof(T) > bytes.size()) throw FormatError("checkpoint payload truncated");
  T v;
  std::memcpy(&v, bytes.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

const Mat& ModelCheckpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw FormatError(kind + " checkpoint has no tensor '" + name + "'");
}

std::vector<unsigned char> serialize_tensors(const std::vector<Parameter>& tensors) {
  std::vector<unsigned char> buf;
  put(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put(buf, static_cast<std::uint32_t>(t.name.size()));
    buf.insert(buf.end(), t.name.begin(), t.name.end());
    put(buf, static_cast<std::int64_t>(t.value.rows()));
    put(buf, static_cast<std::int64_t>(t.value.cols()));
    const auto* c = reinterpret_cast<const unsigned char*>(t.value.data());
    buf.insert(buf.end(), c, c + sizeof(double) * static_cast<size_t>(t.value.size()));
  }
  return buf;
}

std::vector<Parameter> deserialize_tensors(std::span<const unsigned char> payload) {
  size_t off = 0;
  const auto n = get<std::uint32_t>(payload, off);
  std::vector<Parameter> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto len = get<std::uint32_t>(payload, off);
    if (off + len > payload.size()) throw FormatError("checkpoint payload truncated");
    Parameter p;
    p.name.assign(reinterpret_cast<const char*>(payload.data() + off), len);
    off += len;
    const auto rows = get<std::int64_t>(payload, off);
    const auto cols = get<std::int64_t>(payload, off);
    if (rows < 0 || cols < 0) throw FormatError("negative tensor shape");
    const size_t bytes = sizeof(double) * static_cast<size_t>(rows * cols);
    if (off + bytes > payload.size()) throw FormatError("checkpoint payload truncated");
    p.value.resize(rows, cols);
    std::memcpy(p.value.data(), payload.data() + off, bytes);
    off += bytes;
    out.push_back(std::move(p));
  }
  if (off != payload.size()) throw FormatError("trailing bytes in checkpoint payload");
  return out;
}

std::string tensors_digest(const std::vector<Parameter>& tensors) {
  return sha256_hex(serialize_tensors(tensors));
}

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& base) {
  const auto payload = serialize_tensors(ckpt.tensors);
  const std::string digest = sha256_hex(payload);
  if (!ckpt.digest.empty() && ckpt.digest != digest)
    throw ContractViolation("checkpoint digest does not match its tensors");
  {
    std::ofstream out(base.string() + ".bin", std::ios::binary);
    if (!out) throw FormatError("cannot write " + base.string() + ".bin");
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t size = payload.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&size), sizeof(size));
    out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(size));
  }
  nlohmann::json side = {{"format", "vislex.checkpoint"},
                         {"version", kCheckpointVersion},
                         {"kind", ckpt.kind},
                         {"config", ckpt.config},
                         {"digest", digest},
                         {"frozen", ckpt.frozen}};
  if (!ckpt.meta.is_null()) side["meta"] = ckpt.meta;
  std::ofstream out(base.string() + ".json");
  if (!out) throw FormatError("cannot write " + base.string() + ".json");
  out << side.dump(2) << '\n';
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& base) {
  std::ifstream side_in(base.string() + ".json");
  if (!side_in) throw FormatError("missing checkpoint sidecar " + base.string() + ".json");
  nlohmann::json side;
  try {
    side = nlohmann::json::parse(side_in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad checkpoint sidecar: " + std::string(e.what()));
  }
  if (side.value("format", "") != "vislex.checkpoint" ||
      side.value("version", 0u) != kCheckpointVersion)
    throw FormatError("unrecognised checkpoint format/version in " + base.string() + ".json");

  std::ifstream in(base.string() + ".bin", std::ios::binary);
  if (!in) throw FormatError("missing checkpoint blob " + base.string() + ".bin");
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t size = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&size), sizeof(size));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0 || version != kCheckpointVersion)
    throw FormatError("bad checkpoint header in " + base.string() + ".bin");
  std::vector<unsigned char> payload(size);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(size));
  if (static_cast<std::uint64_t>(in.gcount()) != size)
    throw FormatError("truncated checkpoint blob " + base.string() + ".bin");

  ModelCheckpoint ckpt;
  ckpt.kind = side.at("kind").get<std::string>();
  ckpt.config = side.at("config");
  ckpt.frozen = side.at("frozen").get<bool>();
  if (side.contains("meta")) ckpt.meta = side.at("meta");
  ckpt.digest = sha256_hex(payload);
  if (ckpt.digest != side.at("digest").get<std::string>())
    throw FormatError("checkpoint digest mismatch for " + base.string());
  ckpt.tensors = deserialize_tensors(payload);
  return ckpt;
}

}  // namespace vislex
