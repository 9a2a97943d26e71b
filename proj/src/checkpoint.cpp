#include "latinv/checkpoint.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <set>

#include "latinv/errors.hpp"
#include "latinv/image.hpp"

namespace latinv {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'T', 'I', 'N', 'V', 'C', 'K'};
constexpr std::uint8_t kDtypeF64 = 1;

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}
  template <typename T>
  T get(const std::string& entry) {
    need(sizeof(T), entry);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
  }
  const std::uint8_t* take(std::size_t n, const std::string& entry) {
    need(n, entry);
    const std::uint8_t* p = buf.data() + pos;
    pos += n;
    return p;
  }
  bool done() const { return pos == buf.size(); }

 private:
  void need(std::size_t n, const std::string& entry) {
    if (buf.size() - pos < n) throw CheckpointError("checkpoint truncated while reading " + entry, entry);
  }
  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

std::uint64_t double_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof u);
  return u;
}

double bits_double(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, sizeof d);
  return d;
}

}  // namespace

const NamedTensor* CheckpointBundle::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const CheckpointBundle& bundle) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string manifest = bundle.manifest.dump();
  w.put<std::uint64_t>(manifest.size());
  w.bytes(manifest.data(), manifest.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(bundle.tensors.size()));
  std::set<std::string> names;
  for (const auto& t : bundle.tensors) {
    if (!names.insert(t.name).second) throw CheckpointError("duplicate tensor name " + t.name, t.name);
    std::size_t n = 1;
    for (int d : t.shape) {
      if (d < 0) throw CheckpointError("negative dimension in " + t.name, t.name);
      n *= static_cast<std::size_t>(d);
    }
    if (n != t.data.size()) throw CheckpointError("shape does not match data for " + t.name, t.name);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.put<std::uint8_t>(kDtypeF64);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    Writer payload;
    payload.out.reserve(n * 8);
    for (double v : t.data) payload.put<std::uint64_t>(double_bits(v));
    w.put<std::uint64_t>(payload.out.size());
    w.bytes(payload.out.data(), payload.out.size());
    w.put<std::uint32_t>(crc_of(payload.out.data(), payload.out.size()));
  }
  return std::move(w.out);
}

CheckpointBundle parse_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(sizeof kMagic, "header");
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError("not a checkpoint file", "header");
  const auto version = r.get<std::uint32_t>("header");
  if (version != kCheckpointVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version), "header");
  const auto mlen = r.get<std::uint64_t>("manifest");
  const std::uint8_t* mp = r.take(mlen, "manifest");
  CheckpointBundle bundle;
  try {
    bundle.manifest = nlohmann::json::parse(mp, mp + mlen);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("manifest is not valid JSON: ") + e.what(), "manifest");
  }
  if (!bundle.manifest.is_object() || bundle.manifest.value("format_version", 0u) != kCheckpointVersion)
    throw VersionError("manifest format_version is missing or unsupported", "manifest");

  const auto count = r.get<std::uint32_t>("tensor table");
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string slot = "tensor #" + std::to_string(i);
    const auto nlen = r.get<std::uint32_t>(slot);
    const std::uint8_t* np = r.take(nlen, slot);
    NamedTensor t;
    t.name.assign(reinterpret_cast<const char*>(np), nlen);
    if (!names.insert(t.name).second) throw CheckpointError("duplicate tensor " + t.name, t.name);
    if (r.get<std::uint8_t>(t.name) != kDtypeF64) throw CheckpointError("unsupported dtype in " + t.name, t.name);
    const auto rank = r.get<std::uint32_t>(t.name);
    if (rank > 8) throw CheckpointError("implausible rank in " + t.name, t.name);
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.get<std::uint32_t>(t.name);
      if (d > (1u << 30)) throw CheckpointError("implausible dimension in " + t.name, t.name);
      t.shape.push_back(static_cast<int>(d));
      n *= d;
    }
    const auto plen = r.get<std::uint64_t>(t.name);
    if (plen != n * 8) throw CheckpointError("payload size does not match shape for " + t.name, t.name);
    const std::uint8_t* pp = r.take(plen, t.name);
    if (r.get<std::uint32_t>(t.name) != crc_of(pp, plen))
      throw CheckpointError("checksum mismatch in " + t.name, t.name);
    t.data.resize(n);
    for (std::uint64_t k = 0; k < n; ++k) {
      std::uint64_t u = 0;
      for (int b = 0; b < 8; ++b) u |= static_cast<std::uint64_t>(pp[k * 8 + b]) << (8 * b);
      t.data[k] = bits_double(u);
    }
    bundle.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after the tensor table", "trailer");
  return bundle;
}

void save_checkpoint(const CheckpointBundle& bundle, const std::string& path) {
  const auto bytes = serialize_checkpoint(bundle);
  const std::string tmp = path + ".tmp";
  try {
    write_file(tmp, bytes);
    std::filesystem::rename(tmp, path);
  } catch (const std::exception& e) {
    std::error_code ec;
    std::filesystem::remove(tmp, ec);
    throw CheckpointError("cannot write checkpoint " + path + ": " + e.what(), path);
  }
}

CheckpointBundle load_checkpoint(const std::string& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file(path);
  } catch (const std::exception& e) {
    throw CheckpointError("cannot read checkpoint " + path + ": " + e.what(), path);
  }
  return parse_checkpoint(bytes);
}

CheckpointBundle bundle_from_models(const Models& models) {
  CheckpointBundle b;
  b.manifest = {{"format_version", kCheckpointVersion}, {"config", to_json(models.config)},
                {"seed", models.config.seed}};
  for (const auto& [name, v] : models.named_parameters()) b.tensors.push_back({name, v.shape(), v.value()});
  b.tensors.push_back({"w_bar", {static_cast<int>(models.w_bar.value.size())}, models.w_bar.value});
  return b;
}

Models models_from_bundle(const CheckpointBundle& bundle) {
  if (!bundle.manifest.contains("config")) throw CheckpointError("manifest has no config block", "manifest");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(bundle.manifest.at("config"));
  } catch (const Error& e) {
    throw CheckpointError(std::string("invalid config in manifest: ") + e.what(), "manifest");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("invalid config in manifest: ") + e.what(), "manifest");
  }
  Models m = make_models(cfg, false);
  const NamedParams params = m.named_parameters();
  std::set<std::string> expected{"w_bar"};
  for (const auto& [name, v] : params) expected.insert(name);
  for (const auto& t : bundle.tensors)
    if (!expected.count(t.name)) throw CheckpointError("unexpected tensor " + t.name, t.name);
  for (const auto& [name, v] : params) {
    const NamedTensor* t = bundle.find(name);
    if (!t) throw CheckpointError("missing tensor " + name, name);
    if (t->shape != v.shape()) throw CheckpointError("shape mismatch for " + name, name);
    v.ptr()->value = t->data;
  }
  const NamedTensor* wb = bundle.find("w_bar");
  if (!wb) throw CheckpointError("missing tensor w_bar", "w_bar");
  if (wb->shape != std::vector<int>{cfg.generator.w_dim}) throw CheckpointError("shape mismatch for w_bar", "w_bar");
  m.w_bar.value = wb->data;
  return m;
}

}  // namespace latinv
