#include "saek/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>

namespace saek {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'E', 'K'};
const std::string kConfigName = "config.json";
const std::string kStepName = "opt.step";
const std::string kEpochName = "train.epoch";
const std::string kMomentPrefix = "opt.m.";
const std::string kVelocityPrefix = "opt.v.";

class Writer {
 public:
  template <typename U>
  void put(U value) {
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                       std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    const auto bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  void header(const std::string& name, const Shape& shape) {
    if (name.size() > 0xFFFF) throw ValidationError("tensor name too long: " + name.substr(0, 32) + "...");
    if (shape.size() > 0xFF) throw ValidationError("tensor rank too large for '" + name + "'");
    put(static_cast<std::uint16_t>(name.size()));
    bytes(name.data(), name.size());
    put(static_cast<std::uint8_t>(shape.size()));
    for (auto e : shape) put(static_cast<std::uint64_t>(e));
  }
  void tensor(const std::string& name, const Tensor& t) {
    header(name, t.shape());
    for (float v : t.data()) put(v);
  }

  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : buf(b) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    using Bits = std::conditional_t<sizeof(U) == 1, std::uint8_t,
                                    std::conditional_t<sizeof(U) == 2, std::uint16_t,
                                                       std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>>>;
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<Bits>(static_cast<Bits>(buf[pos + i]) << (8 * i));
    pos += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf.data() + pos), n);
    pos += n;
    return s;
  }
  void need(std::size_t n) const {
    if (buf.size() - pos < n) {
      throw IoError("checkpoint truncated: needed " + std::to_string(n) + " bytes at offset " + std::to_string(pos) +
                    ", file has " + std::to_string(buf.size()));
    }
  }

  const std::vector<std::uint8_t>& buf;
  std::size_t pos = 0;
};

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put(kCheckpointVersion);
  std::uint32_t count = static_cast<std::uint32_t>(ckpt.params.size());
  if (ckpt.adam) count += 1 + static_cast<std::uint32_t>(ckpt.adam->m.size() + ckpt.adam->v.size());
  if (ckpt.epoch) ++count;
  if (!ckpt.config_json.empty()) ++count;
  w.put(count);

  std::set<std::string> seen;
  auto fresh = [&](const std::string& name) {
    if (!seen.insert(name).second) throw ValidationError("duplicate checkpoint entry '" + name + "'");
    return name;
  };
  for (const auto& [name, t] : ckpt.params) w.tensor(fresh(name), t);
  if (ckpt.adam) {
    w.tensor(fresh(kStepName), Tensor::scalar(static_cast<float>(ckpt.adam->step)));
    for (const auto& [name, t] : ckpt.adam->m) w.tensor(fresh(kMomentPrefix + name), t);
    for (const auto& [name, t] : ckpt.adam->v) w.tensor(fresh(kVelocityPrefix + name), t);
  }
  if (ckpt.epoch) w.tensor(fresh(kEpochName), Tensor::scalar(static_cast<float>(*ckpt.epoch)));
  if (!ckpt.config_json.empty()) {
    w.header(fresh(kConfigName), Shape{ckpt.config_json.size()});
    w.bytes(ckpt.config_json.data(), ckpt.config_json.size());
  }
  return std::move(w.out);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw IoError("bad magic: not a SAEK checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                  std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>();
  Checkpoint ckpt;
  std::set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.get<std::uint16_t>());
    if (!seen.insert(name).second) throw IoError("duplicate checkpoint entry '" + name + "'");
    const auto rank = r.get<std::uint8_t>();
    if (rank == 0) throw IoError("entry '" + name + "' has rank 0");
    Shape shape(rank);
    std::uint64_t total = 1;
    for (auto& e : shape) {
      const auto extent = r.get<std::uint64_t>();
      if (extent == 0) throw IoError("entry '" + name + "' has a zero extent");
      if (extent > bytes.size() || total > bytes.size() / extent) throw IoError("entry '" + name + "' is truncated");
      total *= extent;
      e = static_cast<std::size_t>(extent);
    }
    if (name == kConfigName) {
      if (rank != 1) throw IoError("config.json entry must be rank 1");
      ckpt.config_json = r.str(shape[0]);
      continue;
    }
    r.need(total * 4);
    std::vector<float> data(total);
    for (auto& v : data) v = r.get<float>();
    Tensor t(std::move(shape), std::move(data));
    if (name == kStepName) {
      if (!ckpt.adam) ckpt.adam.emplace();
      ckpt.adam->step = static_cast<std::uint64_t>(t[0]);
    } else if (name == kEpochName) {
      ckpt.epoch = static_cast<std::uint64_t>(t[0]);
    } else if (starts_with(name, kMomentPrefix)) {
      if (!ckpt.adam) ckpt.adam.emplace();
      ckpt.adam->m.emplace(name.substr(kMomentPrefix.size()), std::move(t));
    } else if (starts_with(name, kVelocityPrefix)) {
      if (!ckpt.adam) ckpt.adam.emplace();
      ckpt.adam->v.emplace(name.substr(kVelocityPrefix.size()), std::move(t));
    } else {
      ckpt.params.emplace_back(name, std::move(t));
    }
  }
  if (r.pos != bytes.size()) {
    throw IoError("checkpoint has " + std::to_string(bytes.size() - r.pos) + " trailing bytes");
  }
  return ckpt;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write error on '" + path.string() + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

Checkpoint make_checkpoint(const ParamStore<float>& params, const AdamState* adam, const std::string& config_json,
                           std::optional<std::uint64_t> epoch) {
  Checkpoint ckpt;
  for (const auto& e : params.entries()) ckpt.params.emplace_back(e.name, e.value);
  if (adam) ckpt.adam = *adam;
  ckpt.epoch = epoch;
  ckpt.config_json = config_json;
  return ckpt;
}

void restore_params(const Checkpoint& ckpt, ParamStore<float>& params) {
  if (ckpt.params.size() != params.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, network expects " +
                          std::to_string(params.size()));
  }
  for (const auto& [name, t] : ckpt.params) {
    if (!params.contains(name)) throw ValidationError("checkpoint tensor '" + name + "' is not a network parameter");
    Tensor& dst = params.get(name);
    if (dst.shape() != t.shape()) {
      throw ValidationError("checkpoint tensor '" + name + "' has shape " + to_string(t.shape()) + ", network expects " +
                            to_string(dst.shape()));
    }
    dst = t;
  }
}

}  // namespace saek
