// SPDX-License-Identifier: Apache-2.0
#include "ehrlm/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

namespace ehrlm {
namespace {

class Writer {
 public:
  template <typename U>
  void put(U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
    }
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw CorruptCheckpoint("encoder", "checkpoint truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

}  // namespace

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t size, std::uint64_t hash) {
  for (std::size_t i = 0; i < size; ++i) {
    hash ^= data[i];
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::vector<std::uint8_t> serialize_checkpoint(const Encoder<float>& model) {
  std::vector<const Tensor<float>*> order;
  for (const auto& t : model.params()) order.push_back(&t);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->name < b->name; });

  Writer w;
  w.put_bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string config = to_json(model.config()).dump();
  w.put<std::uint64_t>(config.size());
  w.put_bytes(config.data(), config.size());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(order.size()));
  std::uint64_t offset = 0;
  for (const auto* t : order) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->name.size()));
    w.put_bytes(t->name.data(), t->name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t->shape.size()));
    for (auto dim : t->shape) w.put<std::uint64_t>(dim);
    w.put<std::uint64_t>(offset);
    w.put<std::uint64_t>(t->numel());
    offset += t->numel();
  }
  w.put<std::uint64_t>(offset * 4);
  for (const auto* t : order) {
    for (const float v : t->data) w.put<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  w.put<std::uint64_t>(fnv1a64(w.bytes.data(), w.bytes.size()));
  return std::move(w.bytes);
}

Encoder<float> deserialize_checkpoint(const std::vector<std::uint8_t>& bytes,
                                      const std::optional<ModelConfig>& expected) {
  if (bytes.size() < sizeof kCheckpointMagic + 4 + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CorruptCheckpoint("encoder", "not a checkpoint (bad magic)");
  }
  const std::size_t body = bytes.size() - 8;
  Reader r(bytes, body);
  r.skip(sizeof kCheckpointMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("encoder", "unsupported checkpoint version " + std::to_string(version));
  }
  Reader tail(bytes, bytes.size());
  tail.skip(body);
  if (tail.get<std::uint64_t>() != fnv1a64(bytes.data(), body)) {
    throw CorruptCheckpoint("encoder", "checkpoint digest mismatch");
  }

  ModelConfig config;
  try {
    config = model_config_from_json(nlohmann::json::parse(r.get_string(r.get<std::uint64_t>())));
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpoint("encoder", "checkpoint config block is not JSON");
  }

  struct Entry {
    std::vector<std::size_t> shape;
    std::uint64_t offset, count;
  };
  std::map<std::string, Entry> directory;
  const auto n = r.get<std::uint32_t>();
  std::string previous;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_string(r.get<std::uint32_t>());
    if (i > 0 && !(previous < name)) throw CorruptCheckpoint("encoder", "tensor directory not sorted");
    Entry e;
    e.shape.resize(r.get<std::uint32_t>());
    for (auto& dim : e.shape) dim = r.get<std::uint64_t>();
    e.offset = r.get<std::uint64_t>();
    e.count = r.get<std::uint64_t>();
    previous = name;
    directory.emplace(std::move(name), std::move(e));
  }
  const auto payload_len = r.get<std::uint64_t>();
  if (payload_len != body - r.pos()) throw CorruptCheckpoint("encoder", "payload length mismatch");
  const std::size_t payload = r.pos();

  // Shapes are checked against the expected architecture first so a
  // mismatch reports the offending tensor.
  Encoder<float> model(expected ? *expected : config);
  if (directory.size() != model.params().size()) {
    throw VersionError("encoder", "checkpoint has " + std::to_string(directory.size()) +
                                      " tensors, model expects " +
                                      std::to_string(model.params().size()));
  }
  for (auto& t : model.params()) {
    auto it = directory.find(t.name);
    if (it == directory.end()) throw VersionError("encoder", "checkpoint lacks tensor " + t.name);
    const Entry& e = it->second;
    if (e.shape != t.shape) {
      throw VersionError("encoder", "tensor " + t.name + " has shape " + shape_string(e.shape) +
                                        ", expected " + shape_string(t.shape));
    }
    if (e.count != t.numel() || (e.offset + e.count) * 4 > payload_len) {
      throw CorruptCheckpoint("encoder", "tensor " + t.name + " extends past payload");
    }
    Reader pr(bytes, body);
    pr.skip(payload + e.offset * 4);
    for (auto& v : t.data) v = std::bit_cast<float>(pr.get<std::uint32_t>());
  }
  if (expected && (expected->heads != config.heads || expected->ffn_dim != config.ffn_dim)) {
    throw VersionError("encoder", "checkpoint config " + to_json(config).dump() +
                                      " does not match expected " + to_json(*expected).dump());
  }
  if (!expected) return model;
  // Non-architectural fields (seed, dropout) come from the file.
  Encoder<float> loaded(config);
  loaded.params() = std::move(model.params());
  return loaded;
}

void save_checkpoint(const Encoder<float>& model, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("encoder", "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("encoder", "write failed for " + path.string());
}

Encoder<float> load_checkpoint(const std::filesystem::path& path,
                               const std::optional<ModelConfig>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("encoder", "cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace ehrlm
