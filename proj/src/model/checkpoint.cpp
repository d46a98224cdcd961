#include "volformer/model/checkpoint.hpp"

#include <map>

#include "volformer/core/binary_io.hpp"

namespace volformer {

namespace {
constexpr char kMagic[4] = {'V', 'F', 'C', 'K'};

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }

template <typename T>
void write_tensor(ByteWriter& out, const std::string& name, bool buffer, const Tensor<T>& t) {
  out.u32(static_cast<std::uint32_t>(name.size()));
  out.text(name);
  out.u8(static_cast<std::uint8_t>(dtype_of<T>()));
  out.u8(buffer ? 1 : 0);
  out.u32(static_cast<std::uint32_t>(t.dim()));
  for (std::size_t e : t.shape()) out.u32(static_cast<std::uint32_t>(e));
  const std::size_t size = t.numel() * sizeof(T);
  out.raw(t.data().data(), size);
  out.u32(crc32_of(t.data().data(), size));
}
}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& model, const nlohmann::json& meta) {
  const ParamSet<T> state = model.state();
  ByteWriter out;
  out.raw(kMagic, 4);
  out.u32(kCheckpointVersion);
  const std::string header = nlohmann::json{{"model", model.config().to_json()}, {"meta", meta}}.dump();
  out.u32(static_cast<std::uint32_t>(header.size()));
  out.text(header);
  out.u32(static_cast<std::uint32_t>(state.params.size() + state.buffers.size()));
  for (const auto& [name, t] : state.params) write_tensor(out, name, false, t);
  for (const auto& [name, t] : state.buffers) write_tensor(out, name, true, t);
  try {
    write_file_bytes(path, out.bytes());
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const DataError& e) {
    throw CheckpointError(e.what());
  }
  ByteReader in(bytes, path.string());
  const unsigned char* magic = in.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) in.fail("not a checkpoint (bad magic)", 0);
  const std::size_t version_at = in.offset();
  const std::uint32_t version = in.u32("version");
  if (version != kCheckpointVersion) {
    in.fail("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const std::uint32_t header_size = in.u32("header length");
  const std::size_t header_at = in.offset();
  const std::string header_text = in.text(header_size, "header");
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(header_text);
    ckpt.model = ModelConfig::from_json(header.at("model"));
    if (header.contains("meta")) ckpt.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    in.fail(std::string("malformed header: ") + e.what(), header_at);
  } catch (const ConfigError& e) {
    in.fail(std::string("header holds an invalid model config: ") + e.what(), header_at);
  }
  const std::uint32_t count = in.u32("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = in.text(in.u32("name length"), "tensor name");
    const std::size_t dtype_at = in.offset();
    const std::uint8_t dtype = in.u8("dtype");
    if (dtype != 1 && dtype != 2) in.fail("unknown dtype " + std::to_string(dtype) + " for " + t.name, dtype_at);
    t.dtype = static_cast<DType>(dtype);
    t.buffer = in.u8("tensor kind") != 0;
    const std::size_t rank_at = in.offset();
    const std::uint32_t rank = in.u32("rank");
    if (rank > 8) in.fail("rank " + std::to_string(rank) + " too large for " + t.name, rank_at);
    std::size_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::size_t extent_at = in.offset();
      const std::size_t e = in.u32("extent");
      if (e != 0 && numel > (std::size_t(1) << 40) / e) in.fail("extent overflow in " + t.name, extent_at);
      numel *= e;
      t.shape.push_back(e);
    }
    const std::size_t payload_at = in.offset();
    const std::size_t size = numel * dtype_size(t.dtype);
    const unsigned char* payload = in.take(size, "tensor payload");
    const std::uint32_t stored = in.u32("checksum");
    if (crc32_of(payload, size) != stored) in.fail("checksum mismatch for " + t.name, payload_at);
    t.values.resize(numel);
    if (t.dtype == DType::f32) {
      std::vector<float> tmp(numel);
      std::memcpy(tmp.data(), payload, size);
      std::copy(tmp.begin(), tmp.end(), t.values.begin());
    } else {
      std::memcpy(t.values.data(), payload, size);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  if (in.remaining() != 0) in.fail(std::to_string(in.remaining()) + " trailing bytes", in.offset());
  return ckpt;
}

template <typename T>
void load_state(Network<T>& model, const Checkpoint& ckpt) {
  ParamSet<T> state = model.state();
  std::map<std::string, const CheckpointTensor*> stored;
  for (const auto& t : ckpt.tensors) stored.emplace(t.name, &t);
  std::size_t used = 0;
  auto assign = [&](const std::string& name, Tensor<T>& target) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError("checkpoint has no tensor named " + name);
    if (it->second->shape != target.shape()) {
      throw CheckpointError("checkpoint tensor " + name + " is " + shape_str(it->second->shape) + ", model expects " +
                            shape_str(target.shape()));
    }
    auto out = target.mutable_data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(it->second->values[i]);
    ++used;
  };
  for (auto& [name, t] : state.params) assign(name, t);
  for (auto& [name, t] : state.buffers) assign(name, t);
  if (used != ckpt.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size() - used) +
                          " tensors the model does not have");
  }
}

template <typename T>
std::unique_ptr<Network<T>> load_network(const std::filesystem::path& path, Checkpoint* header) {
  Checkpoint ckpt = read_checkpoint(path);
  auto model = build_network<T>(ckpt.model);
  load_state(*model, ckpt);
  if (header) {
    ckpt.tensors.clear();
    *header = std::move(ckpt);
  }
  return model;
}

template void save_checkpoint<float>(const std::filesystem::path&, const Network<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const Network<double>&, const nlohmann::json&);
template void load_state<float>(Network<float>&, const Checkpoint&);
template void load_state<double>(Network<double>&, const Checkpoint&);
template std::unique_ptr<Network<float>> load_network<float>(const std::filesystem::path&, Checkpoint*);
template std::unique_ptr<Network<double>> load_network<double>(const std::filesystem::path&, Checkpoint*);

}  // namespace volformer
