#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "volformer/model/network.hpp"

namespace volformer {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

struct CheckpointTensor {
  std::string name;
  bool buffer = false;  // running statistics rather than a trainable parameter
  DType dtype = DType::f32;
  Shape shape;
  std::vector<double> values;  // widened losslessly from the stored dtype
};

struct Checkpoint {
  ModelConfig model;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<CheckpointTensor> tensors;
};

/// Little-endian "VFCK" container: config echo plus every named parameter and
/// buffer with a CRC-32 per payload. Layout is documented in docs/formats.md.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

/// Throws ParseError (with byte offset) on malformed files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Requires an exact match of names and shapes; throws CheckpointError otherwise.
template <typename T>
void load_state(Network<T>& model, const Checkpoint& ckpt);

/// Builds the network described by the stored config and loads its state.
template <typename T>
std::unique_ptr<Network<T>> load_network(const std::filesystem::path& path, Checkpoint* header = nullptr);

}  // namespace volformer
