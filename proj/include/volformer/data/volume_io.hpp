#pragma once

#include <filesystem>

#include "volformer/core/tensor.hpp"

namespace volformer {

/// "VFV1" file: u32 dimension count, u32 extents, little-endian f32 payload
/// in row-major order, trailing u32 CRC-32 of the payload.
void save_volume(const std::filesystem::path& path, const Tensor<float>& volume);

/// Throws ParseError with the byte offset on bad magic, truncation, extent
/// overflow or checksum mismatch; DataError when the file cannot be opened.
Tensor<float> load_volume(const std::filesystem::path& path);

}  // namespace volformer
