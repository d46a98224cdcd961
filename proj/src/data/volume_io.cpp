#include "volformer/data/volume_io.hpp"

#include "volformer/core/binary_io.hpp"

namespace volformer {

namespace {
constexpr char kMagic[4] = {'V', 'F', 'V', '1'};
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

void save_volume(const std::filesystem::path& path, const Tensor<float>& volume) {
  ByteWriter out;
  out.raw(kMagic, 4);
  out.u32(static_cast<std::uint32_t>(volume.dim()));
  for (std::size_t e : volume.shape()) {
    if (e > 0xFFFFFFFFull) throw DimensionError("extent " + std::to_string(e) + " does not fit the volume format");
    out.u32(static_cast<std::uint32_t>(e));
  }
  const std::size_t size = volume.numel() * sizeof(float);
  out.raw(volume.data().data(), size);
  out.u32(crc32_of(volume.data().data(), size));
  write_file_bytes(path, out.bytes());
}

Tensor<float> load_volume(const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  ByteReader in(bytes, path.string());
  const unsigned char* magic = in.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) in.fail("not a volume file (bad magic)", 0);
  const std::size_t rank_at = in.offset();
  const std::uint32_t rank = in.u32("dimension count");
  if (rank == 0 || rank > kMaxRank) {
    in.fail("dimension count " + std::to_string(rank) + " outside 1.." + std::to_string(kMaxRank), rank_at);
  }
  Shape shape;
  std::size_t numel = 1;
  for (std::uint32_t a = 0; a < rank; ++a) {
    const std::size_t at = in.offset();
    const std::size_t e = in.u32("extent");
    if (e == 0) in.fail("extent " + std::to_string(a) + " is zero", at);
    // payload must fit in what remains of the file
    if (numel > in.remaining() / e) in.fail("extents overflow the file size", at);
    numel *= e;
    shape.push_back(e);
  }
  const std::size_t payload_at = in.offset();
  const std::size_t size = numel * sizeof(float);
  const unsigned char* payload = in.take(size, "payload");
  const std::uint32_t stored = in.u32("checksum");
  if (crc32_of(payload, size) != stored) in.fail("payload checksum mismatch", payload_at);
  if (in.remaining() != 0) in.fail(std::to_string(in.remaining()) + " trailing bytes", in.offset());
  std::vector<float> values(numel);
  std::memcpy(values.data(), payload, size);
  return Tensor<float>(std::move(shape), std::move(values));
}

}  // namespace volformer
