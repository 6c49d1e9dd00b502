#pragma once

// Checkpoint container:
//   "DFCE" | u32 version = 1 | 7 x u32 EncoderConfig fields
//   then per tensor: u16 name length | name | u8 dtype | u8 rank |
//   rank x u32 dims | payload
// dtype 0 payload is f32 values; dtype 1 is one f32 scale followed by int8
// codes. All integers and floats are little-endian. dropout_rate occupies its
// u32 slot as the bit pattern of an IEEE f32.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cwb/encoder.hpp"

namespace cwb {

inline constexpr char kCheckpointMagic[4] = {'D', 'F', 'C', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { kF32 = 0, kInt8 = 1 };

struct TensorRecord {
  std::string name;
  DType dtype = DType::kF32;
  Shape shape;
  std::vector<float> f32;          // dtype kF32
  float scale = 1.0f;              // dtype kInt8
  std::vector<std::int8_t> codes;  // dtype kInt8

  // Bytes this record occupies on disk, header included.
  std::size_t encoded_size() const;
  std::size_t payload_size() const;
};

struct CheckpointFile {
  EncoderConfig config;
  std::vector<TensorRecord> records;
};

inline constexpr std::size_t kCheckpointHeaderBytes = 4 + 4 + 7 * 4;

// Returns the number of bytes written.
std::size_t write_checkpoint_file(const CheckpointFile& file,
                                  const std::filesystem::path& path);
CheckpointFile read_checkpoint_file(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace cwb
