#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dcsw/model.hpp"

namespace dcsw {

/// Little-endian binary layout:
///   "DCSW" | u32 version | 32-byte fingerprint | u32 count |
///   count × (u16 name length | UTF-8 name | u8 rank | u32 extents[rank] | f64 values)
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
  Fingerprint fingerprint{};
  std::vector<std::pair<std::string, Tensor>> entries;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
/// Throws DataError on bad magic, unknown version or truncation.
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes via a temporary file and rename, so an existing checkpoint is never
/// left half-written.
void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

void save_parameters(const ParameterStore& store, const std::filesystem::path& path);
/// Throws ConfigError when the stored fingerprint differs from `expected`.
ParameterStore load_parameters(const std::filesystem::path& path, const Fingerprint& expected);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace dcsw
