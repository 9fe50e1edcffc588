#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "mlbviz/model.hpp"

namespace mlbviz {

// Binary little-endian layout:
//   "MLBCKPT1", u32 version, nine u32 hyperparameters in declaration order,
//   u32 tensor count, then per tensor: u16 name length, UTF-8 name, u8 rank,
//   rank×u32 dims, product(dims)×f64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, Incomplete, Malformed };
  CheckpointError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace mlbviz
