#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "saek/optim.hpp"

namespace saek {

/// In-memory form of a SAEK file.
///
/// Layout (all integers little-endian): "SAEK", u32 version = 1, u32 entry
/// count, then per entry u16 name length, name bytes, u8 rank, u64 extents,
/// payload. Payloads are f32 except the final "config.json" entry, whose
/// elements are single bytes of UTF-8 text.
struct Checkpoint {
  /// Network tensors in store order, running statistics included.
  std::vector<std::pair<std::string, Tensor>> params;
  std::optional<AdamState> adam;
  /// Completed epochs, when written by the training loop.
  std::optional<std::uint64_t> epoch;
  /// Empty when absent.
  std::string config_json;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws IoError on bad magic, version mismatch, truncation, trailing bytes
/// or duplicate names.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const ParamStore<float>& params, const AdamState* adam, const std::string& config_json,
                           std::optional<std::uint64_t> epoch = std::nullopt);

/// Copies the checkpoint tensors into `params`. Every tensor in the store
/// must be present with the same shape and nothing else may be.
void restore_params(const Checkpoint& ckpt, ParamStore<float>& params);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace saek
