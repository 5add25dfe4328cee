#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "cdd/model.hpp"

// Binary checkpoint, all integers little-endian u32 unless noted:
//
//   "CDDK" | version | tensor count |
//   per tensor: name length | name bytes | ndim | dims[ndim] | f64 payload |
//   config hash (u64)
//
// Besides the parameters, two metadata tensors are stored: "meta.arch"
// (data_dim, cond_dim, hidden, layers, encoder_layers, time_freqs,
// activation, per_level_gate) and "meta.frozen" (one flag per parameter in
// name order).
namespace cdd {

inline constexpr char kCheckpointMagic[4] = {'C', 'D', 'D', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  AdaptedModel model;
  std::uint64_t config_hash = 0;
};

std::vector<std::uint8_t> save_checkpoint(const AdaptedModel& model, std::uint64_t config_hash);
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const AdaptedModel& model, std::uint64_t config_hash);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace cdd
