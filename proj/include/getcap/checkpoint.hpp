#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "getcap/model.hpp"

namespace getcap {

// Little-endian: "GETC", u32 version (1), u32 count, then per tensor:
// u32 name length, name bytes, u32 rank, rank x u64 extents, float64 values.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_params(const ParamList& params);
// Name/shape records paired with their values.
std::vector<NamedTensor> parse_params(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const CaptionModel& model);
// Overwrites every parameter of `model`; names and shapes must match exactly.
void load_checkpoint(const std::filesystem::path& path, CaptionModel& model);

}  // namespace getcap
