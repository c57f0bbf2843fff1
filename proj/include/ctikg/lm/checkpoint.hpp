#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "ctikg/lm/train.hpp"

namespace ctikg::lm {

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Binary container:
///   "CTIKG\0" | u16 version | u32 header length | JSON header
///   | per tensor: u32 name length, name, u32 rank, u32 dims..., f32 data
/// All integers and floats are little-endian. The JSON header carries the
/// model config, step, dropout RNG state and the tensor count.
///
/// Load errors: Errc::format (bad magic / header), Errc::version,
/// Errc::truncated, Errc::shape_mismatch.
void save_checkpoint(const TrainState<float>& state, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());
TrainState<float> load_checkpoint(const std::filesystem::path& path);

std::string serialize_checkpoint(const TrainState<float>& state,
                                 const nlohmann::json& metadata = nlohmann::json::object());
TrainState<float> deserialize_checkpoint(const std::string& bytes);

}  // namespace ctikg::lm
