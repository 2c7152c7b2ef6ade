#pragma once

// PAHP parameter files: magic, version, config echo, then named tensors.
//
// Layout (little-endian):
//   "PAHP" u16 version
//   u32 n_blocks, n_heads, dim, mask_channels
//   f64 temperature, gamma_fg, gamma_bg
//   u8 pfe_enabled, asc_enabled, cross_residual, k_shot_mode
//   u64 train.steps  f64 train.step_size  u64 train.seed
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, u64 extents[rank], f64 payload

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pahnet/model.hpp"

namespace pahnet {

inline constexpr std::uint16_t kParamsFormatVersion = 1;

struct ParamsFile {
  ModelConfig config;
  ModelParams params;
};

std::vector<std::uint8_t> encode_params(const ModelParams& params, const ModelConfig& config);
ParamsFile decode_params(std::span<const std::uint8_t> bytes, const std::string& source = "params");

void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::filesystem::path& path);
ParamsFile read_params(const std::filesystem::path& path);

/// Reads the file and throws ParseError::ConfigMismatch naming the first
/// architecture field (everything except the training schedule) that differs
/// from `expected`.
ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected);

/// Empty if the architectures agree, else the first differing field name.
std::string architecture_difference(const ModelConfig& a, const ModelConfig& b);

}  // namespace pahnet
