#include "pahnet/params_io.hpp"

#include <cmath>
#include <map>

#include "pahnet/binary_io.hpp"

namespace pahnet {

namespace {

constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxNameLength = 4096;

}  // namespace

std::string architecture_difference(const ModelConfig& a, const ModelConfig& b) {
  if (a.n_blocks != b.n_blocks) return "n_blocks";
  if (a.n_heads != b.n_heads) return "n_heads";
  if (a.dim != b.dim) return "dim";
  if (a.mask_channels != b.mask_channels) return "mask_channels";
  if (a.temperature != b.temperature) return "temperature";
  if (a.gamma_fg != b.gamma_fg) return "gamma_fg";
  if (a.gamma_bg != b.gamma_bg) return "gamma_bg";
  if (a.pfe_enabled != b.pfe_enabled) return "pfe";
  if (a.asc_enabled != b.asc_enabled) return "asc";
  if (a.cross_residual != b.cross_residual) return "cross_residual";
  if (a.k_shot_mode != b.k_shot_mode) return "k_shot_mode";
  return {};
}

std::vector<std::uint8_t> encode_params(const ModelParams& params, const ModelConfig& config) {
  ByteWriter out;
  out.magic("PAHP");
  out.u16(kParamsFormatVersion);
  out.u32(static_cast<std::uint32_t>(config.n_blocks));
  out.u32(static_cast<std::uint32_t>(config.n_heads));
  out.u32(static_cast<std::uint32_t>(config.dim));
  out.u32(static_cast<std::uint32_t>(config.mask_channels));
  out.f64(config.temperature);
  out.f64(config.gamma_fg);
  out.f64(config.gamma_bg);
  out.u8(config.pfe_enabled ? 1 : 0);
  out.u8(config.asc_enabled ? 1 : 0);
  out.u8(config.cross_residual ? 1 : 0);
  out.u8(static_cast<std::uint8_t>(config.k_shot_mode));
  out.u64(config.train.steps);
  out.f64(config.train.step_size);
  out.u64(config.train.seed);

  const auto tensors = named_tensors(params);
  out.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.raw({reinterpret_cast<const std::uint8_t*>(name.data()), name.size()});
    out.u32(static_cast<std::uint32_t>(tensor->rank()));
    for (Index extent : tensor->shape()) out.u64(static_cast<std::uint64_t>(extent));
    out.f64s(tensor->data());
  }
  return out.bytes();
}

ParamsFile decode_params(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader in(bytes, source);
  in.expect_magic("PAHP");
  const std::uint16_t version = in.u16();
  if (version != kParamsFormatVersion) {
    throw ParseError(ParseError::Kind::UnknownVersion,
                     source + ": unknown params format version " + std::to_string(version));
  }
  ParamsFile file;
  ModelConfig& config = file.config;
  config.n_blocks = in.u32();
  config.n_heads = in.u32();
  config.dim = in.u32();
  config.mask_channels = in.u32();
  config.temperature = in.f64();
  config.gamma_fg = in.f64();
  config.gamma_bg = in.f64();
  const std::uint8_t flags[3] = {in.u8(), in.u8(), in.u8()};
  for (std::uint8_t f : flags) {
    if (f > 1) throw ParseError(ParseError::Kind::OutOfRange, source + ": flag byte is not 0 or 1");
  }
  config.pfe_enabled = flags[0] != 0;
  config.asc_enabled = flags[1] != 0;
  config.cross_residual = flags[2] != 0;
  const std::uint8_t mode = in.u8();
  if (mode != static_cast<std::uint8_t>(KShotMode::PooledPrototypesConcatTokens)) {
    throw ParseError(ParseError::Kind::OutOfRange,
                     source + ": unknown k-shot mode " + std::to_string(mode));
  }
  config.train.steps = in.u64();
  config.train.step_size = in.f64();
  config.train.seed = in.u64();
  try {
    config.validate();
  } catch (const ConfigError& ex) {
    throw ParseError(ParseError::Kind::Malformed, source + ": " + ex.what());
  }

  std::map<std::string, Tensor> stored;
  const std::uint32_t count = in.u32();
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_length = in.u32();
    if (name_length > kMaxNameLength) {
      throw ParseError(ParseError::Kind::Malformed, source + ": tensor name too long");
    }
    std::string name(name_length, '\0');
    in.raw({reinterpret_cast<std::uint8_t*>(name.data()), name.size()});
    const std::uint32_t rank = in.u32();
    if (rank > kMaxRank) {
      throw ParseError(ParseError::Kind::Malformed, source + ": " + name + " has rank " +
                                                        std::to_string(rank));
    }
    Shape shape;
    std::uint64_t elements = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      const std::uint64_t extent = in.u64();
      if (extent == 0 || extent > (1ULL << 32)) {
        throw ParseError(ParseError::Kind::Malformed, source + ": " + name + " has extent " +
                                                          std::to_string(extent));
      }
      elements *= extent;
      shape.push_back(static_cast<Index>(extent));
    }
    in.require_total(in.offset() + static_cast<std::size_t>(elements) * 8, name);
    std::vector<double> payload(static_cast<std::size_t>(elements));
    in.f64s(payload);
    for (double v : payload) {
      if (!std::isfinite(v)) {
        throw ParseError(ParseError::Kind::OutOfRange, source + ": " + name + " is not finite");
      }
    }
    if (!stored.emplace(name, Tensor::from_data(shape, payload)).second) {
      throw ParseError(ParseError::Kind::Malformed, source + ": duplicate tensor " + name);
    }
  }
  if (in.remaining() != 0) {
    throw ParseError(ParseError::Kind::Malformed,
                     source + ": " + std::to_string(in.remaining()) + " trailing bytes");
  }

  file.params.blocks.resize(static_cast<std::size_t>(config.n_blocks));
  for (NamedTensor& entry : named_tensors(file.params)) {
    auto it = stored.find(entry.name);
    if (it == stored.end()) {
      throw ParseError(ParseError::Kind::Malformed, source + ": missing tensor " + entry.name);
    }
    *entry.tensor = it->second;
    stored.erase(it);
  }
  if (!stored.empty()) {
    throw ParseError(ParseError::Kind::Malformed,
                     source + ": unexpected tensor " + stored.begin()->first);
  }
  try {
    check_params(file.params, config);
  } catch (const DimensionError& ex) {
    throw ParseError(ParseError::Kind::ShapeMismatch, source + ": " + ex.what());
  }
  apply_config(file.params, config);
  return file;
}

void save_params(const ModelParams& params, const ModelConfig& config,
                 const std::filesystem::path& path) {
  check_params(params, config);
  write_file(path, encode_params(params, config));
}

ParamsFile read_params(const std::filesystem::path& path) {
  return decode_params(read_file(path), path.string());
}

ModelParams load_params(const std::filesystem::path& path, const ModelConfig& expected) {
  ParamsFile file = read_params(path);
  const std::string field = architecture_difference(file.config, expected);
  if (!field.empty()) {
    throw ParseError(ParseError::Kind::ConfigMismatch,
                     path.string() + ": stored " + field + " differs from the requested config");
  }
  return std::move(file.params);
}

}  // namespace pahnet
