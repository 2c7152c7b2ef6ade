#pragma once

// Frozen conservative predictor. Its output is a plain SoftMask and never
// touches a tape.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "pahnet/episodes.hpp"
#include "pahnet/masks.hpp"

namespace pahnet {

inline constexpr double kDefaultPredictorTemperature = 0.1;

/// Built-in single-prototype cosine classifier.
struct BuiltinPredictor {
  double temperature = kDefaultPredictorTemperature;
};

/// Soft mask read from a PAHM file.
struct FilePredictor {
  std::filesystem::path path;
};

class PredictorHandle {
 public:
  PredictorHandle() = default;
  PredictorHandle(BuiltinPredictor builtin);  // NOLINT(google-explicit-constructor)
  PredictorHandle(FilePredictor file);        // NOLINT(google-explicit-constructor)

  bool is_builtin() const noexcept { return std::holds_alternative<BuiltinPredictor>(kind_); }
  const BuiltinPredictor& builtin() const { return std::get<BuiltinPredictor>(kind_); }
  const FilePredictor& file() const { return std::get<FilePredictor>(kind_); }

 private:
  std::variant<BuiltinPredictor, FilePredictor> kind_;
};

/// Query foreground probability at feature resolution.
SoftMask predict(const PredictorHandle& predictor, const Episode& episode);

inline constexpr std::uint16_t kSoftMaskFormatVersion = 1;
/// Payload values this far outside [0, 1] are clamped with a warning.
inline constexpr double kSoftMaskClampTolerance = 1e-9;

struct LoadedSoftMask {
  SoftMask mask;
  std::size_t clamped = 0;  // number of values pulled back into [0, 1]
};

/// Reads a PAHM file. A stored mask whose extents are integer multiples of
/// h x w is average-pooled down to h x w; any other size is a ShapeMismatch.
/// Clamping prints one warning line to stderr.
LoadedSoftMask load_soft_mask_checked(const std::filesystem::path& path, Index height,
                                      Index width);
SoftMask load_soft_mask(const std::filesystem::path& path, Index height, Index width);

std::vector<std::uint8_t> encode_soft_mask(const SoftMask& mask);
/// Decodes without pooling; range checks and clamping as above.
LoadedSoftMask decode_soft_mask(std::span<const std::uint8_t> bytes,
                                const std::string& source = "soft mask");
void write_soft_mask(const SoftMask& mask, const std::filesystem::path& path);

/// Block-mean pooling by integer factors.
SoftMask average_pool(const SoftMask& mask, Index height, Index width);

}  // namespace pahnet
