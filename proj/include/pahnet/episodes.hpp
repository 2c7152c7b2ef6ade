#pragma once

// Synthetic few-shot segmentation episodes at feature resolution.
//
// The generator stands in for a frozen backbone. Each class owns a fixed unit
// foreground anchor; all classes share one background anchor of norm bg_norm,
// orthogonal to every foreground anchor. Pixel features are
//
//     anchor + spread * |anchor| * z / sqrt(d),   z ~ N(0, I_d)
//
// so `fg_cluster_spread` is the expected noise radius relative to the anchor.
// Query background pixels chosen as distractors use the anchor
// bg + distractor_proximity * (fg - bg): near the foreground in Euclidean
// terms, still background-dominated in direction while proximity < bg_norm /
// (1 + bg_norm). Query foreground pixels on a rectangle edge can be blended
// toward the background anchor by up to `edge_blend`, which models mixed
// receptive fields at object boundaries. Supports are never blended.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pahnet/masks.hpp"
#include "pahnet/tensor.hpp"

namespace pahnet {

struct Support {
  Tensor features;  // {h, w, d}
  BinaryMask mask;
};

struct Episode {
  std::vector<Support> supports;
  Tensor query_features;  // {h, w, d}
  BinaryMask query_gt;
  std::uint64_t class_id = 0;
  std::uint64_t seed = 0;

  Index shots() const noexcept { return static_cast<Index>(supports.size()); }
  Index height() const { return query_features.shape().at(0); }
  Index width() const { return query_features.shape().at(1); }
  Index dim() const { return query_features.shape().at(2); }

  /// k >= 1, shared h/w/d, masks sized h x w, every support mask non-empty.
  void validate() const;
};

/// Bit-exact comparison of every field.
bool operator==(const Episode& a, const Episode& b);

struct GeneratorConfig {
  Index height = 8;
  Index width = 8;
  Index dim = 16;
  Index shots = 1;
  double fg_cluster_spread = 0.1;
  double distractor_fraction = 0.0;
  double distractor_proximity = 0.8;
  std::uint64_t n_classes = 10;
  double bg_norm = 6.0;
  double edge_blend = 0.0;

  void validate() const;
};

inline constexpr double kMinForegroundFraction = 0.1;
inline constexpr double kMaxForegroundFraction = 0.4;

/// The episode plus which query pixels were turned into distractors.
struct GeneratedEpisode {
  Episode episode;
  BinaryMask distractors;
};

GeneratedEpisode generate_episode_with_layout(const GeneratorConfig& cfg, std::uint64_t class_id,
                                              std::uint64_t seed);
Episode generate_episode(const GeneratorConfig& cfg, std::uint64_t class_id, std::uint64_t seed);

/// Unit foreground anchor of a class (depends only on class_id and d).
Eigen::VectorXd class_anchor(Index dim, std::uint64_t class_id);
/// Unit direction of the shared background anchor.
Eigen::VectorXd background_direction(Index dim);

inline constexpr std::uint16_t kEpisodeFormatVersion = 1;

void write_episode(const Episode& e, const std::filesystem::path& path);
Episode read_episode(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_episode(const Episode& e);
Episode decode_episode(std::span<const std::uint8_t> bytes, const std::string& source = "episode");

}  // namespace pahnet
