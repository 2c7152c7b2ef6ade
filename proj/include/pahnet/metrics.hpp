#pragma once

// Segmentation metrics over binary masks.
//
// IoUs aggregate pixel counts before dividing. A zero denominator (nothing
// predicted and nothing present) counts as IoU 1.

#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pahnet/masks.hpp"

namespace pahnet {

struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& other) noexcept;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

Confusion confusion(const BinaryMask& prediction, const BinaryMask& ground_truth);

/// tp / (tp + fp + fn), or 1 when the denominator is zero.
double foreground_iou(const Confusion& c);

struct EpisodeResult {
  std::uint64_t episode_id = 0;
  std::uint64_t class_id = 0;
  Confusion counts;
};

enum class MiouMode {
  PooledCounts,       // per class, sum counts over its episodes then divide
  PerEpisodeAverage,  // per class, average the per-episode IoUs
};

struct MetricsReport {
  std::vector<std::pair<std::uint64_t, double>> class_iou;  // ascending class id
  double miou = 0.0;
  double fb_iou = 0.0;
  double fp_rate = 0.0;
  double fn_rate = 0.0;
  bool fp_rate_undefined = false;  // no true background pixels anywhere
  bool fn_rate_undefined = false;  // no true foreground pixels anywhere
  std::size_t episodes = 0;
};

struct Rates {
  double fp_rate = 0.0;
  double fn_rate = 0.0;
  bool fp_rate_undefined = false;
  bool fn_rate_undefined = false;
};

/// Per-class IoU, its unweighted mean, and fb_iou / rates over all episodes.
MetricsReport miou(std::span<const EpisodeResult> episodes,
                   MiouMode mode = MiouMode::PooledCounts);
double fb_iou(std::span<const Confusion> counts);
/// fp / (fp + tn) and fn / (fn + tp) over summed counts; a zero denominator
/// gives rate 0 and sets the matching flag.
Rates fp_fn_rates(std::span<const Confusion> counts);

/// Header row, one row per episode, then "# summary" and key,value lines.
void write_metrics_csv(std::ostream& out, std::span<const EpisodeResult> episodes,
                       const MetricsReport& report);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace pahnet
