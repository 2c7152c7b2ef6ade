#pragma once

// Attention score calibration for the query-to-support cross-attention.
//
// A learned re-weight matrix scales every query/support score by the product
// of projected mask values, and pairs where the frozen predictor is confident
// the query pixel disagrees with the support label are masked to -inf.

#include <optional>
#include <span>
#include <vector>

#include "pahnet/masks.hpp"
#include "pahnet/pfe.hpp"
#include "pahnet/tensor.hpp"

namespace pahnet {

struct AscParams {
  Linear projection;  // weight {1, d_c}, bias {d_c}; shared by both mask sides
  double gamma_fg = 0.7;
  double gamma_bg = 0.3;
};

/// Throws ConfigError unless 0 < gamma_bg < gamma_fg < 1.
void validate_thresholds(double gamma_fg, double gamma_bg);

struct ThresholdedMask {
  Matrix values;  // 1 where confident foreground, 0 where confident background, else unchanged
  std::vector<bool> confident_fg;  // row-major flat
  std::vector<bool> confident_bg;

  Index size() const noexcept { return values.size(); }
  SoftMask as_soft_mask() const { return SoftMask(values); }
};

/// Inclusive at both thresholds: >= gamma_fg and <= gamma_bg.
ThresholdedMask threshold_mask(const SoftMask& prior, double gamma_fg, double gamma_bg);

/// Project a flattened mask through the shared 1 -> d_c affine map: {n, d_c}.
Tensor project_mask(const Tensor& flat_mask, const Linear& projection);

/// {n_query, n_support} product of the projected query prior and the
/// projected support masks. With k supports the support masks are stacked in
/// order, giving k * hw columns.
Tensor build_reweight_matrix(const SoftMask& query_prior, std::span<const BinaryMask> support_masks,
                             const Linear& projection);

/// 0 / -inf constant of shape {n_query, n_support}.
Tensor build_attention_mask(const ThresholdedMask& query, std::span<const BinaryMask> support_masks);

struct CrossAttention {
  Tensor attention;  // {n_query, n_support}
  Tensor output;     // attention * value
};

/// softmax_rows(reweight .* (Q K^T / sqrt(d_h)) + mask) and its product with V.
/// Without a reweight matrix the scores are used as is; without a mask no pair
/// is excluded.
CrossAttention calibrated_cross_attention(const Tensor& query, const Tensor& key,
                                          const Tensor& value,
                                          const std::optional<Tensor>& reweight = std::nullopt,
                                          const std::optional<Tensor>& mask = std::nullopt);

}  // namespace pahnet
