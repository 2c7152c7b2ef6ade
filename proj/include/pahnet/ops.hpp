#pragma once

// Differentiable operations. Each records an analytic pullback when any input
// lives on a tape; on constant inputs it just computes the value. No general
// broadcasting: shapes must agree exactly unless an op says otherwise.

#include <optional>
#include <span>

#include "pahnet/tensor.hpp"

namespace pahnet {

inline constexpr double kCosineEpsilon = 1e-12;
inline constexpr double kPoolEpsilon = 1e-12;
inline constexpr double kLayerNormEpsilon = 1e-5;
inline constexpr double kProbabilityClamp = 1e-7;

// Linear algebra
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Elementwise (identical shapes)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
/// a * s for a one-element tensor s; the gradient reaches s too.
Tensor scale_by(const Tensor& a, const Tensor& s);

// Reductions to a scalar
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Layout
Tensor reshape(const Tensor& a, Shape shape);
/// Concatenation along the last axis; leading extents must match.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor concat_channels(std::span<const Tensor> parts);
/// Row-wise concatenation of rank-2 tensors with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& a, Index begin, Index count);
/// Repeats a d-element vector as every row of an (rows x d) tensor.
Tensor tile_rows(const Tensor& v, Index rows);

// Layers
/// Per-pixel affine map over the last axis: x[..., c_in] -> x[..., c_out].
Tensor conv1x1(const Tensor& x, const Tensor& weight, const Tensor& bias);
/// Normalizes each row over the last axis, then applies gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                  double epsilon = kLayerNormEpsilon);

/// Row softmax of scores + additive_mask. A row whose mask is entirely -inf
/// falls back to the softmax of its unmasked scores. The mask is a constant.
Tensor masked_softmax_rows(const Tensor& scores,
                           const std::optional<Tensor>& additive_mask = std::nullopt);

// Similarity and pooling
/// dot(a,b) / (|a||b| + eps), clamped to [-1, 1]. Zero vs zero gives 0.
Tensor cosine(const Tensor& a, const Tensor& b);
/// Cosine of every row of x (last axis d) against the d-vector v, as (rows x 1).
Tensor cosine_rows(const Tensor& x, const Tensor& v);
/// sum_i m_i x_i / (sum_i m_i + eps) over the rows of x; mask has one value per row.
/// Result is a d-vector.
Tensor masked_mean(const Tensor& x, const Tensor& mask);

/// Mean binary cross-entropy between probabilities and a constant 0/1 target,
/// with probabilities clamped to [clamp, 1 - clamp].
Tensor binary_cross_entropy(const Tensor& probabilities, const Tensor& target,
                            double clamp = kProbabilityClamp);

}  // namespace pahnet
