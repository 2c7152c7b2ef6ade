#include "pahnet/asc.hpp"

#include <cmath>
#include <limits>

#include "pahnet/ops.hpp"

namespace pahnet {

namespace {

Tensor flat_column(const Matrix& values) {
  return Tensor::from_data({values.size(), 1}, {values.data(), static_cast<std::size_t>(values.size())});
}

Tensor stacked_support_column(std::span<const BinaryMask> masks) {
  if (masks.empty()) throw ContractError("at least one support mask is required");
  Index total = 0;
  for (const BinaryMask& m : masks) total += m.size();
  Matrix column(total, 1);
  Index offset = 0;
  for (const BinaryMask& m : masks) {
    for (Index i = 0; i < m.size(); ++i) column(offset + i, 0) = m.at(i) ? 1.0 : 0.0;
    offset += m.size();
  }
  return Tensor({total, 1}, std::move(column));
}

}  // namespace

void validate_thresholds(double gamma_fg, double gamma_bg) {
  if (!(0.0 < gamma_bg && gamma_bg < gamma_fg && gamma_fg < 1.0)) {
    throw ConfigError("thresholds must satisfy 0 < gamma_bg < gamma_fg < 1, got gamma_bg=" +
                      std::to_string(gamma_bg) + " gamma_fg=" + std::to_string(gamma_fg));
  }
}

ThresholdedMask threshold_mask(const SoftMask& prior, double gamma_fg, double gamma_bg) {
  validate_thresholds(gamma_fg, gamma_bg);
  ThresholdedMask out;
  out.values = prior.values();
  out.confident_fg.assign(static_cast<std::size_t>(prior.size()), false);
  out.confident_bg.assign(static_cast<std::size_t>(prior.size()), false);
  for (Index i = 0; i < prior.size(); ++i) {
    const double v = prior.at(i);
    if (v >= gamma_fg) {
      out.values.data()[i] = 1.0;
      out.confident_fg[static_cast<std::size_t>(i)] = true;
    } else if (v <= gamma_bg) {
      out.values.data()[i] = 0.0;
      out.confident_bg[static_cast<std::size_t>(i)] = true;
    }
  }
  return out;
}

Tensor project_mask(const Tensor& flat_mask, const Linear& projection) {
  if (projection.weight.rank() != 2 || projection.weight.rows() != 1) {
    throw DimensionError("mask projection weight must be {1, d_c}, got " +
                         to_string(projection.weight.shape()));
  }
  return conv1x1(flat_mask, projection.weight, projection.bias);
}

Tensor build_reweight_matrix(const SoftMask& query_prior, std::span<const BinaryMask> support_masks,
                             const Linear& projection) {
  for (const BinaryMask& m : support_masks) {
    if (m.rows() != query_prior.rows() || m.cols() != query_prior.cols()) {
      throw DimensionError("support mask " + std::to_string(m.rows()) + "x" +
                           std::to_string(m.cols()) + " does not match query prior " +
                           std::to_string(query_prior.rows()) + "x" +
                           std::to_string(query_prior.cols()));
    }
  }
  const Tensor query = project_mask(flat_column(query_prior.values()), projection);
  const Tensor support = project_mask(stacked_support_column(support_masks), projection);
  return matmul(query, transpose(support));
}

Tensor build_attention_mask(const ThresholdedMask& query, std::span<const BinaryMask> support_masks) {
  const Tensor support = stacked_support_column(support_masks);
  const Index n_query = query.size();
  const Index n_support = support.rows();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  Matrix mask = Matrix::Zero(n_query, n_support);
  for (Index i = 0; i < n_query; ++i) {
    const bool fg = query.confident_fg[static_cast<std::size_t>(i)];
    const bool bg = query.confident_bg[static_cast<std::size_t>(i)];
    if (!fg && !bg) continue;
    for (Index j = 0; j < n_support; ++j) {
      const bool support_fg = support.matrix()(j, 0) != 0.0;
      if ((bg && support_fg) || (fg && !support_fg)) mask(i, j) = neg_inf;
    }
  }
  return Tensor::attention_mask(std::move(mask));
}

CrossAttention calibrated_cross_attention(const Tensor& query, const Tensor& key,
                                          const Tensor& value, const std::optional<Tensor>& reweight,
                                          const std::optional<Tensor>& mask) {
  if (query.rank() != 2 || key.rank() != 2 || value.rank() != 2 || query.cols() != key.cols() ||
      key.rows() != value.rows() || query.cols() < 1) {
    throw DimensionError("cross attention: Q " + to_string(query.shape()) + ", K " +
                         to_string(key.shape()) + ", V " + to_string(value.shape()));
  }
  const Shape score_shape{query.rows(), key.rows()};
  if (reweight && reweight->shape() != score_shape) {
    throw DimensionError("cross attention: reweight " + to_string(reweight->shape()) +
                         " vs scores " + to_string(score_shape));
  }
  if (mask && mask->shape() != score_shape) {
    throw DimensionError("cross attention: mask " + to_string(mask->shape()) + " vs scores " +
                         to_string(score_shape));
  }
  Tensor scores = scale(matmul(query, transpose(key)), 1.0 / std::sqrt(static_cast<double>(query.cols())));
  if (reweight) scores = mul(*reweight, scores);
  CrossAttention out;
  out.attention = masked_softmax_rows(scores, mask);
  out.output = matmul(out.attention, value);
  return out;
}

}  // namespace pahnet
