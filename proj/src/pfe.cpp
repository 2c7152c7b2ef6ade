#include "pahnet/pfe.hpp"

#include "pahnet/ops.hpp"

namespace pahnet {

namespace {

Tensor as_tokens(const Tensor& x) {
  if (x.rank() == 2) return x;
  return reshape(x, {x.rows(), x.cols()});
}

Tensor as_column(const Tensor& m) {
  if (m.rank() == 2 && m.cols() == 1) return m;
  return reshape(m, {m.size(), 1});
}

}  // namespace

Tensor apply(const Linear& layer, const Tensor& x) { return conv1x1(x, layer.weight, layer.bias); }

PooledPrototype masked_average_pool(const Tensor& features, const Tensor& mask) {
  if (mask.size() != features.rows()) {
    throw DimensionError("masked_average_pool: mask " + to_string(mask.shape()) +
                         " does not match features " + to_string(features.shape()));
  }
  PooledPrototype out{masked_mean(features, mask), false};
  out.degenerate = mask.matrix().sum() <= 0.0;
  return out;
}

Tensor predict_soft_mask(const Tensor& query, const Tensor& w_fg, const Tensor& w_bg,
                         double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  const Tensor logits = scale(concat_channels(cosine_rows(query, w_fg), cosine_rows(query, w_bg)),
                              1.0 / temperature);
  const Tensor fg = slice_channels(masked_softmax_rows(logits), 0, 1);
  if (query.rank() == 3) return reshape(fg, {query.shape()[0], query.shape()[1]});
  return fg;
}

FusedPrototype fuse_prototypes(const Tensor& w_sf, const Tensor& w_qf) {
  if (w_sf.size() != w_qf.size()) {
    throw DimensionError("fuse_prototypes: " + to_string(w_sf.shape()) + " vs " +
                         to_string(w_qf.shape()));
  }
  const Tensor alpha = add_scalar(scale(cosine(w_sf, w_qf), 0.5), 0.5);
  const Tensor one_minus_alpha = add_scalar(scale(alpha, -1.0), 1.0);
  return {add(scale_by(w_sf, alpha), scale_by(w_qf, one_minus_alpha)), alpha};
}

Tensor enhance(const Tensor& features, const Tensor& prototype, const Linear& conv) {
  const Tensor tokens = as_tokens(features);
  if (prototype.size() != tokens.cols()) {
    throw DimensionError("enhance: prototype " + to_string(prototype.shape()) +
                         " does not match features " + to_string(features.shape()));
  }
  if (conv.weight.rank() != 2 || conv.weight.rows() != 2 * tokens.cols()) {
    throw DimensionError("enhance: weight " + to_string(conv.weight.shape()) +
                         " does not map 2d -> d for d = " + std::to_string(tokens.cols()));
  }
  const Tensor stacked = concat_channels(tokens, tile_rows(prototype, tokens.rows()));
  const Tensor out = apply(conv, stacked);
  return features.rank() == 3 ? reshape(out, features.shape()) : out;
}

SupportPrototypes support_prototypes(std::span<const Tensor> supports,
                                     std::span<const Tensor> support_masks) {
  if (supports.empty() || supports.size() != support_masks.size()) {
    throw ContractError("support_prototypes: need one mask per support");
  }
  std::vector<Tensor> masks, inverse;
  for (const Tensor& m : support_masks) {
    masks.push_back(as_column(m));
    inverse.push_back(Tensor(masks.back().shape(), (1.0 - masks.back().matrix().array()).matrix()));
  }
  const Tensor features = concat_rows(supports);
  return {masked_average_pool(features, concat_rows(masks)).prototype,
          masked_average_pool(features, concat_rows(inverse)).prototype};
}

PfeOutput pfe_forward(std::span<const Tensor> supports, const Tensor& query,
                      std::span<const Tensor> support_masks, const Tensor& query_prior,
                      const PfeParams& params) {
  if (query_prior.size() != query.rows()) {
    throw DimensionError("pfe_forward: prior " + to_string(query_prior.shape()) +
                         " does not match query " + to_string(query.shape()));
  }
  if (query_prior.on_tape()) throw ContractError("pfe_forward: the predictor prior is frozen");

  const SupportPrototypes proto = support_prototypes(supports, support_masks);

  PfeOutput out;
  out.aggressive_mask = predict_soft_mask(query, proto.foreground, proto.background,
                                          params.temperature);
  const Tensor w_qf_aggressive = masked_average_pool(query, out.aggressive_mask).prototype;
  const FusedPrototype aggressive = fuse_prototypes(proto.foreground, w_qf_aggressive);

  const Tensor w_qf_conservative = masked_average_pool(query, query_prior).prototype;
  const FusedPrototype conservative = fuse_prototypes(proto.foreground, w_qf_conservative);

  out.prototype_aggressive = aggressive.prototype;
  out.prototype_conservative = conservative.prototype;
  out.alpha_aggressive = aggressive.alpha.item();
  out.alpha_conservative = conservative.alpha.item();

  auto enhance_one = [&](const Tensor& f) {
    const Tensor aff = enhance(f, aggressive.prototype, params.enhance_aggressive);
    const Tensor pro = enhance(f, conservative.prototype, params.enhance_conservative);
    return add(apply(params.fuse, concat_channels(aff, pro)), f);
  };
  for (const Tensor& s : supports) out.supports.push_back(enhance_one(s));
  out.query = enhance_one(query);
  return out;
}

}  // namespace pahnet
