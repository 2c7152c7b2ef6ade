#include "pahnet/model.hpp"

#include <cmath>

#include "pahnet/ops.hpp"
#include "pahnet/rng.hpp"

namespace pahnet {

void ModelConfig::validate() const {
  if (n_blocks < 1) throw ConfigError("n_blocks must be >= 1");
  if (n_heads < 1) throw ConfigError("n_heads must be >= 1");
  if (dim < 1 || dim % n_heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  if (mask_channels < 1) throw ConfigError("mask_channels must be >= 1");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be positive");
  }
  validate_thresholds(gamma_fg, gamma_bg);
  if (!(train.step_size >= 0.0) || !std::isfinite(train.step_size)) {
    throw ConfigError("step_size must be finite and >= 0");
  }
}

namespace {

template <typename Params, typename Visit>
void visit_all(Params& params, Visit&& visit) {
  auto linear = [&](const std::string& prefix, auto& layer) {
    visit(prefix + ".weight", layer.weight);
    visit(prefix + ".bias", layer.bias);
  };
  for (std::size_t b = 0; b < params.blocks.size(); ++b) {
    auto& block = params.blocks[b];
    const std::string p = "block" + std::to_string(b);
    linear(p + ".pfe.enhance_aggressive", block.pfe.enhance_aggressive);
    linear(p + ".pfe.enhance_conservative", block.pfe.enhance_conservative);
    linear(p + ".pfe.fuse", block.pfe.fuse);
    linear(p + ".self_attention.query", block.self_attention.query);
    linear(p + ".self_attention.key", block.self_attention.key);
    linear(p + ".self_attention.value", block.self_attention.value);
    linear(p + ".self_attention.output", block.self_attention.output);
    visit(p + ".self_attention.norm_gain", block.self_attention.norm_gain);
    visit(p + ".self_attention.norm_shift", block.self_attention.norm_shift);
    linear(p + ".cross_attention.query", block.cross_attention.query);
    linear(p + ".cross_attention.key", block.cross_attention.key);
    linear(p + ".cross_attention.value", block.cross_attention.value);
    linear(p + ".asc.projection", block.asc.projection);
  }
  linear("decoder", params.decoder);
}

// Cross-attention query/key start wider than the other layers: at the plain
// 1/sqrt(fan_in) scale the uncalibrated attention stays near uniform for the
// whole fixed-step training budget and the model only learns the class prior.
constexpr double kCrossAttentionInitGain = 2.0;

Linear dense(Rng& rng, Index fan_in, Index fan_out, double gain = 1.0) {
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  return {Tensor({fan_in, fan_out}, rng.uniform_matrix(fan_in, fan_out, bound)),
          Tensor::zeros({fan_out})};
}

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw DimensionError(name + " has shape " + to_string(t.shape()) + ", expected " +
                         to_string(shape));
  }
}

Tensor tokens_of(const Tensor& features) {
  return reshape(features, {features.rows(), features.cols()});
}

Tensor head(const Tensor& x, Index index, Index head_dim) {
  return slice_channels(x, index * head_dim, head_dim);
}

}  // namespace

std::vector<NamedTensor> named_tensors(ModelParams& params) {
  std::vector<NamedTensor> out;
  visit_all(params, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelParams& params) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  visit_all(params, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, &t); });
  return out;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Index d = config.dim;
  ModelParams params;
  for (Index b = 0; b < config.n_blocks; ++b) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(b)));
    BlockParams block;
    block.pfe.enhance_aggressive = dense(rng, 2 * d, d);
    block.pfe.enhance_conservative = dense(rng, 2 * d, d);
    block.pfe.fuse = dense(rng, 2 * d, d);
    block.self_attention.query = dense(rng, d, d);
    block.self_attention.key = dense(rng, d, d);
    block.self_attention.value = dense(rng, d, d);
    block.self_attention.output = dense(rng, d, d);
    block.self_attention.norm_gain = Tensor::full({d}, 1.0);
    block.self_attention.norm_shift = Tensor::zeros({d});
    block.cross_attention.query = dense(rng, d, d, kCrossAttentionInitGain);
    block.cross_attention.key = dense(rng, d, d, kCrossAttentionInitGain);
    block.cross_attention.value = dense(rng, d, d);
    block.asc.projection = {
        Tensor({1, config.mask_channels}, rng.uniform_matrix(1, config.mask_channels, 1.0)),
        Tensor::zeros({config.mask_channels})};
    params.blocks.push_back(std::move(block));
  }
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(config.n_blocks)));
  params.decoder = dense(rng, d, 2);
  apply_config(params, config);
  return params;
}

void apply_config(ModelParams& params, const ModelConfig& config) {
  for (BlockParams& block : params.blocks) {
    block.pfe.temperature = config.temperature;
    block.asc.gamma_fg = config.gamma_fg;
    block.asc.gamma_bg = config.gamma_bg;
  }
}

void check_params(const ModelParams& params, const ModelConfig& config) {
  if (static_cast<Index>(params.blocks.size()) != config.n_blocks) {
    throw DimensionError("params hold " + std::to_string(params.blocks.size()) +
                         " blocks, config expects " + std::to_string(config.n_blocks));
  }
  const Index d = config.dim, c = config.mask_channels;
  for (const auto& [name, tensor] : named_tensors(params)) {
    Shape expected;
    const bool is_weight = name.ends_with(".weight");
    if (name.find(".pfe.") != std::string::npos) {
      expected = is_weight ? Shape{2 * d, d} : Shape{d};
    } else if (name.find(".asc.") != std::string::npos) {
      expected = is_weight ? Shape{1, c} : Shape{c};
    } else if (name.starts_with("decoder")) {
      expected = is_weight ? Shape{d, 2} : Shape{2};
    } else if (is_weight) {
      expected = {d, d};
    } else {
      expected = {d};
    }
    expect_shape(*tensor, expected, name);
  }
}

ModelParams bind(Tape& tape, const ModelParams& params) {
  ModelParams bound = params;
  for (NamedTensor& entry : named_tensors(bound)) {
    *entry.tensor = tape.variable(*entry.tensor, entry.name);
  }
  return bound;
}

Tensor self_attention(const Tensor& tokens, const SelfAttentionParams& params, Index n_heads) {
  if (tokens.rank() != 2) {
    throw DimensionError("self_attention expects {n, d} tokens, got " + to_string(tokens.shape()));
  }
  const Index d = tokens.cols();
  if (n_heads < 1 || d % n_heads != 0) {
    throw DimensionError("self_attention: dim " + std::to_string(d) +
                         " is not divisible by n_heads " + std::to_string(n_heads));
  }
  const Index head_dim = d / n_heads;
  const Tensor q = apply(params.query, tokens);
  const Tensor k = apply(params.key, tokens);
  const Tensor v = apply(params.value, tokens);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  std::vector<Tensor> heads;
  for (Index h = 0; h < n_heads; ++h) {
    const Tensor scores =
        scale(matmul(head(q, h, head_dim), transpose(head(k, h, head_dim))), inv_sqrt);
    heads.push_back(matmul(masked_softmax_rows(scores), head(v, h, head_dim)));
  }
  const Tensor attended = apply(params.output, concat_channels(heads));
  return layer_norm(add(tokens, attended), params.norm_gain, params.norm_shift);
}

BlockState block_forward(const BlockState& in, const BlockContext& context,
                         const BlockParams& params, const ModelConfig& config,
                         BlockDiagnostics* diagnostics) {
  if (in.supports.empty() || in.supports.size() != context.support_masks.size()) {
    throw ContractError("block_forward: need one mask per support");
  }
  BlockState enhanced;
  if (config.pfe_enabled) {
    std::vector<Tensor> masks;
    for (const BinaryMask& m : context.support_masks) masks.push_back(m.as_tensor());
    PfeOutput pfe = pfe_forward(in.supports, in.query, masks, context.query_prior.as_tensor(),
                                params.pfe);
    if (diagnostics) {
      diagnostics->aggressive_mask = pfe.aggressive_mask.matrix();
      diagnostics->alpha_aggressive = pfe.alpha_aggressive;
      diagnostics->alpha_conservative = pfe.alpha_conservative;
    }
    enhanced.supports = std::move(pfe.supports);
    enhanced.query = std::move(pfe.query);
  } else {
    enhanced = in;
  }

  BlockState out;
  for (const Tensor& s : enhanced.supports) {
    out.supports.push_back(self_attention(s, params.self_attention, config.n_heads));
  }
  const Tensor query = self_attention(enhanced.query, params.self_attention, config.n_heads);

  std::optional<Tensor> reweight, mask;
  if (config.asc_enabled) {
    reweight = build_reweight_matrix(context.query_prior, context.support_masks,
                                     params.asc.projection);
    mask = build_attention_mask(
        threshold_mask(context.query_prior, params.asc.gamma_fg, params.asc.gamma_bg),
        context.support_masks);
    if (diagnostics) {
      diagnostics->reweight = reweight->matrix();
      diagnostics->attention_mask = mask->matrix();
    }
  }

  const Tensor support_tokens = concat_rows(out.supports);
  const Tensor q = apply(params.cross_attention.query, query);
  const Tensor k = apply(params.cross_attention.key, support_tokens);
  const Tensor v = apply(params.cross_attention.value, support_tokens);
  const Index head_dim = config.head_dim();
  std::vector<Tensor> heads;
  for (Index h = 0; h < config.n_heads; ++h) {
    CrossAttention attn = calibrated_cross_attention(head(q, h, head_dim), head(k, h, head_dim),
                                                     head(v, h, head_dim), reweight, mask);
    if (diagnostics) diagnostics->cross_attention.push_back(attn.attention.matrix());
    heads.push_back(std::move(attn.output));
  }
  out.query = concat_channels(heads);
  if (config.cross_residual) out.query = add(out.query, query);
  return out;
}

Tensor decode(const Tensor& tokens, const Linear& decoder) {
  return slice_channels(masked_softmax_rows(apply(decoder, tokens)), 1, 1);
}

Prediction forward(const Episode& episode, const SoftMask& query_prior, const ModelParams& params,
                   const ModelConfig& config) {
  episode.validate();
  config.validate();
  if (episode.dim() != config.dim) {
    throw DimensionError("episode dim " + std::to_string(episode.dim()) +
                         " does not match model dim " + std::to_string(config.dim));
  }
  if (query_prior.rows() != episode.height() || query_prior.cols() != episode.width()) {
    throw DimensionError("query prior " + std::to_string(query_prior.rows()) + "x" +
                         std::to_string(query_prior.cols()) + " does not match episode " +
                         std::to_string(episode.height()) + "x" + std::to_string(episode.width()));
  }
  if (static_cast<Index>(params.blocks.size()) != config.n_blocks) {
    throw DimensionError("params hold " + std::to_string(params.blocks.size()) +
                         " blocks, config expects " + std::to_string(config.n_blocks));
  }

  BlockContext context;
  context.query_prior = query_prior;
  BlockState state;
  for (const Support& s : episode.supports) {
    state.supports.push_back(tokens_of(s.features));
    context.support_masks.push_back(s.mask);
  }
  state.query = tokens_of(episode.query_features);

  Prediction prediction;
  for (const BlockParams& block : params.blocks) {
    BlockDiagnostics diagnostics;
    state = block_forward(state, context, block, config, &diagnostics);
    prediction.blocks.push_back(std::move(diagnostics));
  }
  prediction.soft = reshape(decode(state.query, params.decoder),
                            {episode.height(), episode.width()});
  prediction.binary = prediction.soft_mask().binarize(0.5);
  return prediction;
}

Prediction k_shot_forward(const Episode& episode, const SoftMask& query_prior,
                          const ModelParams& params, const ModelConfig& config) {
  if (episode.shots() < 2) {
    throw ContractError("k_shot_forward needs k >= 2, got " + std::to_string(episode.shots()));
  }
  return forward(episode, query_prior, params, config);
}

Tensor loss(const Prediction& prediction, const BinaryMask& ground_truth) {
  const Tensor target = ground_truth.as_tensor();
  if (target.shape() != prediction.soft.shape()) {
    throw DimensionError("loss: prediction " + to_string(prediction.soft.shape()) +
                         " vs ground truth " + to_string(target.shape()));
  }
  return binary_cross_entropy(prediction.soft, target);
}

}  // namespace pahnet
