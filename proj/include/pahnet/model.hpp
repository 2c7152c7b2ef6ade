#pragma once

// Affinity learner: N blocks of (feature enhancement -> self-attention ->
// calibrated cross-attention), then a per-pixel two-class decoder.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pahnet/asc.hpp"
#include "pahnet/episodes.hpp"
#include "pahnet/masks.hpp"
#include "pahnet/pfe.hpp"
#include "pahnet/tensor.hpp"

namespace pahnet {

enum class KShotMode { PooledPrototypesConcatTokens };

struct TrainConfig {
  std::uint64_t steps = 200;
  double step_size = 0.05;
  std::uint64_t seed = 0;
};

struct ModelConfig {
  Index n_blocks = 2;
  Index n_heads = 2;
  Index dim = 16;
  Index mask_channels = 16;  // width of the mask projection in the re-weight matrix
  double temperature = 0.1;
  double gamma_fg = 0.7;
  double gamma_bg = 0.3;
  bool pfe_enabled = true;
  bool asc_enabled = true;
  bool cross_residual = false;
  KShotMode k_shot_mode = KShotMode::PooledPrototypesConcatTokens;
  TrainConfig train;

  Index head_dim() const { return dim / n_heads; }
  void validate() const;
};

struct SelfAttentionParams {
  Linear query, key, value, output;
  Tensor norm_gain, norm_shift;
};

/// No output projection: heads are concatenated as is.
struct CrossAttentionParams {
  Linear query, key, value;
};

struct BlockParams {
  PfeParams pfe;
  SelfAttentionParams self_attention;
  CrossAttentionParams cross_attention;
  AscParams asc;
};

struct ModelParams {
  std::vector<BlockParams> blocks;
  Linear decoder;  // {d, 2}, {2}; column 1 is foreground
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

/// Every learnable tensor in a fixed order, named like "block0.pfe.fuse.weight".
/// Tensors of disabled modules are included so that all ablation variants
/// share one layout.
std::vector<NamedTensor> named_tensors(ModelParams& params);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelParams& params);

/// Seeded initialization. Dense layers draw U(-b, b) with b = 1/sqrt(fan_in),
/// doubled for the cross-attention query/key; the mask projection draws
/// U(-1, 1); biases and layer-norm shifts start at 0, layer-norm gains at 1.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Copies the scalar hyperparameters (temperature, thresholds) from config.
void apply_config(ModelParams& params, const ModelConfig& config);

/// Throws DimensionError if any tensor disagrees with the config.
void check_params(const ModelParams& params, const ModelConfig& config);

/// Replaces every tensor with a tape variable of the same value.
ModelParams bind(Tape& tape, const ModelParams& params);

struct BlockDiagnostics {
  Matrix aggressive_mask;  // {n, 1}; empty when feature enhancement is off
  double alpha_aggressive = 0.0;
  double alpha_conservative = 0.0;
  Matrix reweight;        // empty when calibration is off
  Matrix attention_mask;  // empty when calibration is off
  std::vector<Matrix> cross_attention;  // one per head
};

struct Prediction {
  Tensor soft;  // {h, w}, may live on a tape
  BinaryMask binary;
  std::vector<BlockDiagnostics> blocks;

  SoftMask soft_mask() const { return SoftMask(soft.matrix()); }
};

/// Multi-head self-attention with residual and post-layer-norm over {n, d} tokens.
Tensor self_attention(const Tensor& tokens, const SelfAttentionParams& params, Index n_heads);

struct BlockState {
  std::vector<Tensor> supports;  // {hw, d} each
  Tensor query;                  // {hw, d}
};

struct BlockContext {
  std::vector<BinaryMask> support_masks;
  SoftMask query_prior;
};

BlockState block_forward(const BlockState& in, const BlockContext& context,
                         const BlockParams& params, const ModelConfig& config,
                         BlockDiagnostics* diagnostics = nullptr);

/// Per-pixel logits -> two-way softmax -> foreground probability {n, 1}.
Tensor decode(const Tensor& tokens, const Linear& decoder);

/// Works for any number of supports; see k_shot_forward.
Prediction forward(const Episode& episode, const SoftMask& query_prior, const ModelParams& params,
                   const ModelConfig& config);

/// k >= 2. Prototypes pool over all supports jointly and the cross-attention
/// keys are the concatenated support tokens.
Prediction k_shot_forward(const Episode& episode, const SoftMask& query_prior,
                          const ModelParams& params, const ModelConfig& config);

/// Mean pixel-wise binary cross-entropy against the ground truth.
Tensor loss(const Prediction& prediction, const BinaryMask& ground_truth);

}  // namespace pahnet
