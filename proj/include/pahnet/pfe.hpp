#pragma once

// Prototype-guided feature enhancement.
//
// Support foreground/background prototypes are pooled under the support
// masks, turned into a cosine classifier over query pixels, and the resulting
// aggressive query mask yields a query foreground prototype. That prototype is
// fused with the support one and concatenated onto every pixel of both images.
// A second, conservative branch repeats the pooling and fusion with the frozen
// predictor's mask instead; a final 1x1 conv merges both branches residually.

#include <span>
#include <vector>

#include "pahnet/masks.hpp"
#include "pahnet/tensor.hpp"

namespace pahnet {

/// 1x1 conv / dense layer: weight {c_in, c_out}, bias {c_out}.
struct Linear {
  Tensor weight;
  Tensor bias;
};

Tensor apply(const Linear& layer, const Tensor& x);

struct PfeParams {
  Linear enhance_aggressive;    // {2d, d}
  Linear enhance_conservative;  // {2d, d}
  Linear fuse;                  // {2d, d}
  double temperature = 0.1;
};

struct PooledPrototype {
  Tensor prototype;         // {d}
  bool degenerate = false;  // the mask summed to zero; prototype is all zeros
};

/// Mask-weighted mean of the pixel features. `features` is {h, w, d} or
/// {n, d}; `mask` holds one weight per pixel in any shape.
PooledPrototype masked_average_pool(const Tensor& features, const Tensor& mask);

/// Per pixel, the foreground entry of a two-way softmax over
/// {cos(x, w_fg) / tau, cos(x, w_bg) / tau}. Result has the leading shape of
/// `query` ({h, w} for {h, w, d}; {n, 1} for {n, d}).
Tensor predict_soft_mask(const Tensor& query, const Tensor& w_fg, const Tensor& w_bg,
                         double temperature);

struct FusedPrototype {
  Tensor prototype;  // alpha * w_sf + (1 - alpha) * w_qf
  Tensor alpha;      // (cos(w_sf, w_qf) + 1) / 2, scalar
};

FusedPrototype fuse_prototypes(const Tensor& w_sf, const Tensor& w_qf);

/// conv1x1 of [features ; prototype broadcast to every pixel].
Tensor enhance(const Tensor& features, const Tensor& prototype, const Linear& conv);

/// Support prototypes pooled jointly over all shots.
struct SupportPrototypes {
  Tensor foreground;
  Tensor background;
};

/// `supports` are {n, d} token matrices; masks are one weight per token.
SupportPrototypes support_prototypes(std::span<const Tensor> supports,
                                     std::span<const Tensor> support_masks);

struct PfeOutput {
  std::vector<Tensor> supports;  // enhanced, same shapes as the inputs
  Tensor query;
  Tensor aggressive_mask;  // M_aff, {n, 1}
  Tensor prototype_aggressive;
  Tensor prototype_conservative;
  double alpha_aggressive = 0.0;
  double alpha_conservative = 0.0;
};

/// Full enhancement for one block. `supports` and `query` are {n, d} token
/// matrices, `support_masks` one 0/1 weight per token, `query_prior` the
/// frozen predictor output with one value per query token.
PfeOutput pfe_forward(std::span<const Tensor> supports, const Tensor& query,
                      std::span<const Tensor> support_masks, const Tensor& query_prior,
                      const PfeParams& params);

}  // namespace pahnet
