#pragma once

// Episodic training with plain gradient descent.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "pahnet/episodes.hpp"
#include "pahnet/model.hpp"
#include "pahnet/predictor.hpp"

namespace pahnet {

/// Episode used at a given training step.
using EpisodeSource = std::function<Episode(std::uint64_t step)>;
/// Frozen conservative prediction for an episode; `index` is the step or the
/// evaluation position.
using PriorSource = std::function<SoftMask(const Episode& episode, std::uint64_t index)>;

PriorSource prior_from(const PredictorHandle& predictor);

/// Fresh synthetic episode per step: class drawn uniformly, seed derived from
/// (seed, step).
EpisodeSource synthetic_episodes(const GeneratorConfig& generator, std::uint64_t seed);
/// Cycles through a fixed list.
EpisodeSource cycle_episodes(std::vector<Episode> episodes);

struct TrainResult {
  ModelParams params;
  std::vector<double> losses;  // one per step, before that step's update
};

/// Runs config.train.steps steps starting from `initial`, or from
/// init_params(config, config.train.seed) when absent. Throws NumericError
/// naming the step and a parameter when the loss or an update is non-finite.
TrainResult train(const EpisodeSource& episodes, const PriorSource& priors,
                  const ModelConfig& config, std::optional<ModelParams> initial = std::nullopt);

/// One forward/backward pass; returns the loss and fills `gradients` with one
/// matrix per entry of named_tensors(params), in order.
double loss_and_gradients(const Episode& episode, const SoftMask& prior, const ModelParams& params,
                          const ModelConfig& config, std::vector<Matrix>& gradients);

}  // namespace pahnet
