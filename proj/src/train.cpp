#include "pahnet/train.hpp"

#include <cmath>

#include "pahnet/rng.hpp"

namespace pahnet {

namespace {

std::string largest_parameter(const ModelParams& params) {
  std::string name;
  double largest = -1.0;
  for (const auto& [n, t] : named_tensors(params)) {
    const double m = t->matrix().cwiseAbs().maxCoeff();
    if (m > largest) {
      largest = m;
      name = n;
    }
  }
  return name;
}

}  // namespace

PriorSource prior_from(const PredictorHandle& predictor) {
  return [predictor](const Episode& episode, std::uint64_t) { return predict(predictor, episode); };
}

EpisodeSource synthetic_episodes(const GeneratorConfig& generator, std::uint64_t seed) {
  generator.validate();
  return [generator, seed](std::uint64_t step) {
    const std::uint64_t stream = mix_seed(seed, step);
    Rng rng(stream);
    const std::uint64_t class_id = rng.below(generator.n_classes);
    return generate_episode(generator, class_id, rng.next());
  };
}

EpisodeSource cycle_episodes(std::vector<Episode> episodes) {
  if (episodes.empty()) throw ConfigError("no training episodes");
  return [list = std::move(episodes)](std::uint64_t step) { return list[step % list.size()]; };
}

double loss_and_gradients(const Episode& episode, const SoftMask& prior, const ModelParams& params,
                          const ModelConfig& config, std::vector<Matrix>& gradients) {
  Tape tape;
  const ModelParams bound = bind(tape, params);
  const Tensor value = loss(forward(episode, prior, bound, config), episode.query_gt);
  const Gradients grads = tape.backward(value);
  gradients.clear();
  for (const auto& [name, tensor] : named_tensors(bound)) gradients.push_back(grads.of(*tensor));
  return value.item();
}

TrainResult train(const EpisodeSource& episodes, const PriorSource& priors,
                  const ModelConfig& config, std::optional<ModelParams> initial) {
  config.validate();
  TrainResult result;
  result.params = initial ? std::move(*initial) : init_params(config, config.train.seed);
  check_params(result.params, config);
  apply_config(result.params, config);

  std::vector<Matrix> gradients;
  for (std::uint64_t step = 0; step < config.train.steps; ++step) {
    const Episode episode = episodes(step);
    const SoftMask prior = priors(episode, step);
    double value = 0.0;
    try {
      value = loss_and_gradients(episode, prior, result.params, config, gradients);
    } catch (const NumericError& ex) {
      throw NumericError("training step " + std::to_string(step) + ": non-finite loss (" +
                         ex.what() + "); largest parameter: " + largest_parameter(result.params));
    }
    result.losses.push_back(value);
    if (config.train.step_size == 0.0) continue;

    std::size_t g = 0;
    for (NamedTensor& entry : named_tensors(result.params)) {
      Matrix updated = entry.tensor->matrix() - config.train.step_size * gradients[g++];
      if (!updated.allFinite()) {
        throw NumericError("training step " + std::to_string(step) + ": update of " +
                           entry.name + " is not finite");
      }
      *entry.tensor = Tensor(entry.tensor->shape(), std::move(updated));
    }
  }
  return result;
}

}  // namespace pahnet
