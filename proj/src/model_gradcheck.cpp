#include "pahnet/model_gradcheck.hpp"

#include <algorithm>

#include "pahnet/gradcheck.hpp"
#include "pahnet/predictor.hpp"
#include "pahnet/rng.hpp"
#include "pahnet/train.hpp"

namespace pahnet {

namespace {

std::string group_of(const std::string& name) {
  std::string group = name;
  if (group.starts_with("block")) group = group.substr(group.find('.') + 1);
  const auto dot = group.rfind('.');
  const std::string leaf = group.substr(dot + 1);
  if (leaf == "weight" || leaf == "bias") group = group.substr(0, dot);
  return group;
}

}  // namespace

ModelConfig gradcheck_model_config() {
  ModelConfig config;
  config.dim = 8;
  config.n_blocks = 2;
  config.n_heads = 2;
  config.mask_channels = 4;
  return config;
}

GeneratorConfig gradcheck_generator_config() {
  GeneratorConfig generator;
  generator.height = 4;
  generator.width = 4;
  generator.dim = 8;
  generator.bg_norm = 2.0;
  generator.distractor_fraction = 0.3;
  return generator;
}

std::vector<GroupError> check_model_gradients(const ModelConfig& config,
                                              const GeneratorConfig& generator,
                                              std::uint64_t seed) {
  config.validate();
  generator.validate();
  if (generator.dim != config.dim) throw ConfigError("generator dim must equal model dim");
  Rng rng(seed);
  const Episode episode = generate_episode(generator, rng.below(generator.n_classes), rng.next());
  // A softened prior keeps some query pixels in the uncertain band.
  const SoftMask prior = predict(BuiltinPredictor{1.0}, episode);
  ModelParams params = init_params(config, rng.next());

  std::vector<Matrix> analytic;
  loss_and_gradients(episode, prior, params, config, analytic);

  std::vector<GroupError> groups;
  const std::vector<NamedTensor> entries = named_tensors(params);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Tensor original = *entries[k].tensor;
    auto objective = [&](const Tensor& value) {
      ModelParams probe = params;
      *named_tensors(probe)[k].tensor = value;
      return loss(forward(episode, prior, probe, config), episode.query_gt).item();
    };
    const Tensor numeric = finite_diff_grad(objective, original, kFiniteDifferenceStep);
    const double error = relative_error(analytic[k], numeric.matrix());

    const std::string group = group_of(entries[k].name);
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const GroupError& g) { return g.group == group; });
    if (it == groups.end()) {
      groups.push_back({group, error, 1});
    } else {
      it->max_relative_error = std::max(it->max_relative_error, error);
      ++it->tensors;
    }
  }
  return groups;
}

}  // namespace pahnet
