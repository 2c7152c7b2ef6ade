#pragma once

// Finite-difference check of every model parameter against the tape.

#include <cstdint>
#include <string>
#include <vector>

#include "pahnet/episodes.hpp"
#include "pahnet/model.hpp"

namespace pahnet {

struct GroupError {
  std::string group;  // e.g. "pfe.fuse", "cross_attention.query", "decoder"
  double max_relative_error = 0.0;
  std::size_t tensors = 0;
};

/// Small default setting: 4 x 4 x 8 features, two blocks, both modules on.
ModelConfig gradcheck_model_config();
GeneratorConfig gradcheck_generator_config();

/// Compares the reverse-mode gradient of the loss on one seeded episode with
/// central differences for every parameter tensor, grouped by layer across
/// blocks, in first-seen order.
std::vector<GroupError> check_model_gradients(const ModelConfig& config,
                                              const GeneratorConfig& generator,
                                              std::uint64_t seed);

}  // namespace pahnet
