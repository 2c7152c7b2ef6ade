#pragma once

// Seeded train/evaluate protocol shared by the CLI and the acceptance suite.

#include <cstdint>
#include <vector>

#include "pahnet/episodes.hpp"
#include "pahnet/metrics.hpp"
#include "pahnet/model.hpp"
#include "pahnet/predictor.hpp"
#include "pahnet/train.hpp"

namespace pahnet {

struct BenchmarkConfig {
  GeneratorConfig train_generator;
  GeneratorConfig test_generator;
  ModelConfig model;
  std::size_t test_episodes = 20;
  BuiltinPredictor predictor;

  void validate() const;
};

/// Distractor-free episodes for training and testing.
BenchmarkConfig clean_benchmark();
/// Training on distractor-free episodes, testing on episodes where 30% of
/// the query background sits at proximity 0.8 and object edges are blended.
BenchmarkConfig distractor_benchmark();

/// Episode i has class i mod n_classes and a seed derived from (seed, i).
std::vector<Episode> make_test_set(const GeneratorConfig& generator, std::size_t count,
                                   std::uint64_t seed);

/// Runs the model on every episode. `jobs` > 1 spreads episodes over threads;
/// results come back in episode order regardless.
/// The test episodes run_benchmark evaluates on for `seed`.
std::vector<Episode> benchmark_test_set(const BenchmarkConfig& bench, std::uint64_t seed);

std::vector<EpisodeResult> evaluate_model(const ModelParams& params, const ModelConfig& config,
                                          const std::vector<Episode>& episodes,
                                          const PriorSource& priors, unsigned jobs = 1);

std::vector<EpisodeResult> evaluate_predictor(const PredictorHandle& predictor,
                                              const std::vector<Episode>& episodes);

/// Trains with config.model (training seed replaced by `seed`) on the train
/// generator and evaluates on a test set drawn from `seed`.
struct BenchmarkRun {
  TrainResult trained;
  std::vector<EpisodeResult> results;
  MetricsReport report;
};
BenchmarkRun run_benchmark(const BenchmarkConfig& bench, std::uint64_t seed, unsigned jobs = 1);

struct AblationRow {
  bool pfe = false;
  bool asc = false;
  MetricsReport report;
};

/// The 2 x 2 grid {PFE off/on} x {ASC off/on}, every variant starting from the
/// same initial parameters and seeing the same episodes.
std::vector<AblationRow> run_ablation(const BenchmarkConfig& bench, std::uint64_t seed,
                                      unsigned jobs = 1);

}  // namespace pahnet
