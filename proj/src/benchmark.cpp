#include "pahnet/benchmark.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "pahnet/rng.hpp"

namespace pahnet {

namespace {

constexpr std::uint64_t kTrainStream = 0x7472;
constexpr std::uint64_t kTestStream = 0x7465;

}  // namespace

void BenchmarkConfig::validate() const {
  train_generator.validate();
  test_generator.validate();
  model.validate();
  if (train_generator.dim != model.dim || test_generator.dim != model.dim) {
    throw ConfigError("generator dim must equal model dim");
  }
  if (test_episodes == 0) throw ConfigError("test_episodes must be >= 1");
  PredictorHandle check(predictor);
}

BenchmarkConfig clean_benchmark() { return {}; }

BenchmarkConfig distractor_benchmark() {
  BenchmarkConfig bench;
  bench.test_generator.distractor_fraction = 0.3;
  bench.test_generator.distractor_proximity = 0.8;
  bench.test_generator.edge_blend = 0.2;
  return bench;
}

std::vector<Episode> make_test_set(const GeneratorConfig& generator, std::size_t count,
                                   std::uint64_t seed) {
  std::vector<Episode> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_episode(generator, i % generator.n_classes, mix_seed(seed, i)));
  }
  return out;
}

std::vector<Episode> benchmark_test_set(const BenchmarkConfig& bench, std::uint64_t seed) {
  return make_test_set(bench.test_generator, bench.test_episodes, mix_seed(seed, kTestStream));
}

std::vector<EpisodeResult> evaluate_model(const ModelParams& params, const ModelConfig& config,
                                          const std::vector<Episode>& episodes,
                                          const PriorSource& priors, unsigned jobs) {
  std::vector<EpisodeResult> results(episodes.size());
  auto run_one = [&](std::size_t i) {
    const Episode& e = episodes[i];
    const Prediction p = forward(e, priors(e, i), params, config);
    results[i] = {i, e.class_id, confusion(p.binary, e.query_gt)};
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(episodes.size())));
  if (jobs == 1) {
    for (std::size_t i = 0; i < episodes.size(); ++i) run_one(i);
    return results;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  for (unsigned w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < episodes.size(); i += jobs) run_one(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : workers) t.join();
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

std::vector<EpisodeResult> evaluate_predictor(const PredictorHandle& predictor,
                                              const std::vector<Episode>& episodes) {
  std::vector<EpisodeResult> results;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const Episode& e = episodes[i];
    results.push_back({i, e.class_id, confusion(predict(predictor, e).binarize(0.5), e.query_gt)});
  }
  return results;
}

BenchmarkRun run_benchmark(const BenchmarkConfig& bench, std::uint64_t seed, unsigned jobs) {
  bench.validate();
  ModelConfig config = bench.model;
  config.train.seed = seed;
  const PriorSource priors = prior_from(bench.predictor);
  BenchmarkRun run;
  run.trained =
      train(synthetic_episodes(bench.train_generator, mix_seed(seed, kTrainStream)), priors, config);
  run.results =
      evaluate_model(run.trained.params, config, benchmark_test_set(bench, seed), priors, jobs);
  run.report = miou(run.results);
  return run;
}

std::vector<AblationRow> run_ablation(const BenchmarkConfig& bench, std::uint64_t seed,
                                      unsigned jobs) {
  std::vector<AblationRow> rows;
  for (const bool pfe : {false, true}) {
    for (const bool asc : {false, true}) {
      BenchmarkConfig variant = bench;
      variant.model.pfe_enabled = pfe;
      variant.model.asc_enabled = asc;
      rows.push_back({pfe, asc, run_benchmark(variant, seed, jobs).report});
    }
  }
  return rows;
}

}  // namespace pahnet
