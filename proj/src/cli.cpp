#include "pahnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "pahnet/benchmark.hpp"
#include "pahnet/metrics.hpp"
#include "pahnet/model_gradcheck.hpp"
#include "pahnet/params_io.hpp"
#include "pahnet/rng.hpp"
#include "pahnet/train.hpp"

namespace pahnet::cli {

namespace {

namespace fs = std::filesystem;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

constexpr double kGradcheckTolerance = 1e-4;

std::string text(double v) { return format_double(v); }
std::string text(bool v) { return v ? "true" : "false"; }
template <typename T>
std::string text(T v) {
  return std::to_string(v);
}
std::string text(const std::string& v) { return v; }

/// Registers options on one subcommand and remembers how to echo their
/// resolved values.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* add(const std::string& name, T& value, const std::string& help) {
    echo_.emplace_back(name, [&value] { return text(value); });
    return app_->add_option("--" + name, value, help)->capture_default_str();
  }

  void generator(GeneratorConfig& g) {
    add("height", g.height, "Feature map height");
    add("width", g.width, "Feature map width");
    add("dim", g.dim, "Feature channels (also the model width)");
    add("shots", g.shots, "Support images per episode");
    add("fg-cluster-spread", g.fg_cluster_spread, "Noise radius relative to the anchor norm");
    add("distractor-fraction", g.distractor_fraction, "Share of query background turned into distractors");
    add("distractor-proximity", g.distractor_proximity, "Distractor position between background and foreground anchors");
    add("n-classes", g.n_classes, "Number of classes");
    add("bg-norm", g.bg_norm, "Norm of the background anchor");
    add("edge-blend", g.edge_blend, "Maximum blend of query object edges toward background");
  }

  void model(ModelConfig& m, bool with_training) {
    add("blocks", m.n_blocks, "Attention blocks");
    add("heads", m.n_heads, "Attention heads");
    add("mask-channels", m.mask_channels, "Width of the mask projection");
    add("temperature", m.temperature, "Cosine softmax temperature inside the model");
    add("gamma-fg", m.gamma_fg, "Confident foreground threshold");
    add("gamma-bg", m.gamma_bg, "Confident background threshold");
    add("pfe", m.pfe_enabled, "Prototype-guided feature enhancement");
    add("asc", m.asc_enabled, "Attention score calibration");
    add("cross-residual", m.cross_residual, "Residual connection around cross-attention");
    if (with_training) {
      add("steps", m.train.steps, "Gradient descent steps");
      add("step-size", m.train.step_size, "Gradient descent step size");
    }
  }

  void predictor(BuiltinPredictor& p, std::string& masks) {
    add("predictor-temperature", p.temperature, "Built-in predictor temperature");
    add("predictor-masks", masks, "Directory of mask_NNNNN.pahm files replacing the built-in predictor");
  }

  /// "# key=value" lines for every option of this command.
  std::string header(const std::string& command) const {
    std::ostringstream out;
    out << "# command=" << command << '\n';
    for (const auto& [name, value] : echo_) out << "# " << name << '=' << value() << '\n';
    return out.str();
  }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> echo_;
};

struct Settings {
  GeneratorConfig generator;
  ModelConfig model;
  BuiltinPredictor predictor;
  std::string predictor_masks;
  std::uint64_t seed = 0;
  std::size_t count = 20;
  std::string episodes_dir;
  std::string out;
  std::string params;
  std::string loss_csv;
  unsigned jobs = 1;
  bool per_episode_miou = false;
  bool train_on_clean = true;
};

std::string episode_file(std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof(name), "episode_%05zu.pahe", i);
  return name;
}

std::string mask_file(std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof(name), "mask_%05zu.pahm", i);
  return name;
}

std::vector<Episode> read_episode_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".pahe") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no .pahe files");
  std::vector<Episode> out;
  for (const fs::path& f : files) out.push_back(read_episode(f));
  return out;
}

PriorSource priors_for(const Settings& s) {
  if (s.predictor_masks.empty()) return prior_from(PredictorHandle(s.predictor));
  const fs::path dir = s.predictor_masks;
  return [dir](const Episode& e, std::uint64_t index) {
    return load_soft_mask(dir / mask_file(index), e.height(), e.width());
  };
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError(path.string() + ": cannot open for writing");
  file << content;
  if (!file) throw IoError(path.string() + ": write failed");
}

void sync_dims(Settings& s) { s.model.dim = s.generator.dim; }

int gen_data(const Settings& s, std::ostream& out) {
  s.generator.validate();
  fs::create_directories(s.out);
  for (std::size_t i = 0; i < s.count; ++i) {
    const Episode e =
        generate_episode(s.generator, i % s.generator.n_classes, mix_seed(s.seed, i));
    write_episode(e, fs::path(s.out) / episode_file(i));
  }
  out << "wrote " << s.count << " episodes to " << s.out << '\n';
  return kExitOk;
}

int train_command(const Settings& s, const Options& options, std::ostream& out) {
  ModelConfig config = s.model;
  config.train.seed = s.seed;
  const EpisodeSource episodes = s.episodes_dir.empty()
                                     ? synthetic_episodes(s.generator, s.seed)
                                     : cycle_episodes(read_episode_dir(s.episodes_dir));
  const TrainResult result = train(episodes, priors_for(s), config);
  save_params(result.params, config, s.params);

  std::ostringstream csv;
  csv << options.header("train") << "step,loss\n";
  for (std::size_t i = 0; i < result.losses.size(); ++i) {
    csv << i << ',' << format_double(result.losses[i]) << '\n';
  }
  write_text(s.loss_csv, csv.str());
  out << "trained " << result.losses.size() << " steps";
  if (!result.losses.empty()) out << ", final loss " << format_double(result.losses.back());
  out << "\nparams: " << s.params << "\nloss log: " << s.loss_csv << '\n';
  return kExitOk;
}

int eval_command(const Settings& s, const Options& options, std::ostream& out) {
  const ModelParams params = load_params(s.params, s.model);
  const std::vector<Episode> episodes = s.episodes_dir.empty()
                                            ? make_test_set(s.generator, s.count, s.seed)
                                            : read_episode_dir(s.episodes_dir);
  const std::vector<EpisodeResult> results =
      evaluate_model(params, s.model, episodes, priors_for(s), s.jobs);
  const MetricsReport report =
      miou(results, s.per_episode_miou ? MiouMode::PerEpisodeAverage : MiouMode::PooledCounts);
  std::ostringstream csv;
  csv << options.header("eval");
  write_metrics_csv(csv, results, report);
  write_text(s.out, csv.str());
  out << "miou " << format_double(report.miou) << " fb_iou " << format_double(report.fb_iou)
      << " fp_rate " << format_double(report.fp_rate) << " fn_rate "
      << format_double(report.fn_rate) << '\n';
  return kExitOk;
}

int ablate_command(const Settings& s, const Options& options, std::ostream& out) {
  BenchmarkConfig bench;
  bench.test_generator = s.generator;
  bench.train_generator = s.generator;
  if (s.train_on_clean) {
    bench.train_generator.distractor_fraction = 0.0;
    bench.train_generator.edge_blend = 0.0;
  }
  bench.model = s.model;
  bench.test_episodes = s.count;
  bench.predictor = s.predictor;
  const std::vector<AblationRow> rows = run_ablation(bench, s.seed, s.jobs);

  std::ostringstream csv;
  csv << options.header("ablate") << "pfe,asc,miou,fb_iou,fp_rate,fn_rate\n";
  for (const AblationRow& row : rows) {
    csv << text(row.pfe) << ',' << text(row.asc) << ',' << format_double(row.report.miou) << ','
        << format_double(row.report.fb_iou) << ',' << format_double(row.report.fp_rate) << ','
        << format_double(row.report.fn_rate) << '\n';
  }
  write_text(s.out, csv.str());
  out << "pfe   asc   miou\n";
  for (const AblationRow& row : rows) {
    out << (row.pfe ? "on    " : "off   ") << (row.asc ? "on    " : "off   ")
        << format_double(row.report.miou) << '\n';
  }
  return kExitOk;
}

int gradcheck_command(const Settings& s, const Options& options, std::ostream& out) {
  const std::vector<GroupError> groups =
      check_model_gradients(gradcheck_model_config(), gradcheck_generator_config(), s.seed);
  std::ostringstream csv;
  csv << options.header("gradcheck") << "group,tensors,max_relative_error\n";
  bool ok = true;
  for (const GroupError& g : groups) {
    csv << g.group << ',' << g.tensors << ',' << format_double(g.max_relative_error) << '\n';
    ok = ok && g.max_relative_error < kGradcheckTolerance;
  }
  out << csv.str();
  if (!s.out.empty()) write_text(s.out, csv.str());
  if (!ok) out << "gradient check FAILED (tolerance " << format_double(kGradcheckTolerance) << ")\n";
  return ok ? kExitOk : kExitValidation;
}

}  // namespace

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prototype-calibrated affinity learner for few-shot segmentation on synthetic "
               "episodes"};
  app.name("pahnet");
  app.require_subcommand(1);

  Settings gen_s, train_s, eval_s, ablate_s, grad_s;
  eval_s.out = "metrics.csv";
  eval_s.params = "params.pahp";
  train_s.params = "params.pahp";
  train_s.loss_csv = "loss.csv";
  gen_s.out = "episodes";
  ablate_s.out = "ablation.csv";
  ablate_s.generator.distractor_fraction = 0.3;
  ablate_s.generator.distractor_proximity = 0.8;
  ablate_s.generator.edge_blend = 0.2;

  CLI::App* gen = app.add_subcommand("gen-data", "Write seeded synthetic episodes as .pahe files");
  Options gen_o(gen);
  gen_o.generator(gen_s.generator);
  gen_o.add("count", gen_s.count, "Number of episodes");
  gen_o.add("seed", gen_s.seed, "Base seed");
  gen_o.add("out", gen_s.out, "Output directory");

  CLI::App* tr = app.add_subcommand("train", "Train the model and write params and a loss log");
  Options train_o(tr);
  train_o.generator(train_s.generator);
  train_o.model(train_s.model, true);
  train_o.predictor(train_s.predictor, train_s.predictor_masks);
  train_o.add("episodes", train_s.episodes_dir, "Directory of .pahe files (default: synthetic stream)");
  train_o.add("seed", train_s.seed, "Seed for initialization and the synthetic stream");
  train_o.add("params-out", train_s.params, "Parameter file to write");
  train_o.add("loss-csv", train_s.loss_csv, "Loss log to write");

  CLI::App* ev = app.add_subcommand("eval", "Evaluate trained params and write a metrics CSV");
  Options eval_o(ev);
  eval_o.generator(eval_s.generator);
  eval_o.model(eval_s.model, false);
  eval_o.predictor(eval_s.predictor, eval_s.predictor_masks);
  eval_o.add("params", eval_s.params, "Parameter file to read");
  eval_o.add("episodes", eval_s.episodes_dir, "Directory of .pahe files (default: synthetic test set)");
  eval_o.add("count", eval_s.count, "Synthetic test episodes when --episodes is empty");
  eval_o.add("seed", eval_s.seed, "Seed of the synthetic test set");
  eval_o.add("out", eval_s.out, "Metrics CSV to write");
  eval_o.add("jobs", eval_s.jobs, "Episodes evaluated in parallel");
  eval_o.add("per-episode-miou", eval_s.per_episode_miou, "Average per-episode IoUs within a class");

  CLI::App* ab = app.add_subcommand("ablate", "Train and evaluate the PFE x ASC grid from one seed");
  Options ablate_o(ab);
  ablate_o.generator(ablate_s.generator);
  ablate_o.model(ablate_s.model, true);
  ablate_o.add("predictor-temperature", ablate_s.predictor.temperature, "Built-in predictor temperature");
  ablate_o.add("train-on-clean", ablate_s.train_on_clean, "Train without distractors or edge blending");
  ablate_o.add("count", ablate_s.count, "Test episodes per variant");
  ablate_o.add("seed", ablate_s.seed, "Seed shared by all four variants");
  ablate_o.add("out", ablate_s.out, "Comparison CSV to write");
  ablate_o.add("jobs", ablate_s.jobs, "Test episodes evaluated in parallel");

  CLI::App* gc = app.add_subcommand("gradcheck", "Compare tape gradients with finite differences");
  Options grad_o(gc);
  grad_o.add("seed", grad_s.seed, "Seed of the episode and parameters");
  grad_o.add("out", grad_s.out, "Optional CSV copy of the report");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }

  try {
    if (gen->parsed()) return gen_data(gen_s, out);
    if (tr->parsed()) {
      sync_dims(train_s);
      return train_command(train_s, train_o, out);
    }
    if (ev->parsed()) {
      sync_dims(eval_s);
      return eval_command(eval_s, eval_o, out);
    }
    if (ab->parsed()) {
      sync_dims(ablate_s);
      return ablate_command(ablate_s, ablate_o, out);
    }
    if (gc->parsed()) return gradcheck_command(grad_s, grad_o, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ParseError::Kind::ConfigMismatch ? kExitValidation : kExitIo;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace pahnet::cli
