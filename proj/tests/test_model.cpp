#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "pahnet/model.hpp"
#include "pahnet/model_gradcheck.hpp"
#include "pahnet/ops.hpp"
#include "pahnet/predictor.hpp"
#include "pahnet/train.hpp"
#include "support.hpp"

using namespace pahnet;
using testing_support::numeric_gradient;
using testing_support::random_tensor;
using testing_support::reference_plain_forward;
using testing_support::rel_error;

namespace {

ModelConfig small_config(bool pfe, bool asc) {
  ModelConfig c = gradcheck_model_config();
  c.pfe_enabled = pfe;
  c.asc_enabled = asc;
  return c;
}

GeneratorConfig small_generator(Index shots = 1) {
  GeneratorConfig g = gradcheck_generator_config();
  g.shots = shots;
  return g;
}

Tensor tokens(const Tensor& features) { return reshape(features, {features.rows(), features.cols()}); }

BlockContext context_of(const Episode& e, const SoftMask& prior) {
  BlockContext ctx;
  ctx.query_prior = prior;
  for (const Support& s : e.supports) ctx.support_masks.push_back(s.mask);
  return ctx;
}

BlockState state_of(const Episode& e) {
  BlockState st;
  for (const Support& s : e.supports) st.supports.push_back(tokens(s.features));
  st.query = tokens(e.query_features);
  return st;
}

double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(ModelConfigTest, Validation) {
  ModelConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.n_blocks = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.gamma_fg = 0.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ModelConfig{};
  c.temperature = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(InitParamsTest, ShapesNamesAndDeterminism) {
  const ModelConfig c;
  const ModelParams a = init_params(c, 5);
  EXPECT_NO_THROW(check_params(a, c));
  const auto named = named_tensors(a);
  EXPECT_EQ(named.front().first, "block0.pfe.enhance_aggressive.weight");
  EXPECT_EQ(named.back().first, "decoder.bias");
  const ModelParams b = init_params(c, 5);
  const auto named_b = named_tensors(b);
  for (std::size_t i = 0; i < named.size(); ++i) {
    EXPECT_EQ(named[i].second->matrix(), named_b[i].second->matrix()) << named[i].first;
  }
  const auto named_c = named_tensors(init_params(c, 6));
  EXPECT_NE(named[0].second->matrix(), named_c[0].second->matrix());
}

TEST(SelfAttentionTest, SingleTokenReducesToValueProjection) {
  Rng rng(1);
  const ModelParams p = init_params(small_config(false, false), 1);
  const SelfAttentionParams& sa = p.blocks[0].self_attention;
  const Tensor x = random_tensor(rng, {1, 8});
  const Matrix value = testing_support::ref_linear(testing_support::ref_linear(x.matrix(), sa.value), sa.output);
  const Matrix expected = testing_support::ref_layer_norm(x.matrix() + value, sa.norm_gain, sa.norm_shift);
  EXPECT_LT(max_abs_diff(self_attention(x, sa, 2).matrix(), expected), 1e-12);
}

TEST(SelfAttentionTest, TokenPermutationEquivarianceProperty) {
  Rng rng(2);
  const ModelParams p = init_params(small_config(false, false), 2);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 16;
    const Tensor x = random_tensor(rng, {n, 8});
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    for (Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    Matrix xp(n, 8);
    for (Index i = 0; i < n; ++i) xp.row(i) = x.matrix().row(perm[i]);
    const Matrix y = self_attention(x, p.blocks[0].self_attention, 2).matrix();
    const Matrix yp = self_attention(Tensor({n, 8}, xp), p.blocks[0].self_attention, 2).matrix();
    for (Index i = 0; i < n; ++i) EXPECT_LT((yp.row(i) - y.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(SelfAttentionTest, GradientCheckOnTwoByTwoByFour) {
  Rng rng(3);
  ModelConfig c = small_config(false, false);
  c.dim = 4;
  const ModelParams p = init_params(c, 3);
  const SelfAttentionParams& sa = p.blocks[0].self_attention;
  const Tensor x = random_tensor(rng, {4, 4});
  const Tensor r = random_tensor(rng, {4, 4});
  auto objective = [&](const Tensor& xx, const SelfAttentionParams& params) {
    return sum(mul(self_attention(xx, params, 2), r));
  };
  Tape tape;
  SelfAttentionParams bound = sa;
  std::vector<Tensor*> slots{&bound.query.weight, &bound.key.weight, &bound.value.weight,
                             &bound.output.weight, &bound.norm_gain, &bound.norm_shift};
  for (Tensor* t : slots) *t = tape.variable(*t);
  const Tensor xv = tape.variable(x);
  const Gradients g = tape.backward(objective(xv, bound));
  EXPECT_LT(rel_error(g.of(xv), numeric_gradient([&](const Tensor& v) { return objective(v, sa).item(); }, x)), 1e-4);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    auto f = [&](const Tensor& v) {
      SelfAttentionParams probe = sa;
      std::vector<Tensor*> ps{&probe.query.weight, &probe.key.weight, &probe.value.weight,
                              &probe.output.weight, &probe.norm_gain, &probe.norm_shift};
      *ps[k] = v;
      return objective(x, probe).item();
    };
    const std::vector<const Tensor*> originals{&sa.query.weight, &sa.key.weight, &sa.value.weight,
                                               &sa.output.weight, &sa.norm_gain, &sa.norm_shift};
    EXPECT_LT(rel_error(g.of(*slots[k]), numeric_gradient(f, *originals[k])), 1e-4) << k;
  }
}

TEST(BlockForwardTest, SupportOutputIsItsSelfAttention) {
  const GeneratorConfig gen = small_generator();
  for (bool pfe : {false, true}) {
    for (bool asc : {false, true}) {
      const ModelConfig c = small_config(pfe, asc);
      const ModelParams p = init_params(c, 4);
      const Episode e = generate_episode(gen, 1, 4);
      const SoftMask prior = predict(BuiltinPredictor{}, e);
      const BlockState in = state_of(e);
      const BlockContext ctx = context_of(e, prior);
      const BlockState out = block_forward(in, ctx, p.blocks[0], c);
      Tensor enhanced = in.supports[0];
      if (pfe) {
        const std::vector<Tensor> masks{e.supports[0].mask.as_tensor()};
        enhanced = pfe_forward(in.supports, in.query, masks, prior.as_tensor(), p.blocks[0].pfe).supports[0];
      }
      EXPECT_EQ(out.supports[0].matrix(),
                self_attention(enhanced, p.blocks[0].self_attention, c.n_heads).matrix());
    }
  }
}

TEST(BlockForwardTest, SupportStreamIgnoresQueryWithoutFeatureEnhancement) {
  const GeneratorConfig gen = small_generator();
  for (bool asc : {false, true}) {
    const ModelConfig c = small_config(false, asc);
    const ModelParams p = init_params(c, 5);
    const Episode e = generate_episode(gen, 2, 5);
    Episode other = e;
    other.query_features = generate_episode(gen, 3, 6).query_features;
    const SoftMask prior = predict(BuiltinPredictor{}, e);
    const BlockState a = block_forward(state_of(e), context_of(e, prior), p.blocks[0], c);
    const BlockState b = block_forward(state_of(other), context_of(other, prior), p.blocks[0], c);
    EXPECT_EQ(a.supports[0].matrix(), b.supports[0].matrix());
    EXPECT_NE(a.query.matrix(), b.query.matrix());
  }
}

TEST(BlockForwardTest, GradientCheckThroughOneBlock) {
  ModelConfig c = small_config(true, true);
  c.n_blocks = 1;
  const Episode e = generate_episode(small_generator(), 3, 7);
  const SoftMask prior = predict(BuiltinPredictor{1.0}, e);
  const ModelParams params = init_params(c, 7);
  std::vector<Matrix> analytic;
  loss_and_gradients(e, prior, params, c, analytic);
  std::vector<NamedTensor> entries;
  ModelParams scratch = params;
  entries = named_tensors(scratch);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto f = [&](const Tensor& v) {
      ModelParams probe = params;
      *named_tensors(probe)[k].tensor = v;
      return loss(forward(e, prior, probe, c), e.query_gt).item();
    };
    EXPECT_LT(rel_error(analytic[k], numeric_gradient(f, *entries[k].tensor)), 1e-4) << entries[k].name;
  }
}

TEST(ForwardTest, SingleBlockEqualsManualComposition) {
  ModelConfig c = small_config(true, true);
  c.n_blocks = 1;
  const ModelParams p = init_params(c, 8);
  const Episode e = generate_episode(small_generator(), 4, 8);
  const SoftMask prior = predict(BuiltinPredictor{}, e);
  const BlockState out = block_forward(state_of(e), context_of(e, prior), p.blocks[0], c);
  const Tensor manual = decode(out.query, p.decoder);
  const Prediction pred = forward(e, prior, p, c);
  EXPECT_EQ(pred.soft.shape(), (Shape{4, 4}));
  EXPECT_EQ(Matrix(pred.soft.matrix().reshaped<Eigen::RowMajor>(16, 1)), manual.matrix());
}

TEST(ForwardTest, DeterministicAndBinaryIsThresholdedSoft) {
  const ModelConfig c;
  const ModelParams p = init_params(c, 9);
  GeneratorConfig gen;
  gen.distractor_fraction = 0.3;
  const Episode e = generate_episode(gen, 5, 9);
  const SoftMask prior = predict(BuiltinPredictor{}, e);
  const Prediction a = forward(e, prior, p, c);
  const Prediction b = forward(e, prior, p, c);
  EXPECT_EQ(a.soft.matrix(), b.soft.matrix());
  EXPECT_TRUE(a.binary == a.soft_mask().binarize(0.5));
  ASSERT_EQ(a.blocks.size(), 2u);
  EXPECT_EQ(a.blocks[0].cross_attention.size(), 2u);
  EXPECT_EQ(a.blocks[0].reweight.rows(), 64);
  EXPECT_EQ(a.blocks[0].attention_mask.cols(), 64);
  EXPECT_EQ(a.blocks[0].aggressive_mask.rows(), 64);
}

TEST(ForwardTest, MismatchedInputsRejected) {
  const ModelConfig c;
  const ModelParams p = init_params(c, 1);
  const Episode e = generate_episode(GeneratorConfig{}, 0, 0);
  EXPECT_THROW(forward(e, SoftMask(4, 4), p, c), DimensionError);
  ModelConfig wide = c;
  wide.dim = 32;
  EXPECT_THROW(forward(e, predict(BuiltinPredictor{}, e), init_params(wide, 1), wide), DimensionError);
}

TEST(AblationIdentityTest, PlainModelMatchesReferenceTransformer) {
  const ModelConfig c = [] {
    ModelConfig m;
    m.pfe_enabled = false;
    m.asc_enabled = false;
    return m;
  }();
  GeneratorConfig gen;
  gen.distractor_fraction = 0.3;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Episode e = generate_episode(gen, seed % gen.n_classes, seed);
    const ModelParams p = init_params(c, seed);
    const Prediction pred = forward(e, predict(BuiltinPredictor{}, e), p, c);
    const Eigen::VectorXd expected = reference_plain_forward(e, p, c);
    const Matrix got = pred.soft.matrix().reshaped<Eigen::RowMajor>(64, 1);
    EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-12) << "seed " << seed;
  }
}

TEST(AblationIdentityTest, PriorIsIgnoredWhenBothModulesAreOff) {
  ModelConfig c;
  c.pfe_enabled = false;
  c.asc_enabled = false;
  const ModelParams p = init_params(c, 3);
  const Episode e = generate_episode(GeneratorConfig{}, 1, 3);
  EXPECT_EQ(forward(e, SoftMask(8, 8, 0.0), p, c).soft.matrix(),
            forward(e, SoftMask(8, 8, 1.0), p, c).soft.matrix());
}

TEST(KShotTest, DuplicatedSupportMatchesOneShot) {
  for (bool pfe : {false, true}) {
    for (bool asc : {false, true}) {
      ModelConfig c;
      c.pfe_enabled = pfe;
      c.asc_enabled = asc;
      const ModelParams p = init_params(c, 10);
      GeneratorConfig gen;
      gen.distractor_fraction = 0.3;
      const Episode one = generate_episode(gen, 6, 10);
      Episode two = one;
      two.supports.push_back(one.supports[0]);
      const SoftMask prior = predict(BuiltinPredictor{}, one);
      const Matrix a = forward(one, prior, p, c).soft.matrix();
      const Matrix b = k_shot_forward(two, prior, p, c).soft.matrix();
      EXPECT_LT(max_abs_diff(a, b), 1e-10) << "pfe " << pfe << " asc " << asc;
    }
  }
}

TEST(KShotTest, FiveShotAttentionShapes) {
  const ModelConfig c;
  const ModelParams p = init_params(c, 11);
  GeneratorConfig gen;
  gen.shots = 5;
  const Episode e = generate_episode(gen, 7, 11);
  const Prediction pred = k_shot_forward(e, predict(BuiltinPredictor{}, e), p, c);
  for (const BlockDiagnostics& b : pred.blocks) {
    for (const Matrix& a : b.cross_attention) {
      EXPECT_EQ(a.rows(), 64);
      EXPECT_EQ(a.cols(), 5 * 64);
    }
    EXPECT_EQ(b.reweight.cols(), 5 * 64);
    EXPECT_EQ(b.attention_mask.cols(), 5 * 64);
  }
}

TEST(KShotTest, SupportOrderDoesNotMatter) {
  const ModelConfig c;
  const ModelParams p = init_params(c, 12);
  GeneratorConfig gen;
  gen.shots = 3;
  gen.distractor_fraction = 0.2;
  const Episode e = generate_episode(gen, 8, 12);
  Episode reversed = e;
  std::reverse(reversed.supports.begin(), reversed.supports.end());
  const SoftMask prior = predict(BuiltinPredictor{}, e);
  EXPECT_LT(max_abs_diff(k_shot_forward(e, prior, p, c).soft.matrix(),
                         k_shot_forward(reversed, prior, p, c).soft.matrix()),
            1e-10);
}

TEST(KShotTest, OneShotRejected) {
  const ModelConfig c;
  const Episode e = generate_episode(GeneratorConfig{}, 0, 0);
  EXPECT_THROW(k_shot_forward(e, predict(BuiltinPredictor{}, e), init_params(c, 0), c), ContractError);
}

TEST(LossTest, PerfectPredictionIsNearZero) {
  Rng rng(13);
  const BinaryMask gt = testing_support::random_mask(rng, 8, 8);
  Prediction pred;
  pred.soft = gt.as_tensor();
  EXPECT_LT(loss(pred, gt).item(), 1e-6);
}

TEST(LossTest, HalfEverywhereIsLogTwo) {
  Rng rng(14);
  const BinaryMask gt = testing_support::random_mask(rng, 8, 8);
  Prediction pred;
  pred.soft = Tensor::full({8, 8}, 0.5);
  EXPECT_NEAR(loss(pred, gt).item(), std::log(2.0), 1e-15);
}

TEST(LossTest, ShapeMismatch) {
  Prediction pred;
  pred.soft = Tensor::full({4, 4}, 0.5);
  EXPECT_THROW(loss(pred, BinaryMask(8, 8)), DimensionError);
}

TEST(LossTest, DecoderGradientMatchesFiniteDifferences) {
  const ModelConfig c = small_config(true, true);
  const Episode e = generate_episode(small_generator(), 2, 15);
  const SoftMask prior = predict(BuiltinPredictor{}, e);
  const ModelParams p = init_params(c, 15);
  std::vector<Matrix> analytic;
  loss_and_gradients(e, prior, p, c, analytic);
  const std::size_t count = analytic.size();
  auto f_weight = [&](const Tensor& v) {
    ModelParams probe = p;
    probe.decoder.weight = v;
    return loss(forward(e, prior, probe, c), e.query_gt).item();
  };
  auto f_bias = [&](const Tensor& v) {
    ModelParams probe = p;
    probe.decoder.bias = v;
    return loss(forward(e, prior, probe, c), e.query_gt).item();
  };
  EXPECT_LT(rel_error(analytic[count - 2], numeric_gradient(f_weight, p.decoder.weight)), 1e-5);
  EXPECT_LT(rel_error(analytic[count - 1], numeric_gradient(f_bias, p.decoder.bias)), 1e-5);
}

TEST(FrozenPredictorTest, PriorReceivesNoGradient) {
  const ModelConfig c;
  const Episode e = generate_episode(GeneratorConfig{}, 1, 16);
  const SoftMask prior = predict(BuiltinPredictor{}, e);
  Tape tape;
  ModelParams bound = bind(tape, init_params(c, 16));
  const std::size_t before = tape.size();
  const Prediction pred = forward(e, prior, bound, c);
  EXPECT_GT(tape.size(), before);
  // The prior enters as a plain SoftMask: no tape node can reference it, and
  // perturbing it inside the uncertain band changes nothing that was recorded
  // as a variable.
  const Gradients g = tape.backward(loss(pred, e.query_gt));
  for (const NamedTensor& t : named_tensors(bound)) {
    EXPECT_TRUE(g.of(*t.tensor).allFinite()) << t.name;
  }
}

TEST(TrainTest, ZeroStepSizeLeavesParamsUnchanged) {
  ModelConfig c = small_config(true, true);
  c.train.steps = 5;
  c.train.step_size = 0.0;
  const ModelParams initial = init_params(c, 17);
  const TrainResult r = train(synthetic_episodes(small_generator(), 17), prior_from(BuiltinPredictor{}), c, initial);
  const auto a = named_tensors(initial);
  const auto b = named_tensors(r.params);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second->matrix(), b[i].second->matrix());
  EXPECT_EQ(r.losses.size(), 5u);
}

TEST(TrainTest, BitIdenticalLossTraces) {
  ModelConfig c = small_config(true, true);
  c.train.steps = 20;
  c.train.seed = 3;
  const auto run = [&] {
    return train(synthetic_episodes(small_generator(), 3), prior_from(BuiltinPredictor{}), c).losses;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainTest, DefaultConfigReducesLoss) {
  ModelConfig c;
  c.train.seed = 1;
  const TrainResult r = train(synthetic_episodes(GeneratorConfig{}, 1), prior_from(BuiltinPredictor{}), c);
  ASSERT_EQ(r.losses.size(), 200u);
  const double first = std::accumulate(r.losses.begin(), r.losses.begin() + 20, 0.0) / 20.0;
  const double last = std::accumulate(r.losses.end() - 20, r.losses.end(), 0.0) / 20.0;
  EXPECT_LT(last, first);
}

TEST(TrainTest, DivergenceNamesStepAndParameter) {
  ModelConfig c = small_config(true, true);
  c.train.steps = 50;
  c.train.step_size = 1e300;
  try {
    train(synthetic_episodes(small_generator(), 4), prior_from(BuiltinPredictor{}), c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("training step"), std::string::npos) << what;
    bool names_parameter = false;
    ModelParams layout = init_params(c, 0);
    for (const NamedTensor& t : named_tensors(layout)) {
      names_parameter = names_parameter || what.find(t.name) != std::string::npos;
    }
    EXPECT_TRUE(names_parameter) << what;
  }
}

TEST(ModelGradcheckTest, EveryGroupBelowTolerance) {
  const auto groups = check_model_gradients(gradcheck_model_config(), gradcheck_generator_config(), 7);
  ASSERT_FALSE(groups.empty());
  for (const GroupError& g : groups) EXPECT_LT(g.max_relative_error, 1e-4) << g.group;
}
