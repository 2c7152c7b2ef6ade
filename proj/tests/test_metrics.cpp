#include <gtest/gtest.h>

#include <array>
#include <map>
#include <numeric>
#include <sstream>

#include "pahnet/metrics.hpp"
#include "support.hpp"

using namespace pahnet;
using testing_support::random_mask;

namespace {

BinaryMask mask_from(Index rows, Index cols, const std::vector<int>& bits) {
  BinaryMask m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.set(i, bits[static_cast<std::size_t>(i)] != 0);
  return m;
}

BinaryMask filled(Index rows, Index cols, Index fg_count) {
  BinaryMask m(rows, cols);
  for (Index i = 0; i < fg_count; ++i) m.set(i, true);
  return m;
}

}  // namespace

TEST(ConfusionTest, PerfectPrediction) {
  const BinaryMask gt = filled(8, 8, 10);
  EXPECT_EQ(confusion(gt, gt), (Confusion{10, 0, 0, 54}));
}

TEST(ConfusionTest, EmptyPrediction) {
  EXPECT_EQ(confusion(BinaryMask(8, 8), filled(8, 8, 10)), (Confusion{0, 0, 10, 54}));
}

TEST(ConfusionTest, HandCount) {
  const Confusion c = confusion(mask_from(1, 4, {1, 1, 0, 0}), mask_from(1, 4, {1, 0, 1, 0}));
  EXPECT_EQ(c, (Confusion{1, 1, 1, 1}));
}

TEST(ConfusionTest, ShapeMismatch) {
  EXPECT_THROW(confusion(BinaryMask(2, 2), BinaryMask(2, 3)), DimensionError);
}

TEST(MiouTest, SingleEpisodePerfect) {
  const BinaryMask gt = filled(4, 4, 5);
  const std::vector<EpisodeResult> r{{0, 3, confusion(gt, gt)}};
  EXPECT_EQ(miou(r).miou, 1.0);
}

TEST(MiouTest, UnweightedMeanOverClasses) {
  const std::vector<EpisodeResult> r{{0, 1, Confusion{4, 0, 0, 12}},
                                     {1, 2, Confusion{2, 1, 1, 12}},
                                     {2, 2, Confusion{2, 1, 1, 12}}};
  const MetricsReport report = miou(r);
  ASSERT_EQ(report.class_iou.size(), 2u);
  EXPECT_EQ(report.class_iou[0], (std::pair<std::uint64_t, double>{1, 1.0}));
  EXPECT_EQ(report.class_iou[1], (std::pair<std::uint64_t, double>{2, 0.5}));
  EXPECT_EQ(report.miou, 0.75);
  EXPECT_EQ(report.episodes, 3u);
}

TEST(MiouTest, PooledAndPerEpisodeDiffer) {
  const std::vector<EpisodeResult> r{{0, 1, Confusion{1, 0, 0, 3}}, {1, 1, Confusion{0, 0, 9, 0}}};
  EXPECT_EQ(miou(r, MiouMode::PooledCounts).miou, 0.1);
  EXPECT_EQ(miou(r, MiouMode::PerEpisodeAverage).miou, 0.5);
}

TEST(MiouTest, EmptyDenominatorCountsAsOne) {
  const std::vector<EpisodeResult> r{{0, 4, Confusion{0, 0, 0, 16}}};
  EXPECT_EQ(miou(r).miou, 1.0);
}

TEST(MiouTest, EmptyInputRejected) {
  EXPECT_THROW(miou(std::vector<EpisodeResult>{}), ContractError);
  EXPECT_THROW(fb_iou(std::vector<Confusion>{}), ContractError);
  EXPECT_THROW(fp_fn_rates(std::vector<Confusion>{}), ContractError);
}

TEST(FbIouTest, PerfectIsOne) {
  const BinaryMask gt = filled(4, 4, 6);
  EXPECT_EQ(fb_iou(std::vector<Confusion>{confusion(gt, gt)}), 1.0);
}

TEST(FbIouTest, AllForegroundOnTwoPixels) {
  const Confusion c = confusion(mask_from(1, 2, {1, 1}), mask_from(1, 2, {1, 0}));
  EXPECT_EQ(fb_iou(std::vector<Confusion>{c}), 0.25);
}

TEST(FbIouTest, SymmetricUnderForegroundBackgroundSwapProperty) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Confusion> a, b;
    for (int e = 0; e < 3; ++e) {
      const BinaryMask pred = random_mask(rng, 5, 6, rng.uniform());
      const BinaryMask gt = random_mask(rng, 5, 6, rng.uniform());
      a.push_back(confusion(pred, gt));
      b.push_back(confusion(pred.inverted(), gt.inverted()));
    }
    EXPECT_EQ(fb_iou(a), fb_iou(b));
  }
}

TEST(RatesTest, PerfectPrediction) {
  const BinaryMask gt = filled(4, 4, 6);
  const Rates r = fp_fn_rates(std::vector<Confusion>{confusion(gt, gt)});
  EXPECT_EQ(r.fp_rate, 0.0);
  EXPECT_EQ(r.fn_rate, 0.0);
}

TEST(RatesTest, AllForegroundPrediction) {
  const BinaryMask all(BinaryMask::Storage::Ones(4, 4));
  const Rates r = fp_fn_rates(std::vector<Confusion>{confusion(all, filled(4, 4, 6))});
  EXPECT_EQ(r.fp_rate, 1.0);
  EXPECT_EQ(r.fn_rate, 0.0);
}

TEST(RatesTest, HandCount) {
  const Rates r = fp_fn_rates(std::vector<Confusion>{Confusion{1, 1, 1, 1}});
  EXPECT_EQ(r.fp_rate, 0.5);
  EXPECT_EQ(r.fn_rate, 0.5);
}

TEST(RatesTest, UndefinedDenominatorsAreFlagged) {
  const Rates all_fg = fp_fn_rates(std::vector<Confusion>{Confusion{3, 0, 1, 0}});
  EXPECT_TRUE(all_fg.fp_rate_undefined);
  EXPECT_EQ(all_fg.fp_rate, 0.0);
  EXPECT_FALSE(all_fg.fn_rate_undefined);
  const Rates all_bg = fp_fn_rates(std::vector<Confusion>{Confusion{0, 2, 0, 2}});
  EXPECT_TRUE(all_bg.fn_rate_undefined);
  EXPECT_EQ(all_bg.fn_rate, 0.0);
}

TEST(MetricsOracleTest, MatchesBruteForceCountingProperty) {
  Rng rng(2);
  std::vector<EpisodeResult> results;
  std::map<std::uint64_t, std::array<std::uint64_t, 4>> per_class;
  std::array<std::uint64_t, 4> all{};
  for (std::uint64_t i = 0; i < 100; ++i) {
    const Index rows = 1 + rng.below(8), cols = 1 + rng.below(8);
    const BinaryMask pred = random_mask(rng, rows, cols, rng.uniform());
    const BinaryMask gt = random_mask(rng, rows, cols, rng.uniform());
    const std::uint64_t cls = rng.below(5);
    std::array<std::uint64_t, 4> counts{};  // tp fp fn tn
    for (Index r = 0; r < rows; ++r) {
      for (Index c = 0; c < cols; ++c) {
        const bool p = pred(r, c), g = gt(r, c);
        counts[p && g ? 0 : p ? 1 : g ? 2 : 3] += 1;
      }
    }
    const Confusion conf = confusion(pred, gt);
    EXPECT_EQ(conf, (Confusion{counts[0], counts[1], counts[2], counts[3]}));
    results.push_back({i, cls, conf});
    for (int k = 0; k < 4; ++k) {
      per_class[cls][k] += counts[k];
      all[k] += counts[k];
    }
  }
  auto iou = [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
    return tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  };
  double total = 0.0;
  for (const auto& [cls, c] : per_class) total += iou(c[0], c[1], c[2]);
  const double expected_miou = total / static_cast<double>(per_class.size());
  const double expected_fb = (iou(all[0], all[1], all[2]) + iou(all[3], all[1], all[2])) / 2.0;
  const double expected_fp = static_cast<double>(all[1]) / static_cast<double>(all[1] + all[3]);
  const double expected_fn = static_cast<double>(all[2]) / static_cast<double>(all[2] + all[0]);

  const MetricsReport report = miou(results);
  EXPECT_EQ(report.miou, expected_miou);
  EXPECT_EQ(report.fb_iou, expected_fb);
  EXPECT_EQ(report.fp_rate, expected_fp);
  EXPECT_EQ(report.fn_rate, expected_fn);
}

TEST(MetricsOracleTest, InvariantUnderJointPixelPermutationProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const BinaryMask pred = random_mask(rng, 6, 6), gt = random_mask(rng, 6, 6);
    std::vector<Index> perm(36);
    std::iota(perm.begin(), perm.end(), 0);
    for (Index i = 35; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    BinaryMask pp(6, 6), gp(6, 6);
    for (Index i = 0; i < 36; ++i) {
      pp.set(i, pred.at(perm[i]));
      gp.set(i, gt.at(perm[i]));
    }
    const std::vector<EpisodeResult> a{{0, 0, confusion(pred, gt)}}, b{{0, 0, confusion(pp, gp)}};
    EXPECT_EQ(miou(a).miou, miou(b).miou);
    EXPECT_EQ(miou(a).fb_iou, miou(b).fb_iou);
  }
}

TEST(MetricsOracleTest, FixingAFalsePositiveNeverHurtsProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    BinaryMask pred = random_mask(rng, 5, 5), gt = random_mask(rng, 5, 5);
    std::vector<Index> fps;
    for (Index i = 0; i < 25; ++i) {
      if (pred.at(i) && !gt.at(i)) fps.push_back(i);
    }
    if (fps.empty()) continue;
    const std::vector<Confusion> before{confusion(pred, gt)};
    pred.set(fps[rng.below(fps.size())], false);
    const std::vector<Confusion> after{confusion(pred, gt)};
    EXPECT_GE(fb_iou(after), fb_iou(before));
    EXPECT_LT(fp_fn_rates(after).fp_rate, fp_fn_rates(before).fp_rate);
  }
}

TEST(MetricsCsvTest, FixedColumnsAndSummary) {
  const std::vector<EpisodeResult> r{{0, 1, Confusion{1, 1, 1, 1}}, {1, 2, Confusion{2, 0, 0, 2}}};
  std::ostringstream out;
  write_metrics_csv(out, r, miou(r));
  const std::string expected =
      "episode_id,class_id,tp,fp,fn,tn\n"
      "0,1,1,1,1,1\n"
      "1,2,2,0,0,2\n"
      "# summary\n"
      "miou,0.6666666666666666\n"
      "fb_iou,0.6\n"
      "fp_rate,0.25\n"
      "fn_rate,0.25\n";
  EXPECT_EQ(out.str(), expected);
}

TEST(FormatDoubleTest, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1.0), "1");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
}
