#include <gtest/gtest.h>

#include <numeric>

#include "nfqi/explain.hpp"
#include "oracles.hpp"

using namespace nfqi;

namespace {

const FeatureLayout kFive = FeatureLayout::per_column(5);

}  // namespace

TEST(ShapleyExact, ConstantModelGivesZeros) {
  const auto f = [](std::span<const double>) { return 3.0; };
  const std::vector<double> x{1, 2, 3, 4, 5}, ref(5, 0.0);
  for (double v : shapley_exact(f, x, ref, kFive)) EXPECT_EQ(v, 0.0);
}

TEST(ShapleyExact, AdditiveModelClosedForm) {
  const std::vector<double> c{0.5, -2.0, 3.0, 0.0, 1.25};
  const auto f = [&](std::span<const double> x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += c[i] * x[i];
    return s;
  };
  const std::vector<double> x{1, 2, 3, 4, 5}, ref{0.5, 0.5, 0.5, 0.5, 0.5};
  const auto phi = shapley_exact(f, x, ref, kFive);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(phi[i], c[i] * (x[i] - ref[i]), 1e-12);
}

TEST(ShapleyExact, SymmetryAndDummy) {
  // Symmetric in features 0 and 1, ignores feature 2.
  const auto f = [](std::span<const double> x) { return x[0] * x[1] + std::sin(x[0] + x[1]) + x[3] * x[3]; };
  const std::vector<double> x{1.5, 1.5, 9.0, 2.0}, ref{0, 0, 0, 0};
  const auto phi = shapley_exact(f, x, ref, FeatureLayout::per_column(4));
  EXPECT_NEAR(phi[0], phi[1], 1e-15);
  EXPECT_EQ(phi[2], 0.0);
}

TEST(ShapleyExact, EfficiencyOnNetworks) {
  SeedStream rng(1);
  const auto layout = cartpole_features();
  for (int i = 0; i < 50; ++i) {
    const auto m = oracle::random_nested(rng);
    const auto x = encode_input(oracle::random_state(rng), static_cast<int>(rng.below(2)), 2);
    const auto ref = encode_input(oracle::random_state(rng), 0, 2);
    const Group z = i % 2 ? Group::foreground : Group::background;
    const auto phi = shapley_exact(m, x, z, ref, layout);
    ASSERT_EQ(phi.size(), 5u);
    const double sum = std::accumulate(phi.begin(), phi.end(), 0.0);
    EXPECT_NEAR(sum, m.value(x, z) - m.value(ref, z), 1e-9);
  }
}

TEST(ShapleyExact, TooManyFeaturesPointsToSampler) {
  const auto f = [](std::span<const double>) { return 0.0; };
  const std::vector<double> x(13, 1.0), ref(13, 0.0);
  try {
    shapley_exact(f, x, ref, FeatureLayout::per_column(13));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("shapley_sampled"), std::string::npos);
  }
}

TEST(ShapleySampled, CloseToExact) {
  SeedStream rng(2);
  const auto m = oracle::random_nested(rng);
  const auto x = encode_input(oracle::random_state(rng), 1, 2);
  const auto ref = encode_input(oracle::random_state(rng), 0, 2);
  const auto layout = cartpole_features();
  const auto exact = shapley_exact(m, x, Group::foreground, ref, layout);
  const auto approx = shapley_sampled(m, x, Group::foreground, ref, layout, 20000, 3);
  double scale = 0.0;
  for (double v : exact) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < exact.size(); ++i) EXPECT_LE(std::abs(approx[i] - exact[i]), 0.02 * scale);
}

TEST(ShapleySampled, DeterministicAndZeroForConstant) {
  const auto f = [](std::span<const double>) { return -1.0; };
  const std::vector<double> x{1, 2, 3, 4, 5}, ref(5, 0.0);
  for (int n : {1, 10, 100}) {
    for (double v : shapley_sampled(f, x, ref, kFive, n, 4)) EXPECT_EQ(v, 0.0);
  }
  const auto g = [](std::span<const double> v) { return v[0] * v[1] - v[2] * v[3] * v[4]; };
  EXPECT_EQ(shapley_sampled(g, x, ref, kFive, 50, 5), shapley_sampled(g, x, ref, kFive, 50, 5));
}

TEST(ShapleySampled, AveragingTwoRunsHalvesVariance) {
  const auto g = [](std::span<const double> v) { return v[0] * v[1] * v[2] + std::max(v[3], v[4]) * v[0]; };
  const std::vector<double> x{1, 2, 3, 4, 5}, ref(5, 0.0);
  const int runs = 400;
  double var1 = 0.0, var2 = 0.0, m1 = 0.0, m2 = 0.0;
  std::vector<double> one, two;
  for (int r = 0; r < runs; ++r) {
    const double a = shapley_sampled(g, x, ref, kFive, 4, 1000 + 2 * r)[0];
    const double b = shapley_sampled(g, x, ref, kFive, 4, 1001 + 2 * r)[0];
    one.push_back(a);
    two.push_back(0.5 * (a + b));
  }
  for (int r = 0; r < runs; ++r) {
    m1 += one[std::size_t(r)] / runs;
    m2 += two[std::size_t(r)] / runs;
  }
  for (int r = 0; r < runs; ++r) {
    var1 += (one[std::size_t(r)] - m1) * (one[std::size_t(r)] - m1);
    var2 += (two[std::size_t(r)] - m2) * (two[std::size_t(r)] - m2);
  }
  const double ratio = var2 / var1;
  EXPECT_GT(ratio, 0.35);
  EXPECT_LT(ratio, 0.65);
}

TEST(ShapleyLayout, ActionBlockIsOneFeature) {
  const auto layout = cartpole_features();
  EXPECT_EQ(layout.size(), 5u);
  EXPECT_EQ(layout.names.back(), "action");
  EXPECT_EQ(layout.columns.back(), (std::vector<std::size_t>{4, 5}));
}

TEST(AttributeDataset, ShapesEfficiencyAndRanking) {
  SeedStream rng(6);
  const auto m = oracle::random_nested(rng);
  std::vector<Transition> ts;
  for (int i = 0; i < 12; ++i) {
    ts.push_back({oracle::random_state(rng, 4, 0.1), static_cast<int>(rng.below(2)), oracle::random_state(rng, 4, 0.1),
                  0.0, false, Group::foreground});
  }
  AttributionConfig cfg;
  cfg.references = {mean_reference(ts, 2)};
  const auto r = attribute_dataset(m, ts, Group::foreground, cfg, cartpole_features());
  ASSERT_EQ(r.values.size(), ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    ASSERT_EQ(r.values[i].size(), 5u);
    const double sum = std::accumulate(r.values[i].begin(), r.values[i].end(), 0.0);
    EXPECT_NEAR(sum, r.outputs[i] - r.baseline, 1e-9);
  }
  const auto rank = r.ranking();
  const auto mean_abs = r.mean_abs();
  for (std::size_t k = 1; k < rank.size(); ++k) EXPECT_GE(mean_abs[rank[k - 1]], mean_abs[rank[k]]);

  const auto csv = attribution_csv({r});
  EXPECT_EQ(csv.rfind("sample_id,group,feature,value\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 12 * 5);
  EXPECT_EQ(attribution_summary({r})["groups"][0]["ranking"].size(), 5u);
}

TEST(AttributeDataset, LoggedTargetUsesLoggedAction) {
  LinearQModel m(4, 2);
  m.beta_shared()[5] = 2.0;  // action 1 worth 2
  const std::vector<Transition> ts{{{0, 0, 0, 0}, 0, {0, 0, 0, 0}, 0.0, false, Group::background}};
  AttributionConfig cfg;
  cfg.references = {std::vector<double>{0, 0, 0, 0, 1, 0}};
  cfg.target = AttributionTarget::logged_action;
  EXPECT_EQ(attribute_dataset(m, ts, Group::background, cfg, cartpole_features()).values[0][4], 0.0);
  cfg.target = AttributionTarget::greedy_action;
  EXPECT_EQ(attribute_dataset(m, ts, Group::background, cfg, cartpole_features()).values[0][4], 2.0);
}
