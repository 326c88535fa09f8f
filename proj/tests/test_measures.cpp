// Apache License, Version 2.0, refer to LICENSE.txt

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "diachron/measures.hpp"

using namespace diachron;

namespace {

std::vector<double> random_simplex(std::mt19937_64& rng, std::size_t n) {
  std::gamma_distribution<double> g(0.5, 1.0);
  std::vector<double> p(n);
  double z = 0;
  for (auto& v : p) z += (v = g(rng) + 1e-12);
  for (auto& v : p) v /= z;
  return p;
}

// Two-pass mean and squared error, deliberately not shared with the library.
double naive_sse(const std::vector<double>& x, std::size_t a, std::size_t b) {
  double mean = 0;
  for (std::size_t i = a; i < b; ++i) mean += x[i];
  mean /= static_cast<double>(b - a);
  double sse = 0;
  for (std::size_t i = a; i < b; ++i) sse += (x[i] - mean) * (x[i] - mean);
  return sse;
}

double naive_mean(const std::vector<double>& x, std::size_t a, std::size_t b) {
  double m = 0;
  for (std::size_t i = a; i < b; ++i) m += x[i];
  return m / static_cast<double>(b - a);
}

// Every subset of split points; returns the minimum penalised cost.
double exhaustive_partition_cost(const std::vector<double>& x, double penalty, std::size_t min_len) {
  const std::size_t n = x.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
    std::vector<std::size_t> bounds{0};
    for (std::size_t i = 1; i < n; ++i) {
      if (mask & (1u << (i - 1))) bounds.push_back(i);
    }
    bounds.push_back(n);
    double cost = 0;
    bool ok = true;
    for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
      if (bounds[s + 1] - bounds[s] < min_len) ok = false;
      cost += naive_sse(x, bounds[s], bounds[s + 1]);
    }
    if (!ok) continue;
    best = std::min(best, cost + penalty * static_cast<double>(bounds.size() - 2));
  }
  return best;
}

double partition_cost(const std::vector<double>& x, const std::vector<std::size_t>& cps, double penalty) {
  std::vector<std::size_t> bounds{0};
  bounds.insert(bounds.end(), cps.begin(), cps.end());
  bounds.push_back(x.size());
  double cost = 0;
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) cost += naive_sse(x, bounds[s], bounds[s + 1]);
  return cost + penalty * static_cast<double>(cps.size());
}

double entropy(const std::vector<double>& p) {
  double h = 0;
  for (double v : p) {
    if (v > 0) h -= v * std::log(v);
  }
  return h;
}

// A corpus whose sub-documents carry only window, author and length.
WindowedCorpus skeleton(const std::vector<std::tuple<std::size_t, std::string, std::size_t>>& docs, int windows) {
  WindowedCorpus c;
  c.spec = {0, 10, windows};
  c.vocabulary = Vocabulary({{"w", 1}});
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& [t, author, len] = docs[i];
    c.subdocs.push_back(SubDocument::make(t, author, "d" + std::to_string(i), std::vector<std::uint32_t>(len, 0)));
  }
  return c;
}

}  // namespace

TEST(Bimodality, HandValues) {
  EXPECT_DOUBLE_EQ(bimodality(std::vector<double>{0.5, 0.5, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(bimodality(std::vector<double>{1.0, 0.0, 0.0}), 0.5);
  EXPECT_NEAR(bimodality(std::vector<double>{0.4, 0.3, 0.3}), 0.8, 1e-15);
  EXPECT_NEAR(bimodality(std::vector<double>{0.1, 0.6, 0.3}), 0.8, 1e-15);
}

TEST(Bimodality, BoundedAndPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    auto p = random_simplex(rng, 2 + static_cast<std::size_t>(i % 9));
    const double b = bimodality(p);
    EXPECT_GE(b, 0.5 - 1e-12);
    EXPECT_LE(b, 1.0 + 1e-12);
    // Depends on the second-largest value only.
    auto sorted = p;
    std::sort(sorted.rbegin(), sorted.rend());
    EXPECT_NEAR(b, 0.5 + sorted[1], 1e-12);
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_DOUBLE_EQ(bimodality(p), b);
  }
}

TEST(Bimodality, RejectsBadInput) {
  EXPECT_THROW(bimodality(std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(bimodality(std::vector<double>{0.5, 0.6}), InvalidArgument);
  EXPECT_THROW(bimodality(std::vector<double>{1.5, -0.5}), InvalidArgument);
}

TEST(Bimodality, CurveMarksUnattestedWindows) {
  WordTopicCurve c{"vox", 2, {1, 0, 0.5, 0.5, 0.5, 0.5}, {3, 2, 0}};
  const auto b = bimodality_curve(c);
  EXPECT_EQ(b.word, "vox");
  ASSERT_EQ(b.scores.size(), 3u);
  EXPECT_DOUBLE_EQ(*b.scores[0], 0.5);
  EXPECT_DOUBLE_EQ(*b.scores[1], 1.0);
  EXPECT_FALSE(b.scores[2].has_value());
  EXPECT_EQ(b.attested(), 2u);
}

TEST(FillMissing, InterpolatesAndClamps) {
  const std::vector<std::optional<double>> s = {std::nullopt, 0.6, std::nullopt, std::nullopt, 0.9, std::nullopt};
  const auto f = fill_missing(s);
  ASSERT_EQ(f.size(), 6u);
  EXPECT_DOUBLE_EQ(f[0], 0.6);
  EXPECT_DOUBLE_EQ(f[1], 0.6);
  EXPECT_NEAR(f[2], 0.7, 1e-15);
  EXPECT_NEAR(f[3], 0.8, 1e-15);
  EXPECT_DOUBLE_EQ(f[4], 0.9);
  EXPECT_DOUBLE_EQ(f[5], 0.9);
  EXPECT_THROW(fill_missing(std::vector<std::optional<double>>(3)), InvalidArgument);
}

TEST(SingleChangePoint, StepFunction) {
  const auto r = single_change_point(std::vector<double>{0.1, 0.1, 0.9, 0.9});
  EXPECT_EQ(r.cp_index, 2u);
  EXPECT_NEAR(r.delta, 0.8, 1e-15);
  EXPECT_NEAR(r.left_mean, 0.1, 1e-15);
  EXPECT_NEAR(r.right_mean, 0.9, 1e-15);
}

TEST(SingleChangePoint, ConstantSequenceTiesToFirstSplit) {
  const auto r = single_change_point(std::vector<double>{0.7, 0.7, 0.7, 0.7, 0.7});
  EXPECT_EQ(r.cp_index, 1u);
  EXPECT_EQ(r.delta, 0.0);
  EXPECT_EQ(single_change_point(std::vector<double>{0.7, 0.7, 0.7, 0.7}, 2).cp_index, 2u);
}

TEST(SingleChangePoint, MatchesBruteForce) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.5, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(trial % 14);
    const std::size_t m = 1 + static_cast<std::size_t>(trial % 3);
    if (n < 2 * m) continue;
    std::vector<double> x(n);
    for (auto& v : x) v = u(rng);
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t tau = m; tau + m <= n; ++tau) {
      const double c = naive_sse(x, 0, tau) + naive_sse(x, tau, n);
      if (c < best - 1e-12) {
        best = c;
        arg = tau;
      }
    }
    const auto r = single_change_point(x, m);
    const double got = naive_sse(x, 0, r.cp_index) + naive_sse(x, r.cp_index, n);
    EXPECT_NEAR(got, best, 1e-12);
    if (std::abs(got - best) < 1e-12 && r.cp_index != arg) {
      // Only acceptable when the two splits are indistinguishable in cost.
      EXPECT_NEAR(naive_sse(x, 0, arg) + naive_sse(x, arg, n), got, 1e-12);
    }
    EXPECT_NEAR(r.delta, std::abs(naive_mean(x, 0, r.cp_index) - naive_mean(x, r.cp_index, n)), 1e-12);
  }
}

TEST(SingleChangePoint, RejectsShortInput) {
  EXPECT_THROW(single_change_point(std::vector<double>{0.5}), InvalidArgument);
  EXPECT_THROW(single_change_point(std::vector<double>{0.5, 0.6, 0.7}, 2), InvalidArgument);
  EXPECT_THROW(single_change_point(std::vector<double>{0.5, 0.6}, 0), InvalidArgument);
}

TEST(Pelt, MatchesExhaustivePartition) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + static_cast<std::size_t>(trial % 12);
    const std::size_t m = 1 + static_cast<std::size_t>(trial % 2);
    if (n < m) continue;
    std::vector<double> x(n);
    // Piecewise-constant plus noise so that some splits are worth taking.
    double level = u(rng);
    for (auto& v : x) {
      if (u(rng) < 0.25) level = u(rng);
      v = level + 0.05 * u(rng);
    }
    const double penalty = 0.01 + 0.2 * u(rng);
    const auto cps = pelt_segment(x, penalty, m);
    EXPECT_TRUE(std::is_sorted(cps.begin(), cps.end()));
    std::size_t prev = 0;
    for (auto c : cps) {
      EXPECT_GE(c - prev, m);
      prev = c;
    }
    if (!cps.empty()) {
      EXPECT_GE(n - cps.back(), m);
    }
    EXPECT_NEAR(partition_cost(x, cps, penalty), exhaustive_partition_cost(x, penalty, m), 1e-9) << "trial " << trial;
  }
}

TEST(Pelt, HugePenaltyGivesNoSplitAndTinyPenaltySplitsSteps) {
  const std::vector<double> x = {0, 0, 0, 1, 1, 1, 5, 5};
  EXPECT_TRUE(pelt_segment(x, 1e6).empty());
  EXPECT_EQ(pelt_segment(x, 1e-3), (std::vector<std::size_t>{3, 6}));
  EXPECT_THROW(pelt_segment(x, 0.0), InvalidArgument);
}

TEST(Jsd, HandValues) {
  const std::vector<double> a = {1, 0}, b = {0, 1};
  EXPECT_NEAR(jsd(a, b), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(jsd(a, b, LogBase::two), 1.0, 1e-15);
  const std::vector<double> p = {0.2, 0.3, 0.5};
  EXPECT_EQ(jsd(p, p), 0.0);
  EXPECT_THROW(jsd(p, a), InvalidArgument);
  EXPECT_THROW(jsd(std::vector<double>{0.6, 0.6}, a), InvalidArgument);
}

TEST(Jsd, MatchesEntropyFormAndIsSymmetric) {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 2 + static_cast<std::size_t>(i % 7);
    const auto p = random_simplex(rng, n), q = random_simplex(rng, n);
    std::vector<double> m(n);
    for (std::size_t j = 0; j < n; ++j) m[j] = 0.5 * (p[j] + q[j]);
    const double oracle = entropy(m) - 0.5 * (entropy(p) + entropy(q));
    EXPECT_NEAR(jsd(p, q), oracle, 1e-12);
    EXPECT_DOUBLE_EQ(jsd(p, q), jsd(q, p));
    EXPECT_GE(jsd(p, q), 0.0);
    EXPECT_LE(jsd(p, q, LogBase::two), 1.0);
  }
}

TEST(Novelty, AuthorWindowIsModalEarliestOnTies) {
  const auto c = skeleton({{0, "x", 5}, {1, "x", 3}, {1, "x", 3}, {2, "y", 4}, {3, "y", 4}}, 4);
  EXPECT_EQ(author_window(c, "x"), 1u);
  EXPECT_EQ(author_window(c, "y"), 2u);
  EXPECT_THROW(author_window(c, "nemo"), InvalidArgument);
}

TEST(Novelty, HandComputedJsd) {
  // Window 0 holds two sub-documents, weighted 1:3 by token count.
  const auto c = skeleton({{0, "old", 1}, {0, "old", 3}, {1, "new", 2}}, 2);
  const std::vector<double> thetas = {1, 0, 0, 1, 0.5, 0.5};
  const auto r = author_novelty(c, thetas, 2, "new");
  EXPECT_EQ(r.window_index, 1u);
  const std::vector<double> before = {0.25, 0.75}, mine = {0.5, 0.5};
  EXPECT_NEAR(r.novelty, jsd(mine, before), 1e-15);
  EXPECT_THROW(author_novelty(c, thetas, 2, "old"), InvalidArgument);
  EXPECT_THROW(author_novelty(c, std::vector<double>{1, 0}, 2, "new"), InvalidArgument);
}

TEST(Novelty, IdenticalToPrecedingWindowIsZero) {
  const auto c = skeleton({{0, "a", 4}, {1, "b", 4}}, 2);
  EXPECT_EQ(author_novelty(c, std::vector<double>{0.3, 0.7, 0.3, 0.7}, 2, "b").novelty, 0.0);
}

TEST(Novelty, TableSkipsUndefinedAuthorsAndAttachesGroups) {
  const auto c = skeleton({{0, "a", 2}, {2, "b", 2}, {1, "c", 2}}, 3);
  std::vector<double> thetas = {1, 0, 0, 1, 0.5, 0.5};
  const auto t = author_novelties(c, thetas, 2, {{"c", "old"}});
  ASSERT_EQ(t.records.size(), 2u);
  EXPECT_EQ(t.records[0].author, "b");
  EXPECT_EQ(t.records[0].group, "");
  EXPECT_EQ(t.records[1].author, "c");
  EXPECT_EQ(t.records[1].group, "old");
  ASSERT_EQ(t.skipped.size(), 1u);
  EXPECT_NE(t.skipped[0].find("'a'"), std::string::npos);
}

TEST(SummedDeltas, AccumulatesPerWindow) {
  std::vector<ChangePointResult> r = {{"a", 2, 0.25, 0, 0}, {"b", 2, 0.5, 0, 0}, {"c", 1, 0.125, 0, 0}};
  EXPECT_EQ(summed_deltas_by_window(r, 4), (std::vector<double>{0, 0.125, 0.75, 0}));
  r.push_back({"d", 4, 0.1, 0, 0});
  EXPECT_THROW(summed_deltas_by_window(r, 4), InvalidArgument);
}

TEST(WordChangePoints, FiltersSparseWordsAndInterpolates) {
  std::vector<BimodalityCurve> curves = {
      {"dense", {0.5, 0.5, 1.0, 1.0}, {1, 1, 1, 1}},
      {"gappy", {0.5, std::nullopt, 1.0, 1.0}, {1, 0, 1, 1}},
  };
  MeasureOptions opt;
  opt.min_attested_windows = 4;
  auto r = word_change_points(curves, opt);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].word, "dense");
  EXPECT_EQ(r[0].cp_index, 2u);
  opt.min_attested_windows = 3;
  r = word_change_points(curves, opt);
  ASSERT_EQ(r.size(), 2u);
  // The gap fills to 0.75, so the split lands on the right of it.
  EXPECT_EQ(r[1].cp_index, 2u);
  EXPECT_NEAR(r[1].delta, 1.0 - 0.625, 1e-15);
}

TEST(MeasureOptions, JsonRoundTripAndDefaults) {
  MeasureOptions m;
  EXPECT_EQ(m.min_attested_windows, 4u);
  EXPECT_EQ(m.min_seg_len, 1u);
  EXPECT_EQ(m.log_base, LogBase::natural);
  m.log_base = LogBase::two;
  m.min_seg_len = 2;
  const nlohmann::json j = m;
  EXPECT_EQ(j.at("log_base"), "2");
  const auto back = j.get<MeasureOptions>();
  EXPECT_EQ(back.log_base, LogBase::two);
  EXPECT_EQ(back.min_seg_len, 2u);
  EXPECT_THROW((nlohmann::json{{"log_base", "10"}}.get<MeasureOptions>()), InvalidArgument);
}
