#include <gtest/gtest.h>

#include <random>

#include "cmgeval/stats.hpp"
#include "oracles/spearman_oracle.hpp"

using namespace cmgeval;

TEST(Ranks, AverageTies) {
  const std::vector<double> v{10, 20, 20, 5, 20};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2, 4, 4, 1, 4}));
}

TEST(Spearman, PerfectAndReversed) {
  const std::vector<double> x{1, 2, 3, 4, 5}, up{2, 4, 8, 16, 32}, down{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(x, up).coefficient, 1.0);
  EXPECT_DOUBLE_EQ(spearman(x, down).coefficient, -1.0);
  EXPECT_EQ(spearman(x, up).p_value, 0.0);
}

// Reference values from scipy.stats.spearmanr (t-approximation p-values).
TEST(Spearman, MatchesReferenceImplementation) {
  const std::vector<double> x{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, y{2, 1, 4, 3, 6, 5, 8, 7, 10, 9};
  const auto r = spearman(x, y);
  EXPECT_NEAR(r.coefficient, 0.9393939393939393, 1e-14);
  EXPECT_NEAR(r.p_value, 5.484052998513666e-05, 1e-12);

  const std::vector<double> a{1, 2, 2, 3, 4, 4, 4, 5}, b{3, 1, 2, 2, 5, 4, 6, 6};
  const auto t = spearman(a, b);
  EXPECT_NEAR(t.coefficient, 0.7889568540593018, 1e-14);
  EXPECT_NEAR(t.p_value, 0.019936718107142433, 1e-12);
}

TEST(Spearman, HandRankedOracleWithTies) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> n(3, 40), v(0, 6);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> x(n(rng)), y(x.size());
    for (auto& e : x) e = v(rng);
    for (auto& e : y) e = v(rng);
    double r;
    try {
      r = spearman(x, y).coefficient;
    } catch (const UndefinedCorrelation&) {
      continue;
    }
    ASSERT_NEAR(r, oracle::hand_spearman(x, y), 1e-12);
  }
}

TEST(Spearman, Errors) {
  const std::vector<double> a{1, 2, 3}, b{1, 2}, c{4, 4, 4};
  EXPECT_THROW(spearman(a, b), DataError);
  EXPECT_THROW(spearman(b, b), DataError);
  EXPECT_THROW(spearman(a, c), UndefinedCorrelation);
}

TEST(Spearman, PValueMonotoneInAbsRho) {
  for (std::size_t n : {5u, 20u, 100u, 1000u}) {
    double prev = 1.0 + 1e-15;
    for (int i = 0; i <= 100; ++i) {
      const double p = correlation_p_value(i / 100.0, n);
      EXPECT_LE(p, prev) << n << " " << i;
      EXPECT_DOUBLE_EQ(p, correlation_p_value(-i / 100.0, n));
      prev = p;
    }
  }
}

TEST(Spearman, PermutationPValueSmallSample) {
  // Exact: only the identity and reversal reach |rho| = 1 among 4! orderings.
  const std::vector<double> x{1, 2, 3, 4}, y{10, 20, 30, 40};
  const auto r = spearman(x, y, PValueMethod::permutation);
  EXPECT_NEAR(r.p_value, 2.0 / 24.0, 1e-15);
}

TEST(Descriptive, MeanMedianHistogram) {
  const std::vector<double> v{0, 10, 60, 120, 130};
  const auto d = descriptive(v, 50.0);
  EXPECT_DOUBLE_EQ(d.mean, 64.0);
  EXPECT_DOUBLE_EQ(d.median, 60.0);
  std::size_t total = 0;
  for (const auto& b : d.histogram) total += b.count;
  EXPECT_EQ(total, v.size());
  EXPECT_EQ(d.histogram.front().count, 2u);
}
