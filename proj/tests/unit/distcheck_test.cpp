#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cmgeval/distcheck.hpp"
#include "test_util.hpp"

using namespace cmgeval;

namespace {

TelemetryLog log_of(std::initializer_list<std::pair<std::uint64_t, std::uint64_t>> rows) {
  TelemetryLog log;
  for (auto [ed, len] : rows) log.records.push_back({ed, len});
  return log;
}

}  // namespace

TEST(Telemetry, ParsesCsvAndJsonl) {
  std::istringstream csv("ed_value,gen_length\n3,10\n0, 20\n");
  const auto a = parse_telemetry(csv);
  ASSERT_EQ(a.records.size(), 2u);
  EXPECT_EQ(a.records[1].gen_length, 20u);
  std::istringstream jsonl("{\"ed_value\": 4, \"gen_length\": 9}\n\n{\"ed_value\": 0, \"gen_length\": 1}\n");
  EXPECT_EQ(parse_telemetry(jsonl).records.size(), 2u);
}

TEST(Telemetry, RejectsBadRows) {
  std::istringstream no_header("3,10\n");
  EXPECT_THROW(parse_telemetry(no_header), DataError);
  std::istringstream zero_len("ed_value,gen_length\n3,0\n");
  EXPECT_THROW(parse_telemetry(zero_len), DataError);
  std::istringstream negative("{\"ed_value\": -1, \"gen_length\": 9}\n");
  EXPECT_THROW(parse_telemetry(negative), DataError);
  std::istringstream over_cap("ed_value,gen_length\n501,10\n");
  try {
    parse_telemetry(over_cap, "t.csv", 500);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("t.csv:2"), std::string::npos);
  }
}

TEST(FilterZero, FixtureHasSeventyEightPercentZeros) {
  const auto rep = filter_zero(load_telemetry(testutil::fixture("telemetry.csv")));
  EXPECT_EQ(rep.removed_fraction, 0.78);
  EXPECT_EQ(rep.log.records.size(), 22u);
  EXPECT_EQ(mean_gen_length(rep.log), 360.0);
}

TEST(FilterZero, EdgeCasesAndIdempotence) {
  const auto all_zero = filter_zero(log_of({{0, 5}, {0, 6}}));
  EXPECT_EQ(all_zero.removed_fraction, 1.0);
  EXPECT_TRUE(all_zero.log.records.empty());
  const auto none = filter_zero(log_of({{1, 5}, {2, 6}}));
  EXPECT_EQ(none.removed_fraction, 0.0);
  EXPECT_EQ(none.log.records.size(), 2u);
  const auto once = filter_zero(log_of({{0, 5}, {3, 6}, {0, 2}, {9, 1}}));
  const auto twice = filter_zero(once.log);
  EXPECT_EQ(twice.removed, 0u);
  EXPECT_EQ(twice.log.records.size(), once.log.records.size());
}

TEST(ScaleFactor, Arithmetic) {
  const auto log = log_of({{5, 300}, {7, 420}});
  EXPECT_NEAR(scale_factor(636.0, log), 636.0 / 360.0, 1e-12);
  EXPECT_DOUBLE_EQ(scale_factor(360.0, log), 1.0);
  EXPECT_THROW(scale_factor(636.0, TelemetryLog{}), DataError);
  EXPECT_EQ(scaled_ed_values(log, 2.0), (std::vector<double>{10.0, 14.0}));
}

TEST(ScaleFactor, CorpusMeanUsesCodePoints) {
  Corpus c{testutil::sample_commit()};
  c[0].nodes[0].text = "\xc3\xa9\xc3\xa9";  // two characters, four bytes
  c[0].nodes[3].text = "abcd";
  EXPECT_DOUBLE_EQ(mean_generated_length(c, {NodeSource::model}), 2.0);
  EXPECT_DOUBLE_EQ(mean_generated_length(c), 3.0);
}

TEST(Ks, Properties) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n1(400, 80), n2(420, 120);
  std::vector<double> a(300), b(200);
  for (auto& x : a) x = n1(rng);
  for (auto& x : b) x = n2(rng);
  EXPECT_EQ(ks_statistic(a, a), 0.0);
  EXPECT_DOUBLE_EQ(ks_statistic(a, b), ks_statistic(b, a));
  const double d = ks_statistic(a, b);
  EXPECT_GE(d, 0.0);
  EXPECT_LE(d, 1.0);
  EXPECT_EQ(ks_statistic({1, 2, 3}, {10, 11}), 1.0);
  // Scale consistency: scaling both samples by R leaves KS unchanged.
  std::vector<double> sa, sb;
  for (double x : a) sa.push_back(x * 1.77);
  for (double x : a) sb.push_back(x * 1.77);
  EXPECT_EQ(ks_statistic(sa, sb), 0.0);
}

TEST(Compare, IdenticalAndDisjoint) {
  const std::vector<double> x{10, 60, 60, 70, 200};
  const auto same = compare_distributions(x, x);
  EXPECT_EQ(same.ks, 0.0);
  EXPECT_EQ(same.corpus_peak, same.telemetry_peak);
  const auto apart = compare_distributions({1, 2, 3}, {500, 600});
  EXPECT_EQ(apart.ks, 1.0);
  EXPECT_EQ(apart.corpus_hist.size(), apart.telemetry_hist.size());
  EXPECT_EQ(apart.corpus_hist.front().lower, 0.0);
}

TEST(Compare, FixturePeakNearFourHundredAfterScaling) {
  const auto filtered = filter_zero(load_telemetry(testutil::fixture("telemetry.csv")));
  const double r = scale_factor(636.0, filtered.log);
  const auto scaled = scaled_ed_values(filtered.log, r);
  // Corpus side: a sample concentrated around 400.
  std::mt19937_64 rng(43);
  std::normal_distribution<double> around(410, 60);
  std::vector<double> corpus(200);
  for (auto& v : corpus) v = std::max(1.0, std::round(around(rng)));
  const auto cmp = compare_distributions(corpus, scaled, 50.0);
  EXPECT_LE(cmp.peak_distance_buckets(), 1.0) << cmp.corpus_peak << " vs " << cmp.telemetry_peak;
  EXPECT_NE(histogram_csv(cmp).find("bucket_lower"), std::string::npos);
  EXPECT_EQ(to_json(cmp)["buckets"].size(), cmp.corpus_hist.size());
}
