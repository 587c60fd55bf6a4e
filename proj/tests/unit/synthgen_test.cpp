#include <gtest/gtest.h>

#include <random>

#include "cmgeval/synthgen.hpp"
#include "oracles/counting_oracles.hpp"
#include "test_util.hpp"

using namespace cmgeval;

namespace {

std::string target_of(const ChatRequest& r) {
  const auto open = r.prompt.rfind("<<<\n");
  const auto close = r.prompt.rfind("\n>>>");
  return r.prompt.substr(open + 4, close - open - 4);
}

std::vector<IclExample> some_icl(std::size_t n) {
  std::vector<IclExample> v;
  for (std::size_t i = 0; i < n; ++i) v.push_back({"in " + std::to_string(i), "out " + std::to_string(i), "other"});
  return v;
}

}  // namespace

TEST(Filters, KnownFractions) {
  // LCS("fix bug", "fix bug in parser") = 7 of 17 output characters.
  EXPECT_DOUBLE_EQ(added_fraction("fix bug", "fix bug in parser"), 10.0 / 17.0);
  EXPECT_DOUBLE_EQ(removed_fraction("fix bug in parser", "fix bug"), 10.0 / 17.0);
  EXPECT_DOUBLE_EQ(added_fraction("same", "same"), 0.0);
  EXPECT_THROW(added_fraction("x", ""), DataError);
  EXPECT_THROW(removed_fraction("", "x"), DataError);
}

TEST(Filters, LcsMatchesExhaustiveOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 300; ++t) {
    const auto a = testutil::random_word(rng, "abc", 12), b = testutil::random_word(rng, "abc", 12);
    ASSERT_EQ(lcs_chars(a, b), oracle::exhaustive_lcs(a, b)) << a << " " << b;
  }
}

TEST(Filters, DualityAndMonotonicity) {
  std::mt19937_64 rng(37);
  for (int t = 0; t < 300; ++t) {
    const auto a = testutil::random_message(rng, 6), b = testutil::random_message(rng, 6);
    ASSERT_DOUBLE_EQ(added_fraction(a, b), removed_fraction(b, a));
    for (auto d : {Direction::backward, Direction::forward}) {
      bool passed = false;
      for (int k = 0; k <= 20; ++k) {
        const bool p = passes_filter(d, a, b, k / 20.0);
        ASSERT_TRUE(!passed || p);
        passed = p;
      }
    }
  }
}

TEST(Prompt, LayoutAndDeterminism) {
  const auto zero = build_prompt(Direction::backward, {}, "Target message");
  EXPECT_EQ(zero.find("Example"), std::string::npos);
  EXPECT_NE(zero.find("Target message"), std::string::npos);
  const auto full = build_prompt(Direction::forward, some_icl(15), "T");
  EXPECT_NE(full.find("Example 15\n"), std::string::npos);
  EXPECT_EQ(full.find("Example 16"), std::string::npos);
  EXPECT_EQ(full, build_prompt(Direction::forward, some_icl(15), "T"));
  EXPECT_NE(build_prompt(Direction::backward, some_icl(2), "T"), build_prompt(Direction::forward, some_icl(2), "T"));
}

TEST(Prompt, CleanResponse) {
  EXPECT_EQ(clean_response("  <<<\nFix bug\n>>>  "), "Fix bug");
  EXPECT_EQ(clean_response("\nFix bug\n"), "Fix bug");
}

TEST(Backward, EchoAcceptedWithZeroAddition) {
  const auto rec = testutil::sample_commit();
  MockLlmClient echo([](const ChatRequest& r) { return target_of(r); });
  const auto out = generate_backward(echo, rec, "e0", some_icl(3));
  ASSERT_TRUE(std::holds_alternative<Accepted>(out));
  const auto& acc = std::get<Accepted>(out);
  EXPECT_EQ(acc.text, "Fix parser crash");
  EXPECT_EQ(acc.provenance.fraction, 0.0);
  EXPECT_EQ(acc.provenance.attempt, 1);
  EXPECT_EQ(echo.calls(), 1u);
}

TEST(Backward, LongAdditionRejectedAfterBudget) {
  const auto rec = testutil::sample_commit();
  MockLlmClient padder([](const ChatRequest& r) {
    const auto t = target_of(r);
    return t + std::string(2 * t.size(), 'z');
  });
  const auto out = generate_backward(padder, rec, "e0", {});
  ASSERT_TRUE(std::holds_alternative<Rejection>(out));
  const auto& rej = std::get<Rejection>(out);
  EXPECT_EQ(rej.attempts.size(), 3u);
  EXPECT_GT(*rej.attempts[0].fraction, 0.5);
  EXPECT_EQ(padder.calls(), 3u);
}

TEST(Forward, EchoAcceptedSingleCharRejected) {
  auto rec = testutil::sample_commit();
  rec.nodes[0].text = std::string(200, 'g');
  MockLlmClient echo([](const ChatRequest& r) { return target_of(r); });
  EXPECT_TRUE(std::holds_alternative<Accepted>(generate_forward(echo, rec, "g0", {})));
  MockLlmClient tiny([](const ChatRequest&) { return "g"; });
  const auto out = generate_forward(tiny, rec, "g0", {});
  ASSERT_TRUE(std::holds_alternative<Rejection>(out));
  EXPECT_EQ(tiny.calls(), 3u);
}

TEST(Generation, SecondAttemptCanSucceed) {
  const auto rec = testutil::sample_commit();
  MockLlmClient flaky([](const ChatRequest& r) {
    if (r.attempt == 1) return std::string(100, 'q');
    return target_of(r);
  });
  const auto out = generate_backward(flaky, rec, "e0", {});
  ASSERT_TRUE(std::holds_alternative<Accepted>(out));
  EXPECT_EQ(std::get<Accepted>(out).provenance.attempt, 2);
}

TEST(Generation, TransportErrorsUseBudgetThenSurface) {
  const auto rec = testutil::sample_commit();
  MockLlmClient down([](const ChatRequest&) -> std::string { throw LlmTransportError("503"); });
  EXPECT_THROW(generate_backward(down, rec, "e0", {}, 0.5, 2), UpstreamError);
  EXPECT_EQ(down.calls(), 2u);

  MockLlmClient recovers([](const ChatRequest& r) -> std::string {
    if (r.attempt == 1) throw LlmTransportError("timeout");
    return target_of(r);
  });
  EXPECT_TRUE(std::holds_alternative<Accepted>(generate_backward(recovers, rec, "e0", {})));
}

TEST(Generation, InputValidation) {
  const auto rec = testutil::sample_commit();
  MockLlmClient echo([](const ChatRequest& r) { return target_of(r); });
  EXPECT_THROW(generate_backward(echo, rec, "g0", {}), DataError);  // not an edited node
  EXPECT_THROW(generate_forward(echo, rec, "e0", {}), DataError);
  EXPECT_THROW(generate_backward(echo, rec, "e0", {}, 0.5, 0), UsageError);
  auto icl = some_icl(1);
  icl[0].commit_id = rec.commit_id;
  EXPECT_THROW(generate_backward(echo, rec, "e0", icl), DataError);
}

TEST(Extend, EchoAcceptsEverythingAndValidates) {
  const auto corpus = load_corpus(testutil::fixture("small_corpus.jsonl"));
  MockLlmClient echo([](const ChatRequest& r) { return target_of(r); });
  ExtendConfig cfg;
  cfg.icl_examples = 4;
  cfg.parallelism = 4;
  const auto res = extend_corpus(corpus, cfg, echo);
  EXPECT_EQ(res.rejected.size(), 0u);
  EXPECT_EQ(res.accepted.size(), 14u);  // one per expert edit
  EXPECT_NO_THROW(validate(res.corpus));
  for (const auto& p : res.accepted)
    for (const auto& c : p.icl_commits) EXPECT_NE(c, p.commit_id);
}

TEST(Extend, ForwardFromSourceFilter) {
  const auto corpus = load_corpus(testutil::fixture("small_corpus.jsonl"));
  MockLlmClient echo([](const ChatRequest& r) { return target_of(r); });
  ExtendConfig cfg;
  cfg.direction = Direction::forward;
  cfg.threshold = kDefaultForwardThreshold;
  cfg.icl_examples = 2;
  cfg.forward_from = {NodeSource::model};
  const auto res = extend_corpus(corpus, cfg, echo);
  EXPECT_EQ(res.accepted.size(), corpus.size());
  cfg.samples_per_node = 2;
  EXPECT_EQ(extend_corpus(corpus, cfg, echo).accepted.size(), 2 * corpus.size());
}

TEST(Extend, AttemptBudgetPerJob) {
  const auto corpus = load_corpus(testutil::fixture("small_corpus.jsonl"));
  MockLlmClient never([](const ChatRequest&) { return std::string(500, 'x'); });
  ExtendConfig cfg;
  cfg.attempts = 2;
  cfg.icl_examples = 1;
  const auto res = extend_corpus(corpus, cfg, never);
  EXPECT_EQ(res.rejected.size(), 14u);
  EXPECT_EQ(never.calls(), 14u * 2u);
  cfg.attempts = 0;
  EXPECT_THROW(extend_corpus(corpus, cfg, never), UsageError);
}

TEST(Extend, SeedControlsIclDraws) {
  const auto corpus = load_corpus(testutil::fixture("small_corpus.jsonl"));
  MockLlmClient echo([](const ChatRequest& r) { return target_of(r); });
  ExtendConfig cfg;
  cfg.icl_examples = 3;
  cfg.seed = 1;
  const auto a = extend_corpus(corpus, cfg, echo), b = extend_corpus(corpus, cfg, echo);
  cfg.seed = 2;
  const auto c = extend_corpus(corpus, cfg, echo);
  EXPECT_EQ(a.accepted[0].prompt_hash, b.accepted[0].prompt_hash);
  bool differs = false;
  for (std::size_t i = 0; i < a.accepted.size(); ++i) differs |= a.accepted[i].prompt_hash != c.accepted[i].prompt_hash;
  EXPECT_TRUE(differs);
}

TEST(Replay, TranscriptReproducesAcceptedNodesBitExactly) {
  const auto corpus = load_corpus(testutil::fixture("small_corpus.jsonl"));
  MockLlmClient live([](const ChatRequest& r) {
    // Deterministic but attempt-dependent: the first attempt pads too much.
    const auto t = target_of(r);
    return r.attempt == 1 ? t + std::string(t.size() * 2, '!') : "<<<\n" + t + " now\n>>>";
  });
  RecordingLlmClient rec(live);
  ExtendConfig cfg;
  cfg.icl_examples = 3;
  cfg.parallelism = 3;
  const auto first = extend_corpus(corpus, cfg, rec);
  const auto dir = testutil::temp_dir("replay");
  save_transcript(rec.entries(), (dir / "t.jsonl").string());

  ReplayLlmClient replay(load_transcript((dir / "t.jsonl").string()));
  const auto second = extend_corpus(corpus, cfg, replay);
  EXPECT_EQ(serialize_corpus(first.corpus), serialize_corpus(second.corpus));
  ASSERT_EQ(first.accepted.size(), second.accepted.size());
  for (std::size_t i = 0; i < first.accepted.size(); ++i) {
    const auto& p = second.accepted[i];
    const auto& r = *std::find_if(second.corpus.begin(), second.corpus.end(),
                                  [&](const CommitRecord& c) { return c.commit_id == p.commit_id; });
    EXPECT_TRUE(replay_matches(p, r.find_node(p.input_node)->text, r.find_node(second.accepted_node_ids[i])->text));
  }
}

TEST(Replay, MissingEntryIsUpstreamError) {
  ReplayLlmClient empty(std::vector<TranscriptEntry>{});
  EXPECT_THROW(empty.complete(make_request("p", 1)), UpstreamError);
}

TEST(Replay, TamperedResponseFailsCheck) {
  Provenance p;
  p.direction = Direction::backward;
  p.raw_response = "Fix parser crash";
  p.fraction = 0.0;
  p.threshold = 0.5;
  EXPECT_TRUE(replay_matches(p, "Fix parser crash", "Fix parser crash"));
  EXPECT_FALSE(replay_matches(p, "Fix parser crash", "Fix parser crash!"));
}
