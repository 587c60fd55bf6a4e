#include <gtest/gtest.h>

#include <thread>

#include "cmgeval/annot_http.hpp"
#include "cmgeval/annotsvc.hpp"
#include "test_util.hpp"

using namespace cmgeval;
using namespace cmgeval::annot;

namespace {

Corpus corpus() { return load_corpus(testutil::fixture("small_corpus.jsonl")); }

ServiceOptions fixed_clock(std::string dir = {}) {
  ServiceOptions o;
  o.persist_dir = std::move(dir);
  o.root_seed = 99;
  o.clock = [] { return std::int64_t{1700000000000}; };
  return o;
}

EditEvent ev(std::int64_t i, std::size_t pos, std::size_t del, std::string ins) {
  return {i, 1000 + i, pos, del, std::move(ins)};
}

}  // namespace

TEST(Replay, AppliesEventsOverCodePoints) {
  const std::vector<EditEvent> events{ev(0, 0, 3, "Fixed"), ev(1, 5, 0, " \xc3\xa9"), ev(2, 7, 0, "!")};
  EXPECT_EQ(replay("Fix", events), "Fixed \xc3\xa9!");
  EXPECT_THROW(replay("abc", {ev(0, 2, 5, "")}), DataError);
  EXPECT_EQ(first_divergence("abc", "abd"), 2u);
  EXPECT_EQ(first_divergence("abc", "abc"), std::nullopt);
  EXPECT_EQ(first_divergence("ab", "abc"), 2u);
}

TEST(Service, EveryAnnotatorSeesEveryCommitInSeededOrder) {
  Service svc(corpus(), fixed_clock());
  const auto a = svc.create_session("ann-a", 5), b = svc.create_session("ann-b", 5), c = svc.create_session("ann-c", 6);
  EXPECT_EQ(a.task_order, b.task_order);
  EXPECT_NE(a.task_order, c.task_order);
  auto sorted = a.task_order;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted.size(), corpus().size());
  EXPECT_EQ(std::unique(sorted.begin(), sorted.end()), sorted.end());
  EXPECT_NE(a.session_id, b.session_id);
}

TEST(Service, EventBatchesAreContiguousAndIdempotent) {
  Service svc(corpus(), fixed_clock());
  const auto s = svc.create_session("ann");
  const auto task = *svc.next_task(s.session_id);
  EXPECT_EQ(svc.record_events(s.session_id, task.message_id, {}).accepted_through, -1);
  EXPECT_EQ(svc.record_events(s.session_id, task.message_id, {ev(0, 0, 0, "A"), ev(1, 1, 0, "B")}).accepted_through, 1);
  // Resending stored events plus a new one is accepted once.
  EXPECT_EQ(svc.record_events(s.session_id, task.message_id, {ev(1, 1, 0, "B"), ev(2, 0, 1, "")}).accepted_through, 2);
  // Gap: index 4 without 3.
  try {
    svc.record_events(s.session_id, task.message_id, {ev(4, 0, 0, "x")});
    FAIL();
  } catch (const EventRejected& e) {
    EXPECT_EQ(e.first_bad_index, 3);
  }
  // Out of range position rejects the whole batch, including the valid first event.
  try {
    svc.record_events(s.session_id, task.message_id, {ev(3, 0, 0, "x"), ev(4, 100000, 0, "y")});
    FAIL();
  } catch (const EventRejected& e) {
    EXPECT_EQ(e.first_bad_index, 4);
  }
  EXPECT_EQ(svc.record_events(s.session_id, task.message_id, {}).accepted_through, 2);
  // A resent index with different content is a conflict.
  EXPECT_THROW(svc.record_events(s.session_id, task.message_id, {ev(0, 0, 0, "Z")}), EventRejected);
}

TEST(Service, SubmitChecksReplayAndAdvances) {
  Service svc(corpus(), fixed_clock());
  const auto s = svc.create_session("ann");
  const auto task = *svc.next_task(s.session_id);
  const auto g = task.generated_message;
  svc.record_events(s.session_id, task.message_id, {ev(0, 0, 0, "[x] ")});
  try {
    svc.submit_edit(s.session_id, task.message_id, "[y] " + g);
    FAIL();
  } catch (const ReplayMismatch& e) {
    EXPECT_EQ(e.position, 1u);
  }
  const auto sub = svc.submit_edit(s.session_id, task.message_id, "[x] " + g);
  EXPECT_FALSE(sub.zero_edit);
  EXPECT_EQ(sub.node.source, NodeSource::expert);
  EXPECT_EQ(sub.edge.from_node, task.message_id);
  const auto next = svc.next_task(s.session_id);
  ASSERT_TRUE(next);
  EXPECT_NE(next->commit_id, task.commit_id);
}

TEST(Service, ZeroEditAndSkipAreRecorded) {
  Service svc(corpus(), fixed_clock());
  const auto s = svc.create_session("ann");
  auto task = *svc.next_task(s.session_id);
  EXPECT_TRUE(svc.submit_edit(s.session_id, task.message_id, task.generated_message).zero_edit);
  svc.skip(s.session_id);
  const auto bundle = svc.export_data();
  EXPECT_NE(bundle.skips_jsonl.find(s.task_order[1]), std::string::npos);
  EXPECT_EQ(bundle.corpus.size(), 1u);
}

TEST(Service, WrongMessageAndUnknownSession) {
  Service svc(corpus(), fixed_clock());
  const auto s = svc.create_session("ann");
  EXPECT_THROW(svc.record_events(s.session_id, "not-the-task", {}), DataError);
  EXPECT_THROW(svc.next_task("session-9999"), UnknownSession);
}

TEST(Service, FinishedSessionHasNoTask) {
  Corpus one{corpus().front()};
  Service svc(one, fixed_clock());
  const auto s = svc.create_session("ann");
  svc.skip(s.session_id);
  EXPECT_FALSE(svc.next_task(s.session_id));
  EXPECT_THROW(svc.skip(s.session_id), DataError);
}

TEST(Service, SuspiciousPasteFromSummary) {
  auto c = corpus();
  Corpus only{c.front()};  // the first fixture commit carries a summary
  ASSERT_TRUE(only[0].summary);
  Service svc(only, fixed_clock());
  const auto s = svc.create_session("ann");
  const auto task = *svc.next_task(s.session_id);
  const std::string pasted = only[0].summary->substr(0, 40);
  const std::string g = task.generated_message;
  svc.record_events(s.session_id, task.message_id, {ev(0, char_length(g), 0, pasted), ev(1, 0, 0, "ab")});
  const auto sub = svc.submit_edit(s.session_id, task.message_id, "ab" + g + pasted);
  EXPECT_EQ(sub.suspicious_events, (std::vector<std::int64_t>{0}));
}

TEST(Service, ExportAfterOneSubmissionHasOneEditedNode) {
  Service svc(corpus(), fixed_clock());
  const auto s = svc.create_session("ann");
  const auto task = *svc.next_task(s.session_id);
  svc.record_events(s.session_id, task.message_id, {ev(0, 0, 1, "")});
  svc.submit_edit(s.session_id, task.message_id, task.generated_message.substr(1));
  const auto bundle = svc.export_data();
  ASSERT_EQ(bundle.corpus.size(), 1u);
  std::size_t edited = 0;
  for (const auto& n : bundle.corpus[0].nodes) edited += n.kind == NodeKind::edited;
  EXPECT_EQ(edited, 1u);
  EXPECT_NO_THROW(validate(bundle.corpus));
  std::istringstream in(bundle.corpus_jsonl);
  EXPECT_EQ(parse_corpus(in).size(), 1u);
  EXPECT_NE(bundle.events_jsonl.find("\"event_index\":0"), std::string::npos);
}

TEST(Service, SurvivesRestart) {
  const auto dir = testutil::temp_dir("annot-restart");
  std::string sid, first_commit;
  {
    Service svc(corpus(), fixed_clock(dir.string()));
    const auto s = svc.create_session("ann", 3);
    sid = s.session_id;
    const auto task = *svc.next_task(sid);
    first_commit = task.commit_id;
    svc.record_events(sid, task.message_id, {ev(0, 0, 0, "X")});
    svc.submit_edit(sid, task.message_id, "X" + task.generated_message);
    const auto t2 = *svc.next_task(sid);
    svc.record_events(sid, t2.message_id, {ev(0, 0, 0, "Y"), ev(1, 1, 0, "Z")});
  }
  Service again(corpus(), fixed_clock(dir.string()));
  const auto s = again.session(sid);
  EXPECT_EQ(s.cursor, 1u);
  EXPECT_EQ(s.seed, 3u);
  const auto t2 = *again.next_task(sid);
  EXPECT_EQ(again.record_events(sid, t2.message_id, {}).accepted_through, 1);
  EXPECT_NO_THROW(again.submit_edit(sid, t2.message_id, "YZ" + t2.generated_message));
  const auto bundle = again.export_data();
  EXPECT_EQ(bundle.corpus.size(), 2u);
  // New sessions continue the numbering.
  EXPECT_NE(again.create_session("other").session_id, sid);
}

TEST(Service, ConcurrentSessionsStayIsolated) {
  Service svc(corpus(), fixed_clock());
  constexpr int kSessions = 8;
  std::vector<std::string> ids;
  for (int i = 0; i < kSessions; ++i) ids.push_back(svc.create_session("ann-" + std::to_string(i)).session_id);
  std::vector<std::thread> workers;
  std::atomic<int> failures{0};
  for (int i = 0; i < kSessions; ++i) {
    workers.emplace_back([&, i] {
      try {
        while (auto task = svc.next_task(ids[i])) {
          const std::string tag = "s" + std::to_string(i) + " ";
          for (std::size_t k = 0; k < tag.size(); ++k)
            svc.record_events(ids[i], task->message_id, {ev(static_cast<std::int64_t>(k), k, 0, tag.substr(k, 1))});
          svc.submit_edit(ids[i], task->message_id, tag + task->generated_message);
        }
      } catch (...) {
        ++failures;
      }
    });
  }
  for (auto& w : workers) w.join();
  EXPECT_EQ(failures.load(), 0);
  const auto bundle = svc.export_data();
  EXPECT_EQ(bundle.corpus.size(), corpus().size());
  for (const auto& rec : bundle.corpus) EXPECT_EQ(rec.edges.size(), static_cast<std::size_t>(kSessions));
}

TEST(Http, ScriptedClientRoundTrip) {
  Service svc(corpus(), fixed_clock());
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  server.start_background();
  httplib::Client cli("127.0.0.1", port);

  auto res = cli.Post("/sessions", R"({"annotator_id":"ann","seed":4})", "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 201);
  const auto sid = nlohmann::json::parse(res->body).at("session_id").get<std::string>();

  res = cli.Get("/sessions/" + sid + "/task");
  ASSERT_EQ(res->status, 200);
  const auto task = nlohmann::json::parse(res->body);
  EXPECT_FALSE(task.at("done").get<bool>());
  const auto mid = task.at("message_id").get<std::string>();
  const auto g = task.at("generated_message").get<std::string>();

  nlohmann::json batch{{"message_id", mid}, {"events", {to_json(ev(0, 0, 0, "Q"))}}};
  res = cli.Post("/sessions/" + sid + "/events", batch.dump(), "application/json");
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(nlohmann::json::parse(res->body).at("accepted_through"), 0);

  batch["events"] = {to_json(ev(2, 0, 0, "Q"))};
  res = cli.Post("/sessions/" + sid + "/events", batch.dump(), "application/json");
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(nlohmann::json::parse(res->body).at("first_bad_index"), 1);

  nlohmann::json wrong{{"message_id", mid}, {"final_text", g}};
  res = cli.Post("/sessions/" + sid + "/submit", wrong.dump(), "application/json");
  EXPECT_EQ(res->status, 409);
  EXPECT_EQ(nlohmann::json::parse(res->body).at("position"), 0);

  nlohmann::json ok{{"message_id", mid}, {"final_text", "Q" + g}};
  res = cli.Post("/sessions/" + sid + "/submit", ok.dump(), "application/json");
  ASSERT_EQ(res->status, 200);

  res = cli.Post("/sessions/" + sid + "/skip", "", "application/json");
  EXPECT_EQ(res->status, 200);

  res = cli.Get("/export");
  ASSERT_EQ(res->status, 200);
  const auto exp = nlohmann::json::parse(res->body);
  std::istringstream in(exp.at("corpus_jsonl").get<std::string>());
  const auto exported = parse_corpus(in);
  ASSERT_EQ(exported.size(), 1u);
  EXPECT_EQ(exported[0].edges.size(), 1u);

  EXPECT_EQ(cli.Get("/sessions/nope/task")->status, 404);
  EXPECT_EQ(cli.Post("/sessions", "{broken", "application/json")->status, 400);
  server.stop();
}

TEST(Http, PortConflictIsCleanError) {
  Service svc(corpus(), fixed_clock());
  HttpServer first(svc), second(svc);
  const int port = first.bind("127.0.0.1", 0);
  EXPECT_THROW(second.bind("127.0.0.1", port), UsageError);
}
