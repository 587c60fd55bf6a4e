#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <utility>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/corpus.hpp"
#include "cmgeval/random.hpp"
#include "cmgeval/unicode.hpp"

namespace cmgeval::annot {

/// One editor change. Offsets count Unicode code points.
struct EditEvent {
  std::int64_t event_index = 0;
  std::int64_t timestamp = 0;  // ms since epoch
  std::size_t position = 0;
  std::size_t deleted_len = 0;
  std::string inserted_text;

  bool operator==(const EditEvent&) const = default;
};

inline nlohmann::json to_json(const EditEvent& e) {
  return {{"event_index", e.event_index},
          {"timestamp", e.timestamp},
          {"position", e.position},
          {"deleted_len", e.deleted_len},
          {"inserted_text", e.inserted_text}};
}

inline EditEvent event_from_json(const nlohmann::json& j) {
  try {
    EditEvent e;
    e.event_index = j.at("event_index").get<std::int64_t>();
    e.timestamp = j.value("timestamp", std::int64_t{0});
    const auto pos = j.at("position").get<std::int64_t>();
    const auto del = j.value("deleted_len", std::int64_t{0});
    if (pos < 0 || del < 0) throw DataError("event " + std::to_string(e.event_index) + ": negative offset");
    e.position = static_cast<std::size_t>(pos);
    e.deleted_len = static_cast<std::size_t>(del);
    e.inserted_text = j.value("inserted_text", std::string{});
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw DataError(std::string("malformed edit event: ") + ex.what());
  }
}

class UnknownSession : public DataError {
 public:
  using DataError::DataError;
};

class EventRejected : public DataError {
 public:
  EventRejected(std::int64_t first_bad_index, const std::string& what)
      : DataError(what), first_bad_index(first_bad_index) {}
  std::int64_t first_bad_index;
};

class ReplayMismatch : public DataError {
 public:
  ReplayMismatch(std::size_t position, const std::string& what) : DataError(what), position(position) {}
  std::size_t position;
};

/// Applies one event in place; throws DataError when it reaches past the text.
inline void apply_event(std::u32string& text, const EditEvent& e) {
  if (e.position > text.size() || e.deleted_len > text.size() - e.position) {
    throw DataError("event " + std::to_string(e.event_index) + " edits [" + std::to_string(e.position) + ", " +
                    std::to_string(e.position + e.deleted_len) + ") of a " + std::to_string(text.size()) +
                    "-character text");
  }
  text.replace(e.position, e.deleted_len, utf8_decode(e.inserted_text));
}

inline std::string replay(std::string_view start, const std::vector<EditEvent>& events) {
  auto text = utf8_decode(start);
  for (const auto& e : events) apply_event(text, e);
  return utf8_encode(text);
}

/// Code-point offset of the first difference, or nullopt when equal.
inline std::optional<std::size_t> first_divergence(std::string_view a, std::string_view b) {
  const auto ua = utf8_decode(a), ub = utf8_decode(b);
  const std::size_t n = std::min(ua.size(), ub.size());
  for (std::size_t i = 0; i < n; ++i)
    if (ua[i] != ub[i]) return i;
  if (ua.size() != ub.size()) return n;
  return std::nullopt;
}

struct Session {
  std::string session_id;
  std::string annotator_id;
  std::uint64_t seed = 0;
  std::vector<std::string> task_order;  // commit ids
  std::size_t cursor = 0;
  std::int64_t started_at = 0;
};

struct Task {
  std::string commit_id;
  std::string message_id;
  std::string diff;
  std::optional<std::string> summary;
  std::string generated_message;
  std::string help;
};

struct Ack {
  std::int64_t accepted_through = -1;  // index of the last stored event, -1 when none
};

struct Submission {
  std::string session_id;
  std::string annotator_id;
  std::string commit_id;
  MessageNode node;
  DerivationEdge edge;
  bool zero_edit = false;
  std::vector<std::int64_t> suspicious_events;  // large insertions copied from the summary
};

struct Skip {
  std::string session_id;
  std::string commit_id;
};

struct ExportBundle {
  Corpus corpus;
  std::string corpus_jsonl;
  std::string events_jsonl;
  std::string skips_jsonl;
};

inline const char* kDefaultHelp =
    "Edit the commit message so that it is good enough to publish to version control. "
    "Do not copy text from the commit summary.";

struct ServiceOptions {
  /// Directory for the append-only logs; empty keeps everything in memory.
  std::string persist_dir;
  std::uint64_t root_seed = 0;
  std::function<std::int64_t()> clock = [] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
  std::string help = kDefaultHelp;
  /// Insertions at least this long that occur verbatim in the summary are flagged.
  std::size_t paste_flag_min_chars = 20;
};

namespace detail {

/// Append-only JSONL file; every line is fsync'ed before the call returns.
class AppendLog {
 public:
  AppendLog() = default;
  explicit AppendLog(const std::filesystem::path& path) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open log '" + path.string() + "'");
  }
  AppendLog(const AppendLog&) = delete;
  AppendLog& operator=(const AppendLog&) = delete;
  AppendLog(AppendLog&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  AppendLog& operator=(AppendLog&& o) noexcept {
    std::swap(fd_, o.fd_);
    return *this;
  }
  ~AppendLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  bool open() const { return fd_ >= 0; }

  void append(const nlohmann::json& j) {
    if (fd_ < 0) return;
    const std::string line = j.dump() + "\n";
    std::size_t off = 0;
    while (off < line.size()) {
      const auto n = ::write(fd_, line.data() + off, line.size() - off);
      if (n < 0) throw Error("log write failed");
      off += static_cast<std::size_t>(n);
    }
    ::fsync(fd_);
  }

 private:
  int fd_ = -1;
};

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::vector<nlohmann::json> out;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception&) {
      break;  // torn final line after a crash
    }
  }
  return out;
}

inline std::string iso_time(std::int64_t ms) {
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace detail

/// Labeling sessions over a fixed corpus. Every annotator gets the same commits in a seeded
/// order; edits arrive as event batches and a submission is accepted only if replaying the
/// stored events over the generated message reproduces it exactly.
class Service {
 public:
  explicit Service(Corpus corpus, ServiceOptions opt = {}) : corpus_(std::move(corpus)), opt_(std::move(opt)) {
    for (std::size_t i = 0; i < corpus_.size(); ++i) {
      const auto& rec = corpus_[i];
      const MessageNode* msg = nullptr;
      for (const auto& n : rec.nodes) {
        if (n.kind != NodeKind::generated) continue;
        if (!msg || (n.source == NodeSource::model && msg->source != NodeSource::model)) msg = &n;
      }
      if (msg) task_message_[rec.commit_id] = {i, msg->node_id};
      if (msg) eligible_.push_back(rec.commit_id);
    }
    if (eligible_.empty()) throw DataError("annotation corpus has no commit with a generated message");
    if (!opt_.persist_dir.empty()) restore();
  }

  const Corpus& corpus() const { return corpus_; }

  Session create_session(const std::string& annotator_id, std::optional<std::uint64_t> seed = std::nullopt) {
    std::unique_lock lock(map_mu_);
    auto st = std::make_shared<SessionState>();
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "session-%04zu", sessions_.size() + 1);
    st->session.session_id = idbuf;
    st->session.annotator_id = annotator_id;
    st->session.seed = seed.value_or(derive_rng(opt_.root_seed, sessions_.size() + 1)());
    st->session.task_order = eligible_;
    auto rng = derive_rng(st->session.seed, 0);
    fisher_yates(std::span<std::string>(st->session.task_order), rng);
    st->session.started_at = opt_.clock();
    open_event_log(*st);
    append_session_log({{"type", "session"},
                          {"session_id", st->session.session_id},
                          {"annotator_id", annotator_id},
                          {"seed", st->session.seed},
                          {"started_at", st->session.started_at}});
    sessions_.emplace(st->session.session_id, st);
    order_.push_back(st->session.session_id);
    return st->session;
  }

  Session session(const std::string& id) const {
    auto st = find(id);
    std::lock_guard lock(st->mu);
    return st->session;
  }

  std::optional<Task> next_task(const std::string& session_id) const {
    auto st = find(session_id);
    std::lock_guard lock(st->mu);
    if (st->session.cursor >= st->session.task_order.size()) return std::nullopt;
    const auto& cid = st->session.task_order[st->session.cursor];
    const auto& [idx, mid] = task_message_.at(cid);
    const auto& rec = corpus_[idx];
    return Task{cid, mid, rec.diff, rec.summary, rec.find_node(mid)->text, opt_.help};
  }

  Ack record_events(const std::string& session_id, const std::string& message_id, const std::vector<EditEvent>& events) {
    auto st = find(session_id);
    std::lock_guard lock(st->mu);
    auto& log = current_log(*st, message_id);
    const auto stored = static_cast<std::int64_t>(log.events.size());

    // Validate the whole batch before touching state.
    std::u32string text = log.text;
    std::vector<const EditEvent*> fresh;
    std::int64_t expected = stored;
    for (const auto& e : events) {
      if (e.event_index < stored) {
        if (log.events[static_cast<std::size_t>(e.event_index)] != e)
          throw EventRejected(e.event_index, "event " + std::to_string(e.event_index) + " differs from the stored one");
        continue;
      }
      if (e.event_index != expected) {
        throw EventRejected(expected, "expected event index " + std::to_string(expected) + ", got " +
                                          std::to_string(e.event_index));
      }
      try {
        apply_event(text, e);
      } catch (const DataError& ex) {
        throw EventRejected(e.event_index, ex.what());
      }
      fresh.push_back(&e);
      ++expected;
    }
    for (const auto* e : fresh) {
      auto j = to_json(*e);
      j["commit_id"] = log.commit_id;
      j["message_id"] = message_id;
      st->event_log.append(j);
      log.events.push_back(*e);
    }
    log.text = std::move(text);
    return Ack{static_cast<std::int64_t>(log.events.size()) - 1};
  }

  Submission submit_edit(const std::string& session_id, const std::string& message_id, const std::string& final_text) {
    auto st = find(session_id);
    std::lock_guard lock(st->mu);
    auto& log = current_log(*st, message_id);
    const std::string replayed = utf8_encode(log.text);
    if (auto pos = first_divergence(replayed, final_text)) {
      throw ReplayMismatch(*pos, "submitted text diverges from the event replay at character " + std::to_string(*pos));
    }
    if (final_text.empty()) throw DataError("submitted message is empty");
    const auto& [idx, mid] = task_message_.at(log.commit_id);
    const auto& rec = corpus_[idx];

    Submission sub;
    sub.session_id = session_id;
    sub.annotator_id = st->session.annotator_id;
    sub.commit_id = log.commit_id;
    sub.node = {message_id + "~exp-" + session_id, NodeKind::edited, NodeSource::expert, final_text,
                detail::iso_time(opt_.clock())};
    sub.edge = {message_id, sub.node.node_id, DerivationMethod::human_edit};
    sub.zero_edit = final_text == rec.find_node(mid)->text;
    if (rec.summary) {
      for (const auto& e : log.events)
        if (char_length(e.inserted_text) >= opt_.paste_flag_min_chars && rec.summary->find(e.inserted_text) != std::string::npos)
          sub.suspicious_events.push_back(e.event_index);
    }
    record_submission(*st, sub, true);
    return sub;
  }

  /// Moves past the current commit without an edit; the skip is recorded.
  void skip(const std::string& session_id) {
    auto st = find(session_id);
    std::lock_guard lock(st->mu);
    if (st->session.cursor >= st->session.task_order.size()) throw DataError("session already finished");
    Skip s{session_id, st->session.task_order[st->session.cursor]};
    append_session_log({{"type", "skip"}, {"session_id", session_id}, {"commit_id", s.commit_id}});
    st->skips.push_back(s);
    ++st->session.cursor;
  }

  ExportBundle export_data() const {
    std::vector<std::shared_ptr<SessionState>> states;
    {
      std::shared_lock lock(map_mu_);
      for (const auto& id : order_) states.push_back(sessions_.at(id));
    }
    std::map<std::string, std::vector<Submission>> by_commit;
    ExportBundle out;
    for (const auto& st : states) {
      std::lock_guard lock(st->mu);
      for (const auto& sub : st->submissions) by_commit[sub.commit_id].push_back(sub);
      for (const auto& [cid, log] : st->logs) {
        for (const auto& e : log.events) {
          auto j = to_json(e);
          j["session_id"] = st->session.session_id;
          j["annotator_id"] = st->session.annotator_id;
          j["commit_id"] = cid;
          j["message_id"] = log.message_id;
          out.events_jsonl += j.dump() + "\n";
        }
      }
      for (const auto& s : st->skips)
        out.skips_jsonl += nlohmann::json{{"session_id", s.session_id}, {"commit_id", s.commit_id}}.dump() + "\n";
    }
    for (const auto& rec : corpus_) {
      auto it = by_commit.find(rec.commit_id);
      if (it == by_commit.end()) continue;
      CommitRecord r{rec.commit_id, rec.diff, rec.original_message, rec.summary, {}, {}};
      r.nodes.push_back(*rec.find_node(task_message_.at(rec.commit_id).second));
      for (const auto& sub : it->second) {
        r.nodes.push_back(sub.node);
        r.edges.push_back(sub.edge);
      }
      out.corpus.push_back(std::move(r));
    }
    out.corpus_jsonl = serialize_corpus(out.corpus);
    return out;
  }

 private:
  struct MessageLog {
    std::string commit_id;
    std::string message_id;
    std::vector<EditEvent> events;
    std::u32string text;  // replay of `events` over the generated message
  };

  struct SessionState {
    mutable std::mutex mu;
    Session session;
    std::map<std::string, MessageLog> logs;  // by commit id
    std::vector<Submission> submissions;
    std::vector<Skip> skips;
    detail::AppendLog event_log;
  };

  std::shared_ptr<SessionState> find(const std::string& id) const {
    std::shared_lock lock(map_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw UnknownSession("unknown session '" + id + "'");
    return it->second;
  }

  MessageLog& current_log(SessionState& st, const std::string& message_id) {
    if (st.session.cursor >= st.session.task_order.size()) throw DataError("session has no open task");
    const auto& cid = st.session.task_order[st.session.cursor];
    const auto& [idx, mid] = task_message_.at(cid);
    if (message_id != mid) throw DataError("message '" + message_id + "' is not the current task (expected '" + mid + "')");
    auto [it, fresh] = st.logs.try_emplace(cid);
    if (fresh) {
      it->second.commit_id = cid;
      it->second.message_id = mid;
      it->second.text = utf8_decode(corpus_[idx].find_node(mid)->text);
    }
    return it->second;
  }

  void record_submission(SessionState& st, const Submission& sub, bool persist) {
    if (persist) {
      append_session_log({{"type", "submit"},
                            {"session_id", sub.session_id},
                            {"commit_id", sub.commit_id},
                            {"node_id", sub.node.node_id},
                            {"text", sub.node.text},
                            {"created_at", *sub.node.created_at},
                            {"zero_edit", sub.zero_edit},
                            {"suspicious_events", sub.suspicious_events}});
    }
    st.submissions.push_back(sub);
    ++st.session.cursor;
  }

  void append_session_log(const nlohmann::json& j) {
    std::lock_guard lock(log_mu_);
    sessions_log_.append(j);
  }

  void open_event_log(SessionState& st) {
    if (opt_.persist_dir.empty()) return;
    st.event_log = detail::AppendLog(std::filesystem::path(opt_.persist_dir) / ("events-" + st.session.session_id + ".jsonl"));
  }

  void restore() {
    namespace fs = std::filesystem;
    fs::create_directories(opt_.persist_dir);
    const auto sessions_path = fs::path(opt_.persist_dir) / "sessions.jsonl";
    for (const auto& j : detail::read_jsonl(sessions_path)) {
      const auto type = j.value("type", std::string{});
      if (type == "session") {
        auto st = std::make_shared<SessionState>();
        st->session.session_id = j.at("session_id").get<std::string>();
        st->session.annotator_id = j.at("annotator_id").get<std::string>();
        st->session.seed = j.at("seed").get<std::uint64_t>();
        st->session.started_at = j.value("started_at", std::int64_t{0});
        st->session.task_order = eligible_;
        auto rng = derive_rng(st->session.seed, 0);
        fisher_yates(std::span<std::string>(st->session.task_order), rng);
        for (const auto& ej : detail::read_jsonl(fs::path(opt_.persist_dir) / ("events-" + st->session.session_id + ".jsonl"))) {
          const auto cid = ej.at("commit_id").get<std::string>();
          auto [it, fresh] = st->logs.try_emplace(cid);
          auto& log = it->second;
          if (fresh) {
            const auto& [idx, mid] = task_message_.at(cid);
            log.commit_id = cid;
            log.message_id = mid;
            log.text = utf8_decode(corpus_[idx].find_node(mid)->text);
          }
          auto e = event_from_json(ej);
          if (e.event_index != static_cast<std::int64_t>(log.events.size())) continue;
          apply_event(log.text, e);
          log.events.push_back(std::move(e));
        }
        open_event_log(*st);
        sessions_.emplace(st->session.session_id, st);
        order_.push_back(st->session.session_id);
      } else if (type == "submit" || type == "skip") {
        auto st = sessions_.at(j.at("session_id").get<std::string>());
        const auto cid = j.at("commit_id").get<std::string>();
        if (type == "skip") {
          st->skips.push_back({st->session.session_id, cid});
          ++st->session.cursor;
          continue;
        }
        const auto& mid = task_message_.at(cid).second;
        Submission sub;
        sub.session_id = st->session.session_id;
        sub.annotator_id = st->session.annotator_id;
        sub.commit_id = cid;
        sub.node = {j.at("node_id").get<std::string>(), NodeKind::edited, NodeSource::expert,
                    j.at("text").get<std::string>(), j.at("created_at").get<std::string>()};
        sub.edge = {mid, sub.node.node_id, DerivationMethod::human_edit};
        sub.zero_edit = j.value("zero_edit", false);
        sub.suspicious_events = j.value("suspicious_events", std::vector<std::int64_t>{});
        record_submission(*st, sub, false);
      }
    }
    sessions_log_ = detail::AppendLog(sessions_path);
  }

  Corpus corpus_;
  ServiceOptions opt_;
  std::vector<std::string> eligible_;
  std::map<std::string, std::pair<std::size_t, std::string>> task_message_;  // commit -> (index, message id)
  mutable std::shared_mutex map_mu_;
  std::map<std::string, std::shared_ptr<SessionState>> sessions_;
  std::vector<std::string> order_;
  std::mutex log_mu_;
  detail::AppendLog sessions_log_;
};

}  // namespace cmgeval::annot
