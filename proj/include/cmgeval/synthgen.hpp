#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/corpus.hpp"
#include "cmgeval/llm_client.hpp"
#include "cmgeval/random.hpp"
#include "cmgeval/selection.hpp"
#include "cmgeval/textmetrics.hpp"
#include "cmgeval/unicode.hpp"

namespace cmgeval {

enum class Direction { backward, forward };

inline std::string to_string(Direction d) { return d == Direction::backward ? "backward" : "forward"; }
inline Direction parse_direction(std::string_view s) {
  if (s == "backward") return Direction::backward;
  if (s == "forward") return Direction::forward;
  throw UsageError("unknown direction '" + std::string(s) + "' (expected backward or forward)");
}

inline constexpr double kDefaultBackwardThreshold = 0.5;
inline constexpr double kDefaultForwardThreshold = 0.75;
inline constexpr int kDefaultAttempts = 3;
inline constexpr std::size_t kDefaultIclExamples = 15;

// ---------------------------------------------------------------------------
// Content-change filters

inline std::size_t lcs_chars(std::string_view a, std::string_view b) {
  return detail::lcs_length(utf8_decode(a), utf8_decode(b));
}

/// Share of `output` characters that are not part of a longest common subsequence with `input`.
inline double added_fraction(std::string_view input, std::string_view output) {
  const auto out_len = char_length(output);
  if (out_len == 0) throw DataError("added_fraction: empty output");
  return static_cast<double>(out_len - lcs_chars(input, output)) / static_cast<double>(out_len);
}

/// Share of `input` characters that did not survive into `output`.
inline double removed_fraction(std::string_view input, std::string_view output) {
  const auto in_len = char_length(input);
  if (in_len == 0) throw DataError("removed_fraction: empty input");
  return static_cast<double>(in_len - lcs_chars(input, output)) / static_cast<double>(in_len);
}

// ---------------------------------------------------------------------------
// Prompting

struct IclExample {
  std::string input;
  std::string output;
  std::string commit_id;
};

inline std::string build_prompt(Direction direction, const std::vector<IclExample>& icl, std::string_view target,
                                std::string_view commit_context = {}) {
  std::string p;
  if (direction == Direction::backward) {
    p += "A developer received a commit message written by an automatic commit message generator and edited it "
         "before committing. Given the edited message, write the message the generator most likely produced "
         "before the developer changed it. Answer with the commit message only.\n";
  } else {
    p += "A developer received a commit message written by an automatic commit message generator. Edit it the "
         "way the developer would before committing it to version control. Answer with the edited commit "
         "message only.\n";
  }
  for (std::size_t i = 0; i < icl.size(); ++i) {
    p += "\nExample " + std::to_string(i + 1) + "\nInput:\n<<<\n" + icl[i].input + "\n>>>\nOutput:\n<<<\n" +
         icl[i].output + "\n>>>\n";
  }
  if (!commit_context.empty()) {
    p += "\nCode changes of the target commit:\n<<<\n";
    p += commit_context;
    p += "\n>>>\n";
  }
  p += "\nInput:\n<<<\n";
  p += target;
  p += "\n>>>\nOutput:\n";
  return p;
}

/// Trims surrounding whitespace and an optional <<< >>> fence from a completion.
inline std::string clean_response(std::string_view raw) {
  auto trim = [](std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return std::string_view{};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  };
  auto s = trim(raw);
  if (s.starts_with("<<<")) s.remove_prefix(3);
  if (s.ends_with(">>>")) s.remove_suffix(3);
  return std::string(trim(s));
}

// ---------------------------------------------------------------------------
// Generation

struct GenerationJob {
  Direction direction = Direction::backward;
  std::string commit_id;
  std::string input_node;
  std::vector<IclExample> icl_examples;
  int max_attempts = kDefaultAttempts;
  double threshold = kDefaultBackwardThreshold;
  std::string model;
  double temperature = 0.0;
  bool include_diff = false;
};

struct Provenance {
  std::string commit_id;
  std::string input_node;
  Direction direction = Direction::backward;
  std::string prompt_hash;
  int attempt = 0;
  std::string raw_response;
  double fraction = 0.0;
  double threshold = 0.0;
  std::vector<std::string> icl_commits;

  nlohmann::json to_json() const {
    return {{"commit_id", commit_id}, {"input_node", input_node},     {"direction", to_string(direction)},
            {"prompt_hash", prompt_hash}, {"attempt", attempt},       {"raw_response", raw_response},
            {"fraction", fraction},   {"threshold", threshold},       {"icl_commits", icl_commits}};
  }
};

struct AttemptLog {
  int attempt = 0;
  std::optional<double> fraction;  // empty when the attempt failed in transport or was blank
  std::string error;
};

struct Accepted {
  std::string text;
  Provenance provenance;
};

struct Rejection {
  std::string commit_id;
  std::string input_node;
  Direction direction = Direction::backward;
  std::vector<AttemptLog> attempts;

  nlohmann::json to_json() const {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& x : attempts) {
      nlohmann::json j = {{"attempt", x.attempt}};
      if (x.fraction) j["fraction"] = *x.fraction;
      if (!x.error.empty()) j["error"] = x.error;
      a.push_back(std::move(j));
    }
    return {{"commit_id", commit_id}, {"input_node", input_node}, {"direction", to_string(direction)}, {"attempts", a}};
  }
};

using GenerationOutcome = std::variant<Accepted, Rejection>;

/// Fraction the acceptance filter compares against the threshold.
inline double filter_fraction(Direction d, std::string_view input, std::string_view candidate) {
  return d == Direction::backward ? added_fraction(input, candidate) : removed_fraction(input, candidate);
}

inline bool passes_filter(Direction d, std::string_view input, std::string_view candidate, double threshold) {
  return !candidate.empty() && filter_fraction(d, input, candidate) <= threshold;
}

/// Queries the client up to `max_attempts` times and keeps the first candidate whose content
/// change stays within the threshold. Transport failures use up attempts; if the final attempt
/// failed in transport the error is rethrown.
inline GenerationOutcome run_job(LlmClient& client, const GenerationJob& job, const CommitRecord& rec) {
  if (job.max_attempts < 1) throw UsageError("max_attempts must be >= 1");
  const auto* input = rec.find_node(job.input_node);
  if (!input) throw DataError("commit '" + rec.commit_id + "': unknown node '" + job.input_node + "'");
  const NodeKind want = job.direction == Direction::backward ? NodeKind::edited : NodeKind::generated;
  if (input->kind != want) {
    throw DataError("commit '" + rec.commit_id + "': " + to_string(job.direction) + " generation needs a " +
                    to_string(want) + " node, '" + job.input_node + "' is " + to_string(input->kind));
  }
  for (const auto& ex : job.icl_examples) {
    if (ex.commit_id == rec.commit_id) throw DataError("ICL example drawn from the target commit '" + rec.commit_id + "'");
  }

  const std::string prompt =
      build_prompt(job.direction, job.icl_examples, input->text, job.include_diff ? std::string_view(rec.diff) : "");
  Rejection rejection{rec.commit_id, job.input_node, job.direction, {}};
  std::string last_error;
  for (int attempt = 1; attempt <= job.max_attempts; ++attempt) {
    const auto request = make_request(prompt, attempt, job.model, job.temperature);
    std::string raw;
    try {
      raw = client.complete(request);
      last_error.clear();
    } catch (const LlmTransportError& e) {
      last_error = e.what();
      rejection.attempts.push_back({attempt, std::nullopt, last_error});
      continue;
    }
    const auto text = clean_response(raw);
    if (text.empty()) {
      rejection.attempts.push_back({attempt, std::nullopt, "empty completion"});
      continue;
    }
    const double fraction = filter_fraction(job.direction, input->text, text);
    if (fraction <= job.threshold) {
      Provenance prov{rec.commit_id, job.input_node, job.direction, request.prompt_hash, attempt, raw, fraction,
                      job.threshold, {}};
      for (const auto& ex : job.icl_examples) prov.icl_commits.push_back(ex.commit_id);
      return Accepted{text, std::move(prov)};
    }
    rejection.attempts.push_back({attempt, fraction, {}});
  }
  if (!last_error.empty()) {
    throw UpstreamError("commit '" + rec.commit_id + "' node '" + job.input_node + "': attempts exhausted, last error: " +
                        last_error);
  }
  return rejection;
}

/// Next free id derived from the input node id.
inline std::string fresh_node_id(const CommitRecord& rec, const std::string& input_node, Direction d) {
  const std::string base = input_node + (d == Direction::backward ? "~bwd" : "~fwd");
  for (int i = 1;; ++i) {
    std::string id = base + std::to_string(i);
    if (!rec.find_node(id)) return id;
  }
}

/// Adds the accepted message and its derivation edge to `rec`; returns the new node id.
inline std::string apply_outcome(CommitRecord& rec, const Accepted& acc) {
  const auto& prov = acc.provenance;
  const auto id = fresh_node_id(rec, prov.input_node, prov.direction);
  if (prov.direction == Direction::backward) {
    rec.nodes.push_back({id, NodeKind::generated, NodeSource::synthetic_backward, acc.text, std::nullopt});
    rec.edges.push_back({prov.input_node, id, DerivationMethod::llm_backward});
  } else {
    rec.nodes.push_back({id, NodeKind::edited, NodeSource::synthetic_forward, acc.text, std::nullopt});
    rec.edges.push_back({prov.input_node, id, DerivationMethod::llm_forward});
  }
  return id;
}

inline GenerationOutcome generate_backward(LlmClient& client, const CommitRecord& rec, const std::string& edited_node,
                                           std::vector<IclExample> icl, double threshold = kDefaultBackwardThreshold,
                                           int attempts = kDefaultAttempts) {
  GenerationJob job;
  job.direction = Direction::backward;
  job.commit_id = rec.commit_id;
  job.input_node = edited_node;
  job.icl_examples = std::move(icl);
  job.max_attempts = attempts;
  job.threshold = threshold;
  return run_job(client, job, rec);
}

inline GenerationOutcome generate_forward(LlmClient& client, const CommitRecord& rec, const std::string& generated_node,
                                          std::vector<IclExample> icl, double threshold = kDefaultForwardThreshold,
                                          int attempts = kDefaultAttempts) {
  GenerationJob job;
  job.direction = Direction::forward;
  job.commit_id = rec.commit_id;
  job.input_node = generated_node;
  job.icl_examples = std::move(icl);
  job.max_attempts = attempts;
  job.threshold = threshold;
  return run_job(client, job, rec);
}

// ---------------------------------------------------------------------------
// Corpus extension

struct ExtendConfig {
  Direction direction = Direction::backward;
  double threshold = kDefaultBackwardThreshold;
  int attempts = kDefaultAttempts;
  std::size_t icl_examples = kDefaultIclExamples;
  /// Independent jobs per input node, each with its own ICL draw.
  int samples_per_node = 1;
  std::uint64_t seed = 0;
  unsigned parallelism = 1;
  std::string model;
  double temperature = 0.0;
  bool include_diff = false;
  /// Forward only: generated sources to expand. Empty means all generated nodes.
  std::set<NodeSource> forward_from;

  void check() const {
    if (attempts < 1) throw UsageError("attempts must be >= 1");
    if (samples_per_node < 1) throw UsageError("samples per node must be >= 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
  }
};

struct ExtendResult {
  Corpus corpus;
  std::vector<Provenance> accepted;
  std::vector<std::string> accepted_node_ids;  // parallel to `accepted`
  std::vector<Rejection> rejected;
};

/// ICL pool: expert (human-edit) pairs, as (input, output) in the job's direction.
inline std::vector<IclExample> icl_pool(const Corpus& corpus, Direction d) {
  std::vector<IclExample> pool;
  for (const auto& rec : corpus) {
    for (const auto& e : rec.edges) {
      if (e.method != DerivationMethod::human_edit) continue;
      const auto& g = rec.find_node(e.from_node)->text;
      const auto& ed = rec.find_node(e.to_node)->text;
      if (d == Direction::backward) pool.push_back({ed, g, rec.commit_id});
      else pool.push_back({g, ed, rec.commit_id});
    }
  }
  return pool;
}

/// Builds the job list in corpus order with seeded ICL draws (one stream per job), runs it on a
/// bounded pool and applies accepted results in job order.
inline ExtendResult extend_corpus(const Corpus& corpus, const ExtendConfig& cfg, LlmClient& client) {
  cfg.check();
  const auto pool = icl_pool(corpus, cfg.direction);

  struct PendingJob {
    std::size_t commit_index;
    GenerationJob job;
  };
  std::vector<PendingJob> jobs;
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    const auto& rec = corpus[c];
    std::vector<std::size_t> others;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool[i].commit_id != rec.commit_id) others.push_back(i);
    for (const auto& n : rec.nodes) {
      const bool eligible = cfg.direction == Direction::backward
                                ? n.source == NodeSource::expert
                                : n.kind == NodeKind::generated && (cfg.forward_from.empty() || cfg.forward_from.contains(n.source));
      if (!eligible) continue;
      for (int s = 0; s < cfg.samples_per_node; ++s) {
        auto rng = derive_rng(cfg.seed, jobs.size());
        GenerationJob job{cfg.direction, rec.commit_id, n.node_id, {}, cfg.attempts, cfg.threshold, cfg.model,
                          cfg.temperature, cfg.include_diff};
        for (auto i : sample_without_replacement(others.size(), cfg.icl_examples, rng))
          job.icl_examples.push_back(pool[others[i]]);
        jobs.push_back({c, std::move(job)});
      }
    }
  }

  auto outcomes = detail::parallel_indexed<std::optional<GenerationOutcome>>(
      jobs.size(), std::max(1u, cfg.parallelism),
      [&](std::size_t i) -> std::optional<GenerationOutcome> { return run_job(client, jobs[i].job, corpus[jobs[i].commit_index]); });

  ExtendResult res{corpus, {}, {}, {}};
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& rec = res.corpus[jobs[i].commit_index];
    if (auto* acc = std::get_if<Accepted>(&*outcomes[i])) {
      res.accepted_node_ids.push_back(apply_outcome(rec, *acc));
      res.accepted.push_back(acc->provenance);
    } else {
      res.rejected.push_back(std::get<Rejection>(*outcomes[i]));
    }
  }
  for (const auto& rec : res.corpus) validate(rec);
  return res;
}

/// Re-derives the acceptance decision of an accepted node from its recorded raw response.
inline bool replay_matches(const Provenance& prov, std::string_view input_text, std::string_view stored_text) {
  const auto text = clean_response(prov.raw_response);
  if (text != stored_text) return false;
  const double f = filter_fraction(prov.direction, input_text, text);
  return f == prov.fraction && f <= prov.threshold;
}

}  // namespace cmgeval
