#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/error.hpp"
#include "cmgeval/hash.hpp"

namespace cmgeval {

/// Network-level or retryable provider failure; consumes one attempt.
class LlmTransportError : public UpstreamError {
 public:
  using UpstreamError::UpstreamError;
};

struct ChatRequest {
  std::string prompt;
  std::string prompt_hash;
  int attempt = 1;  // 1-based
  std::string model;
  double temperature = 0.0;

  nlohmann::json to_json() const { return {{"prompt", prompt}, {"model", model}, {"temperature", temperature}}; }
};

inline ChatRequest make_request(std::string prompt, int attempt, std::string model = {}, double temperature = 0.0) {
  ChatRequest r;
  r.prompt_hash = sha256_hex(prompt);
  r.prompt = std::move(prompt);
  r.attempt = attempt;
  r.model = std::move(model);
  r.temperature = temperature;
  return r;
}

/// Completion backend. Implementations must tolerate concurrent calls.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Returns the raw completion text; throws LlmTransportError for retryable failures.
  virtual std::string complete(const ChatRequest& request) = 0;
};

/// Deterministic stand-in driven by a callback.
class MockLlmClient : public LlmClient {
 public:
  using Responder = std::function<std::string(const ChatRequest&)>;
  explicit MockLlmClient(Responder responder) : responder_(std::move(responder)) {}

  std::string complete(const ChatRequest& request) override {
    calls_.fetch_add(1);
    return responder_(request);
  }
  std::size_t calls() const { return calls_.load(); }

 private:
  Responder responder_;
  std::atomic<std::size_t> calls_{0};
};

struct TranscriptEntry {
  std::string prompt_hash;
  int attempt = 1;
  nlohmann::json request;
  std::string response;
  std::string error;  // non-empty: the attempt failed in transport

  nlohmann::json to_json() const {
    nlohmann::json j = {{"prompt_hash", prompt_hash}, {"attempt", attempt}, {"request", request}};
    if (error.empty()) j["response"] = response;
    else j["error"] = error;
    return j;
  }
};

inline std::vector<TranscriptEntry> load_transcript(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open transcript '" + path + "'");
  std::vector<TranscriptEntry> out;
  std::map<std::string, int> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      TranscriptEntry e;
      e.prompt_hash = j.at("prompt_hash").get<std::string>();
      e.attempt = j.contains("attempt") ? j["attempt"].get<int>() : ++seen[e.prompt_hash];
      e.request = j.value("request", nlohmann::json::object());
      if (j.contains("error")) e.error = j["error"].get<std::string>();
      else e.response = j.at("response").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

/// Sorted by (prompt_hash, attempt) so the file does not depend on worker scheduling.
inline void save_transcript(std::vector<TranscriptEntry> entries, const std::string& path) {
  std::sort(entries.begin(), entries.end(), [](const TranscriptEntry& a, const TranscriptEntry& b) {
    return std::tie(a.prompt_hash, a.attempt) < std::tie(b.prompt_hash, b.attempt);
  });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write transcript '" + path + "'");
  for (const auto& e : entries) out << e.to_json().dump() << '\n';
}

/// Answers from a recorded transcript, keyed by (prompt hash, attempt).
class ReplayLlmClient : public LlmClient {
 public:
  explicit ReplayLlmClient(const std::vector<TranscriptEntry>& entries) {
    for (const auto& e : entries) entries_[{e.prompt_hash, e.attempt}] = e;
  }
  explicit ReplayLlmClient(const std::string& path) : ReplayLlmClient(load_transcript(path)) {}

  std::string complete(const ChatRequest& request) override {
    auto it = entries_.find({request.prompt_hash, request.attempt});
    if (it == entries_.end()) {
      throw UpstreamError("transcript has no entry for prompt " + request.prompt_hash.substr(0, 12) + " attempt " +
                          std::to_string(request.attempt));
    }
    if (!it->second.error.empty()) throw LlmTransportError(it->second.error);
    return it->second.response;
  }

 private:
  std::map<std::pair<std::string, int>, TranscriptEntry> entries_;
};

/// Wraps a live client and keeps every exchange for later replay.
class RecordingLlmClient : public LlmClient {
 public:
  explicit RecordingLlmClient(LlmClient& inner) : inner_(inner) {}

  std::string complete(const ChatRequest& request) override {
    TranscriptEntry e{request.prompt_hash, request.attempt, request.to_json(), {}, {}};
    try {
      e.response = inner_.complete(request);
    } catch (const LlmTransportError& ex) {
      e.error = ex.what();
      append(std::move(e));
      throw;
    }
    std::string response = e.response;
    append(std::move(e));
    return response;
  }

  std::vector<TranscriptEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  void append(TranscriptEntry e) {
    std::lock_guard lock(mu_);
    entries_.push_back(std::move(e));
  }

  LlmClient& inner_;
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
};

}  // namespace cmgeval
