#pragma once

#include <cstdlib>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cmgeval/llm_client.hpp"

namespace cmgeval {

/// OpenAI-compatible chat-completions endpoint. The API key is read from the environment
/// variable named by `api_key_env` at construction.
class HttpChatClient : public LlmClient {
 public:
  HttpChatClient(std::string base_url, std::string path = "/v1/chat/completions",
                 std::string api_key_env = "CMGEVAL_LLM_API_KEY", int timeout_sec = 120)
      : base_(std::move(base_url)), path_(std::move(path)), timeout_sec_(timeout_sec) {
    if (const char* key = std::getenv(api_key_env.c_str())) api_key_ = key;
  }

  std::string complete(const ChatRequest& request) override {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_sec_);
    cli.set_read_timeout(timeout_sec_);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    const nlohmann::json body = {{"model", request.model},
                                 {"temperature", request.temperature},
                                 {"messages", {{{"role", "user"}, {"content", request.prompt}}}}};
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw LlmTransportError("LLM endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status == 429 || res->status >= 500)
      throw LlmTransportError("LLM endpoint returned HTTP " + std::to_string(res->status));
    if (res->status != 200) throw UpstreamError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw LlmTransportError(std::string("malformed LLM response: ") + e.what());
    }
  }

 private:
  std::string base_;
  std::string path_;
  std::string api_key_;
  int timeout_sec_;
};

}  // namespace cmgeval
