#pragma once

#include <memory>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "cmgeval/metrics.hpp"

namespace cmgeval {

/// Embedding provider behind an HTTP JSON endpoint:
///   POST <url> {"tokens": [...]}  ->  {"vectors": [[...], ...]}
class HttpEmbeddingProvider : public EmbeddingProvider {
 public:
  /// `base` is scheme://host[:port], `path` the endpoint path.
  HttpEmbeddingProvider(std::string base, std::string path, int timeout_sec = 30)
      : base_(std::move(base)), path_(std::move(path)), timeout_sec_(timeout_sec) {}

  /// Splits a full URL such as http://localhost:8080/embed.
  static HttpEmbeddingProvider from_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    if (scheme_end == std::string::npos) throw UsageError("embedding url needs a scheme: " + url);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const override {
    httplib::Client cli(base_);
    cli.set_connection_timeout(timeout_sec_);
    cli.set_read_timeout(timeout_sec_);
    const nlohmann::json body = {{"tokens", tokens}};
    auto res = cli.Post(path_, body.dump(), "application/json");
    if (!res) throw MetricUnavailable("embedding provider unreachable at " + base_ + path_ + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw MetricUnavailable("embedding provider returned HTTP " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      return j.at("vectors").get<std::vector<std::vector<double>>>();
    } catch (const nlohmann::json::exception& e) {
      throw MetricUnavailable(std::string("embedding provider sent malformed JSON: ") + e.what());
    }
  }

 private:
  std::string base_;
  std::string path_;
  int timeout_sec_;
};

}  // namespace cmgeval
