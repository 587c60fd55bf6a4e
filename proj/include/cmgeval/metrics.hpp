#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "cmgeval/error.hpp"
#include "cmgeval/textmetrics.hpp"

namespace cmgeval {

/// Supplies one embedding vector per token. Implementations throw MetricUnavailable when they
/// cannot answer.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& tokens) const = 0;
};

/// BERTScore-style F1: each token is greedily matched to its most cosine-similar token on the
/// other side; precision and recall are the mean best similarities (clamped to [0, 1]).
inline double embedding_score(std::string_view pred, std::string_view ref, const EmbeddingProvider* provider,
                              bool lowercase = false) {
  if (provider == nullptr) throw MetricUnavailable("embedding-score: no embedding provider configured");
  const auto p = tokenize(pred, lowercase);
  const auto r = tokenize(ref, lowercase);
  if (p.empty() && r.empty()) return 1.0;
  if (p.empty() || r.empty()) return 0.0;

  auto fetch = [&](const TokenSequence& toks) {
    auto vecs = provider->embed(toks);
    if (vecs.size() != toks.size())
      throw MetricUnavailable("embedding-score: provider returned " + std::to_string(vecs.size()) +
                              " vectors for " + std::to_string(toks.size()) + " tokens");
    for (auto& v : vecs) {
      double norm = 0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (!(norm > 0)) throw MetricUnavailable("embedding-score: provider returned a zero vector");
      for (double& x : v) x /= norm;
    }
    return vecs;
  };
  const auto pv = fetch(p);
  const auto rv = fetch(r);
  const std::size_t dim = pv.front().size();
  for (const auto* side : {&pv, &rv})
    for (const auto& v : *side)
      if (v.size() != dim) throw MetricUnavailable("embedding-score: inconsistent vector dimensions");

  std::vector<double> best_p(p.size(), 0.0), best_r(r.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      double cos = 0;
      for (std::size_t d = 0; d < dim; ++d) cos += pv[i][d] * rv[j][d];
      cos = std::clamp(cos, 0.0, 1.0);
      best_p[i] = std::max(best_p[i], cos);
      best_r[j] = std::max(best_r[j], cos);
    }
  }
  double prec = 0, rec = 0;
  for (double x : best_p) prec += x;
  for (double x : best_r) rec += x;
  prec /= p.size();
  rec /= r.size();
  return prec + rec > 0 ? std::min(1.0, 2 * prec * rec / (prec + rec)) : 0.0;
}

namespace detail {
inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}
}  // namespace detail

/// m(pred, ref) for any candidate metric.
inline double evaluate(const MetricDescriptor& m, std::string_view pred, std::string_view ref,
                       const EmbeddingProvider* provider = nullptr) {
  const auto& c = m.config;
  switch (m.name) {
    case MetricName::edit_distance:
      return c.normalize ? static_cast<double>(edit_distance(detail::ascii_lower(pred), detail::ascii_lower(ref)))
                         : static_cast<double>(edit_distance(pred, ref));
    case MetricName::edit_similarity:
      return c.normalize ? edit_similarity(detail::ascii_lower(pred), detail::ascii_lower(ref))
                         : edit_similarity(pred, ref);
    case MetricName::bleu:
      return bleu(pred, ref, c);
    case MetricName::rouge_1:
      return rouge_n(pred, ref, 1, c.lowercase);
    case MetricName::rouge_2:
      return rouge_n(pred, ref, 2, c.lowercase);
    case MetricName::rouge_l:
      return rouge_l(pred, ref, c.lowercase);
    case MetricName::meteor:
      return meteor(pred, ref, c.lowercase);
    case MetricName::chrf:
      return chrf(pred, ref, c);
    case MetricName::embedding_score:
      return embedding_score(pred, ref, provider, c.lowercase);
  }
  throw UsageError("unhandled metric");
}

}  // namespace cmgeval
