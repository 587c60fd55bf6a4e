#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/error.hpp"
#include "cmgeval/porter_stemmer.hpp"
#include "cmgeval/tokenize.hpp"
#include "cmgeval/unicode.hpp"

namespace cmgeval {

enum class MetricName { edit_distance, edit_similarity, bleu, rouge_1, rouge_2, rouge_l, meteor, chrf, embedding_score };
enum class Polarity { higher_better, lower_better };

NLOHMANN_JSON_SERIALIZE_ENUM(MetricName, {{MetricName::edit_distance, "edit-distance"},
                                          {MetricName::edit_similarity, "edit-similarity"},
                                          {MetricName::bleu, "bleu"},
                                          {MetricName::rouge_1, "rouge-1"},
                                          {MetricName::rouge_2, "rouge-2"},
                                          {MetricName::rouge_l, "rouge-l"},
                                          {MetricName::meteor, "meteor"},
                                          {MetricName::chrf, "chrf"},
                                          {MetricName::embedding_score, "embedding-score"}})

struct MetricConfig {
  bool lowercase = false;
  int max_order = 0;          // bleu: 4, chrf: 6
  double beta = 2.0;          // chrf
  double epsilon = 1e-9;      // bleu order-1 floor
  bool normalize = false;     // edit-distance/similarity: lowercase both sides first
};

struct MetricDescriptor {
  MetricName name = MetricName::edit_distance;
  Polarity polarity = Polarity::lower_better;
  MetricConfig config;

  std::string label() const { return nlohmann::json(name).get<std::string>(); }
};

inline const std::vector<MetricName>& all_metric_names() {
  static const std::vector<MetricName> names = {
      MetricName::edit_distance, MetricName::edit_similarity, MetricName::bleu,
      MetricName::rouge_1,       MetricName::rouge_2,         MetricName::rouge_l,
      MetricName::meteor,        MetricName::chrf,            MetricName::embedding_score};
  return names;
}

/// Descriptor with the default configuration for `name`.
inline MetricDescriptor make_metric(MetricName name) {
  MetricDescriptor d;
  d.name = name;
  d.polarity = name == MetricName::edit_distance ? Polarity::lower_better : Polarity::higher_better;
  switch (name) {
    case MetricName::bleu:
      d.config.lowercase = true;
      d.config.max_order = 4;
      break;
    case MetricName::rouge_1:
    case MetricName::rouge_2:
    case MetricName::rouge_l:
    case MetricName::meteor:
      d.config.lowercase = true;
      break;
    case MetricName::chrf:
      d.config.max_order = 6;
      break;
    default:
      break;
  }
  return d;
}

inline MetricName parse_metric_name(std::string_view s) {
  const nlohmann::json j = std::string(s);
  const auto name = j.get<MetricName>();
  if (nlohmann::json(name) != j) throw UsageError("unknown metric '" + std::string(s) + "'");
  return name;
}

inline MetricDescriptor make_metric(std::string_view name) { return make_metric(parse_metric_name(name)); }

/// Overrides from a JSON object such as {"lowercase": false, "max_order": 2, "beta": 3}.
inline MetricDescriptor apply_config(MetricDescriptor d, const nlohmann::json& cfg) {
  for (const auto& [key, value] : cfg.items()) {
    if (key == "lowercase") d.config.lowercase = value.get<bool>();
    else if (key == "max_order") d.config.max_order = value.get<int>();
    else if (key == "beta") d.config.beta = value.get<double>();
    else if (key == "epsilon") d.config.epsilon = value.get<double>();
    else if (key == "normalize") d.config.normalize = value.get<bool>();
    else throw UsageError("metric " + d.label() + ": unknown config key '" + key + "'");
  }
  if ((d.name == MetricName::bleu || d.name == MetricName::chrf) && d.config.max_order < 1)
    throw UsageError("metric " + d.label() + ": max_order must be >= 1");
  if (d.name == MetricName::chrf && !(d.config.beta > 0)) throw UsageError("chrf: beta must be > 0");
  return d;
}

inline nlohmann::json to_json(const MetricDescriptor& d) {
  return {{"name", d.label()},
          {"polarity", d.polarity == Polarity::higher_better ? "higher-better" : "lower-better"},
          {"config",
           {{"lowercase", d.config.lowercase},
            {"max_order", d.config.max_order},
            {"beta", d.config.beta},
            {"epsilon", d.config.epsilon},
            {"normalize", d.config.normalize}}}};
}

// ---------------------------------------------------------------------------
// Character edit distance

/// Levenshtein distance over code points with unit costs.
///
/// Myers' bit-vector algorithm in its block form: the shorter string is the pattern, one
/// 64-bit word per 64 pattern characters, and each block passes its bottom-row horizontal
/// delta to the block below.
inline std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  while (!a.empty() && !b.empty() && a.front() == b.front()) {
    a.remove_prefix(1);
    b.remove_prefix(1);
  }
  while (!a.empty() && !b.empty() && a.back() == b.back()) {
    a.remove_suffix(1);
    b.remove_suffix(1);
  }
  if (a.size() > b.size()) std::swap(a, b);
  const std::size_t m = a.size();
  if (m == 0) return b.size();

  const std::size_t words = (m + 63) / 64;
  std::vector<std::uint64_t> ascii(128 * words, 0);
  std::unordered_map<char32_t, std::vector<std::uint64_t>> other;
  for (std::size_t i = 0; i < m; ++i) {
    const char32_t c = a[i];
    std::uint64_t* row;
    if (c < 128) {
      row = &ascii[c * words];
    } else {
      auto& v = other[c];
      if (v.empty()) v.assign(words, 0);
      row = v.data();
    }
    row[i / 64] |= std::uint64_t{1} << (i % 64);
  }
  const std::vector<std::uint64_t> zeros(words, 0);
  auto peq = [&](char32_t c) -> const std::uint64_t* {
    if (c < 128) return &ascii[c * words];
    auto it = other.find(c);
    return it == other.end() ? zeros.data() : it->second.data();
  };

  std::vector<std::uint64_t> vp(words, ~std::uint64_t{0}), vn(words, 0);
  const std::uint64_t last_bit = std::uint64_t{1} << ((m - 1) % 64);
  constexpr std::uint64_t kHigh = std::uint64_t{1} << 63;
  long long score = static_cast<long long>(m);

  for (char32_t c : b) {
    const std::uint64_t* eq_row = peq(c);
    int hin = 1;  // top row is D[0][j] = j
    for (std::size_t w = 0; w < words; ++w) {
      std::uint64_t eq = eq_row[w];
      const std::uint64_t pv = vp[w], mv = vn[w];
      const std::uint64_t xv = eq | mv;
      if (hin < 0) eq |= 1;
      const std::uint64_t xh = (((eq & pv) + pv) ^ pv) | eq;
      std::uint64_t ph = mv | ~(xh | pv);
      std::uint64_t mh = pv & xh;
      const std::uint64_t high = w + 1 == words ? last_bit : kHigh;
      const int hout = (ph & high) ? 1 : (mh & high) ? -1 : 0;
      ph <<= 1;
      mh <<= 1;
      if (hin < 0) mh |= 1;
      else if (hin > 0) ph |= 1;
      vp[w] = mh | ~(xv | ph);
      vn[w] = ph & xv;
      hin = hout;
    }
    score += hin;
  }
  return static_cast<std::size_t>(score);
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  return edit_distance(std::u32string_view(utf8_decode(a)), std::u32string_view(utf8_decode(b)));
}

/// 1 - ED / max length; 1.0 for two empty strings.
inline double edit_similarity(std::string_view a, std::string_view b) {
  const auto ua = utf8_decode(a), ub = utf8_decode(b);
  const std::size_t longest = std::max(ua.size(), ub.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(std::u32string_view(ua), std::u32string_view(ub))) /
                   static_cast<double>(longest);
}

// ---------------------------------------------------------------------------
// n-gram helpers

namespace detail {

using NgramCounts = std::map<std::string, std::size_t>;

inline NgramCounts token_ngrams(const TokenSequence& toks, std::size_t n) {
  NgramCounts counts;
  if (n == 0 || toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (std::size_t k = 1; k < n; ++k) {
      key += '\x1f';
      key += toks[i + k];
    }
    ++counts[key];
  }
  return counts;
}

inline std::size_t clipped_overlap(const NgramCounts& pred, const NgramCounts& ref) {
  std::size_t overlap = 0;
  for (const auto& [gram, c] : pred) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(c, it->second);
  }
  return overlap;
}

inline std::size_t total(const NgramCounts& c) {
  std::size_t t = 0;
  for (const auto& [_, v] : c) t += v;
  return t;
}

inline double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

template <typename Seq>
std::size_t lcs_length(const Seq& a, const Seq& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BLEU

/// Sentence BLEU up to `max_order`, uniform weights, brevity penalty exp(1 - |ref|/|pred|).
/// Zero precisions: order 1 uses `epsilon`; higher orders use exponential smoothing
/// 1 / (2^k * max(total, 1)) where k counts the zero orders so far. Orders where neither side
/// has n-grams are left out of the geometric mean.
inline double bleu(std::string_view pred, std::string_view ref, const MetricConfig& cfg = make_metric(MetricName::bleu).config) {
  const auto p = tokenize(pred, cfg.lowercase);
  const auto r = tokenize(ref, cfg.lowercase);
  if (p.empty()) return 0.0;
  double log_sum = 0.0;
  int used = 0;
  int zero_orders = 0;
  for (int n = 1; n <= cfg.max_order; ++n) {
    const auto pc = detail::token_ngrams(p, n);
    const auto rc = detail::token_ngrams(r, n);
    const std::size_t total = detail::total(pc);
    if (total == 0 && rc.empty()) continue;
    const std::size_t matches = detail::clipped_overlap(pc, rc);
    double prec;
    if (matches > 0) {
      prec = static_cast<double>(matches) / static_cast<double>(total);
    } else if (n == 1) {
      prec = cfg.epsilon;
    } else {
      ++zero_orders;
      prec = 1.0 / (std::ldexp(1.0, zero_orders) * static_cast<double>(std::max<std::size_t>(total, 1)));
    }
    log_sum += std::log(prec);
    ++used;
  }
  if (used == 0) return 0.0;
  const double bp = p.size() < r.size()
                        ? std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(p.size()))
                        : 1.0;
  return std::clamp(bp * std::exp(log_sum / used), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// ROUGE

/// ROUGE-N F1 over clipped n-gram counts.
inline double rouge_n(std::string_view pred, std::string_view ref, int n, bool lowercase = true) {
  const auto p = tokenize(pred, lowercase);
  const auto r = tokenize(ref, lowercase);
  const auto pc = detail::token_ngrams(p, n);
  const auto rc = detail::token_ngrams(r, n);
  const std::size_t pt = detail::total(pc), rt = detail::total(rc);
  if (pt == 0 && rt == 0) return p == r ? 1.0 : 0.0;
  if (pt == 0 || rt == 0) return 0.0;
  const double overlap = static_cast<double>(detail::clipped_overlap(pc, rc));
  return detail::f1(overlap / pt, overlap / rt);
}

/// ROUGE-L F1 from the token-level longest common subsequence.
inline double rouge_l(std::string_view pred, std::string_view ref, bool lowercase = true) {
  const auto p = tokenize(pred, lowercase);
  const auto r = tokenize(ref, lowercase);
  if (p.empty() && r.empty()) return 1.0;
  if (p.empty() || r.empty()) return 0.0;
  const double lcs = static_cast<double>(detail::lcs_length(p, r));
  return detail::f1(lcs / p.size(), lcs / r.size());
}

// ---------------------------------------------------------------------------
// METEOR

struct MeteorAlignment {
  std::vector<int> pred_to_ref;  // -1 when unmatched
  std::size_t matches = 0;
  std::size_t chunks = 0;
};

namespace detail {

/// Stage-wise unigram alignment. Each stage matches every still-unmatched pred token whose key
/// equals some unmatched ref token's key, so every stage reaches maximum matching size. Among
/// candidate ref positions the one continuing the current chunk wins, then the one starting the
/// longest run of further matches, then the leftmost.
inline void meteor_stage(const std::vector<std::string>& pk, const std::vector<std::string>& rk,
                         std::vector<int>& p2r, std::vector<bool>& ref_used) {
  const int np = static_cast<int>(pk.size()), nr = static_cast<int>(rk.size());
  auto run_length = [&](int i, int j) {
    int len = 0;
    while (i + len < np && j + len < nr && p2r[i + len] < 0 && !ref_used[j + len] && pk[i + len] == rk[j + len])
      ++len;
    return len;
  };
  for (int i = 0; i < np; ++i) {
    if (p2r[i] >= 0) continue;
    int best = -1, best_run = -1;
    if (i > 0 && p2r[i - 1] >= 0) {
      const int j = p2r[i - 1] + 1;
      if (j < nr && !ref_used[j] && pk[i] == rk[j]) best = j;
    }
    if (best < 0) {
      for (int j = 0; j < nr; ++j) {
        if (ref_used[j] || pk[i] != rk[j]) continue;
        const int run = run_length(i, j);
        if (run > best_run) {
          best_run = run;
          best = j;
        }
      }
    }
    if (best >= 0) {
      p2r[i] = best;
      ref_used[best] = true;
    }
  }
}

}  // namespace detail

inline MeteorAlignment meteor_align(const TokenSequence& pred, const TokenSequence& ref) {
  MeteorAlignment al;
  al.pred_to_ref.assign(pred.size(), -1);
  std::vector<bool> ref_used(ref.size(), false);
  detail::meteor_stage(pred, ref, al.pred_to_ref, ref_used);

  PorterStemmer stemmer;
  std::vector<std::string> ps, rs;
  for (const auto& t : pred) ps.push_back(stemmer.stem(t));
  for (const auto& t : ref) rs.push_back(stemmer.stem(t));
  detail::meteor_stage(ps, rs, al.pred_to_ref, ref_used);

  int prev = -2;
  for (int j : al.pred_to_ref) {
    if (j < 0) {
      prev = -2;
      continue;
    }
    ++al.matches;
    if (j != prev + 1) ++al.chunks;
    prev = j;
  }
  return al;
}

/// METEOR without the synonym stage: Fmean = 10PR/(R+9P), penalty 0.5 (chunks/matches)^3.
inline double meteor(std::string_view pred, std::string_view ref, bool lowercase = true) {
  const auto p = tokenize(pred, lowercase);
  const auto r = tokenize(ref, lowercase);
  if (p.empty() || r.empty()) return 0.0;
  const auto al = meteor_align(p, r);
  if (al.matches == 0) return 0.0;
  const double m = static_cast<double>(al.matches);
  const double prec = m / p.size(), rec = m / r.size();
  const double fmean = 10 * prec * rec / (rec + 9 * prec);
  const double frag = static_cast<double>(al.chunks) / m;
  const double penalty = 0.5 * frag * frag * frag;
  return fmean * (1.0 - penalty);
}

// ---------------------------------------------------------------------------
// chrF

namespace detail {

inline std::map<std::u32string, std::size_t> char_ngrams(const std::u32string& s, std::size_t n) {
  std::map<std::u32string, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[s.substr(i, n)];
  return out;
}

inline std::u32string strip_whitespace(std::string_view text) {
  std::u32string out;
  for (char32_t c : utf8_decode(text))
    if (!(c == U' ' || (c >= U'\t' && c <= U'\r') || c == 0x85 || c == 0xA0 || c == 0x2028 || c == 0x2029 ||
          c == 0x3000 || (c >= 0x2000 && c <= 0x200A)))
      out.push_back(c);
  return out;
}

}  // namespace detail

/// Character n-gram F-beta averaged over orders 1..max_order (whitespace removed first). Orders
/// where either side has no n-grams are not averaged; with none left the score is 0.
inline double chrf(std::string_view pred, std::string_view ref, const MetricConfig& cfg = make_metric(MetricName::chrf).config) {
  auto p = detail::strip_whitespace(pred);
  auto r = detail::strip_whitespace(ref);
  if (cfg.lowercase) {
    for (auto* s : {&p, &r})
      for (auto& c : *s)
        if (c >= U'A' && c <= U'Z') c = c - U'A' + U'a';
  }
  const double b2 = cfg.beta * cfg.beta;
  double sum = 0.0;
  int used = 0;
  for (int n = 1; n <= cfg.max_order; ++n) {
    const auto pc = detail::char_ngrams(p, n);
    const auto rc = detail::char_ngrams(r, n);
    if (pc.empty() || rc.empty()) continue;
    std::size_t pt = 0, rt = 0, overlap = 0;
    for (const auto& [g, c] : pc) {
      pt += c;
      if (auto it = rc.find(g); it != rc.end()) overlap += std::min(c, it->second);
    }
    for (const auto& [g, c] : rc) rt += c;
    const double prec = static_cast<double>(overlap) / pt, rec = static_cast<double>(overlap) / rt;
    sum += prec + rec > 0 ? (1 + b2) * prec * rec / (b2 * prec + rec) : 0.0;
    ++used;
  }
  return used == 0 ? 0.0 : sum / used;
}

}  // namespace cmgeval
