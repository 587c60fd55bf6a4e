#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <compare>
#include <exception>
#include <future>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/corpus.hpp"
#include "cmgeval/metrics.hpp"
#include "cmgeval/stats.hpp"

namespace cmgeval {

/// A generated message, identified across the whole corpus.
struct NodeKey {
  std::string commit_id;
  std::string node_id;

  auto operator<=>(const NodeKey&) const = default;
  std::string str() const { return commit_id + "/" + node_id; }
};

struct ScoreMap {
  std::map<NodeKey, double> scores;
  std::vector<NodeKey> excluded;  // generated nodes with no usable pair
};

struct SelectionOptions {
  PairingPolicy policy = PairingPolicy::direct;
  bool include_original = false;
  const EmbeddingProvider* provider = nullptr;
  PValueMethod p_value = PValueMethod::t_approximation;
  /// Worker threads for q_matrix; 0 picks hardware concurrency.
  unsigned parallelism = 0;
};

namespace detail {

inline const std::string& reference_text(const CommitRecord& rec, const std::string& ref_id) {
  if (ref_id == kOriginalRef) return rec.original_message;
  const auto* n = rec.find_node(ref_id);
  if (!n) throw DataError("commit '" + rec.commit_id + "': unknown reference node '" + ref_id + "'");
  return n->text;
}

inline std::vector<PairSet> derive_all(const Corpus& corpus, const SelectionOptions& opt) {
  std::vector<PairSet> out;
  out.reserve(corpus.size());
  for (const auto& rec : corpus) out.push_back(derive_pairs(rec, opt.policy, opt.include_original));
  return out;
}

template <typename Agg>
ScoreMap score_generated(const Corpus& corpus, const std::vector<PairSet>& pairs, bool use_related,
                         const MetricDescriptor& metric, const EmbeddingProvider* provider, Agg aggregate) {
  if (pairs.size() != corpus.size()) throw DataError("pair sets do not line up with the corpus");
  ScoreMap out;
  for (std::size_t c = 0; c < corpus.size(); ++c) {
    const auto& rec = corpus[c];
    const auto& list = use_related ? pairs[c].related : pairs[c].independent;
    std::map<std::string, std::vector<double>> values;
    for (const auto& [g, ref] : list) {
      const auto* gn = rec.find_node(g);
      if (!gn) throw DataError("commit '" + rec.commit_id + "': unknown generated node '" + g + "'");
      values[g].push_back(evaluate(metric, gn->text, reference_text(rec, ref), provider));
    }
    for (const auto& n : rec.nodes) {
      if (n.kind != NodeKind::generated) continue;
      NodeKey key{rec.commit_id, n.node_id};
      auto it = values.find(n.node_id);
      if (it == values.end()) out.excluded.push_back(std::move(key));
      else out.scores.emplace(std::move(key), aggregate(it->second));
    }
  }
  std::sort(out.excluded.begin(), out.excluded.end());
  return out;
}

}  // namespace detail

/// Online signal per generated node: the mean of `online_metric` over its related edits.
inline ScoreMap online_scores(const Corpus& corpus, const std::vector<PairSet>& pairs,
                              const MetricDescriptor& online_metric, const EmbeddingProvider* provider = nullptr) {
  return detail::score_generated(corpus, pairs, true, online_metric, provider, [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  });
}

/// Offline signal per generated node: f_agg of `m` over its conditionally independent
/// references (max for higher-better metrics, min for lower-better ones).
inline ScoreMap offline_scores(const Corpus& corpus, const std::vector<PairSet>& pairs, const MetricDescriptor& m,
                               const EmbeddingProvider* provider = nullptr) {
  const bool higher = m.polarity == Polarity::higher_better;
  return detail::score_generated(corpus, pairs, false, m, provider, [higher](const std::vector<double>& v) {
    return higher ? *std::max_element(v.begin(), v.end()) : *std::min_element(v.begin(), v.end());
  });
}

struct QResult {
  std::string metric;         // offline metric m
  std::string online_metric;  // m* (edit-distance gives Q(m))
  CorrelationResult correlation;
  std::vector<NodeKey> excluded;  // nodes lacking either score
};

/// Spearman correlation of the two score maps over the nodes present in both.
inline QResult correlate_scores(const ScoreMap& online, const ScoreMap& offline, std::string metric,
                                std::string online_metric, PValueMethod method = PValueMethod::t_approximation) {
  QResult q{std::move(metric), std::move(online_metric), {}, {}};
  std::vector<double> xs, ys;
  std::set<NodeKey> excluded(online.excluded.begin(), online.excluded.end());
  excluded.insert(offline.excluded.begin(), offline.excluded.end());
  for (const auto& [key, x] : online.scores) {
    auto it = offline.scores.find(key);
    if (it == offline.scores.end()) {
      excluded.insert(key);
      continue;
    }
    xs.push_back(x);
    ys.push_back(it->second);
  }
  for (const auto& [key, _] : offline.scores)
    if (!online.scores.contains(key)) excluded.insert(key);
  q.excluded.assign(excluded.begin(), excluded.end());
  try {
    q.correlation = spearman(xs, ys, method);
  } catch (const UndefinedCorrelation& e) {
    throw UndefinedCorrelation("Q(" + q.metric + ", " + q.online_metric + "): " + e.what());
  } catch (const DataError& e) {
    throw DataError("Q(" + q.metric + ", " + q.online_metric + "): " + e.what());
  }
  return q;
}

/// Q*(m, m*); with m* = edit distance this is Q(m).
inline QResult q_metric(const Corpus& corpus, const MetricDescriptor& m, const MetricDescriptor& online_metric,
                        const SelectionOptions& opt = {}) {
  const auto pairs = detail::derive_all(corpus, opt);
  const auto on = online_scores(corpus, pairs, online_metric, opt.provider);
  const auto off = offline_scores(corpus, pairs, m, opt.provider);
  return correlate_scores(on, off, m.label(), online_metric.label(), opt.p_value);
}

namespace detail {

/// Runs fn(i) for i in [0, n) on up to `width` threads; results land at their index.
template <typename T, typename Fn>
std::vector<T> parallel_indexed(std::size_t n, unsigned width, Fn fn) {
  if (width == 0) width = std::max(1u, std::thread::hardware_concurrency());
  std::vector<T> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < std::min<std::size_t>(width, n); ++t) pool.emplace_back(worker);
    worker();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace detail

/// matrix[i][j] = Q*(metrics[i] offline, metrics[j] online).
inline std::vector<std::vector<QResult>> q_matrix(const Corpus& corpus, const std::vector<MetricDescriptor>& metrics,
                                                  const SelectionOptions& opt = {}) {
  const auto pairs = detail::derive_all(corpus, opt);
  const std::size_t k = metrics.size();
  auto maps = detail::parallel_indexed<ScoreMap>(2 * k, opt.parallelism, [&](std::size_t i) {
    return i < k ? online_scores(corpus, pairs, metrics[i], opt.provider)
                 : offline_scores(corpus, pairs, metrics[i - k], opt.provider);
  });
  std::vector<std::vector<QResult>> matrix(k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      matrix[i].push_back(correlate_scores(maps[j], maps[k + i], metrics[i].label(), metrics[j].label(), opt.p_value));
  return matrix;
}

// ---------------------------------------------------------------------------
// Reporting

inline constexpr double kHighBand = 0.7;
inline constexpr double kModerateBand = 0.3;

inline std::string group_label(double q) {
  const double a = std::fabs(q);
  if (a >= kHighBand) return "High";
  if (a >= kModerateBand) return "Moderate";
  return "Low";
}

struct ReportRow {
  std::string metric;
  double q = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  std::size_t excluded = 0;
  std::string group;
};

struct SelectionReport {
  std::string online_metric;
  std::vector<ReportRow> rows;  // sorted by |Q| descending
};

inline SelectionReport report(const std::vector<QResult>& results) {
  SelectionReport rep;
  if (!results.empty()) rep.online_metric = results.front().online_metric;
  for (const auto& r : results) {
    rep.rows.push_back({r.metric, r.correlation.coefficient, r.correlation.p_value, r.correlation.n,
                        r.excluded.size(), group_label(r.correlation.coefficient)});
  }
  std::stable_sort(rep.rows.begin(), rep.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::fabs(a.q) > std::fabs(b.q);
  });
  return rep;
}

inline nlohmann::json to_json(const SelectionReport& rep) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"metric", r.metric},
                    {"q", r.q},
                    {"p_value", r.p_value},
                    {"n", r.n},
                    {"excluded", r.excluded},
                    {"group", r.group}});
  }
  return {{"online_metric", rep.online_metric},
          {"groups", {{"High", {kHighBand, 1.0}}, {"Moderate", {kModerateBand, kHighBand}}, {"Low", {0.0, kModerateBand}}}},
          {"rows", rows}};
}

inline std::string render_table(const SelectionReport& rep) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %-18s %9s %10s %6s\n", "group", "metric", "Q", "p-value", "n");
  os << buf;
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof buf, "%-10s %-18s %9.4f %10.4g %6zu\n", r.group.c_str(), r.metric.c_str(), r.q,
                  r.p_value, r.n);
    os << buf;
  }
  return os.str();
}

inline nlohmann::json matrix_to_json(const std::vector<std::vector<QResult>>& matrix) {
  nlohmann::json labels = nlohmann::json::array();
  nlohmann::json q = nlohmann::json::array(), p = nlohmann::json::array();
  for (const auto& row : matrix) {
    labels.push_back(row.empty() ? "" : row.front().metric);
    nlohmann::json qr = nlohmann::json::array(), pr = nlohmann::json::array();
    for (const auto& cell : row) {
      qr.push_back(cell.correlation.coefficient);
      pr.push_back(cell.correlation.p_value);
    }
    q.push_back(std::move(qr));
    p.push_back(std::move(pr));
  }
  return {{"offline_metrics", labels}, {"online_metrics", labels}, {"q", q}, {"p_value", p}};
}

}  // namespace cmgeval
