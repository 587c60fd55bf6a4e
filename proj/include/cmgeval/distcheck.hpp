#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/corpus.hpp"
#include "cmgeval/stats.hpp"
#include "cmgeval/textmetrics.hpp"
#include "cmgeval/unicode.hpp"

namespace cmgeval {

struct TelemetryRecord {
  std::uint64_t ed_value = 0;
  std::uint64_t gen_length = 1;
};

struct TelemetryLog {
  std::vector<TelemetryRecord> records;
};

inline constexpr std::uint64_t kDefaultEdCap = 100000;

inline void check_record(const TelemetryRecord& r, std::uint64_t ed_cap, const std::string& where) {
  if (r.gen_length == 0) throw DataError(where + ": gen_length must be positive");
  if (r.ed_value > ed_cap) throw DataError(where + ": ed_value " + std::to_string(r.ed_value) + " exceeds cap " + std::to_string(ed_cap));
}

/// CSV with header `ed_value,gen_length`, or JSONL objects with the same keys.
inline TelemetryLog parse_telemetry(std::istream& in, const std::string& source = "<telemetry>",
                                    std::uint64_t ed_cap = kDefaultEdCap) {
  TelemetryLog log;
  std::string line;
  std::size_t lineno = 0;
  bool header_seen = false;
  auto parse_uint = [&](std::string s, const std::string& where, const char* field) {
    s.erase(0, s.find_first_not_of(" \t\r"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
      throw DataError(where + ": " + field + " is not a non-negative integer: '" + s + "'");
    return static_cast<std::uint64_t>(std::stoull(s));
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    TelemetryRecord r;
    if (line[first] == '{') {
      try {
        const auto j = nlohmann::json::parse(line);
        const auto ed = j.at("ed_value");
        const auto gl = j.at("gen_length");
        if (!ed.is_number_integer() || !gl.is_number_integer() || ed.get<long long>() < 0 || gl.get<long long>() < 0)
          throw DataError(where + ": ed_value and gen_length must be non-negative integers");
        r = {ed.get<std::uint64_t>(), gl.get<std::uint64_t>()};
      } catch (const nlohmann::json::exception& e) {
        throw DataError(where + ": " + e.what());
      }
    } else {
      if (!header_seen) {
        std::string h = line;
        h.erase(std::remove_if(h.begin(), h.end(), [](char c) { return c == ' ' || c == '\r' || c == '\t'; }), h.end());
        if (h != "ed_value,gen_length") throw DataError(where + ": expected header 'ed_value,gen_length'");
        header_seen = true;
        continue;
      }
      const auto comma = line.find(',');
      if (comma == std::string::npos) throw DataError(where + ": expected two columns");
      r = {parse_uint(line.substr(0, comma), where, "ed_value"), parse_uint(line.substr(comma + 1), where, "gen_length")};
    }
    check_record(r, ed_cap, where);
    log.records.push_back(r);
  }
  return log;
}

inline TelemetryLog load_telemetry(const std::string& path, std::uint64_t ed_cap = kDefaultEdCap) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open telemetry file '" + path + "'");
  return parse_telemetry(in, path, ed_cap);
}

struct ZeroFilterReport {
  TelemetryLog log;
  double removed_fraction = 0.0;
  std::size_t removed = 0;
  std::size_t total = 0;
};

inline ZeroFilterReport filter_zero(const TelemetryLog& log) {
  ZeroFilterReport rep;
  rep.total = log.records.size();
  for (const auto& r : log.records) {
    if (r.ed_value == 0) ++rep.removed;
    else rep.log.records.push_back(r);
  }
  rep.removed_fraction = rep.total ? static_cast<double>(rep.removed) / static_cast<double>(rep.total) : 0.0;
  return rep;
}

inline double mean_gen_length(const TelemetryLog& log) {
  if (log.records.empty()) throw DataError("telemetry log is empty");
  double s = 0;
  for (const auto& r : log.records) s += static_cast<double>(r.gen_length);
  return s / static_cast<double>(log.records.size());
}

/// Mean length in characters of the corpus' generated messages, optionally limited to sources.
inline double mean_generated_length(const Corpus& corpus, const std::set<NodeSource>& sources = {}) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& rec : corpus)
    for (const auto& node : rec.nodes)
      if (node.kind == NodeKind::generated && (sources.empty() || sources.contains(node.source))) {
        s += static_cast<double>(char_length(node.text));
        ++n;
      }
  if (n == 0) throw DataError("corpus has no generated messages");
  return s / static_cast<double>(n);
}

/// R = corpus mean generated length / telemetry mean generated length.
inline double scale_factor(double corpus_mean_length, const TelemetryLog& log) {
  if (!(corpus_mean_length > 0)) throw DataError("corpus mean generated length must be positive");
  return corpus_mean_length / mean_gen_length(log);
}

inline double scale_factor(const Corpus& corpus, const TelemetryLog& log, const std::set<NodeSource>& sources = {}) {
  return scale_factor(mean_generated_length(corpus, sources), log);
}

inline std::vector<double> scaled_ed_values(const TelemetryLog& log, double r) {
  std::vector<double> out;
  out.reserve(log.records.size());
  for (const auto& rec : log.records) out.push_back(static_cast<double>(rec.ed_value) * r);
  return out;
}

/// ED(G, E) over the corpus' direct derivation links, optionally limited to summary categories
/// ("expert", "synthetic-backward", ...).
inline std::vector<double> corpus_edit_distances(const Corpus& corpus, const std::set<std::string>& categories = {}) {
  std::vector<double> out;
  for (const auto& rec : corpus) {
    for (const auto& e : rec.edges) {
      if (!categories.empty() && !categories.contains(detail::edge_category(rec, e))) continue;
      out.push_back(static_cast<double>(edit_distance(rec.find_node(e.from_node)->text, rec.find_node(e.to_node)->text)));
    }
  }
  return out;
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw DataError("KS statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == v) ++i;
    while (j < b.size() && b[j] == v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

struct DistributionComparison {
  double bucket_width = 50.0;
  std::vector<HistogramBucket> corpus_hist;
  std::vector<HistogramBucket> telemetry_hist;
  double ks = 0.0;
  double corpus_peak = 0.0;     // lower edge of the modal bucket
  double telemetry_peak = 0.0;
  std::size_t corpus_n = 0;
  std::size_t telemetry_n = 0;

  /// Distance between the modal buckets, in buckets.
  double peak_distance_buckets() const { return std::fabs(corpus_peak - telemetry_peak) / bucket_width; }
};

inline DistributionComparison compare_distributions(const std::vector<double>& corpus_ed,
                                                    const std::vector<double>& telemetry_ed,
                                                    double bucket_width = 50.0) {
  if (corpus_ed.empty() || telemetry_ed.empty()) throw DataError("distribution comparison needs two non-empty samples");
  DistributionComparison c;
  c.bucket_width = bucket_width;
  c.corpus_n = corpus_ed.size();
  c.telemetry_n = telemetry_ed.size();
  const auto [amin, amax] = std::minmax_element(corpus_ed.begin(), corpus_ed.end());
  const auto [bmin, bmax] = std::minmax_element(telemetry_ed.begin(), telemetry_ed.end());
  const double lo = std::min(*amin, *bmin), hi = std::max(*amax, *bmax);
  c.corpus_hist = histogram(corpus_ed, bucket_width, lo, hi);
  c.telemetry_hist = histogram(telemetry_ed, bucket_width, lo, hi);
  auto peak = [](const std::vector<HistogramBucket>& h) {
    return std::max_element(h.begin(), h.end(), [](const auto& x, const auto& y) { return x.count < y.count; })->lower;
  };
  c.corpus_peak = peak(c.corpus_hist);
  c.telemetry_peak = peak(c.telemetry_hist);
  c.ks = ks_statistic(corpus_ed, telemetry_ed);
  return c;
}

inline std::string histogram_csv(const DistributionComparison& c) {
  std::ostringstream os;
  os << "bucket_lower,bucket_upper,corpus_count,telemetry_count\n";
  for (std::size_t i = 0; i < c.corpus_hist.size(); ++i) {
    os << c.corpus_hist[i].lower << ',' << c.corpus_hist[i].upper << ',' << c.corpus_hist[i].count << ','
       << c.telemetry_hist[i].count << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const DistributionComparison& c) {
  nlohmann::json buckets = nlohmann::json::array();
  for (std::size_t i = 0; i < c.corpus_hist.size(); ++i) {
    buckets.push_back({{"lower", c.corpus_hist[i].lower},
                       {"upper", c.corpus_hist[i].upper},
                       {"corpus", c.corpus_hist[i].count},
                       {"telemetry", c.telemetry_hist[i].count}});
  }
  return {{"bucket_width", c.bucket_width}, {"ks", c.ks},
          {"corpus_peak", c.corpus_peak},   {"telemetry_peak", c.telemetry_peak},
          {"corpus_n", c.corpus_n},         {"telemetry_n", c.telemetry_n},
          {"buckets", buckets}};
}

}  // namespace cmgeval
