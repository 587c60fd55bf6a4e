#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/error.hpp"

namespace cmgeval {

enum class NodeKind { generated, edited };
enum class NodeSource { model, expert, synthetic_backward, synthetic_forward };
enum class DerivationMethod { human_edit, llm_backward, llm_forward };
enum class PairingPolicy { direct, closure };

NLOHMANN_JSON_SERIALIZE_ENUM(NodeKind, {{NodeKind::generated, "generated"}, {NodeKind::edited, "edited"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NodeSource, {{NodeSource::model, "model"},
                                          {NodeSource::expert, "expert"},
                                          {NodeSource::synthetic_backward, "synthetic-backward"},
                                          {NodeSource::synthetic_forward, "synthetic-forward"}})
NLOHMANN_JSON_SERIALIZE_ENUM(DerivationMethod, {{DerivationMethod::human_edit, "human-edit"},
                                                {DerivationMethod::llm_backward, "llm-backward"},
                                                {DerivationMethod::llm_forward, "llm-forward"}})

inline std::string to_string(NodeKind k) { return nlohmann::json(k).get<std::string>(); }
inline std::string to_string(NodeSource s) { return nlohmann::json(s).get<std::string>(); }
inline std::string to_string(DerivationMethod m) { return nlohmann::json(m).get<std::string>(); }
inline std::string to_string(PairingPolicy p) { return p == PairingPolicy::direct ? "direct" : "closure"; }

inline PairingPolicy parse_pairing_policy(std::string_view s) {
  if (s == "direct") return PairingPolicy::direct;
  if (s == "closure") return PairingPolicy::closure;
  throw UsageError("unknown pairing policy '" + std::string(s) + "' (expected direct or closure)");
}

/// Reference id standing for the commit's original VCS message in pair lists.
/// Node ids may not start with '@', so it cannot collide with a real node.
inline constexpr std::string_view kOriginalRef = "@original";

struct MessageNode {
  std::string node_id;
  NodeKind kind = NodeKind::generated;
  NodeSource source = NodeSource::model;
  std::string text;
  std::optional<std::string> created_at;

  bool operator==(const MessageNode&) const = default;
};

struct DerivationEdge {
  std::string from_node;
  std::string to_node;
  DerivationMethod method = DerivationMethod::human_edit;

  bool operator==(const DerivationEdge&) const = default;
};

struct CommitRecord {
  std::string commit_id;
  std::string diff;
  std::string original_message;
  std::optional<std::string> summary;
  std::vector<MessageNode> nodes;
  std::vector<DerivationEdge> edges;

  const MessageNode* find_node(std::string_view id) const {
    auto it = std::find_if(nodes.begin(), nodes.end(), [&](const MessageNode& n) { return n.node_id == id; });
    return it == nodes.end() ? nullptr : &*it;
  }

  bool operator==(const CommitRecord&) const = default;
};

using Corpus = std::vector<CommitRecord>;

// ---------------------------------------------------------------------------
// Validation

inline void validate(const CommitRecord& rec) {
  const auto fail = [&](const std::string& field, const std::string& what) {
    throw DataError("commit '" + rec.commit_id + "': " + field + ": " + what);
  };
  if (rec.commit_id.empty()) throw DataError("commit_id: must be non-empty");

  std::unordered_map<std::string, const MessageNode*> by_id;
  for (const auto& n : rec.nodes) {
    if (n.node_id.empty()) fail("nodes.node_id", "must be non-empty");
    if (n.node_id.front() == '@') fail("nodes.node_id", "'" + n.node_id + "' may not start with '@'");
    if (!by_id.emplace(n.node_id, &n).second) fail("nodes.node_id", "duplicate id '" + n.node_id + "'");
    if (n.text.empty()) fail("nodes[" + n.node_id + "].text", "must be non-empty");
    const bool gen_ok = n.source == NodeSource::model || n.source == NodeSource::synthetic_backward;
    if ((n.kind == NodeKind::generated) != gen_ok) {
      fail("nodes[" + n.node_id + "].source",
           "source '" + to_string(n.source) + "' is not allowed for kind '" + to_string(n.kind) + "'");
    }
  }

  std::unordered_map<std::string, std::vector<const DerivationEdge*>> incoming;
  for (std::size_t i = 0; i < rec.edges.size(); ++i) {
    const auto& e = rec.edges[i];
    const std::string label = "edges[" + std::to_string(i) + "] " + e.from_node + "->" + e.to_node;
    auto from = by_id.find(e.from_node);
    auto to = by_id.find(e.to_node);
    if (from == by_id.end()) fail(label, "dangling edge: unknown from-node '" + e.from_node + "'");
    if (to == by_id.end()) fail(label, "dangling edge: unknown to-node '" + e.to_node + "'");
    const NodeKind want_from =
        e.method == DerivationMethod::llm_backward ? NodeKind::edited : NodeKind::generated;
    const NodeKind want_to = want_from == NodeKind::edited ? NodeKind::generated : NodeKind::edited;
    if (from->second->kind != want_from || to->second->kind != want_to) {
      fail(label, "method '" + to_string(e.method) + "' must go " + to_string(want_from) + "->" +
                      to_string(want_to));
    }
    incoming[e.to_node].push_back(&e);
  }

  for (const auto& n : rec.nodes) {
    const auto& in = incoming[n.node_id];
    if (n.kind == NodeKind::edited && in.empty()) {
      fail("nodes[" + n.node_id + "]", "edited node has no incoming derivation edge");
    }
    if (n.source == NodeSource::synthetic_backward &&
        (in.size() != 1 || by_id.at(in.front()->from_node)->kind != NodeKind::edited)) {
      fail("nodes[" + n.node_id + "]",
           "synthetic-backward node needs exactly one incoming edge from an edited node");
    }
  }

  // Kahn's algorithm; anything left over sits on a cycle.
  std::unordered_map<std::string, std::size_t> indeg;
  std::unordered_map<std::string, std::vector<std::string>> out;
  for (const auto& n : rec.nodes) indeg[n.node_id] = 0;
  for (const auto& e : rec.edges) {
    ++indeg[e.to_node];
    out[e.from_node].push_back(e.to_node);
  }
  std::vector<std::string> ready;
  for (const auto& [id, d] : indeg)
    if (d == 0) ready.push_back(id);
  std::size_t seen = 0;
  while (!ready.empty()) {
    auto id = std::move(ready.back());
    ready.pop_back();
    ++seen;
    for (const auto& next : out[id])
      if (--indeg[next] == 0) ready.push_back(next);
  }
  if (seen != rec.nodes.size()) fail("edges", "derivation graph contains a cycle");
}

inline void validate(const Corpus& corpus) {
  std::set<std::string> ids;
  for (const auto& rec : corpus) {
    validate(rec);
    if (!ids.insert(rec.commit_id).second) throw DataError("duplicate commit_id '" + rec.commit_id + "'");
  }
}

// ---------------------------------------------------------------------------
// Canonical JSONL

inline nlohmann::json to_json(const CommitRecord& rec) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : rec.nodes) {
    nlohmann::json j = {{"node_id", n.node_id}, {"kind", n.kind}, {"source", n.source}, {"text", n.text}};
    if (n.created_at) j["created_at"] = *n.created_at;
    nodes.push_back(std::move(j));
  }
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : rec.edges) edges.push_back({{"from", e.from_node}, {"to", e.to_node}, {"method", e.method}});
  nlohmann::json j = {{"commit_id", rec.commit_id},
                      {"diff", rec.diff},
                      {"original_message", rec.original_message},
                      {"nodes", std::move(nodes)},
                      {"edges", std::move(edges)}};
  if (rec.summary) j["summary"] = *rec.summary;
  return j;
}

namespace detail {

inline void require_keys(const nlohmann::json& j, std::initializer_list<std::string_view> required,
                         std::initializer_list<std::string_view> optional, const std::string& where) {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  for (auto key : required)
    if (!j.contains(std::string(key))) throw DataError(where + ": missing field '" + std::string(key) + "'");
  for (const auto& [key, _] : j.items()) {
    const bool known = std::find(required.begin(), required.end(), key) != required.end() ||
                       std::find(optional.begin(), optional.end(), key) != optional.end();
    if (!known) throw DataError(where + ": unknown field '" + key + "'");
  }
}

template <typename Enum>
Enum parse_enum(const nlohmann::json& j, const std::string& where) {
  if (!j.is_string()) throw DataError(where + ": expected a string");
  // nlohmann maps unknown strings to the first enumerator, so check the round trip.
  Enum value = j.get<Enum>();
  if (nlohmann::json(value) != j) throw DataError(where + ": unknown value '" + j.get<std::string>() + "'");
  return value;
}

inline std::string get_string(const nlohmann::json& j, std::string_view key, const std::string& where) {
  const auto& v = j.at(std::string(key));
  if (!v.is_string()) throw DataError(where + "." + std::string(key) + ": expected a string");
  return v.get<std::string>();
}

}  // namespace detail

inline CommitRecord commit_from_json(const nlohmann::json& j) {
  detail::require_keys(j, {"commit_id", "diff", "original_message", "nodes", "edges"}, {"summary"}, "commit");
  CommitRecord rec;
  rec.commit_id = detail::get_string(j, "commit_id", "commit");
  const std::string where = "commit '" + rec.commit_id + "'";
  rec.diff = detail::get_string(j, "diff", where);
  rec.original_message = detail::get_string(j, "original_message", where);
  if (j.contains("summary")) rec.summary = detail::get_string(j, "summary", where);
  if (!j["nodes"].is_array()) throw DataError(where + ".nodes: expected an array");
  if (!j["edges"].is_array()) throw DataError(where + ".edges: expected an array");
  for (std::size_t i = 0; i < j["nodes"].size(); ++i) {
    const auto& nj = j["nodes"][i];
    const std::string nw = where + ".nodes[" + std::to_string(i) + "]";
    detail::require_keys(nj, {"node_id", "kind", "source", "text"}, {"created_at"}, nw);
    MessageNode n;
    n.node_id = detail::get_string(nj, "node_id", nw);
    n.kind = detail::parse_enum<NodeKind>(nj["kind"], nw + ".kind");
    n.source = detail::parse_enum<NodeSource>(nj["source"], nw + ".source");
    n.text = detail::get_string(nj, "text", nw);
    if (nj.contains("created_at")) n.created_at = detail::get_string(nj, "created_at", nw);
    rec.nodes.push_back(std::move(n));
  }
  for (std::size_t i = 0; i < j["edges"].size(); ++i) {
    const auto& ej = j["edges"][i];
    const std::string ew = where + ".edges[" + std::to_string(i) + "]";
    detail::require_keys(ej, {"from", "to", "method"}, {}, ew);
    rec.edges.push_back({detail::get_string(ej, "from", ew), detail::get_string(ej, "to", ew),
                         detail::parse_enum<DerivationMethod>(ej["method"], ew + ".method")});
  }
  return rec;
}

/// Parses JSONL. Blank lines are skipped; errors carry `source:line`.
inline Corpus parse_corpus(std::istream& in, const std::string& source = "<input>") {
  Corpus corpus;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    CommitRecord rec;
    try {
      rec = commit_from_json(nlohmann::json::parse(line));
      validate(rec);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": parse error: " + e.what());
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!ids.insert(rec.commit_id).second) {
      throw DataError(where + ": duplicate commit_id '" + rec.commit_id + "'");
    }
    corpus.push_back(std::move(rec));
  }
  return corpus;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file '" + path + "'");
  return parse_corpus(in, path);
}

/// One canonical line per commit: sorted keys, compact, UTF-8, '\n'-terminated.
inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& rec : corpus) {
    out += to_json(rec).dump();
    out += '\n';
  }
  return out;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write corpus file '" + path + "'");
  out << serialize_corpus(corpus);
}

// ---------------------------------------------------------------------------
// Pairs

struct PairSet {
  std::string commit_id;
  /// (generated node, edited node)
  std::vector<std::pair<std::string, std::string>> related;
  /// (generated node, edited node or kOriginalRef)
  std::vector<std::pair<std::string, std::string>> independent;
};

namespace detail {

/// Weakly connected component label for every node.
inline std::unordered_map<std::string, std::size_t> components(const CommitRecord& rec) {
  std::unordered_map<std::string, std::string> parent;
  for (const auto& n : rec.nodes) parent[n.node_id] = n.node_id;
  auto find = [&](std::string id) {
    while (parent[id] != id) {
      parent[id] = parent[parent[id]];
      id = parent[id];
    }
    return id;
  };
  for (const auto& e : rec.edges) {
    auto a = find(e.from_node), b = find(e.to_node);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<std::string, std::size_t> roots;
  std::unordered_map<std::string, std::size_t> label;
  for (const auto& n : rec.nodes) {
    auto root = find(n.node_id);
    auto [it, _] = roots.emplace(root, roots.size());
    label[n.node_id] = it->second;
  }
  return label;
}

inline std::set<std::pair<std::string, std::string>> direct_links(const CommitRecord& rec) {
  std::set<std::pair<std::string, std::string>> links;
  for (const auto& e : rec.edges) {
    if (e.method == DerivationMethod::llm_backward) links.emplace(e.to_node, e.from_node);
    else links.emplace(e.from_node, e.to_node);
  }
  return links;
}

}  // namespace detail

/// Classifies every (generated, edited) pair of the commit as related or independent.
/// Output lists are sorted, so node order in the record does not matter.
inline PairSet derive_pairs(const CommitRecord& rec, PairingPolicy policy = PairingPolicy::direct,
                            bool include_original = false) {
  PairSet ps{rec.commit_id, {}, {}};
  std::vector<std::string> gens, edits;
  for (const auto& n : rec.nodes) (n.kind == NodeKind::generated ? gens : edits).push_back(n.node_id);
  std::sort(gens.begin(), gens.end());
  std::sort(edits.begin(), edits.end());

  const auto links = detail::direct_links(rec);
  const auto comp = policy == PairingPolicy::closure ? detail::components(rec)
                                                     : std::unordered_map<std::string, std::size_t>{};
  for (const auto& g : gens) {
    for (const auto& e : edits) {
      const bool related = policy == PairingPolicy::direct ? links.contains({g, e}) : comp.at(g) == comp.at(e);
      (related ? ps.related : ps.independent).emplace_back(g, e);
    }
    if (include_original && !rec.original_message.empty()) ps.independent.emplace_back(g, kOriginalRef);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// Dataset accounting

struct SummaryRow {
  std::string source;
  std::size_t related = 0;
  double related_avg = 0.0;
  std::size_t independent = 0;
  double independent_avg = 0.0;
  std::size_t commits = 0;
};

struct DatasetSummary {
  std::vector<SummaryRow> rows;  // category rows, then "full"

  const SummaryRow& row(std::string_view source) const {
    auto it = std::find_if(rows.begin(), rows.end(), [&](const SummaryRow& r) { return r.source == source; });
    if (it == rows.end()) throw DataError("no summary row '" + std::string(source) + "'");
    return *it;
  }
};

/// Summary row categories, in display order. A category is a kind of derivation step.
inline const std::vector<std::string>& summary_categories() {
  static const std::vector<std::string> cats = {"expert", "synthetic-backward", "synthetic-forward-from-expert",
                                                "synthetic-forward-from-backward"};
  return cats;
}

namespace detail {

inline std::string edge_category(const CommitRecord& rec, const DerivationEdge& e) {
  switch (e.method) {
    case DerivationMethod::human_edit:
      return "expert";
    case DerivationMethod::llm_backward:
      return "synthetic-backward";
    case DerivationMethod::llm_forward: {
      const auto* from = rec.find_node(e.from_node);
      return from && from->source == NodeSource::synthetic_backward ? "synthetic-forward-from-backward"
                                                                     : "synthetic-forward-from-expert";
    }
  }
  return "unknown";
}

}  // namespace detail

/// Per-category related/independent pair counts plus a "full" row.
///
/// A category row counts the distinct direct (generated, edited) links of that category; its
/// independent count is the number of unlinked (generated, edited) pairs among the nodes touched
/// by that category. Averages divide by the number of commits that have the category.
inline DatasetSummary dataset_summary(const Corpus& corpus, PairingPolicy policy = PairingPolicy::direct,
                                      bool include_original = false) {
  std::map<std::string, SummaryRow> acc;
  for (const auto& c : summary_categories()) acc[c].source = c;
  SummaryRow full{"full"};

  for (const auto& rec : corpus) {
    const auto ps = derive_pairs(rec, policy, include_original);
    const std::set<std::pair<std::string, std::string>> related(ps.related.begin(), ps.related.end());

    struct Touch {
      std::set<std::string> gens, edits;
      std::set<std::pair<std::string, std::string>> links;
    };
    std::map<std::string, Touch> touched;
    for (const auto& e : rec.edges) {
      auto& t = touched[detail::edge_category(rec, e)];
      const bool backward = e.method == DerivationMethod::llm_backward;
      const auto& g = backward ? e.to_node : e.from_node;
      const auto& ed = backward ? e.from_node : e.to_node;
      t.gens.insert(g);
      t.edits.insert(ed);
      t.links.emplace(g, ed);
    }
    for (const auto& [cat, t] : touched) {
      auto& row = acc[cat];
      row.source = cat;
      ++row.commits;
      row.related += t.links.size();
      std::size_t indep = 0;
      for (const auto& g : t.gens)
        for (const auto& ed : t.edits)
          if (!related.contains({g, ed})) ++indep;
      if (include_original && !rec.original_message.empty()) indep += t.gens.size();
      row.independent += indep;
    }
    if (!ps.related.empty() || !ps.independent.empty()) {
      ++full.commits;
      full.related += ps.related.size();
      full.independent += ps.independent.size();
    }
  }

  DatasetSummary out;
  auto finish = [](SummaryRow r) {
    if (r.commits > 0) {
      r.related_avg = static_cast<double>(r.related) / static_cast<double>(r.commits);
      r.independent_avg = static_cast<double>(r.independent) / static_cast<double>(r.commits);
    }
    return r;
  };
  for (const auto& c : summary_categories()) out.rows.push_back(finish(acc[c]));
  out.rows.push_back(finish(full));
  return out;
}

inline nlohmann::json to_json(const DatasetSummary& s) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : s.rows) {
    rows.push_back({{"source", r.source},
                    {"related_pairs", r.related},
                    {"related_avg_per_commit", r.related_avg},
                    {"independent_pairs", r.independent},
                    {"independent_avg_per_commit", r.independent_avg},
                    {"commits", r.commits}});
  }
  return {{"rows", rows}};
}

inline std::string render_table(const DatasetSummary& s) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-32s %10s %10s %12s %12s %8s\n", "source", "related", "avg/commit",
                "independent", "avg/commit", "commits");
  os << buf;
  for (const auto& r : s.rows) {
    std::snprintf(buf, sizeof buf, "%-32s %10zu %10.2f %12zu %12.2f %8zu\n", r.source.c_str(), r.related,
                  r.related_avg, r.independent, r.independent_avg, r.commits);
    os << buf;
  }
  return os.str();
}

}  // namespace cmgeval
