#pragma once

// Importer for the published commit-message-edits dataset. The published files are flat
// pair rows (one (G, E) pair per line, JSONL or a JSON array); this rebuilds the
// per-commit derivation graph used by the rest of the toolkit.

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/corpus.hpp"
#include "cmgeval/hash.hpp"

namespace cmgeval {

namespace detail {

inline const nlohmann::json* first_of(const nlohmann::json& row, std::initializer_list<const char*> keys) {
  for (const char* k : keys) {
    auto it = row.find(k);
    if (it != row.end() && !it->is_null()) return &*it;
  }
  return nullptr;
}

inline std::string string_of(const nlohmann::json& row, std::initializer_list<const char*> keys,
                             const std::string& where, bool required) {
  const auto* v = first_of(row, keys);
  if (!v) {
    if (required) throw DataError(where + ": missing field '" + *keys.begin() + "'");
    return {};
  }
  if (!v->is_string()) throw DataError(where + ": field '" + *keys.begin() + "' is not a string");
  return v->get<std::string>();
}

inline NodeSource generated_source(const std::string& type, const std::string& where) {
  if (type.empty() || type == "initial" || type == "model" || type == "gpt4" || type == "original")
    return NodeSource::model;
  if (type == "synthetic_backward" || type == "synthetic-backward" || type == "backward")
    return NodeSource::synthetic_backward;
  throw DataError(where + ": unknown G type '" + type + "'");
}

inline NodeSource edited_source(const std::string& type, const std::string& where) {
  if (type.empty() || type == "expert_labeled" || type == "expert-labeled" || type == "expert" ||
      type == "human")
    return NodeSource::expert;
  if (type == "synthetic_forward" || type == "synthetic-forward" || type == "forward")
    return NodeSource::synthetic_forward;
  throw DataError(where + ": unknown E type '" + type + "'");
}

}  // namespace detail

/// Accepted row fields (first present alias wins):
///   commit:   hash | commit_id | commit_hash
///   G text:   G_text | commit_msg_start | generated
///   E text:   E_text | commit_msg_end | edited
///   G type:   G_type  (initial | synthetic_backward)
///   E type:   E_type  (expert_labeled | synthetic_forward)
///   related:  is_related (default true; false rows only contribute nodes)
///   optional: original_message | message, diff | mods, summary, repo
inline Corpus import_released_rows(const std::vector<nlohmann::json>& rows) {
  struct Building {
    CommitRecord rec;
    std::map<std::pair<int, std::string>, std::string> node_ids;  // (source, text) -> id
    std::set<std::tuple<std::string, std::string, DerivationMethod>> edges;
  };
  std::map<std::string, Building> commits;
  std::vector<std::string> order;

  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    const std::string where = "row " + std::to_string(i + 1);
    if (!row.is_object()) throw DataError(where + ": expected an object");
    const auto cid = detail::string_of(row, {"hash", "commit_id", "commit_hash"}, where, true);
    const auto gtext = detail::string_of(row, {"G_text", "commit_msg_start", "generated"}, where, true);
    const auto etext = detail::string_of(row, {"E_text", "commit_msg_end", "edited"}, where, true);
    const auto gsrc = detail::generated_source(detail::string_of(row, {"G_type"}, where, false), where);
    const auto esrc = detail::edited_source(detail::string_of(row, {"E_type"}, where, false), where);
    bool is_related = true;
    if (const auto* r = detail::first_of(row, {"is_related"}); r && r->is_boolean()) is_related = r->get<bool>();

    auto [it, fresh] = commits.try_emplace(cid);
    auto& b = it->second;
    if (fresh) {
      order.push_back(cid);
      b.rec.commit_id = cid;
    }
    if (b.rec.original_message.empty())
      b.rec.original_message = detail::string_of(row, {"original_message", "message"}, where, false);
    if (b.rec.diff.empty()) {
      if (const auto* d = detail::first_of(row, {"diff", "mods"})) b.rec.diff = d->is_string() ? d->get<std::string>() : d->dump();
    }
    if (!b.rec.summary) {
      auto s = detail::string_of(row, {"summary"}, where, false);
      if (!s.empty()) b.rec.summary = std::move(s);
    }

    auto intern = [&](NodeSource src, const std::string& text) {
      auto key = std::make_pair(static_cast<int>(src), text);
      if (auto f = b.node_ids.find(key); f != b.node_ids.end()) return f->second;
      const bool gen = src == NodeSource::model || src == NodeSource::synthetic_backward;
      std::string id = std::string(gen ? "g-" : "e-") + to_string(src) + "-" + sha256_hex(text).substr(0, 12);
      b.node_ids.emplace(key, id);
      b.rec.nodes.push_back({id, gen ? NodeKind::generated : NodeKind::edited, src, text, std::nullopt});
      return id;
    };
    if (gtext.empty() || etext.empty()) throw DataError(where + ": empty message text");
    const auto gid = intern(gsrc, gtext);
    const auto eid = intern(esrc, etext);
    if (!is_related) continue;

    if (gsrc == NodeSource::synthetic_backward && esrc == NodeSource::expert) {
      b.edges.emplace(eid, gid, DerivationMethod::llm_backward);
    } else if (esrc == NodeSource::synthetic_forward) {
      b.edges.emplace(gid, eid, DerivationMethod::llm_forward);
    } else {
      b.edges.emplace(gid, eid, DerivationMethod::human_edit);
    }
  }

  Corpus corpus;
  for (const auto& cid : order) {
    auto& b = commits.at(cid);
    std::sort(b.rec.nodes.begin(), b.rec.nodes.end(),
              [](const MessageNode& a, const MessageNode& c) { return a.node_id < c.node_id; });
    for (const auto& [from, to, method] : b.edges) b.rec.edges.push_back({from, to, method});
    validate(b.rec);
    corpus.push_back(std::move(b.rec));
  }
  return corpus;
}

/// Reads one published file: a JSON array of rows or JSONL.
inline std::vector<nlohmann::json> read_released_rows(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<nlohmann::json> rows;
  const auto first = content.find_first_not_of(" \t\r\n");
  try {
    if (first != std::string::npos && content[first] == '[') {
      for (auto& r : nlohmann::json::parse(content)) rows.push_back(std::move(r));
      return rows;
    }
    std::istringstream ss(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(ss, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        rows.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ":" + std::to_string(lineno) + ": parse error: " + e.what());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": parse error: " + e.what());
  }
  return rows;
}

inline Corpus import_released(const std::vector<std::string>& paths) {
  std::vector<nlohmann::json> rows;
  for (const auto& p : paths) {
    auto part = read_released_rows(p);
    rows.insert(rows.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return import_released_rows(rows);
}

}  // namespace cmgeval
