#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmgeval/annot_http.hpp"
#include "cmgeval/corpus.hpp"
#include "cmgeval/distcheck.hpp"
#include "cmgeval/embedding_http.hpp"
#include "cmgeval/hash.hpp"
#include "cmgeval/llm_http.hpp"
#include "cmgeval/released_import.hpp"
#include "cmgeval/selection.hpp"
#include "cmgeval/synthgen.hpp"

namespace cmgeval::cli {

/// Everything a command needs. Artifacts embed `to_json()`, which omits the output directory
/// so that reruns into different directories stay byte-identical.
struct RunConfig {
  std::string corpus;
  PairingPolicy pairing = PairingPolicy::direct;
  bool include_original = false;
  std::vector<std::string> metrics;
  std::string online_metric = "edit-distance";
  std::string metric_config;
  std::string embedding_url;
  bool matrix = false;
  std::string direction = "backward";
  std::optional<double> tb;
  std::optional<double> tf;
  int attempts = kDefaultAttempts;
  std::size_t icl = kDefaultIclExamples;
  int samples_per_node = 1;
  std::vector<std::string> forward_from;
  std::uint64_t seed = 0;
  unsigned parallelism = 1;
  std::string transcript;
  std::string record_transcript;
  std::string llm_url;
  std::string llm_model;
  double temperature = 0.0;
  bool echo_client = false;
  std::string telemetry;
  std::uint64_t ed_cap = kDefaultEdCap;
  double bucket_width = 50.0;
  std::string bind = "127.0.0.1:8080";
  std::string state_dir;
  std::vector<std::string> inputs;
  std::string out;

  /// Makes input paths absolute and checks they exist before any work starts.
  void resolve() {
    namespace fs = std::filesystem;
    auto fix = [](std::string& p, const char* what) {
      if (p.empty()) return;
      std::error_code ec;
      auto abs = fs::absolute(p, ec);
      if (ec || !fs::exists(abs)) throw UsageError(std::string(what) + " not found: " + p);
      p = abs.lexically_normal().string();
    };
    fix(corpus, "corpus");
    fix(metric_config, "metric config");
    fix(transcript, "transcript");
    fix(telemetry, "telemetry");
    for (auto& in : inputs) fix(in, "input");
    if (!out.empty()) out = fs::absolute(out).lexically_normal().string();
  }

  double threshold() const {
    return parse_direction(direction) == Direction::backward ? tb.value_or(kDefaultBackwardThreshold)
                                                              : tf.value_or(kDefaultForwardThreshold);
  }
};

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << content;
}

inline nlohmann::json input_ref(const std::string& path) {
  if (path.empty()) return nullptr;
  return {{"file", std::filesystem::path(path).filename().string()}, {"sha256", sha256_hex(read_file(path))}};
}

inline Corpus require_corpus(const RunConfig& cfg) {
  if (cfg.corpus.empty()) throw UsageError("--corpus is required");
  auto corpus = load_corpus(cfg.corpus);
  validate(corpus);
  return corpus;
}

inline std::vector<MetricDescriptor> metric_set(const RunConfig& cfg, bool have_provider) {
  nlohmann::json overrides = nlohmann::json::object();
  if (!cfg.metric_config.empty()) {
    try {
      overrides = nlohmann::json::parse(read_file(cfg.metric_config));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError("metric config '" + cfg.metric_config + "': " + e.what());
    }
    if (!overrides.is_object()) throw UsageError("metric config must be a JSON object keyed by metric name");
    for (const auto& [k, v] : overrides.items()) parse_metric_name(k);
  }
  std::vector<MetricDescriptor> out;
  auto add = [&](MetricName n) {
    auto d = make_metric(n);
    if (overrides.contains(d.label())) d = apply_config(d, overrides.at(d.label()));
    out.push_back(d);
  };
  if (cfg.metrics.empty()) {
    for (auto n : all_metric_names()) {
      if (n == MetricName::embedding_score && !have_provider) {
        std::cerr << "note: embedding-score skipped (no --embedding-url)\n";
        continue;
      }
      add(n);
    }
  } else {
    for (const auto& m : cfg.metrics) add(parse_metric_name(m));
  }
  return out;
}

inline std::set<NodeSource> parse_sources(const std::vector<std::string>& names) {
  std::set<NodeSource> out;
  for (const auto& s : names) {
    try {
      out.insert(nlohmann::json(s).get<NodeSource>());
    } catch (const nlohmann::json::exception&) {
      throw UsageError("unknown node source '" + s + "'");
    }
  }
  return out;
}

class EchoClient : public LlmClient {
 public:
  /// Answers with the target message verbatim, i.e. the text after the last "<<<" fence.
  std::string complete(const ChatRequest& request) override {
    const auto open = request.prompt.rfind("<<<\n");
    const auto close = request.prompt.rfind("\n>>>");
    if (open == std::string::npos || close == std::string::npos || close < open) return request.prompt;
    return request.prompt.substr(open + 4, close - open - 4);
  }
};

inline std::pair<std::string, int> parse_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) throw UsageError("--bind expects host:port, got '" + bind + "'");
  try {
    std::size_t used = 0;
    const int port = std::stoi(bind.substr(colon + 1), &used);
    if (used != bind.size() - colon - 1 || port < 0 || port > 65535) throw std::invalid_argument("port");
    return {bind.substr(0, colon), port};
  } catch (const std::logic_error&) {
    throw UsageError("--bind has an invalid port: '" + bind + "'");
  }
}

}  // namespace detail

inline int cmd_summarize(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = detail::require_corpus(cfg);
  const auto summary = dataset_summary(corpus, cfg.pairing, cfg.include_original);
  const auto table = render_table(summary);
  out << table;
  if (!cfg.out.empty()) {
    nlohmann::json j{{"command", "summarize"},
                     {"corpus", detail::input_ref(cfg.corpus)},
                     {"pairing", to_string(cfg.pairing)},
                     {"include_original", cfg.include_original},
                     {"seed", cfg.seed},
                     {"summary", to_json(summary)}};
    detail::write_file(std::filesystem::path(cfg.out) / "summary.json", j.dump(2) + "\n");
    detail::write_file(std::filesystem::path(cfg.out) / "summary.txt", table);
  }
  return 0;
}

inline int cmd_select(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = detail::require_corpus(cfg);
  std::optional<HttpEmbeddingProvider> provider;
  if (!cfg.embedding_url.empty()) provider = HttpEmbeddingProvider::from_url(cfg.embedding_url);
  const auto metrics = detail::metric_set(cfg, provider.has_value());
  auto online = make_metric(cfg.online_metric);

  SelectionOptions opt;
  opt.policy = cfg.pairing;
  opt.include_original = cfg.include_original;
  opt.provider = provider ? &*provider : nullptr;
  opt.parallelism = cfg.parallelism;

  std::vector<QResult> results;
  nlohmann::json matrix = nullptr;
  if (cfg.matrix) {
    const auto m = q_matrix(corpus, metrics, opt);
    matrix = matrix_to_json(m);
    bool found = false;
    for (std::size_t j = 0; j < metrics.size() && !found; ++j) {
      if (metrics[j].name != online.name) continue;
      found = true;
      for (std::size_t i = 0; i < metrics.size(); ++i) results.push_back(m[i][j]);
    }
    if (!found) throw UsageError("--matrix needs the online metric inside --metrics");
  } else {
    results = cmgeval::detail::parallel_indexed<QResult>(metrics.size(), cfg.parallelism,
                                                [&](std::size_t i) { return q_metric(corpus, metrics[i], online, opt); });
  }
  const auto rep = report(results);
  const auto table = render_table(rep);
  out << table;

  if (!cfg.out.empty()) {
    nlohmann::json descs = nlohmann::json::array();
    for (const auto& m : metrics) descs.push_back(to_json(m));
    nlohmann::json j{{"command", "select"},
                     {"corpus", detail::input_ref(cfg.corpus)},
                     {"pairing", to_string(cfg.pairing)},
                     {"include_original", cfg.include_original},
                     {"online_metric", to_json(online)},
                     {"metrics", descs},
                     {"seed", cfg.seed},
                     {"report", to_json(rep)}};
    if (!matrix.is_null()) j["matrix"] = matrix;
    detail::write_file(std::filesystem::path(cfg.out) / "select.json", j.dump(2) + "\n");
    detail::write_file(std::filesystem::path(cfg.out) / "select.txt", table);
  }
  return 0;
}

inline int cmd_extend(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = detail::require_corpus(cfg);
  ExtendConfig ec;
  ec.direction = parse_direction(cfg.direction);
  ec.threshold = cfg.threshold();
  ec.attempts = cfg.attempts;
  ec.icl_examples = cfg.icl;
  ec.samples_per_node = cfg.samples_per_node;
  ec.seed = cfg.seed;
  ec.parallelism = cfg.parallelism;
  ec.model = cfg.llm_model;
  ec.temperature = cfg.temperature;
  ec.forward_from = detail::parse_sources(cfg.forward_from);
  ec.check();

  const int modes = !cfg.transcript.empty() + !cfg.llm_url.empty() + cfg.echo_client;
  if (modes != 1) throw UsageError("extend needs exactly one of --transcript, --llm-url or --echo");
  if (!cfg.record_transcript.empty() && cfg.llm_url.empty())
    throw UsageError("--record-transcript only applies with --llm-url");

  std::unique_ptr<LlmClient> base;
  if (!cfg.transcript.empty()) base = std::make_unique<ReplayLlmClient>(load_transcript(cfg.transcript));
  else if (!cfg.llm_url.empty()) base = std::make_unique<HttpChatClient>(cfg.llm_url);
  else base = std::make_unique<detail::EchoClient>();
  std::optional<RecordingLlmClient> recorder;
  LlmClient* client = base.get();
  if (!cfg.record_transcript.empty()) client = &recorder.emplace(*base);

  const auto res = extend_corpus(corpus, ec, *client);
  if (recorder) save_transcript(recorder->entries(), cfg.record_transcript);

  out << "accepted " << res.accepted.size() << ", rejected " << res.rejected.size() << "\n";
  for (const auto& r : res.rejected)
    out << "  rejected " << r.commit_id << "/" << r.input_node << " after " << r.attempts.size() << " attempt(s)\n";

  if (!cfg.out.empty()) {
    const std::filesystem::path dir(cfg.out);
    detail::write_file(dir / "corpus.jsonl", serialize_corpus(res.corpus));
    std::string prov, rej;
    for (std::size_t i = 0; i < res.accepted.size(); ++i) {
      auto j = res.accepted[i].to_json();
      j["node_id"] = res.accepted_node_ids[i];
      prov += j.dump() + "\n";
    }
    for (const auto& r : res.rejected) rej += r.to_json().dump() + "\n";
    detail::write_file(dir / "provenance.jsonl", prov);
    detail::write_file(dir / "rejections.jsonl", rej);
    nlohmann::json j{{"command", "extend"},
                     {"corpus", detail::input_ref(cfg.corpus)},
                     {"transcript", detail::input_ref(cfg.transcript)},
                     {"direction", cfg.direction},
                     {"threshold", ec.threshold},
                     {"attempts", ec.attempts},
                     {"icl", ec.icl_examples},
                     {"samples_per_node", ec.samples_per_node},
                     {"forward_from", cfg.forward_from},
                     {"seed", cfg.seed},
                     {"accepted", res.accepted.size()},
                     {"rejected", res.rejected.size()}};
    detail::write_file(dir / "extend.json", j.dump(2) + "\n");
  }
  return 0;
}

inline int cmd_validate(const RunConfig& cfg, std::ostream& out) {
  const auto corpus = detail::require_corpus(cfg);
  if (cfg.telemetry.empty()) throw UsageError("--telemetry is required");
  const auto log = load_telemetry(cfg.telemetry, cfg.ed_cap);
  const auto filtered = filter_zero(log);
  // The corpus side is the expert subset: model messages and their expert edits.
  const double corpus_len = mean_generated_length(corpus, {NodeSource::model});
  const double r = scale_factor(corpus_len, filtered.log);
  const auto cmp = compare_distributions(corpus_edit_distances(corpus, {"expert"}), scaled_ed_values(filtered.log, r),
                                         cfg.bucket_width);
  out << "telemetry records: " << filtered.total << ", zero-ED removed: " << filtered.removed << " ("
      << filtered.removed_fraction << ")\n"
      << "corpus mean G length: " << corpus_len << ", telemetry mean G length: " << mean_gen_length(filtered.log)
      << ", R = " << r << "\n"
      << "KS = " << cmp.ks << ", corpus peak bucket = " << cmp.corpus_peak
      << ", telemetry peak bucket = " << cmp.telemetry_peak << "\n";
  if (!cfg.out.empty()) {
    nlohmann::json j{{"command", "validate"},
                     {"corpus", detail::input_ref(cfg.corpus)},
                     {"telemetry", detail::input_ref(cfg.telemetry)},
                     {"seed", cfg.seed},
                     {"ed_cap", cfg.ed_cap},
                     {"removed_fraction", filtered.removed_fraction},
                     {"removed", filtered.removed},
                     {"total", filtered.total},
                     {"corpus_mean_length", corpus_len},
                     {"telemetry_mean_length", mean_gen_length(filtered.log)},
                     {"scale_factor", r},
                     {"comparison", to_json(cmp)}};
    detail::write_file(std::filesystem::path(cfg.out) / "distcheck.json", j.dump(2) + "\n");
    detail::write_file(std::filesystem::path(cfg.out) / "histogram.csv", histogram_csv(cmp));
  }
  return 0;
}

inline int cmd_import(const RunConfig& cfg, std::ostream& out) {
  if (cfg.inputs.empty()) throw UsageError("import needs at least one input file");
  if (cfg.out.empty()) throw UsageError("--out is required for import");
  const auto corpus = import_released(cfg.inputs);
  validate(corpus);
  detail::write_file(std::filesystem::path(cfg.out) / "corpus.jsonl", serialize_corpus(corpus));
  out << "imported " << corpus.size() << " commits\n";
  return 0;
}

/// Blocks until the server stops. `on_ready` receives the bound port.
inline int cmd_serve(const RunConfig& cfg, std::ostream& out, const std::function<void(annot::HttpServer&)>& on_ready = {}) {
  auto corpus = detail::require_corpus(cfg);
  const auto [host, port] = detail::parse_bind(cfg.bind);
  annot::ServiceOptions opt;
  opt.persist_dir = cfg.state_dir;
  opt.root_seed = cfg.seed;
  annot::Service svc(std::move(corpus), opt);
  annot::HttpServer server(svc);
  const int bound = server.bind(host, port);
  out << "serving on " << host << ":" << bound << std::endl;
  if (on_ready) {
    server.start_background();
    on_ready(server);
    server.stop();
  } else {
    server.serve();
  }
  return 0;
}

/// Exit code for an exception escaping a command.
inline int exit_code(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 1;
  if (dynamic_cast<const UpstreamError*>(&e)) return 3;
  return 2;
}

}  // namespace cmgeval::cli
