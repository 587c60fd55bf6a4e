#include <iostream>

#include <CLI11.hpp>

#include "cmgeval/commands.hpp"

namespace {

using cmgeval::cli::RunConfig;

void add_corpus(CLI::App* sub, RunConfig& cfg) {
  sub->add_option("--corpus", cfg.corpus, "Corpus JSONL file")->required();
}

void add_pairing(CLI::App* sub, RunConfig& cfg) {
  sub->add_option_function<std::string>(
         "--pairing", [&cfg](const std::string& s) { cfg.pairing = cmgeval::parse_pairing_policy(s); },
         "Pairing policy: direct or closure (default direct)")
      ->check(CLI::IsMember({"direct", "closure"}));
  sub->add_flag("--include-original", cfg.include_original, "Also pair generated messages with the original message");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Commit message generation evaluation toolkit"};
  app.require_subcommand(1);
  RunConfig cfg;
  app.add_option("--seed", cfg.seed, "Root seed recorded in every artifact");
  app.add_option("--out", cfg.out, "Output directory for artifacts");
  app.add_option("--parallelism", cfg.parallelism, "Worker threads")->check(CLI::PositiveNumber);

  auto* summarize = app.add_subcommand("summarize", "Print pair counts per dataset category");
  add_corpus(summarize, cfg);
  add_pairing(summarize, cfg);

  auto* select = app.add_subcommand("select", "Correlate offline metrics with the online metric");
  add_corpus(select, cfg);
  add_pairing(select, cfg);
  select->add_option("--metrics", cfg.metrics, "Offline metrics (default: all)")->delimiter(',');
  select->add_option("--online-metric", cfg.online_metric, "Online metric (default edit-distance)");
  select->add_option("--metric-config", cfg.metric_config, "JSON file with per-metric settings");
  select->add_option("--embedding-url", cfg.embedding_url, "Embedding provider endpoint for embedding-score");
  select->add_flag("--matrix", cfg.matrix, "Also correlate every metric pair");

  auto* extend = app.add_subcommand("extend", "Grow the corpus with LLM-generated messages");
  add_corpus(extend, cfg);
  extend->add_option("--direction", cfg.direction, "backward or forward")->check(CLI::IsMember({"backward", "forward"}));
  extend->add_option("--tb", cfg.tb, "Backward filter threshold (default 0.5)");
  extend->add_option("--tf", cfg.tf, "Forward filter threshold (default 0.75)");
  extend->add_option("--attempts", cfg.attempts, "Attempts per job (default 3)");
  extend->add_option("--icl", cfg.icl, "In-context examples per prompt (default 15)");
  extend->add_option("--samples-per-node", cfg.samples_per_node, "Jobs per input node (default 1)");
  extend->add_option("--forward-from", cfg.forward_from, "Generated sources to expand forward")->delimiter(',');
  extend->add_option("--transcript", cfg.transcript, "Replay recorded LLM exchanges");
  extend->add_option("--llm-url", cfg.llm_url, "Chat-completions server, key from CMGEVAL_LLM_API_KEY");
  extend->add_option("--llm-model", cfg.llm_model, "Model name sent to the server");
  extend->add_option("--temperature", cfg.temperature, "Sampling temperature");
  extend->add_option("--record-transcript", cfg.record_transcript, "Write live exchanges to this JSONL file");
  extend->add_flag("--echo", cfg.echo_client, "Offline client that returns the input unchanged");

  auto* validate = app.add_subcommand("validate", "Compare corpus edit distances with production telemetry");
  add_corpus(validate, cfg);
  validate->add_option("--telemetry", cfg.telemetry, "Telemetry CSV or JSONL")->required();
  validate->add_option("--ed-cap", cfg.ed_cap, "Largest plausible telemetry edit distance");
  validate->add_option("--bucket-width", cfg.bucket_width, "Histogram bucket width")->check(CLI::PositiveNumber);

  auto* serve = app.add_subcommand("serve", "Run the annotation service");
  add_corpus(serve, cfg);
  serve->add_option("--bind", cfg.bind, "host:port (default 127.0.0.1:8080)");
  serve->add_option("--state-dir", cfg.state_dir, "Directory for durable session logs");

  auto* import = app.add_subcommand("import", "Convert released dataset files into a corpus");
  import->add_option("inputs", cfg.inputs, "JSON or JSONL files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    cfg.resolve();
    if (*summarize) return cmgeval::cli::cmd_summarize(cfg, std::cout);
    if (*select) return cmgeval::cli::cmd_select(cfg, std::cout);
    if (*extend) return cmgeval::cli::cmd_extend(cfg, std::cout);
    if (*validate) return cmgeval::cli::cmd_validate(cfg, std::cout);
    if (*serve) return cmgeval::cli::cmd_serve(cfg, std::cout);
    if (*import) return cmgeval::cli::cmd_import(cfg, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cmgeval::cli::exit_code(e);
  }
  return 1;
}
