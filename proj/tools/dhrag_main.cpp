// dhrag: ingest a corpus, chat against it, run batch evaluations, and
// inspect session snapshots.

#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dhrag/config.hpp"
#include "dhrag/evaluation.hpp"
#include "dhrag/http.hpp"
#include "dhrag/pipeline.hpp"
#include "dhrag/snapshot.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;  // transport/generation failures
constexpr int kExitInput = 2;    // usage, missing/corrupt files, bad config

std::shared_ptr<const dhrag::Embedder> make_embedder(const dhrag::AppConfig& cfg) {
  if (cfg.embedder_kind == "http") {
    if (cfg.embedder_endpoint.empty()) {
      throw dhrag::ValidationError("embedder.endpoint: required when embedder.kind = http");
    }
    dhrag::HttpOptions opts;
    opts.timeout_ms = cfg.generation_timeout_ms;
    opts.retries = 0;  // embedding calls fail fast; only generation retries
    return std::make_shared<dhrag::HttpEmbedder>(cfg.embedder_endpoint, cfg.embedder_model,
                                                 cfg.embedder_dim, opts);
  }
  return std::make_shared<dhrag::HashedTfEmbedder>(cfg.embedder_dim, cfg.embedder_normalize);
}

std::shared_ptr<const dhrag::GeneratorClient> make_generator(const dhrag::AppConfig& cfg,
                                                             bool mock,
                                                             const std::string& script_path) {
  if (mock) {
    if (!script_path.empty()) {
      return std::make_shared<dhrag::MockGenerator>(dhrag::MockGenerator::load_script(script_path));
    }
    return std::make_shared<dhrag::MockGenerator>();
  }
  dhrag::HttpOptions opts;
  opts.timeout_ms = cfg.generation_timeout_ms;
  opts.retries = cfg.generation_retries;
  opts.retry_backoff_ms = cfg.generation_retry_backoff_ms;
  return std::make_shared<dhrag::HttpGenerator>(cfg.generation_endpoint, opts);
}

dhrag::GenerationRequest generation_defaults(const dhrag::AppConfig& cfg) {
  dhrag::GenerationRequest req;
  req.max_tokens = cfg.generation_max_tokens;
  req.temperature = cfg.generation_temperature;
  req.model_id = cfg.generation_model;
  return req;
}

dhrag::AttentionMatrix load_attention(const dhrag::AppConfig& cfg) {
  if (cfg.attention_w_file.empty()) return {};
  return dhrag::AttentionMatrix::load(cfg.attention_w_file, cfg.embedder_dim);
}

void print_trace_summary(const dhrag::TurnTrace& trace) {
  auto& os = std::cout;
  os << "[trace] static:";
  for (const auto& h : trace.static_hits) os << " " << h.doc_id << "(" << h.score << ")";
  os << "\n[trace] hm:";
  for (const auto& m : trace.hm_hits) {
    os << " t" << m.triple_id << "(" << m.score << "; cluster " << m.cluster_id << "/summary "
       << m.summary_id << ")";
  }
  os << "\n[trace] cot:";
  for (const auto& m : trace.cot_hits) {
    os << " t" << m.triple_id << "(" << m.score << "; chain " << m.chain_id << ")";
  }
  os << "\n[trace] selected:";
  for (const auto& s : trace.context.selected) {
    os << " " << s.item.origin_id << "(w=" << s.weight << ")";
  }
  os << "\n[trace] evicted:";
  for (auto id : trace.evicted_ids) os << " " << id;
  os << "\n[trace] budget used: " << trace.context.token_budget_used << "\n";
  // Timings go to stderr: they vary run to run and must not pollute
  // deterministic transcripts.
  std::cerr << "[trace] timings (ms):";
  for (const auto& [stage, ms] : trace.stage_ms) std::cerr << " " << stage << "=" << ms;
  std::cerr << "\n";
}

int cmd_ingest(const dhrag::AppConfig& cfg, const std::string& corpus_path,
               const std::string& out_path) {
  auto embedder = make_embedder(cfg);
  dhrag::KnowledgeBase kb(embedder);
  kb.ingest(dhrag::load_corpus_jsonl(corpus_path));
  kb.freeze();
  dhrag::save_kb(kb, out_path);
  std::cout << "ingested " << kb.size() << " documents\n";
  return kExitOk;
}

int cmd_chat(const dhrag::AppConfig& cfg, const std::string& kb_path, bool mock,
             const std::string& script_path, bool trace) {
  auto embedder = make_embedder(cfg);
  std::shared_ptr<const dhrag::KnowledgeBase> kb;
  if (!kb_path.empty()) {
    kb = std::make_shared<const dhrag::KnowledgeBase>(dhrag::load_or_ingest_kb(kb_path, embedder));
  }
  dhrag::Pipeline pipeline(embedder, kb, make_generator(cfg, mock, script_path),
                           load_attention(cfg), generation_defaults(cfg));
  dhrag::Session session = pipeline.new_session(cfg.pipeline, "chat");

  std::string line;
  std::cerr << "dhrag chat (:quit to exit, :save <path> to snapshot)\n";
  while (true) {
    std::cerr << "dhrag> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    std::string input(dhrag::trim(line));
    if (input.empty()) continue;
    if (input == ":quit") break;
    if (input.rfind(":save", 0) == 0) {
      std::string path(dhrag::trim(input.substr(5)));
      if (path.empty()) {
        std::cerr << "usage: :save <path>\n";
        continue;
      }
      dhrag::save_snapshot(session.history, session.index, *embedder, path);
      std::cout << "saved " << path << "\n";
      continue;
    }
    if (input[0] == ':') {
      std::cerr << "unknown command: " << input << "\n";
      continue;
    }
    try {
      auto outcome = pipeline.respond(session, input);
      std::cout << outcome.response << "\n";
      if (trace) print_trace_summary(outcome.trace);
    } catch (const dhrag::TransportError& e) {
      // Endpoint trouble fails the turn, not the session.
      std::cerr << "turn failed: " << e.what() << "\n";
    }
  }
  return kExitOk;
}

struct AblationVariant {
  std::string name;  // "full", "wo_dynamic", ...
  dhrag::PipelineConfig config;
};

std::vector<AblationVariant> ablation_variants(const dhrag::PipelineConfig& full,
                                               const std::string& ablate_list) {
  std::vector<AblationVariant> out{{"full", full}};
  if (ablate_list.empty() || ablate_list == "none") return out;
  std::string token;
  std::stringstream ss(ablate_list);
  while (std::getline(ss, token, ',')) {
    std::string flag(dhrag::trim(token));
    if (flag.empty()) continue;
    dhrag::PipelineConfig variant = full;
    if (flag == "dynamic") {
      variant.enable_dynamic = false;
    } else if (flag == "integration") {
      variant.enable_integration = false;
    } else if (flag == "cot") {
      variant.enable_cot = false;
    } else if (flag == "hierarchical") {
      variant.enable_hierarchical = false;
    } else {
      throw dhrag::ValidationError("--ablate: unknown flag '" + flag +
                                   "' (expected dynamic, integration, cot, hierarchical or none)");
    }
    out.push_back({"wo_" + flag, variant});
  }
  return out;
}

std::string delta_table(const std::vector<std::pair<std::string, dhrag::EvalReport>>& reports,
                        bool percent) {
  auto fmt = [&](std::optional<double> v) -> std::string {
    if (!v) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << (percent ? *v * 100.0 : *v);
    return os.str();
  };
  const auto& full = reports.front().second;
  std::ostringstream os;
  os << std::left << std::setw(20) << "variant" << std::right << std::setw(18) << "BLEU"
     << std::setw(18) << "F1" << "\n";
  os << std::string(56, '-') << "\n";
  for (const auto& [name, report] : reports) {
    std::string bleu_cell = fmt(report.bleu_score);
    std::string f1_cell = fmt(report.f1_score);
    if (name != "full" && full.bleu_score && report.bleu_score) {
      std::ostringstream d;
      d << std::fixed << std::setprecision(4)
        << (percent ? (*report.bleu_score - *full.bleu_score) * 100.0
                    : *report.bleu_score - *full.bleu_score);
      bleu_cell += " (" + d.str() + ")";
    }
    if (name != "full" && full.f1_score && report.f1_score) {
      std::ostringstream d;
      d << std::fixed << std::setprecision(4)
        << (percent ? (*report.f1_score - *full.f1_score) * 100.0
                    : *report.f1_score - *full.f1_score);
      f1_cell += " (" + d.str() + ")";
    }
    os << std::left << std::setw(20) << name << std::right << std::setw(18) << bleu_cell
       << std::setw(18) << f1_cell << "\n";
  }
  return os.str();
}

int cmd_eval(const dhrag::AppConfig& cfg, const std::string& dataset_path,
             const std::string& kb_path, bool mock, const std::string& script_path,
             const std::string& ablate_list, const std::string& out_dir, bool percent) {
  auto dataset = dhrag::load_dataset_jsonl(dataset_path);
  dataset.corpus_ref = kb_path;
  auto embedder = make_embedder(cfg);
  auto generator = make_generator(cfg, mock, script_path);
  std::filesystem::create_directories(out_dir);

  std::vector<std::pair<std::string, dhrag::EvalReport>> reports;
  for (const auto& variant : ablation_variants(cfg.pipeline, ablate_list)) {
    dhrag::AppConfig stamped = cfg;
    stamped.pipeline = variant.config;
    auto report = dhrag::run_eval(dataset, variant.config, embedder, generator, cfg.eval_workers,
                                  dhrag::config_fingerprint(stamped));
    auto base = std::filesystem::path(out_dir) / ("report_" + variant.name);
    dhrag::write_text_file(base.string() + ".json", dhrag::report_to_json(report).dump(2) + "\n");
    dhrag::write_text_file(base.string() + ".txt", dhrag::report_to_text(report, percent));
    dhrag::write_text_file(
        (std::filesystem::path(out_dir) / ("timings_" + variant.name + ".json")).string(),
        dhrag::timings_to_json(report).dump(2) + "\n");
    dhrag::write_histogram_csv(
        (std::filesystem::path(out_dir) / ("cluster_hist_" + variant.name + ".csv")).string(),
        "cluster_size", report.cluster_size_hist);
    dhrag::write_histogram_csv(
        (std::filesystem::path(out_dir) / ("chain_hist_" + variant.name + ".csv")).string(),
        "chain_length", report.chain_length_hist);
    reports.emplace_back(variant.name, std::move(report));
  }

  if (reports.size() > 1) {
    dhrag::write_text_file((std::filesystem::path(out_dir) / "delta.txt").string(),
                           delta_table(reports, percent));
  }

  for (const auto& [name, report] : reports) {
    std::cout << name << ": bleu=" << (report.bleu_score ? std::to_string(*report.bleu_score) : "n/a")
              << " f1=" << (report.f1_score ? std::to_string(*report.f1_score) : "n/a")
              << " turns=" << report.turn_count << " errors=" << report.error_count << "\n";
  }
  std::cout << "reports written to " << out_dir << "\n";
  return kExitOk;
}

int cmd_stats(const dhrag::AppConfig& cfg, const std::string& snapshot_path,
              const std::string& out_dir) {
  auto embedder = make_embedder(cfg);
  auto loaded = dhrag::load_snapshot(snapshot_path, *embedder);
  auto stats = dhrag::db_stats(loaded.store, loaded.index);

  std::cout << "clusters (" << stats.cluster_sizes.size() << "):\n";
  for (const auto& [cid, size] : stats.cluster_sizes) {
    std::cout << "  cluster " << cid << ": " << size << "\n";
  }
  std::cout << "chain length histogram:\n";
  for (const auto& [len, count] : stats.chain_length_hist) {
    std::cout << "  " << len << ": " << count << "\n";
  }
  if (stats.avg_chain_length) {
    std::cout << "average chain length: " << *stats.avg_chain_length << "\n";
  } else {
    std::cout << "average chain length: n/a\n";
  }

  std::filesystem::create_directories(out_dir);
  std::ostringstream cluster_csv;
  cluster_csv << "cluster_id,size\n";
  for (const auto& [cid, size] : stats.cluster_sizes) cluster_csv << cid << "," << size << "\n";
  dhrag::write_text_file((std::filesystem::path(out_dir) / "cluster_sizes.csv").string(),
                         cluster_csv.str());
  dhrag::write_histogram_csv((std::filesystem::path(out_dir) / "chain_lengths.csv").string(),
                             "chain_length", stats.chain_length_hist);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"retrieval-augmented dialogue engine with a dynamic conversation-history database"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "config file (key = value lines)");
  app.add_option("--set", overrides, "override a config key, e.g. --set history.alpha=0.7");

  auto* ingest = app.add_subcommand("ingest", "embed a JSONL corpus into a knowledge-base file");
  std::string corpus_path, kb_out;
  ingest->add_option("--corpus", corpus_path, "corpus JSONL path")->required();
  ingest->add_option("--out", kb_out, "output knowledge-base file")->required();

  auto* chat = app.add_subcommand("chat", "interactive REPL");
  std::string chat_kb, chat_script;
  bool chat_mock = false, chat_live = false, chat_trace = false;
  chat->add_option("--kb", chat_kb, "knowledge-base file or corpus JSONL");
  chat->add_flag("--mock", chat_mock, "use the deterministic mock generator");
  chat->add_flag("--live", chat_live, "use the configured HTTP generator");
  chat->add_option("--script", chat_script, "scripted answers for the mock (JSON object)");
  chat->add_flag("--trace", chat_trace, "print a per-turn trace summary");

  auto* eval = app.add_subcommand("eval", "replay a dialogue dataset and score it");
  std::string eval_dataset, eval_kb, eval_script, eval_ablate = "none", eval_out = "eval_out";
  bool eval_mock = false, eval_live = false, eval_percent = false;
  eval->add_option("--dataset", eval_dataset, "dialogue dataset JSONL")->required();
  eval->add_option("--kb", eval_kb, "knowledge-base file or corpus JSONL")->required();
  eval->add_flag("--mock", eval_mock, "use the deterministic mock generator");
  eval->add_flag("--live", eval_live, "use the configured HTTP generator");
  eval->add_option("--script", eval_script, "scripted answers for the mock (JSON object)");
  eval->add_option("--ablate", eval_ablate,
                   "comma list of modules to disable in extra runs "
                   "(dynamic,integration,cot,hierarchical) or 'none'");
  eval->add_option("--out-dir", eval_out, "directory for report files");
  eval->add_flag("--percent", eval_percent, "display scores as percentages");

  auto* stats = app.add_subcommand("stats", "histograms from a session snapshot");
  std::string stats_snapshot, stats_out = ".";
  stats->add_option("--snapshot", stats_snapshot, "session snapshot path")->required();
  stats->add_option("--out-dir", stats_out, "directory for CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    dhrag::AppConfig cfg;
    if (!config_path.empty()) dhrag::apply_config_file(cfg, config_path);
    dhrag::apply_overrides(cfg, overrides);

    if (ingest->parsed()) return cmd_ingest(cfg, corpus_path, kb_out);
    if (chat->parsed()) {
      if (chat_mock == chat_live) {
        std::cerr << "chat: pass exactly one of --mock or --live\n";
        return kExitInput;
      }
      return cmd_chat(cfg, chat_kb, chat_mock, chat_script, chat_trace);
    }
    if (eval->parsed()) {
      if (eval_mock == eval_live) {
        std::cerr << "eval: pass exactly one of --mock or --live\n";
        return kExitInput;
      }
      return cmd_eval(cfg, eval_dataset, eval_kb, eval_mock, eval_script, eval_ablate, eval_out,
                      eval_percent);
    }
    if (stats->parsed()) return cmd_stats(cfg, stats_snapshot, stats_out);
    return kExitInput;
  } catch (const dhrag::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const dhrag::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const dhrag::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const dhrag::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
