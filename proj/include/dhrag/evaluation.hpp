#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "dhrag/errors.hpp"
#include "dhrag/generation.hpp"
#include "dhrag/knowledge_base.hpp"
#include "dhrag/pipeline.hpp"
#include "dhrag/text.hpp"

namespace dhrag {

// ---- metrics ----------------------------------------------------------------

/// Sentence-level BLEU-4 with uniform n-gram weights and a brevity penalty,
/// over the library tokenizer. Conventions, pinned here and in the tests:
/// an empty candidate scores 0; zero unigram overlap scores 0; an n-gram
/// order with zero matches is add-one smoothed to 1 / (total + 1).
inline double bleu(const std::string& candidate, const std::string& reference) {
  auto c = tokenize(candidate);
  auto r = tokenize(reference);
  if (c.empty()) return 0.0;
  if (r.empty()) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::string, std::int64_t> ref_grams;
    if (r.size() >= n) {
      for (std::size_t i = 0; i + n <= r.size(); ++i) {
        std::string g;
        for (std::size_t k = 0; k < n; ++k) g += r[i + k] + "\x1f";
        ++ref_grams[g];
      }
    }
    std::int64_t total = c.size() >= n ? static_cast<std::int64_t>(c.size() - n + 1) : 0;
    std::int64_t matches = 0;
    std::map<std::string, std::int64_t> cand_grams;
    for (std::int64_t i = 0; i + static_cast<std::int64_t>(n) <= static_cast<std::int64_t>(c.size()); ++i) {
      std::string g;
      for (std::size_t k = 0; k < n; ++k) g += c[static_cast<std::size_t>(i) + k] + "\x1f";
      ++cand_grams[g];
    }
    for (const auto& [g, count] : cand_grams) {
      auto it = ref_grams.find(g);
      if (it != ref_grams.end()) matches += std::min(count, it->second);
    }
    if (n == 1 && matches == 0) return 0.0;
    double p = matches > 0 ? static_cast<double>(matches) / static_cast<double>(total)
                           : 1.0 / static_cast<double>(total + 1);
    log_sum += 0.25 * std::log(p);
  }
  double bp = c.size() >= r.size()
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(c.size()));
  return bp * std::exp(log_sum);
}

/// Bag-of-tokens F1 (multiset overlap) over the library tokenizer. Both
/// empty -> 1; exactly one empty -> 0.
inline double token_f1(const std::string& candidate, const std::string& reference) {
  auto c = tokenize(candidate);
  auto r = tokenize(reference);
  if (c.empty() && r.empty()) return 1.0;
  if (c.empty() || r.empty()) return 0.0;
  std::map<std::string, std::int64_t> rc;
  for (const auto& t : r) ++rc[t];
  std::int64_t overlap = 0;
  for (const auto& t : c) {
    auto it = rc.find(t);
    if (it != rc.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  double p = static_cast<double>(overlap) / static_cast<double>(c.size());
  double rr = static_cast<double>(overlap) / static_cast<double>(r.size());
  return 2.0 * p * rr / (p + rr);
}

// ---- datasets ----------------------------------------------------------------

struct DialogueTurn {
  std::string query;
  std::string reference_answer;
  std::string gold_passage;        // optional
  bool history_dependent = false;  // optional fixture annotation
};

struct Dialogue {
  std::string dialogue_id;
  std::vector<DialogueTurn> turns;
};

struct DialogueDataset {
  std::vector<Dialogue> dialogues;
  std::string corpus_ref;  // path to the KB corpus; set by the caller/CLI
};

/// Dataset format: JSON Lines, one dialogue per line:
/// {"dialogue_id": str, "turns": [{"query", "reference_answer",
///  "gold_passage"?, "history_dependent"?}]}
inline DialogueDataset load_dataset_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  DialogueDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(path, lineno, "invalid JSON");
    if (!j.is_object() || !j.contains("dialogue_id") || !j.contains("turns")) {
      throw ParseError(path, lineno, "expected an object with 'dialogue_id' and 'turns'");
    }
    Dialogue d;
    d.dialogue_id = j.at("dialogue_id").get<std::string>();
    if (!j["turns"].is_array() || j["turns"].empty()) {
      throw ParseError(path, lineno, "dialogue must have at least one turn");
    }
    for (const auto& tj : j["turns"]) {
      DialogueTurn t;
      if (!tj.contains("query") || !tj.contains("reference_answer")) {
        throw ParseError(path, lineno, "turn must have 'query' and 'reference_answer'");
      }
      t.query = tj.at("query").get<std::string>();
      t.reference_answer = tj.at("reference_answer").get<std::string>();
      if (t.query.empty()) throw ParseError(path, lineno, "turn query must be non-empty");
      if (t.reference_answer.empty()) {
        throw ParseError(path, lineno, "turn reference_answer must be non-empty");
      }
      t.gold_passage = tj.value("gold_passage", "");
      t.history_dependent = tj.value("history_dependent", false);
      d.turns.push_back(std::move(t));
    }
    ds.dialogues.push_back(std::move(d));
  }
  return ds;
}

// ---- database statistics -------------------------------------------------------

struct DbStats {
  std::vector<std::pair<std::int64_t, std::int64_t>> cluster_sizes;  // (cluster_id, size)
  std::map<std::int64_t, std::int64_t> chain_length_hist;            // length -> count
  std::optional<double> avg_chain_length;
};

inline DbStats db_stats(const HistoryStore& store, const MatchingIndex& index) {
  (void)store;
  DbStats s;
  for (const auto& [cid, c] : index.clusters()) {
    s.cluster_sizes.emplace_back(cid, static_cast<std::int64_t>(c.member_ids.size()));
  }
  std::int64_t chains = 0, total_len = 0;
  for (const auto& [cid, c] : index.chains()) {
    (void)cid;
    auto len = static_cast<std::int64_t>(c.triple_ids.size());
    ++s.chain_length_hist[len];
    ++chains;
    total_len += len;
  }
  if (chains > 0) {
    s.avg_chain_length = static_cast<double>(total_len) / static_cast<double>(chains);
  }
  return s;
}

// ---- evaluation harness ---------------------------------------------------------

struct TurnRecord {
  int turn_index = 0;
  bool ok = false;
  double bleu_score = 0.0;
  double f1_score = 0.0;
  std::string response;
  std::string reference;
  std::string error;
};

struct DialogueResult {
  std::string dialogue_id;
  std::vector<TurnRecord> turns;
  std::optional<double> bleu_score;  // mean over scored turns
  std::optional<double> f1_score;
  std::size_t error_count = 0;
  DbStats stats;
  std::map<std::string, double> stage_ms;
};

struct EvalReport {
  std::string config_fingerprint;
  std::string generator_name;
  std::size_t dialogue_count = 0;
  std::size_t turn_count = 0;
  std::size_t scored_turn_count = 0;
  std::size_t error_count = 0;
  std::optional<double> bleu_score;  // mean of per-turn scores over all scored turns
  std::optional<double> f1_score;
  std::vector<DialogueResult> dialogues;  // dataset order
  std::map<std::int64_t, std::int64_t> cluster_size_hist;  // size -> count, all sessions
  std::map<std::int64_t, std::int64_t> chain_length_hist;  // length -> count, all sessions
  std::optional<double> avg_chain_length;
  std::map<std::string, double> stage_ms_total;  // wall-clock; never byte-compared
};

/// Replays every dialogue through the pipeline, a fresh session per
/// dialogue, scoring each turn against its reference. Generation errors are
/// recorded per turn and excluded from the aggregates. Dialogues are
/// independent and evaluated by `workers` threads (0 = hardware
/// concurrency); results are aggregated in dataset order, so the report is
/// identical no matter the worker count.
inline EvalReport run_eval(const DialogueDataset& dataset, const PipelineConfig& config,
                           std::shared_ptr<const Embedder> embedder,
                           std::shared_ptr<const GeneratorClient> generator,
                           unsigned workers = 0, const std::string& config_fingerprint = "") {
  auto violations = config.validate();
  if (!violations.empty()) throw ValidationError(violations);

  std::shared_ptr<const KnowledgeBase> kb;
  if (!dataset.corpus_ref.empty()) {
    kb = std::make_shared<const KnowledgeBase>(load_or_ingest_kb(dataset.corpus_ref, embedder));
  }
  Pipeline pipeline(embedder, kb, generator);

  EvalReport report;
  report.config_fingerprint = config_fingerprint;
  report.generator_name = generator->name();
  report.dialogue_count = dataset.dialogues.size();
  report.dialogues.resize(dataset.dialogues.size());

  std::atomic<std::size_t> next{0};
  auto evaluate_dialogue = [&](std::size_t di) {
    const Dialogue& dialogue = dataset.dialogues[di];
    DialogueResult result;
    result.dialogue_id = dialogue.dialogue_id;
    Session session = pipeline.new_session(config, dialogue.dialogue_id);
    double bleu_sum = 0.0, f1_sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t ti = 0; ti < dialogue.turns.size(); ++ti) {
      const DialogueTurn& turn = dialogue.turns[ti];
      TurnRecord rec;
      rec.turn_index = static_cast<int>(ti);
      rec.reference = turn.reference_answer;
      try {
        RespondOutcome outcome = pipeline.respond(session, turn.query);
        rec.ok = true;
        rec.response = outcome.response;
        rec.bleu_score = bleu(outcome.response, turn.reference_answer);
        rec.f1_score = token_f1(outcome.response, turn.reference_answer);
        bleu_sum += rec.bleu_score;
        f1_sum += rec.f1_score;
        ++scored;
        for (const auto& [stage, ms] : outcome.trace.stage_ms) result.stage_ms[stage] += ms;
      } catch (const Error& e) {
        rec.error = e.what();
        ++result.error_count;
      }
      result.turns.push_back(std::move(rec));
    }
    if (scored > 0) {
      result.bleu_score = bleu_sum / static_cast<double>(scored);
      result.f1_score = f1_sum / static_cast<double>(scored);
    }
    result.stats = db_stats(session.history, session.index);
    report.dialogues[di] = std::move(result);
  };

  unsigned n = workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : workers;
  if (dataset.dialogues.size() < n) n = static_cast<unsigned>(std::max<std::size_t>(dataset.dialogues.size(), 1));
  if (n <= 1) {
    for (std::size_t i = 0; i < dataset.dialogues.size(); ++i) evaluate_dialogue(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          std::size_t i = next.fetch_add(1);
          if (i >= dataset.dialogues.size()) return;
          evaluate_dialogue(i);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  double bleu_sum = 0.0, f1_sum = 0.0;
  std::int64_t chains = 0, chain_len_total = 0;
  for (const auto& d : report.dialogues) {
    report.turn_count += d.turns.size();
    report.error_count += d.error_count;
    for (const auto& t : d.turns) {
      if (!t.ok) continue;
      bleu_sum += t.bleu_score;
      f1_sum += t.f1_score;
      ++report.scored_turn_count;
    }
    for (const auto& [cid, size] : d.stats.cluster_sizes) {
      (void)cid;
      ++report.cluster_size_hist[size];
    }
    for (const auto& [len, count] : d.stats.chain_length_hist) {
      report.chain_length_hist[len] += count;
      chains += count;
      chain_len_total += len * count;
    }
    for (const auto& [stage, ms] : d.stage_ms) report.stage_ms_total[stage] += ms;
  }
  if (report.scored_turn_count > 0) {
    report.bleu_score = bleu_sum / static_cast<double>(report.scored_turn_count);
    report.f1_score = f1_sum / static_cast<double>(report.scored_turn_count);
  }
  if (chains > 0) {
    report.avg_chain_length = static_cast<double>(chain_len_total) / static_cast<double>(chains);
  }
  return report;
}

// ---- report emission --------------------------------------------------------------

/// Deterministic part of the report: everything except wall-clock timings,
/// which go to their own document so that repeated runs are byte-identical.
inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["config_fingerprint"] = r.config_fingerprint;
  j["generator"] = r.generator_name;
  j["dialogue_count"] = r.dialogue_count;
  j["turn_count"] = r.turn_count;
  j["scored_turn_count"] = r.scored_turn_count;
  j["error_count"] = r.error_count;
  j["bleu"] = r.bleu_score ? nlohmann::ordered_json(*r.bleu_score) : nullptr;
  j["f1"] = r.f1_score ? nlohmann::ordered_json(*r.f1_score) : nullptr;
  j["avg_chain_length"] = r.avg_chain_length ? nlohmann::ordered_json(*r.avg_chain_length) : nullptr;

  auto hist = [](const std::map<std::int64_t, std::int64_t>& h) {
    auto out = nlohmann::ordered_json::array();
    for (const auto& [k, v] : h) out.push_back({{"bucket", k}, {"count", v}});
    return out;
  };
  j["cluster_size_hist"] = hist(r.cluster_size_hist);
  j["chain_length_hist"] = hist(r.chain_length_hist);

  auto dialogues = nlohmann::ordered_json::array();
  for (const auto& d : r.dialogues) {
    nlohmann::ordered_json dj;
    dj["dialogue_id"] = d.dialogue_id;
    dj["bleu"] = d.bleu_score ? nlohmann::ordered_json(*d.bleu_score) : nullptr;
    dj["f1"] = d.f1_score ? nlohmann::ordered_json(*d.f1_score) : nullptr;
    dj["error_count"] = d.error_count;
    auto turns = nlohmann::ordered_json::array();
    for (const auto& t : d.turns) {
      nlohmann::ordered_json tj;
      tj["turn"] = t.turn_index;
      tj["ok"] = t.ok;
      if (t.ok) {
        tj["bleu"] = t.bleu_score;
        tj["f1"] = t.f1_score;
        tj["response"] = t.response;
      } else {
        tj["error"] = t.error;
      }
      turns.push_back(std::move(tj));
    }
    dj["turns"] = std::move(turns);
    dialogues.push_back(std::move(dj));
  }
  j["dialogues"] = std::move(dialogues);
  return j;
}

inline nlohmann::ordered_json timings_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["note"] = "wall-clock timings; expected to vary between runs";
  j["stage_ms_total"] = nlohmann::ordered_json::object();
  for (const auto& [stage, ms] : r.stage_ms_total) j["stage_ms_total"][stage] = ms;
  return j;
}

/// Aligned plain-text table. Scores print on the 0-1 scale by default or as
/// percentages with `percent`.
inline std::string report_to_text(const EvalReport& r, bool percent = false) {
  auto fmt = [&](const std::optional<double>& v) -> std::string {
    if (!v) return "n/a";
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << (percent ? *v * 100.0 : *v);
    return os.str();
  };
  std::ostringstream os;
  os << std::left << std::setw(28) << "dialogue" << std::right << std::setw(10) << "BLEU"
     << std::setw(10) << "F1" << std::setw(8) << "errors" << "\n";
  os << std::string(56, '-') << "\n";
  for (const auto& d : r.dialogues) {
    os << std::left << std::setw(28) << d.dialogue_id << std::right << std::setw(10)
       << fmt(d.bleu_score) << std::setw(10) << fmt(d.f1_score) << std::setw(8) << d.error_count
       << "\n";
  }
  os << std::string(56, '-') << "\n";
  os << std::left << std::setw(28) << "aggregate" << std::right << std::setw(10)
     << fmt(r.bleu_score) << std::setw(10) << fmt(r.f1_score) << std::setw(8) << r.error_count
     << "\n";
  os << "turns: " << r.turn_count << "  scored: " << r.scored_turn_count
     << "  avg chain length: " << fmt(r.avg_chain_length) << "\n";
  return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, 0, "cannot open file for writing");
  out << content;
}

inline void write_histogram_csv(const std::string& path, const std::string& key_header,
                                const std::map<std::int64_t, std::int64_t>& hist) {
  std::ostringstream os;
  os << key_header << ",count\n";
  for (const auto& [k, v] : hist) os << k << "," << v << "\n";
  write_text_file(path, os.str());
}

}  // namespace dhrag
