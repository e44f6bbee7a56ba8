#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"
#include "dhrag/generation.hpp"
#include "dhrag/history_store.hpp"
#include "dhrag/integration.hpp"
#include "dhrag/knowledge_base.hpp"
#include "dhrag/matching.hpp"

namespace dhrag {

struct PipelineConfig {
  int k_static = 5;
  int k_hm = 3;
  int k_cot = 3;
  bool enable_dynamic = true;
  bool enable_integration = true;
  bool enable_cot = true;
  bool enable_hierarchical = true;
  std::int64_t budget_tokens = 1024;
  double mmr_lambda = 0.7;
  double attention_temperature = 1.0;
  HistoryConfig history;
  std::size_t branching = 4;
  ChainScoreMode chain_score = ChainScoreMode::Max;
  std::size_t beam_width = 1;

  std::vector<std::string> validate() const {
    std::vector<std::string> v;
    if (k_static < 1) v.push_back("k_static: must be >= 1");
    if (k_hm < 1) v.push_back("k_hm: must be >= 1");
    if (k_cot < 1) v.push_back("k_cot: must be >= 1");
    if (budget_tokens < 1) v.push_back("budget_tokens: must be >= 1");
    if (!(mmr_lambda >= 0.0 && mmr_lambda <= 1.0)) v.push_back("mmr_lambda: must be in [0, 1]");
    if (!(attention_temperature > 0.0)) v.push_back("attention_temperature: must be > 0");
    if (branching < 1) v.push_back("matching.branching: must be >= 1");
    if (beam_width < 1) v.push_back("matching.beam_width: must be >= 1");
    auto hv = history.validate();
    v.insert(v.end(), hv.begin(), hv.end());
    return v;
  }

  MatchingConfig matching_config() const {
    MatchingConfig m;
    m.tau_cluster = history.tau_cluster;
    m.theta_chain = history.theta_chain;
    m.branching = branching;
    m.chain_score = chain_score;
    m.beam_width = beam_width;
    return m;
  }
};

/// One dialogue's evolving state. Confined to a single writer; distinct
/// sessions are fully independent and may run in parallel.
struct Session {
  std::string id;
  PipelineConfig config;
  HistoryStore history;
  MatchingIndex index;
  std::int64_t turn_counter = 0;
  bool in_turn = false;
};

struct StaticHit {
  std::string doc_id;
  double score;
};

/// Full per-turn introspection record: exactly the data the turn used, no
/// recomputation. Timings are wall-clock and are the only non-deterministic
/// fields; every serializer keeps them out of byte-compared outputs.
struct TurnTrace {
  std::string query;
  std::vector<StaticHit> static_hits;
  std::vector<MatchResult> hm_hits;
  std::vector<MatchResult> cot_hits;
  std::vector<RetrievedItem> candidates;
  std::vector<double> candidate_weights;
  IntegratedContext context;
  std::string rendered_prompt;
  std::string response;
  std::vector<std::int64_t> evicted_ids;
  std::vector<std::pair<std::string, double>> stage_ms;
};

struct RespondOutcome {
  std::string response;
  TurnTrace trace;
};

/// Per-turn orchestration: static retrieval, the two dynamic matching
/// strategies, weighting + budgeted integration, generation, then the
/// history update (insert, chain extension, weighted eviction, cluster
/// maintenance). Shared components are immutable; all turn state lives in
/// the Session.
class Pipeline {
 public:
  Pipeline(std::shared_ptr<const Embedder> embedder, std::shared_ptr<const KnowledgeBase> kb,
           std::shared_ptr<const GeneratorClient> generator, AttentionMatrix attention = {},
           GenerationRequest generation_defaults = {})
      : embedder_(std::move(embedder)),
        kb_(std::move(kb)),
        generator_(std::move(generator)),
        attention_(std::move(attention)),
        generation_defaults_(std::move(generation_defaults)) {
    if (!embedder_) throw InvalidArgument("Pipeline: null embedder");
    if (!generator_) throw InvalidArgument("Pipeline: null generator");
    if (kb_ && kb_->embedder().dim() != embedder_->dim()) {
      throw ValidationError("knowledge base embedder dim " + std::to_string(kb_->embedder().dim()) +
                            " != pipeline embedder dim " + std::to_string(embedder_->dim()));
    }
    if (!attention_.identity() && attention_.dim != embedder_->dim()) {
      throw ValidationError("attention matrix dim " + std::to_string(attention_.dim) +
                            " != embedder dim " + std::to_string(embedder_->dim()));
    }
  }

  Session new_session(PipelineConfig config, std::string session_id = "session-0") const {
    auto violations = config.validate();
    if (!violations.empty()) throw ValidationError(violations);
    Session s{std::move(session_id), config, HistoryStore(config.history),
              MatchingIndex(config.matching_config()), 0, false};
    return s;
  }

  /// Runs one dialogue turn. On generation failure the error propagates and
  /// the session is left exactly as it was: all mutation happens after a
  /// successful generation.
  RespondOutcome respond(Session& session, const std::string& user_query) const {
    if (user_query.empty()) throw InvalidArgument("respond: empty query");
    if (session.in_turn) throw InvalidArgument("respond: session already has a turn in flight");
    session.in_turn = true;
    struct TurnGuard {
      bool& flag;
      ~TurnGuard() { flag = false; }
    } guard{session.in_turn};

    const PipelineConfig& cfg = session.config;
    TurnTrace trace;
    trace.query = user_query;
    Stopwatch watch;

    EmbeddingVector query_vec = embedder_->embed_text(user_query);

    std::vector<RetrievedDoc> static_hits;
    if (kb_) static_hits = kb_->vanilla_retrieve(user_query, cfg.k_static);
    for (const auto& h : static_hits) trace.static_hits.push_back({h.doc->id, h.score});
    trace.stage_ms.emplace_back("static_retrieve", watch.lap());

    if (cfg.enable_dynamic && cfg.enable_hierarchical) {
      trace.hm_hits = session.index.hierarchical_match(session.history, query_vec,
                                                       static_cast<std::size_t>(cfg.k_hm));
    }
    trace.stage_ms.emplace_back("hierarchical_match", watch.lap());

    if (cfg.enable_dynamic && cfg.enable_cot) {
      trace.cot_hits = session.index.chain_match(session.history, query_vec,
                                                 static_cast<std::size_t>(cfg.k_cot));
    }
    trace.stage_ms.emplace_back("chain_match", watch.lap());

    std::vector<RetrievedItem> statics, hms, cots;
    for (const auto& h : static_hits) {
      RetrievedItem item;
      item.source = ItemSource::Static;
      item.text = h.doc->text;
      item.vector = h.doc->vector;
      item.base_score = h.score;
      item.origin_id = "doc:" + h.doc->id;
      statics.push_back(std::move(item));
    }
    for (const auto& m : trace.hm_hits) hms.push_back(history_item(session, m));
    for (const auto& m : trace.cot_hits) cots.push_back(history_item(session, m));

    trace.candidates = collect_candidates(statics, hms, cots);
    if (!trace.candidates.empty()) {
      if (cfg.enable_integration) {
        trace.candidate_weights = attention_weights(query_vec, trace.candidates, attention_,
                                                    cfg.attention_temperature);
        trace.context = integrate(query_vec, trace.candidates, trace.candidate_weights,
                                  cfg.budget_tokens, cfg.mmr_lambda);
      } else {
        trace.candidate_weights.assign(trace.candidates.size(),
                                       1.0 / static_cast<double>(trace.candidates.size()));
        trace.context = concatenate_candidates(trace.candidates, cfg.budget_tokens);
      }
    }
    trace.rendered_prompt = reconstruct_query(user_query, trace.context);
    trace.stage_ms.emplace_back("integrate", watch.lap());

    GenerationRequest request = generation_defaults_;
    request.prompt = trace.rendered_prompt;
    GenerationResult result = generator_->generate(request);
    trace.response = result.text;
    trace.stage_ms.emplace_back("generate", watch.lap());

    // The turn succeeded; only now is session state touched.
    Triple t;
    t.session_id = session.id;
    t.timestamp = session.history.turn_clock();
    t.query = user_query;
    t.response = result.text;
    t.query_vector = query_vec;
    for (const auto& h : static_hits) {
      t.passages.push_back(h.doc->text);
      t.passage_vectors.push_back(h.doc->vector);
    }
    std::int64_t now = t.timestamp;
    std::int64_t id = session.history.insert(std::move(t));
    session.index.extend_chain(*session.history.find_mutable(id));
    trace.evicted_ids = session.history.evict_to_capacity(query_vec, now);
    session.index.remove_triples(session.history, trace.evicted_ids);
    session.index.update_clusters(session.history);
    session.turn_counter = session.history.turn_clock();
    trace.stage_ms.emplace_back("update", watch.lap());

    return {trace.response, std::move(trace)};
  }

  const Embedder& embedder() const { return *embedder_; }
  const KnowledgeBase* kb() const { return kb_.get(); }
  const GeneratorClient& generator() const { return *generator_; }
  const AttentionMatrix& attention() const { return attention_; }

 private:
  struct Stopwatch {
    std::chrono::steady_clock::time_point last = std::chrono::steady_clock::now();
    double lap() {
      auto now = std::chrono::steady_clock::now();
      double ms = std::chrono::duration<double, std::milli>(now - last).count();
      last = now;
      return ms;
    }
  };

  RetrievedItem history_item(const Session& session, const MatchResult& m) const {
    const Triple& t = session.history.at(m.triple_id);
    RetrievedItem item;
    item.base_score = m.score;
    item.query = t.query;
    item.response = t.response;
    item.timestamp = t.timestamp;
    if (m.source == MatchSource::HM) {
      item.source = ItemSource::HM;
      item.origin_id = "hm:" + std::to_string(t.id);
      if (m.best_passage >= 0) {
        item.text = t.passages[static_cast<std::size_t>(m.best_passage)];
        item.vector = t.passage_vectors[static_cast<std::size_t>(m.best_passage)];
      } else if (!t.response.empty()) {
        item.text = t.response;
        item.vector = embedder_->embed_text(t.response);
      } else {
        item.text = t.query;
        item.vector = t.query_vector;
      }
    } else {
      item.source = ItemSource::CoT;
      item.origin_id = "cot:" + std::to_string(t.id);
      if (!t.response.empty()) {
        item.text = t.response;
        item.vector = embedder_->embed_text(t.response);
      } else {
        item.text = t.query;
        item.vector = t.query_vector;
      }
    }
    return item;
  }

  std::shared_ptr<const Embedder> embedder_;
  std::shared_ptr<const KnowledgeBase> kb_;
  std::shared_ptr<const GeneratorClient> generator_;
  AttentionMatrix attention_;
  GenerationRequest generation_defaults_;
};

}  // namespace dhrag
