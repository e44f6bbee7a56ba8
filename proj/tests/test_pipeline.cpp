#include <catch2/catch_amalgamated.hpp>

#include <memory>
#include <set>
#include <thread>

#include "dhrag/pipeline.hpp"

#include "helpers.hpp"
#include "invariants.hpp"

using namespace dhrag;

namespace {

std::shared_ptr<const KnowledgeBase> tiny_kb(std::shared_ptr<const Embedder> embedder) {
  auto kb = std::make_shared<KnowledgeBase>(embedder);
  kb->ingest({
      {"d0", "granite slabs line quiet garden pathways. clay mugs dry slowly.", {}},
      {"d1", "copper pans rest neatly inside drawers. willow baskets hold jars.", {}},
      {"d2", "beeswax candles burn slowly near kilns. linen cloths dry quickly.", {}},
      {"d3", "the capital city hosts a great library. many roads lead there.", {}},
      {"d4", "rivers carry spring water downhill. oak barrels weather storms.", {}},
  });
  kb->freeze();
  return kb;
}

struct FailingGenerator final : GeneratorClient {
  GenerationResult generate(const GenerationRequest&) const override {
    throw TransportError("mock://failing", 0, 1, "injected failure");
  }
  std::string name() const override { return "failing"; }
};

/// Fails every nth call, otherwise delegates to the extractive mock.
struct FlakyGenerator final : GeneratorClient {
  explicit FlakyGenerator(int every) : every_(every) {}
  GenerationResult generate(const GenerationRequest& req) const override {
    if (++calls_ % every_ == 0) throw TransportError("mock://flaky", 0, 1, "injected failure");
    return inner_.generate(req);
  }
  std::string name() const override { return "flaky"; }
  int every_;
  mutable int calls_ = 0;
  MockGenerator inner_;
};

}  // namespace

TEST_CASE("new_session validates config and reports defaults") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  Pipeline pipeline(embedder, nullptr, std::make_shared<MockGenerator>());

  auto session = pipeline.new_session(PipelineConfig{});
  REQUIRE(session.history.config().capacity == 100);
  REQUIRE(session.turn_counter == 0);
  REQUIRE(session.history.size() == 0);

  PipelineConfig bad;
  bad.history.alpha = 1.2;
  try {
    pipeline.new_session(bad);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    REQUIRE(e.violations().size() == 1);
    REQUIRE_THAT(e.violations()[0], Catch::Matchers::ContainsSubstring("alpha"));
  }

  PipelineConfig worse;
  worse.history.alpha = -1;
  worse.k_static = 0;
  worse.mmr_lambda = 2.0;
  try {
    pipeline.new_session(worse);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    REQUIRE(e.violations().size() == 3);
  }
}

TEST_CASE("first turn of a fresh session is a vanilla-RAG turn") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());
  auto session = pipeline.new_session(PipelineConfig{});

  auto outcome = pipeline.respond(session, "where is the great library");
  REQUIRE(outcome.trace.hm_hits.empty());
  REQUIRE(outcome.trace.cot_hits.empty());
  REQUIRE(outcome.trace.static_hits.size() == 5);
  for (const auto& s : outcome.trace.context.selected) {
    REQUIRE(s.item.source == ItemSource::Static);
  }
  REQUIRE(session.history.size() == 1);
  REQUIRE(session.turn_counter == 1);
  testutil::check_index_invariants(session.history, session.index);
}

TEST_CASE("dynamic-disabled turns equal an independently composed vanilla prompt") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());

  PipelineConfig cfg;
  cfg.enable_dynamic = false;
  auto session = pipeline.new_session(cfg);

  std::vector<std::string> queries = {"tell me about copper pans", "and the candles",
                                      "where do rivers go"};
  for (const auto& q : queries) {
    auto outcome = pipeline.respond(session, q);

    // Vanilla composition, by hand: static retrieval -> candidates ->
    // attention -> MMR -> template.
    auto qv = embedder->embed_text(q);
    std::vector<RetrievedItem> statics;
    for (const auto& h : kb->vanilla_retrieve(q, cfg.k_static)) {
      RetrievedItem item;
      item.source = ItemSource::Static;
      item.text = h.doc->text;
      item.vector = h.doc->vector;
      item.base_score = h.score;
      item.origin_id = "doc:" + h.doc->id;
      statics.push_back(std::move(item));
    }
    auto candidates = collect_candidates(statics, {}, {});
    auto weights = attention_weights(qv, candidates, {}, cfg.attention_temperature);
    auto ctx = integrate(qv, candidates, weights, cfg.budget_tokens, cfg.mmr_lambda);
    auto vanilla_prompt = reconstruct_query(q, ctx);

    REQUIRE(outcome.trace.rendered_prompt == vanilla_prompt);
  }
}

TEST_CASE("three-turn dialogue equals a hand-replayed execution") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  auto generator = std::make_shared<MockGenerator>();
  Pipeline pipeline(embedder, kb, generator);
  PipelineConfig cfg;
  auto session = pipeline.new_session(cfg, "replay");

  // Independent replay: the same documented turn sequence, composed from
  // the module operations directly against a private store and index.
  HistoryStore store(cfg.history);
  MatchingIndex index(cfg.matching_config());

  std::vector<std::string> queries = {"remember that the capital of freedonia is fredville",
                                      "what is the capital of freedonia",
                                      "so the capital of freedonia is what"};

  for (const auto& q : queries) {
    auto outcome = pipeline.respond(session, q);

    auto qv = embedder->embed_text(q);
    auto static_hits = kb->vanilla_retrieve(q, cfg.k_static);
    auto hm = index.hierarchical_match(store, qv, static_cast<std::size_t>(cfg.k_hm));
    auto cot = index.chain_match(store, qv, static_cast<std::size_t>(cfg.k_cot));

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
    auto history_item = [&](const MatchResult& m, ItemSource source) {
      const Triple& t = store.at(m.triple_id);
      RetrievedItem item;
      item.source = source;
      item.base_score = m.score;
      item.query = t.query;
      item.response = t.response;
      item.timestamp = t.timestamp;
      std::string prefix = source == ItemSource::HM ? "hm:" : "cot:";
      item.origin_id = prefix + std::to_string(t.id);
      if (source == ItemSource::HM && m.best_passage >= 0) {
        item.text = t.passages[static_cast<std::size_t>(m.best_passage)];
        item.vector = t.passage_vectors[static_cast<std::size_t>(m.best_passage)];
      } else {
        item.text = t.response;
        item.vector = embedder->embed_text(t.response);
      }
      return item;
    };
    for (const auto& m : hm) hms.push_back(history_item(m, ItemSource::HM));
    for (const auto& m : cot) cots.push_back(history_item(m, ItemSource::CoT));

    auto candidates = collect_candidates(statics, hms, cots);
    IntegratedContext ctx;
    if (!candidates.empty()) {
      auto weights = attention_weights(qv, candidates, {}, cfg.attention_temperature);
      ctx = integrate(qv, candidates, weights, cfg.budget_tokens, cfg.mmr_lambda);
    }
    auto prompt = reconstruct_query(q, ctx);
    GenerationRequest req;
    req.prompt = prompt;
    auto expected_response = generator->generate(req).text;

    REQUIRE(outcome.trace.rendered_prompt == prompt);
    REQUIRE(outcome.response == expected_response);

    Triple t;
    t.session_id = "replay";
    t.timestamp = store.turn_clock();
    t.query = q;
    t.response = expected_response;
    t.query_vector = qv;
    for (const auto& h : static_hits) {
      t.passages.push_back(h.doc->text);
      t.passage_vectors.push_back(h.doc->vector);
    }
    std::int64_t now = t.timestamp;
    auto id = store.insert(std::move(t));
    index.extend_chain(*store.find_mutable(id));
    auto evicted = store.evict_to_capacity(qv, now);
    index.remove_triples(store, evicted);
    index.update_clusters(store);
  }

  // Turn 2 must actually have used the history.
  REQUIRE(session.history.size() == 3);
}

TEST_CASE("ablating chain-of-thought yields a subset of the full prompt blocks") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());

  PipelineConfig full;
  PipelineConfig no_cot = full;
  no_cot.enable_cot = false;

  auto run = [&](const PipelineConfig& cfg) {
    auto session = pipeline.new_session(cfg);
    std::vector<std::set<ItemSource>> per_turn_sources;
    for (const std::string& q :
         {"remember that the capital of freedonia is fredville", "what is the capital of freedonia",
          "tell me the capital of freedonia again"}) {
      auto outcome = pipeline.respond(session, q);
      std::set<ItemSource> sources;
      for (const auto& s : outcome.trace.context.selected) sources.insert(s.item.source);
      per_turn_sources.push_back(sources);
    }
    return per_turn_sources;
  };

  auto full_sources = run(full);
  auto ablated_sources = run(no_cot);
  for (std::size_t i = 0; i < full_sources.size(); ++i) {
    for (auto src : ablated_sources[i]) {
      REQUIRE(full_sources[i].count(src) == 1);  // subset
    }
    REQUIRE(ablated_sources[i].count(ItemSource::CoT) == 0);
  }
}

TEST_CASE("integration-disabled turns concatenate candidates in source order") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());
  PipelineConfig cfg;
  cfg.enable_integration = false;
  auto session = pipeline.new_session(cfg);

  pipeline.respond(session, "remember that the capital of freedonia is fredville");
  auto outcome = pipeline.respond(session, "what is the capital of freedonia");

  const auto& selected = outcome.trace.context.selected;
  REQUIRE_FALSE(selected.empty());
  // Uniform weights, and the selection is a prefix of the candidate list.
  double uniform = 1.0 / static_cast<double>(outcome.trace.candidates.size());
  REQUIRE(selected.size() <= outcome.trace.candidates.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    REQUIRE(selected[i].weight == uniform);
    REQUIRE(selected[i].item.origin_id == outcome.trace.candidates[i].origin_id);
  }
  // A tiny budget truncates to a strict prefix.
  PipelineConfig small = cfg;
  small.budget_tokens = 12;
  auto limited = pipeline.new_session(small);
  pipeline.respond(limited, "remember that the capital of freedonia is fredville");
  auto out2 = pipeline.respond(limited, "what is the capital of freedonia");
  REQUIRE(out2.trace.context.token_budget_used <= 12);
  REQUIRE(out2.trace.context.selected.size() < out2.trace.candidates.size());
}

TEST_CASE("generation failure leaves the session untouched") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline failing(embedder, kb, std::make_shared<FailingGenerator>());
  auto session = failing.new_session(PipelineConfig{});

  REQUIRE_THROWS_AS(failing.respond(session, "anything at all"), TransportError);
  REQUIRE(session.history.size() == 0);
  REQUIRE(session.turn_counter == 0);
  REQUIRE(session.index.clusters().empty());
  REQUIRE(session.index.chains().empty());
  REQUIRE_FALSE(session.in_turn);  // the guard reset; the session stays usable
}

TEST_CASE("failed turns behave exactly like skipped turns") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  std::vector<std::string> queries;
  for (int i = 1; i <= 9; ++i) queries.push_back("question number " + std::to_string(i));

  Pipeline flaky_pipeline(embedder, kb, std::make_shared<FlakyGenerator>(3));
  auto flaky_session = flaky_pipeline.new_session(PipelineConfig{}, "atomic");
  int failures = 0;
  for (const auto& q : queries) {
    try {
      flaky_pipeline.respond(flaky_session, q);
    } catch (const TransportError&) {
      ++failures;
    }
  }
  REQUIRE(failures == 3);

  Pipeline clean_pipeline(embedder, kb, std::make_shared<MockGenerator>());
  auto clean_session = clean_pipeline.new_session(PipelineConfig{}, "atomic");
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if ((i + 1) % 3 == 0) continue;  // skip what the flaky run failed
    clean_pipeline.respond(clean_session, queries[i]);
  }

  REQUIRE(flaky_session.history.size() == clean_session.history.size());
  REQUIRE(flaky_session.history.turn_clock() == clean_session.history.turn_clock());
  for (const auto& [id, t] : clean_session.history.triples()) {
    const Triple* other = flaky_session.history.find(id);
    REQUIRE(other != nullptr);
    REQUIRE(other->query == t.query);
    REQUIRE(other->response == t.response);
    REQUIRE(other->timestamp == t.timestamp);
  }
  testutil::check_index_invariants(flaky_session.history, flaky_session.index);
}

TEST_CASE("sessions are isolated") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());

  auto a = pipeline.new_session(PipelineConfig{}, "a");
  auto b = pipeline.new_session(PipelineConfig{}, "b");

  std::thread ta([&] {
    for (int i = 0; i < 5; ++i) pipeline.respond(a, "session a turn " + std::to_string(i));
  });
  std::thread tb([&] {
    for (int i = 0; i < 3; ++i) pipeline.respond(b, "session b turn " + std::to_string(i));
  });
  ta.join();
  tb.join();

  REQUIRE(a.history.size() == 5);
  REQUIRE(b.history.size() == 3);
  for (const auto& [id, t] : a.history.triples()) {
    (void)id;
    REQUIRE(t.session_id == "a");
  }
}

TEST_CASE("trace fidelity: the prompt re-renders from trace fields byte-exactly") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());
  auto session = pipeline.new_session(PipelineConfig{});

  for (const std::string& q : {"remember that the capital of freedonia is fredville",
                               "what is the capital of freedonia"}) {
    auto outcome = pipeline.respond(session, q);
    REQUIRE(render_prompt(outcome.trace.query, outcome.trace.context.selected) ==
            outcome.trace.rendered_prompt);
    if (!outcome.trace.candidates.empty()) {
      double sum = 0.0;
      for (double w : outcome.trace.candidate_weights) sum += w;
      REQUIRE_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-9));
    }
  }
}

TEST_CASE("turns maintain capacity and index invariants under eviction pressure") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto kb = tiny_kb(embedder);
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());
  PipelineConfig cfg;
  cfg.history.capacity = 4;
  auto session = pipeline.new_session(cfg);

  std::mt19937 rng(89);
  for (int i = 0; i < 12; ++i) {
    auto outcome = pipeline.respond(session, testutil::random_text(rng, 2, 6));
    REQUIRE(session.history.size() <= 4);
    if (session.history.size() == 4 && i >= 4) {
      REQUIRE_FALSE(outcome.trace.evicted_ids.empty());
    }
    testutil::check_index_invariants(session.history, session.index);
  }
}

TEST_CASE("empty queries are rejected without touching the session") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  Pipeline pipeline(embedder, nullptr, std::make_shared<MockGenerator>());
  auto session = pipeline.new_session(PipelineConfig{});
  REQUIRE_THROWS_AS(pipeline.respond(session, ""), InvalidArgument);
  REQUIRE(session.history.size() == 0);
}
