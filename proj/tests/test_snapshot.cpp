#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <memory>

#include "dhrag/pipeline.hpp"
#include "dhrag/snapshot.hpp"

#include "helpers.hpp"
#include "invariants.hpp"

using namespace dhrag;

namespace {

Session populated_session(const std::shared_ptr<const Embedder>& embedder) {
  auto kb = std::make_shared<KnowledgeBase>(embedder);
  kb->ingest({{"d0", "granite slabs line quiet pathways", {}},
              {"d1", "copper pans rest neatly in drawers", {}}});
  kb->freeze();
  Pipeline pipeline(embedder, kb, std::make_shared<MockGenerator>());
  PipelineConfig cfg;
  cfg.history.capacity = 6;
  auto session = pipeline.new_session(cfg, "snap");
  for (const std::string& q :
       {"remember that the capital of freedonia is fredville", "what is the capital of freedonia",
        "tell me about granite slabs", "copper pans storage", "so the capital of freedonia is what",
        "unrelated gardening question", "another turn to force an eviction",
        "and one more on top"}) {
    pipeline.respond(session, q);
  }
  return session;
}

}  // namespace

TEST_CASE("snapshot save -> load -> save is byte-identical") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto session = populated_session(embedder);
  auto dir = testutil::temp_dir("snapshot");

  auto p1 = dir / "s1.json";
  auto p2 = dir / "s2.json";
  save_snapshot(session.history, session.index, *embedder, p1.string());
  auto loaded = load_snapshot(p1.string(), *embedder);
  save_snapshot(loaded.store, loaded.index, *embedder, p2.string());
  REQUIRE(testutil::read_file(p1) == testutil::read_file(p2));

  // The rehydrated state matches the live state structurally.
  REQUIRE(loaded.store.size() == session.history.size());
  REQUIRE(loaded.store.turn_clock() == session.history.turn_clock());
  REQUIRE(loaded.index.clusters().size() == session.index.clusters().size());
  for (const auto& [cid, c] : session.index.clusters()) {
    REQUIRE(loaded.index.clusters().at(cid).member_ids == c.member_ids);
    REQUIRE(loaded.index.clusters().at(cid).summaries.size() == c.summaries.size());
  }
  REQUIRE(loaded.index.chains().size() == session.index.chains().size());
  for (const auto& [cid, c] : session.index.chains()) {
    REQUIRE(loaded.index.chains().at(cid).triple_ids == c.triple_ids);
  }
  REQUIRE(loaded.index.active_chains() == session.index.active_chains());
  testutil::check_index_invariants(loaded.store, loaded.index);
}

TEST_CASE("empty session snapshots round-trip") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  HistoryStore store;
  MatchingIndex index(MatchingConfig{});
  auto dir = testutil::temp_dir("snapshot_empty");
  auto p1 = dir / "s1.json";
  auto p2 = dir / "s2.json";
  save_snapshot(store, index, *embedder, p1.string());
  auto loaded = load_snapshot(p1.string(), *embedder);
  REQUIRE(loaded.store.size() == 0);
  save_snapshot(loaded.store, loaded.index, *embedder, p2.string());
  REQUIRE(testutil::read_file(p1) == testutil::read_file(p2));
}

TEST_CASE("a rehydrated session continues deterministically") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto session = populated_session(embedder);
  auto dir = testutil::temp_dir("snapshot_continue");
  auto path = dir / "s.json";
  save_snapshot(session.history, session.index, *embedder, path.string());
  auto loaded = load_snapshot(path.string(), *embedder);

  // The same matching queries hit the same triples before and after reload.
  auto qv = embedder->embed_text("what is the capital of freedonia");
  auto live = session.index.hierarchical_match(session.history, qv, 3);
  auto rehydrated = loaded.index.hierarchical_match(loaded.store, qv, 3);
  REQUIRE(live.size() == rehydrated.size());
  for (std::size_t i = 0; i < live.size(); ++i) {
    REQUIRE(live[i].triple_id == rehydrated[i].triple_id);
  }
}

TEST_CASE("corrupt snapshots name the violated invariant") {
  auto embedder = std::make_shared<HashedTfEmbedder>(64);
  auto session = populated_session(embedder);
  auto base = session_snapshot(session.history, session.index, *embedder);

  auto expect_violation = [&](nlohmann::json j, const std::string& needle) {
    try {
      load_snapshot_json(j, *embedder);
      FAIL("expected ValidationError mentioning: " + needle);
    } catch (const ValidationError& e) {
      REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring(needle));
    }
  };

  SECTION("bad config range") {
    auto j = base;
    j["config"]["history"]["alpha"] = 3.5;
    expect_violation(j, "alpha");
  }
  SECTION("timestamps must increase with id") {
    auto j = base;
    j["triples"][1]["timestamp"] = j["triples"][0]["timestamp"];
    expect_violation(j, "timestamps strictly increasing");
  }
  SECTION("turn clock must cover stored timestamps") {
    auto j = base;
    j["turn_clock"] = 0;
    expect_violation(j, "turn_clock");
  }
  SECTION("cluster members must exist") {
    auto j = base;
    j["clusters"][0]["member_ids"].push_back(9999);
    expect_violation(j, "cluster members reference stored triples");
  }
  SECTION("a triple may sit in only one cluster") {
    auto j = base;
    if (j["clusters"].size() < 2) {
      SUCCEED("snapshot produced a single cluster; overlap not constructible");
    } else {
      auto first_member = j["clusters"][0]["member_ids"][0];
      j["clusters"][1]["member_ids"].push_back(first_member);
      std::sort(j["clusters"][1]["member_ids"].begin(), j["clusters"][1]["member_ids"].end());
      expect_violation(j, "exactly one cluster");
    }
  }
  SECTION("chain members must exist") {
    auto j = base;
    j["chains"][0]["triple_ids"].push_back(12345);
    expect_violation(j, "chain members reference stored triples");
  }
  SECTION("capacity bound") {
    auto j = base;
    j["config"]["history"]["capacity"] = 1;
    expect_violation(j, "capacity");
  }
  SECTION("summary leaves partition the cluster") {
    auto j = base;
    auto& summaries = j["clusters"][0]["summaries"];
    summaries[0]["leaf_ids"].push_back(summaries[0]["leaf_ids"][0]);
    expect_violation(j, "summary leaf sets partition");
  }
  SECTION("missing key") {
    auto j = base;
    j.erase("chains");
    expect_violation(j, "chains");
  }
  SECTION("embedder fingerprint must match") {
    HashedTfEmbedder other(32);
    try {
      load_snapshot_json(base, other);
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      REQUIRE_THAT(e.what(), Catch::Matchers::ContainsSubstring("fingerprint"));
    }
  }
}
