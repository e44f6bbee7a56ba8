#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

#include "dhrag/knowledge_base.hpp"

#include "helpers.hpp"

using namespace dhrag;

namespace {

std::shared_ptr<const Embedder> small_embedder() {
  return std::make_shared<HashedTfEmbedder>(64);
}

std::vector<IngestRecord> records(std::initializer_list<std::pair<const char*, const char*>> rs) {
  std::vector<IngestRecord> out;
  for (const auto& [id, text] : rs) out.push_back({id, text, {}});
  return out;
}

// Independent scoring oracle: naive cosine over the embedded vectors.
double oracle_cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  double dp = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dp += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dp / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST_CASE("ingest counts and stores") {
  KnowledgeBase kb(small_embedder());
  REQUIRE(kb.ingest({}) == 0);
  REQUIRE(kb.size() == 0);
  REQUIRE(kb.ingest(records({{"a", "first text"}, {"b", "second text"}, {"c", "third text"}})) == 3);
  REQUIRE(kb.size() == 3);
  REQUIRE(kb.find("b") != nullptr);
  REQUIRE(kb.find("b")->text == "second text");
}

TEST_CASE("ingest is atomic on duplicate ids") {
  KnowledgeBase kb(small_embedder());
  kb.ingest(records({{"a", "existing"}}));

  auto snapshot_ids = [&kb] {
    std::vector<std::string> ids;
    for (const auto& d : kb.documents()) ids.push_back(d.id);
    return ids;
  };
  auto before = snapshot_ids();

  SECTION("duplicate against the store") {
    REQUIRE_THROWS_WITH(kb.ingest(records({{"x", "one"}, {"a", "dup"}, {"y", "two"}})),
                        Catch::Matchers::ContainsSubstring("'a'"));
  }
  SECTION("duplicate within the batch") {
    REQUIRE_THROWS_WITH(kb.ingest(records({{"x", "one"}, {"x", "again"}})),
                        Catch::Matchers::ContainsSubstring("'x'"));
  }
  SECTION("empty text") {
    REQUIRE_THROWS_AS(kb.ingest(records({{"x", "one"}, {"y", ""}})), InvalidArgument);
  }
  REQUIRE(snapshot_ids() == before);
  REQUIRE(kb.size() == 1);
}

TEST_CASE("ingest after freeze is rejected") {
  KnowledgeBase kb(small_embedder());
  kb.ingest(records({{"a", "text"}}));
  kb.freeze();
  REQUIRE(kb.frozen());
  REQUIRE_THROWS_AS(kb.ingest(records({{"b", "more"}})), InvalidArgument);
}

TEST_CASE("vanilla_retrieve on empty and singleton stores") {
  KnowledgeBase kb(small_embedder());
  REQUIRE(kb.vanilla_retrieve("anything", 5).empty());
  kb.ingest(records({{"only", "the single document"}}));
  auto hits = kb.vanilla_retrieve("document", 5);
  REQUIRE(hits.size() == 1);
  REQUIRE(hits[0].doc->id == "only");
}

TEST_CASE("vanilla_retrieve matches the exhaustive scoring oracle") {
  auto embedder = small_embedder();
  KnowledgeBase kb(embedder);
  std::vector<std::pair<const char*, const char*>> docs = {
      {"d0", "the cat sat on the mat"},
      {"d1", "dogs chase cats in the park"},
      {"d2", "quantum mechanics lecture notes"},
      {"d3", "the cat chased the dog"},
      {"d4", "cooking recipes for pasta"},
  };
  kb.ingest(records({docs[0], docs[1], docs[2], docs[3], docs[4]}));

  std::string query = "cat and dog chase";
  auto qv = embedder->embed_text(query);

  struct Scored {
    std::string id;
    double score;
  };
  std::vector<Scored> oracle;
  for (const auto& [id, text] : docs) {
    oracle.push_back({id, oracle_cosine(qv, embedder->embed_text(text))});
  }
  std::sort(oracle.begin(), oracle.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });

  auto hits = kb.vanilla_retrieve(query, 3);
  REQUIRE(hits.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(hits[i].doc->id == oracle[i].id);
    REQUIRE_THAT(hits[i].score, Catch::Matchers::WithinAbs(oracle[i].score, 1e-12));
  }
}

TEST_CASE("vanilla_retrieve properties: prefix, determinism, exact scores") {
  auto embedder = small_embedder();
  KnowledgeBase kb(embedder);
  std::mt19937 rng(23);
  std::vector<IngestRecord> rs;
  for (int i = 0; i < 20; ++i) {
    rs.push_back({"doc" + std::to_string(i), testutil::random_text(rng, 3, 10), {}});
  }
  kb.ingest(rs);

  for (int trial = 0; trial < 20; ++trial) {
    std::string q = testutil::random_text(rng, 1, 5);
    auto qv = embedder->embed_text(q);
    auto k5 = kb.vanilla_retrieve(q, 5);
    auto k6 = kb.vanilla_retrieve(q, 6);
    REQUIRE(k6.size() >= k5.size());
    for (std::size_t i = 0; i < k5.size(); ++i) {
      REQUIRE(k5[i].doc->id == k6[i].doc->id);  // k-prefix property
      REQUIRE(k5[i].score == cosine_similarity(qv, k5[i].doc->vector));  // exact
    }
    auto again = kb.vanilla_retrieve(q, 5);
    REQUIRE(again.size() == k5.size());
    for (std::size_t i = 0; i < k5.size(); ++i) {
      REQUIRE(again[i].doc->id == k5[i].doc->id);
      REQUIRE(again[i].score == k5[i].score);
    }
  }
}

TEST_CASE("ties in retrieval break by ascending id") {
  KnowledgeBase kb(small_embedder());
  kb.ingest(records({{"z", "same text"}, {"a", "same text"}, {"m", "same text"}}));
  auto hits = kb.vanilla_retrieve("same text", 3);
  REQUIRE(hits.size() == 3);
  REQUIRE(hits[0].doc->id == "a");
  REQUIRE(hits[1].doc->id == "m");
  REQUIRE(hits[2].doc->id == "z");
}

TEST_CASE("corpus jsonl loading reports line numbers") {
  auto dir = testutil::temp_dir("corpus");
  auto good = dir / "good.jsonl";
  testutil::write_file(good,
                       R"({"id": "a", "text": "first", "metadata": {"lang": "en"}})"
                       "\n"
                       R"({"id": "b", "text": "second"})"
                       "\n");
  auto recs = load_corpus_jsonl(good.string());
  REQUIRE(recs.size() == 2);
  REQUIRE(recs[0].metadata.at("lang") == "en");

  auto bad = dir / "bad.jsonl";
  testutil::write_file(bad,
                       R"({"id": "a", "text": "fine"})"
                       "\n"
                       "not json at all\n");
  try {
    load_corpus_jsonl(bad.string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.line() == 2);
  }

  REQUIRE_THROWS_AS(load_corpus_jsonl((dir / "missing.jsonl").string()), ParseError);
}

TEST_CASE("kb file round-trips deterministically") {
  auto dir = testutil::temp_dir("kbio");
  auto embedder = small_embedder();
  KnowledgeBase kb(embedder);
  kb.ingest(records({{"a", "alpha doc"}, {"b", "beta doc"}}));
  kb.freeze();

  auto p1 = dir / "kb1.json";
  auto p2 = dir / "kb2.json";
  save_kb(kb, p1.string());
  auto loaded = load_kb(p1.string(), embedder);
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded.frozen());
  save_kb(loaded, p2.string());
  REQUIRE(testutil::read_file(p1) == testutil::read_file(p2));

  // Mismatched embedder is refused.
  auto other = std::make_shared<HashedTfEmbedder>(32);
  REQUIRE_THROWS_AS(load_kb(p1.string(), other), ValidationError);

  // load_or_ingest accepts both formats.
  auto corpus = dir / "corpus.jsonl";
  testutil::write_file(corpus, R"({"id": "x", "text": "from corpus"})"
                               "\n");
  REQUIRE(load_or_ingest_kb(corpus.string(), embedder).size() == 1);
  REQUIRE(load_or_ingest_kb(p1.string(), embedder).size() == 2);
}
