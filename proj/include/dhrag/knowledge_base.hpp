#pragma once

#include <algorithm>
#include <deque>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"

namespace dhrag {

struct Document {
  std::string id;
  std::string text;
  EmbeddingVector vector;  // embed_text(text) under the owning KB's embedder
  std::map<std::string, std::string> metadata;
};

struct IngestRecord {
  std::string id;
  std::string text;
  std::map<std::string, std::string> metadata;
};

struct RetrievedDoc {
  const Document* doc;
  double score;
};

/// The static knowledge base: an immutable-after-freeze document store with
/// exhaustive cosine top-k retrieval. No ANN index; a linear scan is exact,
/// deterministic and fast enough for desk-scale corpora.
class KnowledgeBase {
 public:
  explicit KnowledgeBase(std::shared_ptr<const Embedder> embedder)
      : embedder_(std::move(embedder)) {
    if (!embedder_) throw InvalidArgument("KnowledgeBase: null embedder");
  }

  /// Embeds and indexes every record, atomically: on any duplicate or empty
  /// text the store is left untouched. Returns the number inserted.
  std::size_t ingest(const std::vector<IngestRecord>& records) {
    if (frozen_) throw InvalidArgument("KnowledgeBase: ingest after freeze");
    std::set<std::string> batch_ids;
    for (const auto& r : records) {
      if (r.text.empty()) {
        throw InvalidArgument("ingest: empty text for document id '" + r.id + "'");
      }
      if (by_id_.count(r.id) || !batch_ids.insert(r.id).second) {
        throw InvalidArgument("ingest: duplicate document id '" + r.id + "'");
      }
    }
    for (const auto& r : records) {
      Document d;
      d.id = r.id;
      d.text = r.text;
      d.metadata = r.metadata;
      d.vector = embedder_->embed_text(r.text);
      docs_.push_back(std::move(d));
      by_id_.emplace(r.id, docs_.size() - 1);
    }
    return records.size();
  }

  /// After freeze() the KB rejects mutation and is safe to share across
  /// concurrent readers.
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

  std::size_t size() const { return docs_.size(); }

  const Document* find(const std::string& id) const {
    auto it = by_id_.find(id);
    return it == by_id_.end() ? nullptr : &docs_[it->second];
  }

  /// Top-k documents by cosine similarity to the query, scores attached.
  /// Sorted by score descending, ties by ascending id. Empty KB -> empty.
  std::vector<RetrievedDoc> vanilla_retrieve(const std::string& query, int k) const {
    if (k < 1) throw InvalidArgument("vanilla_retrieve: k must be >= 1");
    std::vector<RetrievedDoc> scored;
    if (docs_.empty()) return scored;
    EmbeddingVector q = embedder_->embed_text(query);
    scored.reserve(docs_.size());
    for (const auto& d : docs_) {
      scored.push_back({&d, cosine_similarity(q, d.vector)});
    }
    std::sort(scored.begin(), scored.end(), [](const RetrievedDoc& a, const RetrievedDoc& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.doc->id < b.doc->id;
    });
    if (scored.size() > static_cast<std::size_t>(k)) scored.resize(k);
    return scored;
  }

  /// Documents in insertion order (stable storage; pointers stay valid).
  const std::deque<Document>& documents() const { return docs_; }

  const Embedder& embedder() const { return *embedder_; }
  std::shared_ptr<const Embedder> embedder_ptr() const { return embedder_; }

 private:
  std::shared_ptr<const Embedder> embedder_;
  std::deque<Document> docs_;
  std::map<std::string, std::size_t> by_id_;
  bool frozen_ = false;
};

/// Corpus file format: JSON Lines, one {"id", "text", "metadata"} object per
/// line. Metadata is optional and must be a flat string->string object.
inline std::vector<IngestRecord> load_corpus_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::vector<IngestRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ParseError(path, lineno, "invalid JSON");
    if (!j.is_object() || !j.contains("id") || !j.contains("text")) {
      throw ParseError(path, lineno, "expected an object with 'id' and 'text'");
    }
    if (!j["id"].is_string() || !j["text"].is_string()) {
      throw ParseError(path, lineno, "'id' and 'text' must be strings");
    }
    IngestRecord r;
    r.id = j["id"].get<std::string>();
    r.text = j["text"].get<std::string>();
    if (j.contains("metadata")) {
      if (!j["metadata"].is_object()) throw ParseError(path, lineno, "'metadata' must be an object");
      for (auto& [k, v] : j["metadata"].items()) {
        if (!v.is_string()) throw ParseError(path, lineno, "metadata values must be strings");
        r.metadata[k] = v.get<std::string>();
      }
    }
    records.push_back(std::move(r));
  }
  return records;
}

/// Serialized KB: a single JSON document carrying the embedder identity and
/// the documents. Vectors are not stored; the embedder is deterministic, so
/// they are recomputed on load and the file stays small and byte-stable.
inline nlohmann::ordered_json kb_to_json(const KnowledgeBase& kb) {
  nlohmann::ordered_json j;
  j["format"] = "dhrag-kb/1";
  j["embedder"] = kb.embedder().fingerprint();
  auto docs = nlohmann::ordered_json::array();
  for (const auto& d : kb.documents()) {
    nlohmann::ordered_json dj;
    dj["id"] = d.id;
    dj["text"] = d.text;
    dj["metadata"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : d.metadata) dj["metadata"][k] = v;
    docs.push_back(std::move(dj));
  }
  j["documents"] = std::move(docs);
  return j;
}

inline void save_kb(const KnowledgeBase& kb, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, 0, "cannot open file for writing");
  out << kb_to_json(kb).dump(2) << "\n";
}

inline KnowledgeBase load_kb(const std::string& path, std::shared_ptr<const Embedder> embedder) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError(path, 0, "invalid JSON");
  if (!j.is_object() || j.value("format", "") != "dhrag-kb/1") {
    throw ParseError(path, 0, "not a dhrag knowledge-base file");
  }
  if (j.value("embedder", "") != embedder->fingerprint()) {
    throw ValidationError("knowledge base was built with embedder '" + j.value("embedder", "") +
                          "' but the active embedder is '" + embedder->fingerprint() + "'");
  }
  KnowledgeBase kb(std::move(embedder));
  std::vector<IngestRecord> records;
  for (const auto& dj : j.at("documents")) {
    IngestRecord r;
    r.id = dj.at("id").get<std::string>();
    r.text = dj.at("text").get<std::string>();
    if (dj.contains("metadata")) {
      for (auto& [k, v] : dj.at("metadata").items()) r.metadata[k] = v.get<std::string>();
    }
    records.push_back(std::move(r));
  }
  kb.ingest(records);
  kb.freeze();
  return kb;
}

/// Accepts either a serialized KB (dhrag-kb/1) or a raw JSONL corpus and
/// returns a frozen knowledge base either way.
inline KnowledgeBase load_or_ingest_kb(const std::string& path,
                                       std::shared_ptr<const Embedder> embedder) {
  {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw ParseError(path, 0, "cannot open file");
    nlohmann::json j = nlohmann::json::parse(probe, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.value("format", "") == "dhrag-kb/1") {
      return load_kb(path, std::move(embedder));
    }
  }
  KnowledgeBase kb(std::move(embedder));
  kb.ingest(load_corpus_jsonl(path));
  kb.freeze();
  return kb;
}

}  // namespace dhrag
