#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"
#include "dhrag/history_store.hpp"
#include "dhrag/matching.hpp"

namespace dhrag {

inline std::string chain_score_name(ChainScoreMode m) {
  switch (m) {
    case ChainScoreMode::Mean: return "mean";
    case ChainScoreMode::Tail: return "tail";
    default: return "max";
  }
}

inline ChainScoreMode chain_score_from_name(const std::string& s) {
  if (s == "max") return ChainScoreMode::Max;
  if (s == "mean") return ChainScoreMode::Mean;
  if (s == "tail") return ChainScoreMode::Tail;
  throw ValidationError("matching.chain_score: must be max, mean or tail (got '" + s + "')");
}

/// One JSON document holding the store and its indices. Vectors and
/// centroids are never serialized — the embedder is deterministic, so they
/// are recomputed on load — which keeps save -> load -> save byte-identical
/// under the canonical key order used here.
inline nlohmann::ordered_json session_snapshot(const HistoryStore& store,
                                               const MatchingIndex& index,
                                               const Embedder& embedder) {
  nlohmann::ordered_json j;

  nlohmann::ordered_json cfg;
  const HistoryConfig& h = store.config();
  cfg["history"] = {{"capacity", h.capacity},
                    {"alpha", h.alpha},
                    {"decay_lambda", h.decay_lambda},
                    {"tau_cluster", h.tau_cluster},
                    {"theta_chain", h.theta_chain},
                    {"recluster_period", h.recluster_period}};
  const MatchingConfig& m = index.config();
  cfg["matching"] = {{"tau_cluster", m.tau_cluster},
                     {"theta_chain", m.theta_chain},
                     {"branching", m.branching},
                     {"chain_score", chain_score_name(m.chain_score)},
                     {"beam_width", m.beam_width}};
  cfg["embedder"] = embedder.fingerprint();
  j["config"] = std::move(cfg);

  j["turn_clock"] = store.turn_clock();

  auto triples = nlohmann::ordered_json::array();
  for (const auto& [id, t] : store.triples()) {
    nlohmann::ordered_json tj;
    tj["id"] = id;
    tj["session_id"] = t.session_id;
    tj["timestamp"] = t.timestamp;
    tj["query"] = t.query;
    tj["passages"] = t.passages;
    tj["response"] = t.response;
    tj["cluster_id"] = t.cluster_id ? nlohmann::ordered_json(*t.cluster_id) : nullptr;
    tj["chain_id"] = t.chain_id ? nlohmann::ordered_json(*t.chain_id) : nullptr;
    triples.push_back(std::move(tj));
  }
  j["triples"] = std::move(triples);

  auto clusters = nlohmann::ordered_json::array();
  for (const auto& [cid, c] : index.clusters()) {
    nlohmann::ordered_json cj;
    cj["id"] = cid;
    cj["member_ids"] = c.member_ids;
    auto summaries = nlohmann::ordered_json::array();
    for (const auto& s : c.summaries) {
      summaries.push_back({{"id", s.id},
                           {"medoid_triple_id", s.medoid_triple_id},
                           {"leaf_ids", s.leaf_ids}});
    }
    cj["summaries"] = std::move(summaries);
    clusters.push_back(std::move(cj));
  }
  j["clusters"] = std::move(clusters);

  auto chains = nlohmann::ordered_json::array();
  for (const auto& [cid, c] : index.chains()) {
    auto act = index.active_chains().find(c.session_id);
    bool active = act != index.active_chains().end() && act->second == cid;
    chains.push_back({{"id", cid},
                      {"session_id", c.session_id},
                      {"triple_ids", c.triple_ids},
                      {"active", active}});
  }
  j["chains"] = std::move(chains);

  return j;
}

struct LoadedSession {
  HistoryStore store;
  MatchingIndex index;
};

/// Rebuilds a store + index pair from a snapshot, re-embedding all texts
/// and re-deriving centroids, medoid summaries' centroids and chain tails.
/// Every stored-state invariant is checked; the first violated one is
/// reported by name.
inline LoadedSession load_snapshot_json(const nlohmann::json& j, const Embedder& embedder) {
  auto fail = [](const std::string& invariant) -> void {
    throw ValidationError("snapshot invariant violated: " + invariant);
  };
  if (!j.is_object()) fail("document must be a JSON object");
  for (const char* key : {"config", "turn_clock", "triples", "clusters", "chains"}) {
    if (!j.contains(key)) fail(std::string("missing key '") + key + "'");
  }

  const auto& cfg = j.at("config");
  std::string fp = cfg.value("embedder", "");
  if (fp != embedder.fingerprint()) {
    fail("embedder fingerprint '" + fp + "' does not match active embedder '" +
         embedder.fingerprint() + "'");
  }

  HistoryConfig hc;
  const auto& hj = cfg.at("history");
  hc.capacity = hj.at("capacity").get<std::int64_t>();
  hc.alpha = hj.at("alpha").get<double>();
  hc.decay_lambda = hj.at("decay_lambda").get<double>();
  hc.tau_cluster = hj.at("tau_cluster").get<double>();
  hc.theta_chain = hj.at("theta_chain").get<double>();
  hc.recluster_period = hj.at("recluster_period").get<std::int64_t>();
  auto violations = hc.validate();
  if (!violations.empty()) throw ValidationError(violations);

  MatchingConfig mc;
  const auto& mj = cfg.at("matching");
  mc.tau_cluster = mj.at("tau_cluster").get<double>();
  mc.theta_chain = mj.at("theta_chain").get<double>();
  mc.branching = mj.at("branching").get<std::size_t>();
  mc.chain_score = chain_score_from_name(mj.at("chain_score").get<std::string>());
  mc.beam_width = mj.at("beam_width").get<std::size_t>();

  LoadedSession out{HistoryStore(hc), MatchingIndex(mc)};

  std::int64_t turn_clock = j.at("turn_clock").get<std::int64_t>();
  std::int64_t prev_id = -1;
  std::int64_t prev_ts = -1;
  std::int64_t max_ts = -1;
  std::map<std::int64_t, std::int64_t> declared_cluster;  // triple -> cluster_id
  std::map<std::int64_t, std::int64_t> declared_chain;
  for (const auto& tj : j.at("triples")) {
    Triple t;
    t.id = tj.at("id").get<std::int64_t>();
    t.session_id = tj.at("session_id").get<std::string>();
    t.timestamp = tj.at("timestamp").get<std::int64_t>();
    t.query = tj.at("query").get<std::string>();
    t.response = tj.at("response").get<std::string>();
    for (const auto& p : tj.at("passages")) t.passages.push_back(p.get<std::string>());
    if (t.id <= prev_id) fail("triple ids strictly increasing");
    if (t.timestamp <= prev_ts) fail("timestamps strictly increasing with id");
    prev_id = t.id;
    prev_ts = t.timestamp;
    max_ts = std::max(max_ts, t.timestamp);
    if (!tj.at("cluster_id").is_null()) {
      t.cluster_id = tj.at("cluster_id").get<std::int64_t>();
      declared_cluster[t.id] = *t.cluster_id;
    }
    if (!tj.at("chain_id").is_null()) {
      t.chain_id = tj.at("chain_id").get<std::int64_t>();
      declared_chain[t.id] = *t.chain_id;
    }
    t.query_vector = embedder.embed_text(t.query);
    for (const auto& p : t.passages) t.passage_vectors.push_back(embedder.embed_text(p));
    out.store.restore_triple(std::move(t));
  }
  if (turn_clock < max_ts) fail("turn_clock >= max stored timestamp");
  out.store.restore_clock(turn_clock, prev_id + 1);
  if (static_cast<std::int64_t>(out.store.size()) > hc.capacity) {
    fail("store size <= capacity");
  }

  auto mean_of = [&](const std::vector<std::int64_t>& ids) {
    EmbeddingVector sum(embedder.dim(), 0.0);
    for (auto id : ids) {
      const EmbeddingVector& v = out.store.at(id).query_vector;
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    }
    for (double& x : sum) x /= static_cast<double>(ids.size());
    l2_normalize(sum);
    return sum;
  };

  std::set<std::int64_t> clustered;
  for (const auto& cj : j.at("clusters")) {
    Cluster c;
    c.id = cj.at("id").get<std::int64_t>();
    for (const auto& mid : cj.at("member_ids")) c.member_ids.push_back(mid.get<std::int64_t>());
    if (c.member_ids.empty()) fail("clusters are non-empty");
    if (!std::is_sorted(c.member_ids.begin(), c.member_ids.end())) {
      fail("cluster member_ids sorted ascending");
    }
    std::set<std::int64_t> members;
    for (auto id : c.member_ids) {
      if (!out.store.find(id)) fail("cluster members reference stored triples");
      if (!clustered.insert(id).second) fail("each triple belongs to exactly one cluster");
      members.insert(id);
      auto d = declared_cluster.find(id);
      if (d == declared_cluster.end() || d->second != c.id) {
        fail("triple cluster_id matches its cluster membership");
      }
    }
    std::set<std::int64_t> covered;
    for (const auto& sj : cj.at("summaries")) {
      SummaryNode s;
      s.id = sj.at("id").get<std::int64_t>();
      s.medoid_triple_id = sj.at("medoid_triple_id").get<std::int64_t>();
      for (const auto& lid : sj.at("leaf_ids")) s.leaf_ids.push_back(lid.get<std::int64_t>());
      if (s.leaf_ids.empty()) fail("summary nodes are non-empty");
      for (auto id : s.leaf_ids) {
        if (!members.count(id)) fail("summary leaves are members of their cluster");
        if (!covered.insert(id).second) fail("summary leaf sets partition cluster members");
      }
      if (!std::count(s.leaf_ids.begin(), s.leaf_ids.end(), s.medoid_triple_id)) {
        fail("summary medoid is one of its leaves");
      }
      s.centroid = mean_of(s.leaf_ids);
      c.summaries.push_back(std::move(s));
    }
    if (covered.size() != members.size()) fail("summary leaf sets partition cluster members");
    c.centroid = mean_of(c.member_ids);
    out.index.restore_cluster(std::move(c));
  }
  for (const auto& [tid, cid] : declared_cluster) {
    (void)cid;
    if (!clustered.count(tid)) fail("triple cluster_id matches its cluster membership");
  }

  std::set<std::int64_t> chained;
  std::set<std::string> sessions_with_active;
  for (const auto& cj : j.at("chains")) {
    Chain c;
    c.id = cj.at("id").get<std::int64_t>();
    c.session_id = cj.at("session_id").get<std::string>();
    for (const auto& tid : cj.at("triple_ids")) c.triple_ids.push_back(tid.get<std::int64_t>());
    if (c.triple_ids.empty()) fail("chains are non-empty");
    std::int64_t last_ts = -1;
    for (auto id : c.triple_ids) {
      const Triple* t = out.store.find(id);
      if (!t) fail("chain members reference stored triples");
      if (t->session_id != c.session_id) fail("chain members belong to the chain's session");
      if (t->timestamp <= last_ts) fail("chain triple_ids strictly increasing in timestamp");
      last_ts = t->timestamp;
      if (!chained.insert(id).second) fail("each triple belongs to at most one chain");
      auto d = declared_chain.find(id);
      if (d == declared_chain.end() || d->second != c.id) {
        fail("triple chain_id matches its chain membership");
      }
    }
    c.tail_vector = out.store.at(c.triple_ids.back()).query_vector;
    bool active = cj.value("active", false);
    if (active && !sessions_with_active.insert(c.session_id).second) {
      fail("at most one active chain per session");
    }
    out.index.restore_chain(std::move(c), active);
  }
  for (const auto& [tid, cid] : declared_chain) {
    (void)cid;
    if (!chained.count(tid)) fail("triple chain_id matches its chain membership");
  }

  return out;
}

inline void save_snapshot(const HistoryStore& store, const MatchingIndex& index,
                          const Embedder& embedder, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError(path, 0, "cannot open file for writing");
  out << session_snapshot(store, index, embedder).dump(2) << "\n";
}

inline LoadedSession load_snapshot(const std::string& path, const Embedder& embedder) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, 0, "cannot open file");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError(path, 0, "invalid JSON");
  return load_snapshot_json(j, embedder);
}

}  // namespace dhrag
