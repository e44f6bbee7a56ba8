#pragma once

#include <map>
#include <set>

#include "dhrag/history_store.hpp"
#include "dhrag/matching.hpp"

namespace testutil {

/// Structural invariants that must hold after every completed mutation:
/// clusters partition the clustered triples, summaries partition their
/// cluster, chains are disjoint and time-ordered, and nothing references a
/// missing triple.
inline void check_index_invariants(const dhrag::HistoryStore& store,
                                   const dhrag::MatchingIndex& index,
                                   bool require_full_partition = true) {
  std::set<std::int64_t> clustered;
  for (const auto& [cid, c] : index.clusters()) {
    REQUIRE_FALSE(c.member_ids.empty());
    std::set<std::int64_t> members;
    for (auto id : c.member_ids) {
      REQUIRE(store.find(id) != nullptr);
      REQUIRE(store.at(id).cluster_id == cid);
      REQUIRE(clustered.insert(id).second);  // in exactly one cluster
      members.insert(id);
    }
    std::set<std::int64_t> covered;
    for (const auto& s : c.summaries) {
      REQUIRE_FALSE(s.leaf_ids.empty());
      bool medoid_found = false;
      for (auto id : s.leaf_ids) {
        REQUIRE(members.count(id) == 1);
        REQUIRE(covered.insert(id).second);  // in exactly one summary
        medoid_found = medoid_found || id == s.medoid_triple_id;
      }
      REQUIRE(medoid_found);
    }
    REQUIRE(covered == members);
  }
  if (require_full_partition) {
    REQUIRE(clustered.size() == store.size());
  }

  std::set<std::int64_t> chained;
  for (const auto& [cid, chain] : index.chains()) {
    REQUIRE_FALSE(chain.triple_ids.empty());
    std::int64_t last_ts = -1;
    for (auto id : chain.triple_ids) {
      REQUIRE(store.find(id) != nullptr);
      const auto& t = store.at(id);
      REQUIRE(t.chain_id == cid);
      REQUIRE(t.session_id == chain.session_id);
      REQUIRE(t.timestamp > last_ts);  // strictly increasing
      last_ts = t.timestamp;
      REQUIRE(chained.insert(id).second);  // in at most one chain
    }
  }
}

}  // namespace testutil
