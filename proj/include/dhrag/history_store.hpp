#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"

namespace dhrag {

/// One stored interaction: the query, the passages retrieved for it, the
/// generated response, and its position on the per-session turn clock.
/// Passage vectors are cached at insert time so later matches can score
/// stored passages without re-embedding.
struct Triple {
  std::int64_t id = -1;
  std::string session_id;
  std::int64_t timestamp = 0;  // discrete turn counter, not wall time
  std::string query;
  std::vector<std::string> passages;
  std::string response;
  EmbeddingVector query_vector;
  std::vector<EmbeddingVector> passage_vectors;
  std::optional<std::int64_t> cluster_id;
  std::optional<std::int64_t> chain_id;
};

struct HistoryConfig {
  std::int64_t capacity = 100;       // maximum stored triples after an update
  double alpha = 0.5;                // relevance/recency blend
  double decay_lambda = 0.1;         // recency decay per turn
  double tau_cluster = 0.35;         // join-vs-found threshold for clustering
  double theta_chain = 0.25;         // continue-vs-break threshold for chains
  std::int64_t recluster_period = 50;  // full recluster every R insertions

  /// Returns the list of violated ranges (empty when valid). tau/theta may
  /// go down to -1, which disables the threshold entirely since cosine never
  /// falls below it.
  std::vector<std::string> validate() const {
    std::vector<std::string> v;
    if (capacity < 1) v.push_back("history.capacity: must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) v.push_back("history.alpha: must be in [0, 1]");
    if (!(decay_lambda >= 0.0)) v.push_back("history.decay_lambda: must be >= 0");
    if (!(tau_cluster >= -1.0 && tau_cluster <= 1.0)) v.push_back("history.tau_cluster: must be in [-1, 1]");
    if (!(theta_chain >= -1.0 && theta_chain <= 1.0)) v.push_back("history.theta_chain: must be in [-1, 1]");
    if (recluster_period < 1) v.push_back("history.recluster_period: must be >= 1");
    return v;
  }
};

/// Recency of a turn `age = now - t_i` turns ago: exp(-lambda * age).
/// Equals 1 when now == t_i and strictly decreases with age for lambda > 0.
inline double recency_score(std::int64_t t_i, std::int64_t now, double decay_lambda) {
  if (now < t_i) {
    throw InvalidArgument("recency_score: clock regression (now=" + std::to_string(now) +
                          " < t_i=" + std::to_string(t_i) + ")");
  }
  return std::exp(-decay_lambda * static_cast<double>(now - t_i));
}

/// Cosine rescaled from [-1, 1] to [0, 1] so relevance and recency blend on
/// a common scale.
inline double relevance_score(const EmbeddingVector& q_i_vec, const EmbeddingVector& q_t_vec) {
  return (cosine_similarity(q_i_vec, q_t_vec) + 1.0) / 2.0;
}

/// alpha * relevance + (1 - alpha) * recency, in [0, 1]. This is the score
/// eviction keeps the top-N of.
inline double comprehensive_weight(const Triple& triple, const EmbeddingVector& current_query_vec,
                                   std::int64_t now, const HistoryConfig& config) {
  double rel = relevance_score(triple.query_vector, current_query_vec);
  double rec = recency_score(triple.timestamp, now, config.decay_lambda);
  return config.alpha * rel + (1.0 - config.alpha) * rec;
}

/// The dynamic historical-interaction database: capacity-bounded triple
/// storage with comprehensive-weight eviction. Confined to one session;
/// single writer, no internal locking.
class HistoryStore {
 public:
  explicit HistoryStore(HistoryConfig config = {}) : config_(config) {
    auto violations = config.validate();
    if (!violations.empty()) throw ValidationError(violations);
  }

  /// Inserts a triple whose timestamp must equal the current turn clock
  /// (the pipeline assigns it). Returns the assigned id and advances the
  /// clock. Capacity is not enforced here; call evict_to_capacity after.
  std::int64_t insert(Triple t) {
    if (t.timestamp != turn_clock_) {
      throw InvalidArgument("insert: triple timestamp " + std::to_string(t.timestamp) +
                            " != turn clock " + std::to_string(turn_clock_));
    }
    t.id = next_id_++;
    turn_clock_ = t.timestamp + 1;
    auto id = t.id;
    triples_.emplace(id, std::move(t));
    return id;
  }

  /// Removes exactly max(0, size - capacity) triples, keeping the ones with
  /// the highest comprehensive weight relative to the current query. Ties
  /// keep the newer timestamp, then the lower id. Returns the evicted ids
  /// in ascending order; callers owning matching indices must forward them
  /// to MatchingIndex::remove_triples.
  std::vector<std::int64_t> evict_to_capacity(const EmbeddingVector& current_query_vec,
                                              std::int64_t now) {
    std::vector<std::int64_t> evicted;
    if (static_cast<std::int64_t>(triples_.size()) <= config_.capacity) return evicted;

    struct Entry {
      double weight;
      std::int64_t timestamp;
      std::int64_t id;
    };
    std::vector<Entry> entries;
    entries.reserve(triples_.size());
    for (const auto& [id, t] : triples_) {
      entries.push_back({comprehensive_weight(t, current_query_vec, now, config_), t.timestamp, id});
    }
    std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
      if (a.weight != b.weight) return a.weight > b.weight;
      if (a.timestamp != b.timestamp) return a.timestamp > b.timestamp;
      return a.id < b.id;
    });
    for (std::size_t i = config_.capacity; i < entries.size(); ++i) {
      evicted.push_back(entries[i].id);
    }
    std::sort(evicted.begin(), evicted.end());
    for (auto id : evicted) triples_.erase(id);
    return evicted;
  }

  const Triple* find(std::int64_t id) const {
    auto it = triples_.find(id);
    return it == triples_.end() ? nullptr : &it->second;
  }

  Triple* find_mutable(std::int64_t id) {
    auto it = triples_.find(id);
    return it == triples_.end() ? nullptr : &it->second;
  }

  const Triple& at(std::int64_t id) const {
    auto it = triples_.find(id);
    if (it == triples_.end()) throw InvalidArgument("HistoryStore: unknown triple id " + std::to_string(id));
    return it->second;
  }

  std::size_t size() const { return triples_.size(); }
  std::int64_t turn_clock() const { return turn_clock_; }
  const HistoryConfig& config() const { return config_; }
  const std::map<std::int64_t, Triple>& triples() const { return triples_; }
  std::map<std::int64_t, Triple>& triples_mutable() { return triples_; }

  /// Used only by the snapshot loader, which re-validates every invariant.
  void restore_clock(std::int64_t turn_clock, std::int64_t next_id) {
    turn_clock_ = turn_clock;
    next_id_ = next_id;
  }
  void restore_triple(Triple t) { triples_.emplace(t.id, std::move(t)); }

 private:
  HistoryConfig config_;
  std::map<std::int64_t, Triple> triples_;
  std::int64_t turn_clock_ = 0;
  std::int64_t next_id_ = 0;
};

}  // namespace dhrag
