#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"
#include "dhrag/history_store.hpp"

namespace dhrag {

/// Second tree level: a sub-group of a cluster. The medoid member's query
/// text acts as the group's summary.
struct SummaryNode {
  std::int64_t id = 0;  // sequential within the owning cluster
  std::int64_t medoid_triple_id = -1;
  EmbeddingVector centroid;
  std::vector<std::int64_t> leaf_ids;  // ascending
};

struct Cluster {
  std::int64_t id = 0;
  EmbeddingVector centroid;  // mean of member query vectors, renormalized
  std::vector<std::int64_t> member_ids;  // ascending
  std::vector<SummaryNode> summaries;
};

/// One reasoning thread: consecutive related turns of a single session.
struct Chain {
  std::int64_t id = 0;
  std::string session_id;
  std::vector<std::int64_t> triple_ids;  // dialogue order
  EmbeddingVector tail_vector;           // query vector of the last member
};

enum class MatchSource { HM, CoT };

enum class ChainScoreMode { Max, Mean, Tail };

struct MatchResult {
  std::int64_t triple_id = -1;
  double score = 0.0;
  MatchSource source = MatchSource::HM;
  // Path through the tree (HM) or the chain (CoT).
  std::int64_t cluster_id = -1;
  std::int64_t summary_id = -1;
  std::int64_t chain_id = -1;
  // Index into the triple's passages of the passage most similar to the
  // query; -1 when the triple stored no passages.
  int best_passage = -1;
};

struct MatchingConfig {
  double tau_cluster = 0.35;
  double theta_chain = 0.25;
  std::size_t branching = 4;  // max summary groups per cluster
  ChainScoreMode chain_score = ChainScoreMode::Max;
  std::size_t beam_width = 1;  // reserved; only single-path descent is implemented

  std::vector<std::string> validate() const {
    std::vector<std::string> v;
    if (!(tau_cluster >= -1.0 && tau_cluster <= 1.0)) v.push_back("matching.tau_cluster: must be in [-1, 1]");
    if (!(theta_chain >= -1.0 && theta_chain <= 1.0)) v.push_back("matching.theta_chain: must be in [-1, 1]");
    if (branching < 1) v.push_back("matching.branching: must be >= 1");
    if (beam_width < 1) v.push_back("matching.beam_width: must be >= 1");
    return v;
  }
};

struct UpdateReport {
  std::size_t assigned = 0;   // newly clustered triples
  std::size_t moved = 0;      // triples whose group changed during a full rebuild
  bool full_rebuild = false;
};

/// The three organization strategies over one session's history store:
/// greedy threshold clustering with a medoid summary layer (the 3-level
/// matching tree) and per-session chains. Owned by the session alongside
/// its HistoryStore; single writer, concurrent const reads allowed between
/// mutations.
class MatchingIndex {
 public:
  explicit MatchingIndex(MatchingConfig config = {}) : config_(config) {
    auto violations = config.validate();
    if (!violations.empty()) throw ValidationError(violations);
  }

  // ---- clustering ---------------------------------------------------------

  /// Greedy leader assignment: joins the most similar cluster when its
  /// centroid similarity reaches tau_cluster (ties to the lowest cluster
  /// id), otherwise founds a new singleton cluster. Sets t.cluster_id.
  std::int64_t assign_cluster(const HistoryStore& store, Triple& t) {
    std::int64_t best_id = -1;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (const auto& [cid, c] : clusters_) {
      double s = cosine_similarity(t.query_vector, c.centroid);
      if (s > best_sim) {
        best_sim = s;
        best_id = cid;
      }
    }
    if (best_id < 0 || best_sim < config_.tau_cluster) {
      Cluster c;
      c.id = next_cluster_id_++;
      c.centroid = t.query_vector;
      c.member_ids = {t.id};
      t.cluster_id = c.id;
      refresh_cluster(store, c, &t);
      clusters_.emplace(c.id, std::move(c));
      return t.cluster_id.value();
    }
    Cluster& c = clusters_.at(best_id);
    c.member_ids.insert(std::lower_bound(c.member_ids.begin(), c.member_ids.end(), t.id), t.id);
    t.cluster_id = best_id;
    refresh_cluster(store, c, &t);
    return best_id;
  }

  /// Splits a member set into at most `branching` groups by the same greedy
  /// threshold rule one level down (threshold (1 + tau) / 2, against the
  /// group centroid; once the branching cap is reached members always join
  /// their best group). Each group's summary is its medoid: the member most
  /// similar to the group centroid, ties to the lowest id.
  std::vector<SummaryNode> build_summaries(const HistoryStore& store,
                                           const std::vector<std::int64_t>& member_ids,
                                           std::size_t branching,
                                           const Triple* pending = nullptr) const {
    double tau_summary = (1.0 + config_.tau_cluster) / 2.0;
    struct Group {
      std::vector<std::int64_t> ids;
      EmbeddingVector sum;  // accumulated in join order; mean derived on demand
    };
    std::vector<Group> groups;
    auto vec_of = [&](std::int64_t id) -> const EmbeddingVector& {
      if (pending && pending->id == id) return pending->query_vector;
      return store.at(id).query_vector;
    };
    EmbeddingVector centroid;
    for (auto id : member_ids) {
      const EmbeddingVector& v = vec_of(id);
      int best_g = -1;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (std::size_t g = 0; g < groups.size(); ++g) {
        centroid = groups[g].sum;
        for (double& x : centroid) x /= static_cast<double>(groups[g].ids.size());
        l2_normalize(centroid);
        double s = cosine_similarity(v, centroid);
        if (s > best_sim) {
          best_sim = s;
          best_g = static_cast<int>(g);
        }
      }
      if (best_g < 0 || (best_sim < tau_summary && groups.size() < branching)) {
        groups.push_back({{id}, v});
      } else {
        Group& g = groups[static_cast<std::size_t>(best_g)];
        g.ids.push_back(id);
        for (std::size_t i = 0; i < g.sum.size(); ++i) g.sum[i] += v[i];
      }
    }
    std::vector<SummaryNode> out;
    out.reserve(groups.size());
    for (std::size_t g = 0; g < groups.size(); ++g) {
      SummaryNode s;
      s.id = static_cast<std::int64_t>(g);
      s.leaf_ids = groups[g].ids;
      std::sort(s.leaf_ids.begin(), s.leaf_ids.end());
      s.centroid = mean_vector(s.leaf_ids, vec_of);
      double best = -std::numeric_limits<double>::infinity();
      for (auto id : s.leaf_ids) {
        double sim = cosine_similarity(vec_of(id), s.centroid);
        if (sim > best) {
          best = sim;
          s.medoid_triple_id = id;
        }
      }
      out.push_back(std::move(s));
    }
    return out;
  }

  // ---- hierarchical matching ----------------------------------------------

  /// Single-path root-to-leaf descent: best cluster by centroid similarity,
  /// best summary inside it, then up to top_m leaves ranked by query
  /// similarity. Every result carries the index of its most query-similar
  /// stored passage. All ties break to the lowest id.
  std::vector<MatchResult> hierarchical_match(const HistoryStore& store,
                                              const EmbeddingVector& query_vec,
                                              std::size_t top_m) const {
    if (top_m < 1) throw InvalidArgument("hierarchical_match: top_m must be >= 1");
    std::vector<MatchResult> out;
    if (clusters_.empty()) return out;

    const Cluster* best_c = nullptr;
    double best_cs = -std::numeric_limits<double>::infinity();
    for (const auto& [cid, c] : clusters_) {
      double s = cosine_similarity(query_vec, c.centroid);
      if (s > best_cs) {
        best_cs = s;
        best_c = &c;
      }
    }
    const SummaryNode* best_s = nullptr;
    double best_ss = -std::numeric_limits<double>::infinity();
    for (const auto& s : best_c->summaries) {
      double sim = cosine_similarity(query_vec, s.centroid);
      if (sim > best_ss) {
        best_ss = sim;
        best_s = &s;
      }
    }
    if (!best_s) return out;

    struct Leaf {
      std::int64_t id;
      double sim;
    };
    std::vector<Leaf> leaves;
    leaves.reserve(best_s->leaf_ids.size());
    for (auto id : best_s->leaf_ids) {
      leaves.push_back({id, cosine_similarity(query_vec, store.at(id).query_vector)});
    }
    std::sort(leaves.begin(), leaves.end(), [](const Leaf& a, const Leaf& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return a.id < b.id;
    });
    if (leaves.size() > top_m) leaves.resize(top_m);

    for (const auto& leaf : leaves) {
      const Triple& t = store.at(leaf.id);
      MatchResult r;
      r.triple_id = leaf.id;
      r.score = leaf.sim;
      r.source = MatchSource::HM;
      r.cluster_id = best_c->id;
      r.summary_id = best_s->id;
      r.best_passage = best_passage_index(t, query_vec);
      out.push_back(r);
    }
    return out;
  }

  // ---- chains --------------------------------------------------------------

  /// Appends to the session's active chain when the new query is similar
  /// enough to the chain tail, otherwise closes it and starts a fresh chain.
  /// Sets t.chain_id and returns it.
  std::int64_t extend_chain(Triple& t) {
    auto it = active_chain_.find(t.session_id);
    if (it != active_chain_.end()) {
      Chain& chain = chains_.at(it->second);
      if (cosine_similarity(t.query_vector, chain.tail_vector) >= config_.theta_chain) {
        chain.triple_ids.push_back(t.id);
        chain.tail_vector = t.query_vector;
        t.chain_id = chain.id;
        return chain.id;
      }
    }
    Chain chain;
    chain.id = next_chain_id_++;
    chain.session_id = t.session_id;
    chain.triple_ids = {t.id};
    chain.tail_vector = t.query_vector;
    t.chain_id = chain.id;
    active_chain_[t.session_id] = chain.id;
    auto id = chain.id;
    chains_.emplace(id, std::move(chain));
    return id;
  }

  /// Scores every chain (max member similarity by default; mean and
  /// tail-only selectable), picks the best one, and returns up to top_k of
  /// its members ranked by query similarity but emitted in dialogue order,
  /// so downstream rendering can present the reasoning progression.
  std::vector<MatchResult> chain_match(const HistoryStore& store, const EmbeddingVector& query_vec,
                                       std::size_t top_k) const {
    if (top_k < 1) throw InvalidArgument("chain_match: top_k must be >= 1");
    std::vector<MatchResult> out;
    if (chains_.empty()) return out;

    const Chain* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    std::map<std::int64_t, std::vector<double>> sims;  // chain id -> member sims
    for (const auto& [cid, chain] : chains_) {
      auto& s = sims[cid];
      s.reserve(chain.triple_ids.size());
      for (auto id : chain.triple_ids) {
        s.push_back(cosine_similarity(query_vec, store.at(id).query_vector));
      }
      double score;
      switch (config_.chain_score) {
        case ChainScoreMode::Mean: {
          double sum = 0.0;
          for (double x : s) sum += x;
          score = sum / static_cast<double>(s.size());
          break;
        }
        case ChainScoreMode::Tail:
          score = s.back();
          break;
        default:
          score = *std::max_element(s.begin(), s.end());
      }
      if (score > best_score) {
        best_score = score;
        best = &chain;
      }
    }

    struct Member {
      std::int64_t id;
      double sim;
      std::int64_t timestamp;
    };
    std::vector<Member> members;
    const auto& member_sims = sims.at(best->id);
    for (std::size_t i = 0; i < best->triple_ids.size(); ++i) {
      auto id = best->triple_ids[i];
      members.push_back({id, member_sims[i], store.at(id).timestamp});
    }
    std::sort(members.begin(), members.end(), [](const Member& a, const Member& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return a.id < b.id;
    });
    if (members.size() > top_k) members.resize(top_k);
    std::sort(members.begin(), members.end(), [](const Member& a, const Member& b) {
      return a.timestamp < b.timestamp;
    });

    for (const auto& m : members) {
      MatchResult r;
      r.triple_id = m.id;
      r.score = m.sim;
      r.source = MatchSource::CoT;
      r.chain_id = best->id;
      r.best_passage = best_passage_index(store.at(m.id), query_vec);
      out.push_back(r);
    }
    return out;
  }

  // ---- maintenance ----------------------------------------------------------

  /// Removes evicted triples from every cluster, summary and chain. Emptied
  /// clusters and chains disappear; affected centroids, summaries, chain
  /// tails and active-chain pointers are refreshed. `store` must already
  /// have erased the triples.
  void remove_triples(const HistoryStore& store, const std::vector<std::int64_t>& ids) {
    if (ids.empty()) return;
    std::set<std::int64_t> gone(ids.begin(), ids.end());

    for (auto it = clusters_.begin(); it != clusters_.end();) {
      Cluster& c = it->second;
      auto before = c.member_ids.size();
      std::erase_if(c.member_ids, [&](std::int64_t id) { return gone.count(id) > 0; });
      if (c.member_ids.empty()) {
        it = clusters_.erase(it);
        continue;
      }
      if (c.member_ids.size() != before) refresh_cluster(store, c, nullptr);
      ++it;
    }

    for (auto it = chains_.begin(); it != chains_.end();) {
      Chain& chain = it->second;
      auto before = chain.triple_ids.size();
      std::erase_if(chain.triple_ids, [&](std::int64_t id) { return gone.count(id) > 0; });
      if (chain.triple_ids.empty()) {
        auto act = active_chain_.find(chain.session_id);
        if (act != active_chain_.end() && act->second == chain.id) active_chain_.erase(act);
        it = chains_.erase(it);
        continue;
      }
      if (chain.triple_ids.size() != before) {
        chain.tail_vector = store.at(chain.triple_ids.back()).query_vector;
      }
      ++it;
    }
  }

  /// Ensures every stored triple is clustered. Incremental mode assigns the
  /// (rare) unassigned triples only; every recluster_period insertions the
  /// whole store is re-assigned by the same greedy pass in id order, which
  /// is idempotent when repeated.
  UpdateReport update_clusters(HistoryStore& store) {
    UpdateReport report;
    for (auto& [id, t] : store.triples_mutable()) {
      (void)id;
      if (!t.cluster_id.has_value()) {
        assign_cluster(store, t);
        ++report.assigned;
      }
    }
    insertions_since_rebuild_ += report.assigned;
    if (insertions_since_rebuild_ >= store.config().recluster_period) {
      report.moved = full_rebuild(store);
      report.full_rebuild = true;
      insertions_since_rebuild_ = 0;
    }
    return report;
  }

  /// Drops all clusters and replays the greedy assignment over every stored
  /// triple in id order. Returns how many triples ended up in a different
  /// group than before.
  std::size_t full_rebuild(HistoryStore& store) {
    std::map<std::int64_t, std::vector<std::int64_t>> old_groups;
    for (const auto& [cid, c] : clusters_) old_groups[cid] = c.member_ids;
    std::map<std::int64_t, std::int64_t> old_of;  // triple -> old cluster
    for (const auto& [cid, members] : old_groups) {
      for (auto id : members) old_of[id] = cid;
    }

    clusters_.clear();
    next_cluster_id_ = 0;
    std::vector<std::int64_t> order;
    for (auto& [id, t] : store.triples_mutable()) {
      order.push_back(id);
      t.cluster_id.reset();
    }
    for (auto id : order) {
      Triple& t = *store.find_mutable(id);
      assign_cluster(store, t);
    }

    std::size_t moved = 0;
    for (auto id : order) {
      const Triple& t = store.at(id);
      auto oit = old_of.find(id);
      if (oit == old_of.end()) continue;  // was unassigned before
      const auto& new_members = clusters_.at(t.cluster_id.value()).member_ids;
      if (old_groups.at(oit->second) != new_members) ++moved;
    }
    return moved;
  }

  const std::map<std::int64_t, Cluster>& clusters() const { return clusters_; }
  const std::map<std::int64_t, Chain>& chains() const { return chains_; }
  const std::map<std::string, std::int64_t>& active_chains() const { return active_chain_; }
  const MatchingConfig& config() const { return config_; }

  /// Used only by the snapshot loader, which re-validates every invariant.
  void restore_cluster(Cluster c) {
    next_cluster_id_ = std::max(next_cluster_id_, c.id + 1);
    auto id = c.id;
    clusters_.emplace(id, std::move(c));
  }
  void restore_chain(Chain c, bool active) {
    next_chain_id_ = std::max(next_chain_id_, c.id + 1);
    if (active) active_chain_[c.session_id] = c.id;
    auto id = c.id;
    chains_.emplace(id, std::move(c));
  }

 private:
  template <typename VecOf>
  static EmbeddingVector mean_vector(const std::vector<std::int64_t>& ids, VecOf&& vec_of) {
    EmbeddingVector sum(vec_of(ids.front()).size(), 0.0);
    for (auto id : ids) {
      const EmbeddingVector& v = vec_of(id);
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += v[i];
    }
    for (double& x : sum) x /= static_cast<double>(ids.size());
    l2_normalize(sum);
    return sum;
  }

  /// Recomputes the centroid and the summary layer of a cluster from its
  /// members in ascending id order. `pending` supplies the vector of a
  /// member that is being assigned and may not be reachable via the store
  /// yet. Exact recomputation keeps live state identical to reloaded state.
  void refresh_cluster(const HistoryStore& store, Cluster& c, const Triple* pending) {
    auto vec_of = [&](std::int64_t id) -> const EmbeddingVector& {
      if (pending && pending->id == id) return pending->query_vector;
      return store.at(id).query_vector;
    };
    c.centroid = mean_vector(c.member_ids, vec_of);
    c.summaries = build_summaries(store, c.member_ids, config_.branching, pending);
  }

  static int best_passage_index(const Triple& t, const EmbeddingVector& query_vec) {
    int best = -1;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.passage_vectors.size(); ++i) {
      double s = cosine_similarity(query_vec, t.passage_vectors[i]);
      if (s > best_sim) {
        best_sim = s;
        best = static_cast<int>(i);
      }
    }
    return best;
  }

  MatchingConfig config_;
  std::map<std::int64_t, Cluster> clusters_;
  std::map<std::int64_t, Chain> chains_;
  std::map<std::string, std::int64_t> active_chain_;
  std::int64_t next_cluster_id_ = 0;
  std::int64_t next_chain_id_ = 0;
  std::int64_t insertions_since_rebuild_ = 0;
};

}  // namespace dhrag
