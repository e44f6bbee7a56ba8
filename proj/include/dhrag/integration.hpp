#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"
#include "dhrag/text.hpp"

namespace dhrag {

/// Where a context candidate came from. Ordered by specificity: when the
/// same text arrives from several sources the most specific tag wins.
enum class ItemSource { Static = 0, HM = 1, CoT = 2 };

inline std::string_view item_source_name(ItemSource s) {
  switch (s) {
    case ItemSource::Static: return "static";
    case ItemSource::HM: return "hm";
    default: return "cot";
  }
}

/// One candidate context snippet.
///
/// `text` is the snippet weighted, deduplicated and budgeted: the document
/// text for static hits, the best stored passage for hierarchical hits
/// (falling back to the response, then the query, when no passages were
/// stored) and the stored response for chain hits. History items also carry
/// their turn's query/response pair, which is what the prompt renders.
struct RetrievedItem {
  ItemSource source = ItemSource::Static;
  std::string text;
  EmbeddingVector vector;  // embed_text(text) under the active embedder
  double base_score = 0.0;
  std::string origin_id;  // "doc:<id>", "hm:<triple id>" or "cot:<triple id>"
  std::string query;      // history items only
  std::string response;   // history items only
  std::int64_t timestamp = -1;  // history items only; orders the reasoning block
};

struct SelectedItem {
  RetrievedItem item;
  double weight;  // the item's original attention weight, not renormalized
};

/// The budgeted context handed to the generator together with the
/// reconstructed query.
struct IntegratedContext {
  std::vector<SelectedItem> selected;  // selection order
  std::string reconstructed_query;
  std::int64_t token_budget_used = 0;
};

/// Optional linear map applied to item vectors before the attention dot
/// product. Empty means identity. File format: dim*dim whitespace-separated
/// reals, row-major.
struct AttentionMatrix {
  std::size_t dim = 0;
  std::vector<double> values;  // row-major, dim x dim; empty -> identity

  bool identity() const { return values.empty(); }

  EmbeddingVector apply(const EmbeddingVector& v) const {
    if (identity()) return v;
    if (v.size() != dim) {
      throw InvalidArgument("AttentionMatrix: vector dim " + std::to_string(v.size()) +
                            " != matrix dim " + std::to_string(dim));
    }
    EmbeddingVector out(dim, 0.0);
    for (std::size_t r = 0; r < dim; ++r) {
      double s = 0.0;
      const double* row = &values[r * dim];
      for (std::size_t c = 0; c < dim; ++c) s += row[c] * v[c];
      out[r] = s;
    }
    return out;
  }

  static AttentionMatrix load(const std::string& path, std::size_t dim) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    AttentionMatrix m;
    m.dim = dim;
    m.values.reserve(dim * dim);
    double x;
    while (in >> x) {
      if (!std::isfinite(x)) throw ValidationError("attention matrix: non-finite entry in " + path);
      m.values.push_back(x);
    }
    if (!in.eof()) throw ParseError(path, 0, "non-numeric content in attention matrix");
    if (m.values.size() != dim * dim) {
      throw ValidationError("attention matrix: expected " + std::to_string(dim * dim) +
                            " entries, found " + std::to_string(m.values.size()) + " in " + path);
    }
    return m;
  }
};

/// Concatenates the three result lists (static, hierarchical, chain — in
/// that order), merging exact-duplicate texts: the merged item keeps the
/// maximum base score and the most specific source tag (CoT > HM > Static).
inline std::vector<RetrievedItem> collect_candidates(const std::vector<RetrievedItem>& static_results,
                                                     const std::vector<RetrievedItem>& hm_results,
                                                     const std::vector<RetrievedItem>& cot_results) {
  std::vector<RetrievedItem> out;
  std::map<std::string, std::size_t> by_text;
  auto add = [&](const RetrievedItem& item) {
    auto it = by_text.find(item.text);
    if (it == by_text.end()) {
      by_text.emplace(item.text, out.size());
      out.push_back(item);
      return;
    }
    RetrievedItem& kept = out[it->second];
    double max_score = std::max(kept.base_score, item.base_score);
    if (static_cast<int>(item.source) > static_cast<int>(kept.source)) {
      kept = item;  // more specific source wins and carries its payload
    }
    kept.base_score = max_score;
  };
  for (const auto& i : static_results) add(i);
  for (const auto& i : hm_results) add(i);
  for (const auto& i : cot_results) add(i);
  return out;
}

/// Softmax attention over the candidates: score_i = q . (W d_i), divided by
/// the temperature inside the softmax. Returns one weight per item, summing
/// to 1.
inline std::vector<double> attention_weights(const EmbeddingVector& query_vec,
                                             const std::vector<RetrievedItem>& items,
                                             const AttentionMatrix& W = {},
                                             double temperature = 1.0) {
  if (items.empty()) throw InvalidArgument("attention_weights: no items");
  std::vector<double> scores;
  scores.reserve(items.size());
  for (const auto& item : items) {
    EmbeddingVector mapped = W.apply(item.vector);
    if (mapped.size() != query_vec.size()) {
      throw InvalidArgument("attention_weights: item dim " + std::to_string(mapped.size()) +
                            " != query dim " + std::to_string(query_vec.size()));
    }
    scores.push_back(dot(query_vec, mapped));
  }
  return softmax_weights(scores, temperature);
}

/// How an item appears in the prompt, and what its token cost is.
inline std::string render_item(const RetrievedItem& item) {
  if (item.source == ItemSource::Static) return item.text;
  return item.query + " (answer: " + item.response + ")";
}

inline std::int64_t item_token_cost(const RetrievedItem& item) {
  return static_cast<std::int64_t>(token_count(render_item(item)));
}

/// Greedy maximal-marginal-relevance selection under a token budget: each
/// round picks, among the unselected items still fitting the remaining
/// budget, the one maximizing
///     mmr_lambda * weight - (1 - mmr_lambda) * max cosine to the selected
/// (the redundancy term is 0 for the first pick). Ties break to the lower
/// origin_id. Items too large for the remaining budget are skipped, so
/// smaller items can still fill it.
inline IntegratedContext integrate(const EmbeddingVector& query_vec,
                                   const std::vector<RetrievedItem>& items,
                                   const std::vector<double>& weights, std::int64_t budget_tokens,
                                   double mmr_lambda) {
  (void)query_vec;
  if (items.size() != weights.size()) {
    throw InvalidArgument("integrate: items and weights are not aligned");
  }
  if (budget_tokens <= 0) throw InvalidArgument("integrate: budget_tokens must be > 0");
  if (!(mmr_lambda >= 0.0 && mmr_lambda <= 1.0)) {
    throw InvalidArgument("integrate: mmr_lambda must be in [0, 1]");
  }

  IntegratedContext ctx;
  std::vector<bool> taken(items.size(), false);
  std::vector<double> max_sim_to_selected(items.size(), 0.0);
  std::int64_t remaining = budget_tokens;

  for (;;) {
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (taken[i]) continue;
      if (item_token_cost(items[i]) > remaining) continue;
      double redundancy = ctx.selected.empty() ? 0.0 : max_sim_to_selected[i];
      double score = mmr_lambda * weights[i] - (1.0 - mmr_lambda) * redundancy;
      if (score > best_score ||
          (score == best_score && best >= 0 &&
           items[i].origin_id < items[static_cast<std::size_t>(best)].origin_id)) {
        best_score = score;
        best = static_cast<int>(i);
      }
    }
    if (best < 0) break;
    auto b = static_cast<std::size_t>(best);
    taken[b] = true;
    remaining -= item_token_cost(items[b]);
    ctx.token_budget_used += item_token_cost(items[b]);
    ctx.selected.push_back({items[b], weights[b]});
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (taken[i]) continue;
      max_sim_to_selected[i] =
          std::max(max_sim_to_selected[i], cosine_similarity(items[i].vector, items[b].vector));
    }
  }
  return ctx;
}

/// The "w/o result integration" fallback: candidates concatenated in source
/// order with uniform weights, cut to the longest prefix fitting the budget.
inline IntegratedContext concatenate_candidates(const std::vector<RetrievedItem>& items,
                                                std::int64_t budget_tokens) {
  if (budget_tokens <= 0) throw InvalidArgument("concatenate_candidates: budget_tokens must be > 0");
  IntegratedContext ctx;
  if (items.empty()) return ctx;
  double w = 1.0 / static_cast<double>(items.size());
  std::int64_t remaining = budget_tokens;
  for (const auto& item : items) {
    auto cost = item_token_cost(item);
    if (cost > remaining) break;
    remaining -= cost;
    ctx.token_budget_used += cost;
    ctx.selected.push_back({item, w});
  }
  return ctx;
}

// Fixed prompt template, versioned in docs/prompt_template.md. Tests pin the
// exact bytes; change the version marker when changing any of these.
inline constexpr std::string_view kPromptPreamble =
    "You are a helpful dialogue assistant. Answer the current question using the provided context.";
inline constexpr std::string_view kKnowledgeHeader = "Relevant knowledge:";
inline constexpr std::string_view kPriorTurnsHeader = "Relevant prior turns:";
inline constexpr std::string_view kReasoningHeader = "Reasoning so far:";
inline constexpr std::string_view kQuestionPrefix = "Current question: ";

/// Renders the full prompt: preamble, one block per non-empty source group
/// (knowledge = static, prior turns = hierarchical, reasoning = chain, the
/// reasoning block in dialogue order), then the current question. Blocks and
/// items are joined with single newlines, sections with blank lines.
inline std::string render_prompt(const std::string& raw_query,
                                 const std::vector<SelectedItem>& selected) {
  std::vector<const RetrievedItem*> statics, hms, cots;
  for (const auto& s : selected) {
    switch (s.item.source) {
      case ItemSource::Static: statics.push_back(&s.item); break;
      case ItemSource::HM: hms.push_back(&s.item); break;
      case ItemSource::CoT: cots.push_back(&s.item); break;
    }
  }
  std::stable_sort(cots.begin(), cots.end(), [](const RetrievedItem* a, const RetrievedItem* b) {
    return a->timestamp < b->timestamp;
  });

  std::string out(kPromptPreamble);
  auto block = [&out](std::string_view header, const std::vector<const RetrievedItem*>& items) {
    if (items.empty()) return;
    out += "\n\n";
    out += header;
    for (const auto* item : items) {
      out += "\n- ";
      out += render_item(*item);
    }
  };
  block(kKnowledgeHeader, statics);
  block(kPriorTurnsHeader, hms);
  block(kReasoningHeader, cots);
  out += "\n\n";
  out += kQuestionPrefix;
  out += raw_query;
  return out;
}

/// Fills ctx.reconstructed_query from the template and returns it.
inline const std::string& reconstruct_query(const std::string& raw_query, IntegratedContext& ctx) {
  if (raw_query.empty()) throw InvalidArgument("reconstruct_query: empty query");
  ctx.reconstructed_query = render_prompt(raw_query, ctx.selected);
  return ctx.reconstructed_query;
}

}  // namespace dhrag
