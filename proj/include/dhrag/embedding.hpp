#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "dhrag/errors.hpp"
#include "dhrag/text.hpp"

namespace dhrag {

/// Fixed-length real vector produced by an Embedder. All entries are finite;
/// the length always equals the producing embedder's dim().
using EmbeddingVector = std::vector<double>;

inline double l2_norm(const EmbeddingVector& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline bool is_zero_vector(const EmbeddingVector& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

inline void l2_normalize(EmbeddingVector& v) {
  double n = l2_norm(v);
  if (n == 0.0) return;
  for (double& x : v) x /= n;
}

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Cosine similarity in [-1, 1]. Dimension mismatch and zero vectors are
/// errors; callers that may hold degenerate text must go through the
/// embedder's empty-text policy, which never yields a zero vector.
inline double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) {
    throw InvalidArgument("cosine_similarity: dimension mismatch (" +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  }
  double na = l2_norm(a);
  double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) {
    throw InvalidArgument("cosine_similarity: zero vector");
  }
  double c = dot(a, b) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

/// Softmax over `scores / temperature`, computed with max-subtraction so
/// large scores cannot overflow. Output sums to 1 and every weight is in
/// (0, 1].
inline std::vector<double> softmax_weights(const std::vector<double>& scores,
                                           double temperature = 1.0) {
  if (scores.empty()) throw InvalidArgument("softmax_weights: empty scores");
  if (!(temperature > 0.0)) throw InvalidArgument("softmax_weights: temperature must be > 0");
  for (double s : scores) {
    if (!std::isfinite(s)) throw InvalidArgument("softmax_weights: non-finite score");
  }
  double m = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    // Floor at the smallest normal double so extreme gaps cannot underflow
    // a weight to exactly zero; the contract is (0, 1].
    out[i] = std::max(std::exp((scores[i] - m) / temperature),
                      std::numeric_limits<double>::min());
    sum += out[i];
  }
  for (double& w : out) w /= sum;
  return out;
}

/// Text-to-vector interface. Implementations are immutable after
/// construction; embed_text is pure and safe to call concurrently.
class Embedder {
 public:
  virtual ~Embedder() = default;

  /// Returns a dim()-length finite vector. Never the zero vector.
  virtual EmbeddingVector embed_text(const std::string& text) const = 0;

  virtual std::size_t dim() const = 0;

  /// Short identity string (kind/dim/normalization) recorded in snapshots
  /// so a store is never rehydrated with an incompatible embedder.
  virtual std::string fingerprint() const = 0;
};

/// Deterministic, dependency-free embedder: hashed bag of tokens with raw
/// term-frequency weights, L2-normalized by default.
///
/// Each token is placed at index fnv1a64(token) % dim with weight equal to
/// its occurrence count. Corpus-level idf is deliberately omitted so that a
/// text's vector never changes as other texts are inserted; the tradeoff is
/// that frequent tokens are not down-weighted.
///
/// Degenerate inputs, in place of a forbidden all-zeros vector:
///   - empty text        -> one-hot at the reserved index 0
///   - no tokens at all  -> one-hot at fnv1a64(raw text) % dim
class HashedTfEmbedder final : public Embedder {
 public:
  explicit HashedTfEmbedder(std::size_t dim = 512, bool normalize = true)
      : dim_(dim), normalize_(normalize) {
    if (dim_ == 0) throw InvalidArgument("HashedTfEmbedder: dim must be positive");
  }

  EmbeddingVector embed_text(const std::string& text) const override {
    EmbeddingVector v(dim_, 0.0);
    if (text.empty()) {
      v[0] = 1.0;
      return v;
    }
    auto tokens = tokenize(text);
    if (tokens.empty()) {
      v[fnv1a64(text) % dim_] = 1.0;
      return v;
    }
    for (const auto& tok : tokens) {
      v[fnv1a64(tok) % dim_] += 1.0;
    }
    if (normalize_) l2_normalize(v);
    return v;
  }

  std::size_t dim() const override { return dim_; }

  bool normalized() const { return normalize_; }

  std::string fingerprint() const override {
    return "hashed-tf/" + std::to_string(dim_) + (normalize_ ? "/l2" : "/raw");
  }

 private:
  std::size_t dim_;
  bool normalize_;
};

}  // namespace dhrag
