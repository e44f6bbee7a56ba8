#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dhrag {

/// FNV-1a 64-bit over the raw bytes of `data`. This is the documented token
/// hash: offset basis 14695981039346656037, prime 1099511628211.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Tokenization rule used everywhere (retrieval, metrics, budgets):
/// lowercase, split on non-alphanumerics. Concretely, a token is a maximal
/// run of bytes that are either ASCII letters/digits (letters lowercased)
/// or bytes >= 0x80 (so multi-byte UTF-8 sequences stay inside tokens);
/// every other byte separates tokens. Byte-level and locale-free, so the
/// result is identical on every platform.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    bool keep = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') ||
                (c >= 'A' && c <= 'Z') || c >= 0x80;
    if (keep) {
      if (c >= 'A' && c <= 'Z') c = static_cast<unsigned char>(c - 'A' + 'a');
      current.push_back(static_cast<char>(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// Number of tokens under the library tokenizer; the unit of token budgets.
inline std::size_t token_count(std::string_view text) {
  return tokenize(text).size();
}

inline std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

/// First sentence of `text`: the prefix up to and including the first
/// '.', '!' or '?', or the whole (trimmed) text when no terminator exists.
inline std::string first_sentence(std::string_view text) {
  std::string_view t = trim(text);
  auto pos = t.find_first_of(".!?");
  if (pos == std::string_view::npos) return std::string(t);
  return std::string(trim(t.substr(0, pos + 1)));
}

}  // namespace dhrag
