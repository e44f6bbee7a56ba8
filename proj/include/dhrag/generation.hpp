#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "dhrag/errors.hpp"
#include "dhrag/integration.hpp"
#include "dhrag/text.hpp"

namespace dhrag {

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  std::string model_id;
};

struct GenerationResult {
  enum class Finish { Stop, Length, Error };
  std::string text;
  Finish finish_reason = Finish::Stop;
  std::int64_t latency_ms = 0;
};

/// Pluggable response generator. Implementations must be safe for
/// concurrent generate() calls; the pipeline issues at most one per session
/// but evaluates many sessions in parallel.
class GeneratorClient {
 public:
  virtual ~GeneratorClient() = default;
  virtual GenerationResult generate(const GenerationRequest& request) const = 0;
  virtual std::string name() const = 0;
};

namespace detail {

/// First item of the named prompt block: the first non-empty "- " line
/// after the header, cut before its " (answer: " marker when present (so a
/// Q/A item yields the turn's query text). Returns an empty string when the
/// block is missing or empty.
inline std::string first_block_item(std::string_view prompt, std::string_view header) {
  std::size_t pos = 0;
  std::size_t header_at = std::string_view::npos;
  while (pos <= prompt.size()) {
    std::size_t eol = prompt.find('\n', pos);
    std::string_view line = prompt.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
    if (trim(line) == header) {
      header_at = (eol == std::string_view::npos) ? prompt.size() : eol + 1;
      break;
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  if (header_at == std::string_view::npos) return {};

  pos = header_at;
  while (pos <= prompt.size()) {
    std::size_t eol = prompt.find('\n', pos);
    std::string_view line = prompt.substr(pos, eol == std::string_view::npos ? eol : eol - pos);
    std::string_view t = trim(line);
    if (t.empty()) break;  // end of block
    if (t.rfind("- ", 0) == 0) t = t.substr(2);
    auto cut = t.find(" (answer: ");
    if (cut != std::string_view::npos) t = t.substr(0, cut);
    t = trim(t);
    if (!t.empty()) return std::string(t);
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  return {};
}

inline std::string current_question(std::string_view prompt) {
  auto at = prompt.rfind(kQuestionPrefix);
  if (at == std::string_view::npos) return {};
  auto rest = prompt.substr(at + kQuestionPrefix.size());
  auto eol = rest.find('\n');
  if (eol != std::string_view::npos) rest = rest.substr(0, eol);
  return std::string(rest);
}

}  // namespace detail

/// Deterministic test double for the generator.
///
/// Scripted mode answers by exact-match lookup of the prompt's "Current
/// question:" line in a fixtures table ("I don't know." on a miss).
///
/// Extractive mode returns the first sentence of the first prior-turns
/// item (a Q/A item contributes its query text), else the first knowledge
/// sentence, else "I don't know." — a rule that makes end-to-end runs
/// visibly sensitive to whether history reached the prompt.
class MockGenerator final : public GeneratorClient {
 public:
  /// Extractive mode.
  MockGenerator() = default;

  /// Scripted mode.
  explicit MockGenerator(std::map<std::string, std::string> script)
      : scripted_(true), script_(std::move(script)) {}

  GenerationResult generate(const GenerationRequest& request) const override {
    GenerationResult r;
    r.text = scripted_ ? answer_scripted(request.prompt) : answer_extractive(request.prompt);
    return r;
  }

  std::string name() const override { return scripted_ ? "mock-scripted" : "mock-extractive"; }

  /// Script file: one JSON object mapping question text to answer text.
  static std::map<std::string, std::string> load_script(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path, 0, "cannot open file");
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw ParseError(path, 0, "expected a JSON object of question -> answer");
    }
    std::map<std::string, std::string> script;
    for (auto& [k, v] : j.items()) {
      if (!v.is_string()) throw ParseError(path, 0, "answer for '" + k + "' must be a string");
      script[k] = v.get<std::string>();
    }
    return script;
  }

  static constexpr std::string_view kFallback = "I don't know.";

 private:
  std::string answer_scripted(std::string_view prompt) const {
    auto question = detail::current_question(prompt);
    auto it = script_.find(question);
    return it == script_.end() ? std::string(kFallback) : it->second;
  }

  static std::string answer_extractive(std::string_view prompt) {
    auto prior = detail::first_block_item(prompt, kPriorTurnsHeader);
    if (!prior.empty()) return first_sentence(prior);
    auto knowledge = detail::first_block_item(prompt, kKnowledgeHeader);
    if (!knowledge.empty()) return first_sentence(knowledge);
    return std::string(kFallback);
  }

  bool scripted_ = false;
  std::map<std::string, std::string> script_;
};

}  // namespace dhrag
