#pragma once

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dhrag/errors.hpp"
#include "dhrag/pipeline.hpp"
#include "dhrag/snapshot.hpp"
#include "dhrag/text.hpp"

namespace dhrag {

/// Everything configurable, resolved from (in increasing precedence)
/// built-in defaults, the config file, then command-line overrides. Every
/// tunable constant of the engine lives here, in one auditable place;
/// configs/default.conf in the repo documents each key.
struct AppConfig {
  // embedder
  std::string embedder_kind = "hashed-tfidf";  // or "http"
  std::size_t embedder_dim = 512;
  bool embedder_normalize = true;
  std::string embedder_endpoint;
  std::string embedder_model;

  PipelineConfig pipeline;
  std::string attention_w_file;

  // generation
  std::string generation_endpoint = "http://localhost:8000/v1/chat/completions";
  std::string generation_model = "local-model";
  double generation_temperature = 0.0;
  int generation_max_tokens = 256;
  int generation_timeout_ms = 30000;
  int generation_retries = 3;
  int generation_retry_backoff_ms = 250;

  unsigned eval_workers = 0;  // 0 = hardware concurrency
};

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ValidationError(key + ": expected true or false, got '" + value + "'");
}

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double d = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected a number, got '" + value + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    std::int64_t i = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("");
    return i;
  } catch (const std::exception&) {
    throw ValidationError(key + ": expected an integer, got '" + value + "'");
  }
}

}  // namespace detail

/// Applies one `key = value` setting. Unknown keys are rejected so typos
/// cannot silently fall back to defaults.
inline void apply_config_entry(AppConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;

  if (key == "embedder.kind") {
    if (value != "hashed-tfidf" && value != "http") {
      throw ValidationError("embedder.kind: must be hashed-tfidf or http");
    }
    c.embedder_kind = value;
  } else if (key == "embedder.dim") {
    c.embedder_dim = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "embedder.normalize") {
    c.embedder_normalize = parse_bool(key, value);
  } else if (key == "embedder.endpoint") {
    c.embedder_endpoint = value;
  } else if (key == "embedder.model") {
    c.embedder_model = value;
  } else if (key == "retrieval.k_static") {
    c.pipeline.k_static = static_cast<int>(parse_int(key, value));
  } else if (key == "retrieval.k_hm") {
    c.pipeline.k_hm = static_cast<int>(parse_int(key, value));
  } else if (key == "retrieval.k_cot") {
    c.pipeline.k_cot = static_cast<int>(parse_int(key, value));
  } else if (key == "pipeline.enable_dynamic") {
    c.pipeline.enable_dynamic = parse_bool(key, value);
  } else if (key == "pipeline.enable_integration") {
    c.pipeline.enable_integration = parse_bool(key, value);
  } else if (key == "pipeline.enable_cot") {
    c.pipeline.enable_cot = parse_bool(key, value);
  } else if (key == "pipeline.enable_hierarchical") {
    c.pipeline.enable_hierarchical = parse_bool(key, value);
  } else if (key == "integration.budget_tokens") {
    c.pipeline.budget_tokens = parse_int(key, value);
  } else if (key == "integration.mmr_lambda") {
    c.pipeline.mmr_lambda = parse_double(key, value);
  } else if (key == "integration.attention_temperature") {
    c.pipeline.attention_temperature = parse_double(key, value);
  } else if (key == "integration.w_file") {
    c.attention_w_file = value;
  } else if (key == "history.capacity") {
    c.pipeline.history.capacity = parse_int(key, value);
  } else if (key == "history.alpha") {
    c.pipeline.history.alpha = parse_double(key, value);
  } else if (key == "history.decay_lambda") {
    c.pipeline.history.decay_lambda = parse_double(key, value);
  } else if (key == "history.tau_cluster") {
    c.pipeline.history.tau_cluster = parse_double(key, value);
  } else if (key == "history.theta_chain") {
    c.pipeline.history.theta_chain = parse_double(key, value);
  } else if (key == "history.recluster_period") {
    c.pipeline.history.recluster_period = parse_int(key, value);
  } else if (key == "matching.branching") {
    c.pipeline.branching = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "matching.chain_score") {
    c.pipeline.chain_score = chain_score_from_name(value);
  } else if (key == "matching.beam_width") {
    c.pipeline.beam_width = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "generation.endpoint") {
    c.generation_endpoint = value;
  } else if (key == "generation.model") {
    c.generation_model = value;
  } else if (key == "generation.temperature") {
    c.generation_temperature = parse_double(key, value);
  } else if (key == "generation.max_tokens") {
    c.generation_max_tokens = static_cast<int>(parse_int(key, value));
  } else if (key == "generation.timeout_ms") {
    c.generation_timeout_ms = static_cast<int>(parse_int(key, value));
  } else if (key == "generation.retries") {
    c.generation_retries = static_cast<int>(parse_int(key, value));
  } else if (key == "generation.retry_backoff_ms") {
    c.generation_retry_backoff_ms = static_cast<int>(parse_int(key, value));
  } else if (key == "eval.workers") {
    c.eval_workers = static_cast<unsigned>(parse_int(key, value));
  } else {
    throw ValidationError("unknown config key '" + key + "'");
  }
}

/// Config file: `key = value` lines, '#' comments, blank lines ignored.
inline void apply_config_file(AppConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open file");
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv = trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    auto eq = sv.find('=');
    if (eq == std::string_view::npos) {
      throw ParseError(path, lineno, "expected 'key = value'");
    }
    std::string key(trim(sv.substr(0, eq)));
    std::string value(trim(sv.substr(eq + 1)));
    if (key.empty()) throw ParseError(path, lineno, "empty key");
    try {
      apply_config_entry(c, key, value);
    } catch (const ValidationError& e) {
      throw ParseError(path, lineno, e.what());
    }
  }
}

/// `--set key=value` command-line overrides.
inline void apply_overrides(AppConfig& c, const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("override '" + kv + "': expected key=value");
    }
    std::string key(trim(kv.substr(0, eq)));
    std::string value(trim(kv.substr(eq + 1)));
    apply_config_entry(c, key, value);
  }
}

inline nlohmann::ordered_json config_to_json(const AppConfig& c) {
  nlohmann::ordered_json j;
  j["embedder"] = {{"kind", c.embedder_kind},
                   {"dim", c.embedder_dim},
                   {"normalize", c.embedder_normalize},
                   {"endpoint", c.embedder_endpoint},
                   {"model", c.embedder_model}};
  j["retrieval"] = {{"k_static", c.pipeline.k_static},
                    {"k_hm", c.pipeline.k_hm},
                    {"k_cot", c.pipeline.k_cot}};
  j["pipeline"] = {{"enable_dynamic", c.pipeline.enable_dynamic},
                   {"enable_integration", c.pipeline.enable_integration},
                   {"enable_cot", c.pipeline.enable_cot},
                   {"enable_hierarchical", c.pipeline.enable_hierarchical}};
  j["integration"] = {{"budget_tokens", c.pipeline.budget_tokens},
                      {"mmr_lambda", c.pipeline.mmr_lambda},
                      {"attention_temperature", c.pipeline.attention_temperature},
                      {"w_file", c.attention_w_file}};
  const HistoryConfig& h = c.pipeline.history;
  j["history"] = {{"capacity", h.capacity},
                  {"alpha", h.alpha},
                  {"decay_lambda", h.decay_lambda},
                  {"tau_cluster", h.tau_cluster},
                  {"theta_chain", h.theta_chain},
                  {"recluster_period", h.recluster_period}};
  j["matching"] = {{"branching", c.pipeline.branching},
                   {"chain_score", chain_score_name(c.pipeline.chain_score)},
                   {"beam_width", c.pipeline.beam_width}};
  j["generation"] = {{"endpoint", c.generation_endpoint},
                     {"model", c.generation_model},
                     {"temperature", c.generation_temperature},
                     {"max_tokens", c.generation_max_tokens},
                     {"timeout_ms", c.generation_timeout_ms},
                     {"retries", c.generation_retries},
                     {"retry_backoff_ms", c.generation_retry_backoff_ms}};
  j["eval"] = {{"workers", c.eval_workers}};
  return j;
}

/// Stable 64-bit hex digest of the resolved configuration, stamped into
/// every report so results are traceable to their exact settings.
inline std::string config_fingerprint(const AppConfig& c) {
  std::uint64_t h = fnv1a64(config_to_json(c).dump());
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << h;
  return os.str();
}

}  // namespace dhrag
