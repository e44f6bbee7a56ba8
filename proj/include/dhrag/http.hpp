#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "dhrag/embedding.hpp"
#include "dhrag/errors.hpp"
#include "dhrag/generation.hpp"

namespace dhrag {

/// Minimal http:// URL splitter. TLS endpoints are out of scope; point the
/// engine at a local gateway when the upstream requires https.
struct HttpEndpoint {
  std::string host;
  int port = 80;
  std::string path = "/";

  static HttpEndpoint parse(const std::string& url) {
    const std::string scheme = "http://";
    if (url.rfind(scheme, 0) != 0) {
      throw InvalidArgument("endpoint must start with http:// (got '" + url + "')");
    }
    HttpEndpoint e;
    std::string rest = url.substr(scheme.size());
    auto slash = rest.find('/');
    std::string hostport = slash == std::string::npos ? rest : rest.substr(0, slash);
    e.path = slash == std::string::npos ? "/" : rest.substr(slash);
    auto colon = hostport.find(':');
    if (colon == std::string::npos) {
      e.host = hostport;
    } else {
      e.host = hostport.substr(0, colon);
      e.port = std::stoi(hostport.substr(colon + 1));
    }
    if (e.host.empty()) throw InvalidArgument("endpoint has no host: '" + url + "'");
    return e;
  }
};

struct HttpOptions {
  int timeout_ms = 30000;
  int retries = 3;          // additional attempts after the first
  int retry_backoff_ms = 250;  // doubled after every failed attempt
};

namespace detail {

/// POSTs a JSON body, retrying transient failures (no response, 5xx) with
/// exponential backoff. Non-transient HTTP errors (4xx) fail immediately.
inline std::string post_json(const std::string& url, const std::string& body,
                             const std::string& bearer_token, const HttpOptions& opts) {
  HttpEndpoint ep = HttpEndpoint::parse(url);
  httplib::Headers headers;
  if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);

  int attempts = 0;
  int backoff = opts.retry_backoff_ms;
  for (;;) {
    ++attempts;
    httplib::Client client(ep.host, ep.port);
    client.set_connection_timeout(std::chrono::milliseconds(opts.timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(opts.timeout_ms));
    client.set_write_timeout(std::chrono::milliseconds(opts.timeout_ms));
    auto res = client.Post(ep.path, headers, body, "application/json");
    if (res && res->status >= 200 && res->status < 300) return res->body;
    if (res && res->status < 500) {
      throw TransportError(url, res->status, attempts, "request rejected");
    }
    if (attempts > opts.retries) {
      int status = res ? res->status : 0;
      throw TransportError(url, status, attempts,
                           res ? "server error" : "no response (connect failure or timeout)");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
    backoff *= 2;
  }
}

inline std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

}  // namespace detail

/// Embedder backed by an HTTP embedding service.
/// Request:  {"input": [text], "model": "<model>"}
/// Response: {"data": [{"embedding": [numbers]}]}
/// Bearer token from the DHRAG_EMBED_TOKEN environment variable.
class HttpEmbedder final : public Embedder {
 public:
  HttpEmbedder(std::string endpoint, std::string model, std::size_t dim, HttpOptions opts = {})
      : endpoint_(std::move(endpoint)),
        model_(std::move(model)),
        dim_(dim),
        opts_(opts),
        token_(detail::env_or_empty("DHRAG_EMBED_TOKEN")) {
    if (dim_ == 0) throw InvalidArgument("HttpEmbedder: dim must be positive");
  }

  EmbeddingVector embed_text(const std::string& text) const override {
    nlohmann::json req;
    req["input"] = nlohmann::json::array({text});
    req["model"] = model_;
    std::string body = detail::post_json(endpoint_, req.dump(), token_, opts_);

    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.contains("data") || !j["data"].is_array() || j["data"].empty() ||
        !j["data"][0].contains("embedding")) {
      throw ParseError(endpoint_, 0, "malformed embedding reply");
    }
    EmbeddingVector v;
    for (const auto& x : j["data"][0]["embedding"]) {
      if (!x.is_number()) throw ParseError(endpoint_, 0, "non-numeric embedding entry");
      double d = x.get<double>();
      if (!std::isfinite(d)) throw ParseError(endpoint_, 0, "non-finite embedding entry");
      v.push_back(d);
    }
    if (v.size() != dim_) {
      throw ValidationError("embedding reply has dim " + std::to_string(v.size()) +
                            ", configured dim is " + std::to_string(dim_));
    }
    if (is_zero_vector(v)) {
      throw ValidationError("embedding service returned a zero vector");
    }
    return v;
  }

  std::size_t dim() const override { return dim_; }

  std::string fingerprint() const override {
    return "http/" + model_ + "/" + std::to_string(dim_);
  }

 private:
  std::string endpoint_;
  std::string model_;
  std::size_t dim_;
  HttpOptions opts_;
  std::string token_;
};

/// OpenAI-compatible chat-completions client. The whole rendered prompt is
/// sent as a single user message. Bearer token from DHRAG_LLM_TOKEN.
class HttpGenerator final : public GeneratorClient {
 public:
  explicit HttpGenerator(std::string endpoint, HttpOptions opts = {})
      : endpoint_(std::move(endpoint)),
        opts_(opts),
        token_(detail::env_or_empty("DHRAG_LLM_TOKEN")) {}

  GenerationResult generate(const GenerationRequest& request) const override {
    nlohmann::json req;
    req["model"] = request.model_id;
    req["messages"] = nlohmann::json::array({
        {{"role", "user"}, {"content", request.prompt}},
    });
    req["temperature"] = request.temperature;
    req["max_tokens"] = request.max_tokens;

    auto started = std::chrono::steady_clock::now();
    std::string body = detail::post_json(endpoint_, req.dump(), token_, opts_);
    auto elapsed = std::chrono::steady_clock::now() - started;

    nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty() || !j["choices"][0].contains("message") ||
        !j["choices"][0]["message"].contains("content") ||
        !j["choices"][0]["message"]["content"].is_string()) {
      throw ParseError(endpoint_, 0, "malformed chat-completions reply");
    }
    GenerationResult r;
    r.text = j["choices"][0]["message"]["content"].get<std::string>();
    std::string finish = j["choices"][0].value("finish_reason", "stop");
    r.finish_reason = finish == "length" ? GenerationResult::Finish::Length
                                         : GenerationResult::Finish::Stop;
    r.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count();
    return r;
  }

  std::string name() const override { return "http:" + endpoint_; }

 private:
  std::string endpoint_;
  HttpOptions opts_;
  std::string token_;
};

}  // namespace dhrag
