#pragma once

// Vision-language completion: provider registry, retry policy, the offline
// mock and an HTTP chat-completions transport.

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "langxai/image_io.hpp"
#include "langxai/prompt_pipeline.hpp"

namespace langxai {

struct LvmConfig {
  std::string provider = "mock";
  std::string endpoint;
  std::string credential_ref;  // name of the environment variable holding the secret
  std::string model;
  double timeout_s = 60.0;
  int max_retries = 2;
  int max_output_tokens = 512;

  void validate() const {
    require(!provider.empty(), ErrorCode::InvalidParameter, "LVM provider is empty");
    require(std::isfinite(timeout_s) && timeout_s > 0, ErrorCode::InvalidParameter,
            "LVM timeout must be positive");
    require(max_retries >= 0, ErrorCode::InvalidParameter, "max_retries must be >= 0");
    require(max_output_tokens > 0, ErrorCode::InvalidParameter, "max_output_tokens must be > 0");
  }
};

namespace lvm_detail {
// Keys that would put a secret in a config file.
inline bool is_secret_key(std::string_view key) {
  for (std::string_view bad : {"api_key", "apikey", "credential", "secret", "password", "token"}) {
    if (key == bad) return true;
  }
  return false;
}
}  // namespace lvm_detail

inline void to_json(json& j, const LvmConfig& c) {
  j = json{{"provider", c.provider},
           {"endpoint", c.endpoint},
           {"credential_ref", c.credential_ref},
           {"model", c.model},
           {"timeout", c.timeout_s},
           {"max_retries", c.max_retries},
           {"max_output_tokens", c.max_output_tokens}};
}

/// Secrets are never accepted inline; only the name of an environment
/// variable (credential_ref) is.
inline void from_json(const json& j, LvmConfig& c) {
  require(j.is_object(), ErrorCode::InvalidParameter, "LVM config must be an object");
  for (const auto& [key, value] : j.items()) {
    require(!lvm_detail::is_secret_key(key), ErrorCode::InvalidParameter,
            "LVM config key '" + key + "' is not allowed; use credential_ref");
  }
  LvmConfig d;
  c.provider = j.value("provider", d.provider);
  c.endpoint = j.value("endpoint", d.endpoint);
  c.credential_ref = j.value("credential_ref", d.credential_ref);
  c.model = j.value("model", d.model);
  c.timeout_s = j.value("timeout", d.timeout_s);
  c.max_retries = j.value("max_retries", d.max_retries);
  c.max_output_tokens = j.value("max_output_tokens", d.max_output_tokens);
  c.validate();
}

struct TokenUsage {
  long input = 0;
  long output = 0;
  friend bool operator==(const TokenUsage&, const TokenUsage&) = default;
};

struct LvmResult {
  std::string text;
  std::string provider;
  double latency_s = 0.0;
  std::optional<TokenUsage> token_usage;
  int retries = 0;
};

inline void to_json(json& j, const LvmResult& r) {
  j = json{{"text", r.text}, {"provider", r.provider}, {"latency", r.latency_s},
           {"retries", r.retries}};
  j["token_usage"] = r.token_usage ? json{{"input", r.token_usage->input},
                                          {"output", r.token_usage->output}}
                                   : json(nullptr);
}

/// What a transport sees for one attempt. Images are resolved up front.
struct LvmRequest {
  const PromptBundle& bundle;
  const std::map<std::string, Bytes>& images;
  const LvmConfig& config;
  std::string credential;  // empty unless the transport requires one
};

struct ProviderReply {
  std::string text;
  std::optional<TokenUsage> usage;
};

class LvmTransport {
 public:
  virtual ~LvmTransport() = default;
  virtual bool requires_credential() const { return false; }
  /// One attempt. Throw RateLimited, Timeout or UpstreamError for failures
  /// worth retrying; anything else is final.
  virtual ProviderReply send(const LvmRequest& request) = 0;
};

inline bool is_transient(ErrorCode code) {
  return code == ErrorCode::RateLimited || code == ErrorCode::Timeout ||
         code == ErrorCode::UpstreamError;
}

// ---------------------------------------------------------------------------
// Mock

inline constexpr std::string_view kMockTemplate =
    "Model predicted {prediction}; salient region described; verdict {verdict_hint}";

/// Pure function of the bundle.
class MockTransport final : public LvmTransport {
 public:
  ProviderReply send(const LvmRequest& request) override {
    return {mock_text(request.bundle), std::nullopt};
  }

  static std::string mock_text(const PromptBundle& bundle) {
    std::map<std::string, std::string> values{{"prediction", "unknown"},
                                              {"verdict_hint", "unknown"}};
    for (const auto& key : {"prediction", "verdict_hint"}) {
      if (auto it = bundle.facts.find(key); it != bundle.facts.end()) values[key] = it->second;
    }
    return fill_placeholders(kMockTemplate, values);
  }
};

// ---------------------------------------------------------------------------
// HTTP chat-completions transport

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint parse_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  require(scheme_end != std::string::npos, ErrorCode::InvalidParameter,
          "endpoint '" + url + "' has no scheme");
  const std::string scheme = url.substr(0, scheme_end);
  require(scheme == "http" || scheme == "https", ErrorCode::InvalidParameter,
          "endpoint scheme must be http or https");
  const auto path_start = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = url.substr(0, path_start);
  e.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  require(e.origin.size() > scheme_end + 3, ErrorCode::InvalidParameter,
          "endpoint '" + url + "' has no host");
  return e;
}

/// Request body for an OpenAI-style chat completion: one user message whose
/// content lists the bundle parts in order, images as base64 PNG data URLs.
inline json chat_request_body(const LvmRequest& r, bool redact_images = false) {
  json content = json::array();
  for (const auto& part : r.bundle.parts) {
    if (part.kind == MessagePart::Kind::Text) {
      content.push_back({{"type", "text"}, {"text", part.value}});
      continue;
    }
    auto it = r.images.find(part.value);
    require(it != r.images.end(), ErrorCode::UnresolvableRef, "image " + part.value + " missing");
    const std::string url = redact_images
                                ? "<png " + std::to_string(it->second.size()) + " bytes>"
                                : "data:image/png;base64," + base64_encode(it->second);
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  json body{{"messages", json::array({{{"role", "user"}, {"content", content}}})},
            {"max_tokens", r.config.max_output_tokens},
            {"temperature", 0}};
  if (!r.config.model.empty()) body["model"] = r.config.model;
  return body;
}

inline ProviderReply parse_chat_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    fail(ErrorCode::MalformedResponse, std::string("provider reply is not JSON: ") + e.what());
  }
  ProviderReply reply;
  try {
    reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    fail(ErrorCode::MalformedResponse, "provider reply has no choices[0].message.content");
  }
  require(!reply.text.empty(), ErrorCode::MalformedResponse, "provider returned empty text");
  if (j.contains("usage") && j["usage"].is_object()) {
    const auto& u = j["usage"];
    reply.usage = TokenUsage{u.value("prompt_tokens", 0L), u.value("completion_tokens", 0L)};
  }
  return reply;
}

class ChatCompletionsTransport final : public LvmTransport {
 public:
  bool requires_credential() const override { return true; }

  ProviderReply send(const LvmRequest& r) override {
    const Endpoint ep = parse_endpoint(r.config.endpoint);
    httplib::Client client(ep.origin);
    const auto secs = std::chrono::duration<double>(r.config.timeout_s);
    const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(secs);
    client.set_connection_timeout(usec);
    client.set_read_timeout(usec);
    client.set_write_timeout(usec);
    client.set_bearer_token_auth(r.credential);

    if (spdlog::should_log(spdlog::level::debug)) {
      spdlog::debug("lvm request POST {}{} authorization=Bearer <redacted> body={}", ep.origin,
                    ep.path, chat_request_body(r, true).dump());
    }
    const std::string body = chat_request_body(r).dump();
    auto res = client.Post(ep.path, body, "application/json");
    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
        fail(ErrorCode::Timeout, "provider did not answer: " + httplib::to_string(err));
      }
      fail(ErrorCode::UpstreamError, "provider unreachable: " + httplib::to_string(err));
    }
    spdlog::debug("lvm response status={} body={}", res->status, res->body);
    const int status = res->status;
    if (status == 401 || status == 403) fail(ErrorCode::AuthError, "provider rejected credential");
    if (status == 429) fail(ErrorCode::RateLimited, "provider rate limit (HTTP 429)");
    if (status >= 500) fail(ErrorCode::UpstreamError, "provider error HTTP " + std::to_string(status));
    require(status == 200, ErrorCode::InvalidParameter,
            "provider rejected the request with HTTP " + std::to_string(status));
    return parse_chat_response(res->body);
  }
};

// ---------------------------------------------------------------------------
// Gateway

struct RetryPolicy {
  double base_s = 1.0;
  double factor = 2.0;
  double jitter = 0.2;  // delays are scaled by a uniform draw in [1 - jitter, 1 + jitter]

  /// Delay before retry number `retry` (1-based), before jitter.
  double nominal_delay(int retry) const {
    return base_s * std::pow(factor, static_cast<double>(retry - 1));
  }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;
using Sleeper = std::function<void(double seconds)>;

inline std::optional<std::string> process_env(const std::string& name) {
  if (const char* v = std::getenv(name.c_str())) return std::string(v);
  return std::nullopt;
}

inline void real_sleep(double seconds) {
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
}

class CountingSemaphore {
 public:
  explicit CountingSemaphore(std::size_t slots) : free_(slots) {}
  void acquire() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(mutex_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t free_;
};

inline constexpr std::size_t kDefaultProviderConcurrency = 4;

class LvmGateway {
 public:
  explicit LvmGateway(EnvLookup env = process_env, Sleeper sleeper = real_sleep,
                      RetryPolicy policy = {}, std::uint64_t jitter_seed = std::random_device{}())
      : env_(std::move(env)), sleep_(std::move(sleeper)), policy_(policy), rng_(jitter_seed) {}

  void register_provider(const std::string& id, std::shared_ptr<LvmTransport> transport,
                         std::size_t max_concurrent = kDefaultProviderConcurrency) {
    require(transport != nullptr, ErrorCode::InvalidValue, "null transport");
    require(max_concurrent > 0, ErrorCode::InvalidParameter, "provider concurrency must be > 0");
    std::unique_lock lock(mutex_);
    require(!providers_.contains(id), ErrorCode::DuplicateProvider,
            "provider '" + id + "' already registered");
    providers_[id] = std::make_shared<Provider>(std::move(transport), max_concurrent);
  }

  std::vector<std::string> providers() const {
    std::shared_lock lock(mutex_);
    std::vector<std::string> out;
    for (const auto& [id, p] : providers_) out.push_back(id);
    return out;
  }

  LvmResult complete(const PromptBundle& bundle, const LvmConfig& config,
                     const BlobStore& blobs) {
    config.validate();
    std::shared_ptr<Provider> provider;
    {
      std::shared_lock lock(mutex_);
      auto it = providers_.find(config.provider);
      require(it != providers_.end(), ErrorCode::UnknownProvider,
              "provider '" + config.provider + "' is not registered");
      provider = it->second;
    }
    std::string credential;
    if (provider->transport->requires_credential()) {
      require(!config.credential_ref.empty(), ErrorCode::AuthError,
              "provider '" + config.provider + "' needs credential_ref");
      auto value = env_(config.credential_ref);
      require(value && !value->empty(), ErrorCode::AuthError,
              "environment variable " + config.credential_ref + " is not set");
      credential = std::move(*value);
    }
    std::map<std::string, Bytes> images;
    for (const auto& part : bundle.parts) {
      if (part.kind != MessagePart::Kind::ImageRef || images.contains(part.value)) continue;
      require(blobs.contains(part.value), ErrorCode::UnresolvableRef,
              "image reference '" + part.value + "' does not resolve");
      images.emplace(part.value, blobs.get(part.value));
    }
    const LvmRequest request{bundle, images, config, std::move(credential)};

    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 0;; ++attempt) {
      try {
        provider->slots.acquire();
        ProviderReply reply;
        try {
          reply = provider->transport->send(request);
        } catch (...) {
          provider->slots.release();
          throw;
        }
        provider->slots.release();
        require(!reply.text.empty(), ErrorCode::MalformedResponse, "provider returned empty text");
        const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
        return {std::move(reply.text), config.provider, took.count(), reply.usage, attempt};
      } catch (const Error& e) {
        if (!is_transient(e.code()) || attempt >= config.max_retries) throw;
        const double delay = jittered(policy_.nominal_delay(attempt + 1));
        spdlog::debug("lvm {} attempt {} failed ({}); retrying in {:.3f}s", config.provider,
                      attempt + 1, error_code_name(e.code()), delay);
        sleep_(delay);
      }
    }
  }

 private:
  struct Provider {
    Provider(std::shared_ptr<LvmTransport> t, std::size_t slots_)
        : transport(std::move(t)), slots(slots_) {}
    std::shared_ptr<LvmTransport> transport;
    CountingSemaphore slots;
  };

  double jittered(double nominal) {
    std::lock_guard lock(rng_mutex_);
    std::uniform_real_distribution<double> u(1.0 - policy_.jitter, 1.0 + policy_.jitter);
    return nominal * u(rng_);
  }

  EnvLookup env_;
  Sleeper sleep_;
  RetryPolicy policy_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Provider>> providers_;
};

/// "mock" and "openai" (chat completions).
inline void register_default_providers(LvmGateway& gateway) {
  gateway.register_provider("mock", std::make_shared<MockTransport>());
  gateway.register_provider("openai", std::make_shared<ChatCompletionsTransport>());
}

}  // namespace langxai
