#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "briefcontext/llm.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

struct WireConfig {
    std::string endpoint = "http://127.0.0.1:8080";
    std::string model = "gpt-3.5-turbo";
    size_t max_attempts = 3;
    size_t initial_backoff_ms = 200;
    double backoff_multiplier = 2.0;
    size_t timeout_seconds = 60;
    size_t parallelism = 4;
    uint64_t max_requests = 0; // 0 = unlimited

    void validate() const {
        if (endpoint.empty()) {
            throw Error("wire config: endpoint must be set");
        }
        if (max_attempts == 0) {
            throw Error("wire config: max_attempts must be positive");
        }
        if (parallelism == 0) {
            throw Error("wire config: parallelism must be positive");
        }
    }
};

/// Environment variables consulted for the API key, in order. Keys never
/// come from flags or config files.
inline std::string wire_api_key_from_env() {
    for (const char* name : {"BRIEFCONTEXT_API_KEY", "OPENAI_API_KEY"}) {
        if (const char* value = std::getenv(name); value && *value) {
            return value;
        }
    }
    return {};
}

namespace detail {

/// Bounded in-flight counter; blocks acquire() past the limit.
class InflightGate {
public:
    explicit InflightGate(size_t limit) : limit_(limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [this] { return active_ < limit_; });
        ++active_;
    }

    void release() {
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }

private:
    size_t limit_;
    size_t active_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

struct GateGuard {
    explicit GateGuard(InflightGate& gate) : gate_(gate) { gate_.acquire(); }
    ~GateGuard() { gate_.release(); }
    GateGuard(const GateGuard&) = delete;
    GateGuard& operator=(const GateGuard&) = delete;
    InflightGate& gate_;
};

struct SplitEndpoint {
    std::string host_part; // scheme://host[:port]
    std::string path;      // completions path
};

inline SplitEndpoint split_endpoint(const std::string& endpoint) {
    size_t scheme = endpoint.find("://");
    if (scheme == std::string::npos) {
        throw Error("wire config: endpoint '" + endpoint + "' must include a scheme");
    }
    size_t slash = endpoint.find('/', scheme + 3);
    SplitEndpoint split;
    if (slash == std::string::npos) {
        split.host_part = endpoint;
        split.path = "/v1/chat/completions";
    } else {
        split.host_part = endpoint.substr(0, slash);
        std::string prefix = endpoint.substr(slash);
        while (prefix.size() > 1 && prefix.back() == '/') prefix.pop_back();
        if (prefix.size() >= 17 && prefix.substr(prefix.size() - 17) == "/chat/completions") {
            split.path = prefix;
        } else {
            split.path = prefix + "/v1/chat/completions";
        }
    }
    return split;
}

} // namespace detail

/// Chat-completions client for OpenAI-compatible endpoints. Timeouts,
/// non-2xx statuses, and malformed bodies are retried with exponential
/// backoff up to max_attempts, then surface as RetryableError carrying the
/// endpoint detail. A configured request budget is enforced atomically and
/// exhaustion is not retryable.
class WireBackend final : public LlmBackend {
public:
    explicit WireBackend(WireConfig config)
        : config_(std::move(config)),
          api_key_(wire_api_key_from_env()),
          endpoint_(detail::split_endpoint(config_.endpoint)),
          gate_(config_.parallelism) {
        config_.validate();
    }

    std::string name() const override { return "wire"; }

    uint64_t requests_used() const { return used_.load(std::memory_order_relaxed); }

    ChatResponse complete(const ChatRequest& request) override {
        request.validate();
        if (config_.max_requests > 0) {
            uint64_t ticket = used_.fetch_add(1, std::memory_order_relaxed);
            if (ticket >= config_.max_requests) {
                throw BudgetError("wire backend: request budget of " +
                                  std::to_string(config_.max_requests) + " exhausted");
            }
        } else {
            used_.fetch_add(1, std::memory_order_relaxed);
        }
        detail::GateGuard guard(gate_);

        const std::string body = build_body(request);
        std::string last_failure;
        size_t backoff_ms = config_.initial_backoff_ms;
        for (size_t attempt = 1; attempt <= config_.max_attempts; ++attempt) {
            if (attempt > 1 && backoff_ms > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
                backoff_ms = static_cast<size_t>(static_cast<double>(backoff_ms) *
                                                 config_.backoff_multiplier);
            }
            httplib::Client client(endpoint_.host_part);
            client.set_connection_timeout(static_cast<time_t>(config_.timeout_seconds), 0);
            client.set_read_timeout(static_cast<time_t>(config_.timeout_seconds), 0);
            httplib::Headers headers;
            if (!api_key_.empty()) {
                headers.emplace("Authorization", "Bearer " + api_key_);
            }
            auto result = client.Post(endpoint_.path, headers, body, "application/json");
            if (!result) {
                last_failure = "transport error (" + httplib::to_string(result.error()) + ")";
                continue;
            }
            if (result->status < 200 || result->status >= 300) {
                last_failure = "status " + std::to_string(result->status);
                continue;
            }
            ChatResponse response;
            if (parse_body(result->body, request, response, last_failure)) {
                return response;
            }
        }
        throw RetryableError("wire backend: " + std::to_string(config_.max_attempts) +
                             " attempts against " + config_.endpoint + endpoint_.path +
                             " failed; last failure: " + last_failure);
    }

private:
    std::string build_body(const ChatRequest& request) const {
        nlohmann::ordered_json body;
        body["model"] = config_.model;
        body["messages"] = nlohmann::ordered_json::array();
        if (!request.system_instruction.empty()) {
            body["messages"].push_back(
                {{"role", "system"}, {"content", request.system_instruction}});
        }
        body["messages"].push_back({{"role", "user"}, {"content", request.user_content}});
        body["temperature"] = request.temperature;
        body["max_tokens"] = request.max_output_tokens;
        return body.dump();
    }

    bool parse_body(const std::string& body, const ChatRequest& request, ChatResponse& response,
                    std::string& failure) const {
        nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            failure = "malformed response body";
            return false;
        }
        if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
            failure = "response body has no choices";
            return false;
        }
        const auto& first = j["choices"][0];
        if (!first.contains("message") || !first["message"].contains("content") ||
            !first["message"]["content"].is_string()) {
            failure = "response body has no message content";
            return false;
        }
        response.text = first["message"]["content"].get<std::string>();
        if (j.contains("usage") && j["usage"].is_object() &&
            j["usage"].value("prompt_tokens", -1) >= 0 &&
            j["usage"].value("completion_tokens", -1) >= 0) {
            response.input_tokens =
                TokenCount{j["usage"]["prompt_tokens"].get<uint64_t>()};
            response.output_tokens =
                TokenCount{j["usage"]["completion_tokens"].get<uint64_t>()};
        } else {
            response.input_tokens = measure_input_tokens(request);
            response.output_tokens = count_tokens(response.text);
        }
        return true;
    }

    WireConfig config_;
    std::string api_key_;
    detail::SplitEndpoint endpoint_;
    detail::InflightGate gate_;
    std::atomic<uint64_t> used_{0};
};

} // namespace briefcontext
