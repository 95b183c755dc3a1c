#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "briefcontext/text.hpp"

namespace briefcontext {

struct ChatRequest {
    std::string system_instruction;
    std::string user_content;
    size_t max_output_tokens = 1024;
    double temperature = 0.0;

    void validate() const {
        if (user_content.empty()) {
            throw Error("chat request: user_content must be non-empty");
        }
        if (max_output_tokens == 0) {
            throw Error("chat request: max_output_tokens must be positive");
        }
        if (temperature < 0.0) {
            throw Error("chat request: temperature must be non-negative");
        }
    }
};

struct ChatResponse {
    std::string text;
    TokenCount input_tokens;
    TokenCount output_tokens;
};

/// Backend failure that may succeed on retry (timeouts, non-2xx statuses,
/// malformed response bodies).
class RetryableError : public Error {
public:
    using Error::Error;
};

/// Budget exhaustion and other failures retrying cannot fix.
class BudgetError : public Error {
public:
    using Error::Error;
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual std::string name() const = 0;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// ---------------------------------------------------------------------------
// Token pricing and cost accounting
// ---------------------------------------------------------------------------

struct PricingModel {
    double p_input = 0.0;  // currency per input token
    double p_output = 0.0; // currency per output token

    void validate() const {
        if (p_input < 0.0 || p_output < 0.0) {
            throw Error("pricing: per-token prices must be non-negative");
        }
    }
};

/// Cost of one single-pass request: the context and instruction tokens go
/// in once and one completion comes out.
inline double cost_vanilla(TokenCount n_con, TokenCount n_ins, TokenCount n_out,
                           const PricingModel& pricing) {
    pricing.validate();
    return static_cast<double>(n_con.value + n_ins.value) * pricing.p_input +
           static_cast<double>(n_out.value) * pricing.p_output;
}

/// Cost of one map-reduce run over m partitions: the context is split
/// across m extraction requests that each repeat the instruction, and the
/// reduce step adds one more output on top of the m extraction outputs.
inline double cost_briefcontext(TokenCount n_con, TokenCount n_ins, TokenCount n_out, size_t m,
                                const PricingModel& pricing) {
    pricing.validate();
    if (m == 0) {
        throw Error("cost_briefcontext: partition count m must be >= 1");
    }
    return static_cast<double>(n_con.value + m * n_ins.value) * pricing.p_input +
           static_cast<double>((m + 1) * n_out.value) * pricing.p_output;
}

/// Running token totals for a pipeline stage or run. Cost is always derived
/// from the totals, never accumulated per request, so it is exact.
struct CostTally {
    uint64_t requests = 0;
    TokenCount input_tokens;
    TokenCount output_tokens;

    void add(const ChatResponse& response) {
        ++requests;
        input_tokens += response.input_tokens;
        output_tokens += response.output_tokens;
    }

    void add(const CostTally& other) {
        requests += other.requests;
        input_tokens += other.input_tokens;
        output_tokens += other.output_tokens;
    }

    double cost(const PricingModel& pricing) const {
        pricing.validate();
        return static_cast<double>(input_tokens.value) * pricing.p_input +
               static_cast<double>(output_tokens.value) * pricing.p_output;
    }

    bool operator==(const CostTally&) const = default;
};

/// Thread-safe tally for concurrent request fan-out; snapshot() folds the
/// atomics back into a plain CostTally.
class AtomicCostTally {
public:
    void add(const ChatResponse& response) {
        requests_.fetch_add(1, std::memory_order_relaxed);
        input_tokens_.fetch_add(response.input_tokens.value, std::memory_order_relaxed);
        output_tokens_.fetch_add(response.output_tokens.value, std::memory_order_relaxed);
    }

    CostTally snapshot() const {
        CostTally tally;
        tally.requests = requests_.load(std::memory_order_relaxed);
        tally.input_tokens = TokenCount{input_tokens_.load(std::memory_order_relaxed)};
        tally.output_tokens = TokenCount{output_tokens_.load(std::memory_order_relaxed)};
        return tally;
    }

private:
    std::atomic<uint64_t> requests_{0};
    std::atomic<uint64_t> input_tokens_{0};
    std::atomic<uint64_t> output_tokens_{0};
};

/// Token usage of a request as measured by the engine tokenizer, used by
/// mock backends and as a fallback when an endpoint reports no usage.
inline TokenCount measure_input_tokens(const ChatRequest& request) {
    return count_tokens(request.system_instruction) + count_tokens(request.user_content);
}

} // namespace briefcontext
