#pragma once

#include <atomic>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "briefcontext/corpus.hpp"
#include "briefcontext/llm.hpp"
#include "briefcontext/preflight.hpp"
#include "briefcontext/prompt.hpp"
#include "briefcontext/ranking.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

struct PipelineConfig {
    size_t top_k = 16;
    size_t batch_size = 4;
    PreflightConfig preflight;
    bool preflight_enabled = true;
    PromptTemplates templates;
    size_t max_output_tokens = 1024;
    size_t parallelism = 4;

    void validate() const {
        if (top_k == 0 || batch_size == 0) {
            throw Error("pipeline config: top_k and batch_size must be positive");
        }
        if (batch_size > top_k) {
            throw Error("pipeline config: batch_size " + std::to_string(batch_size) +
                        " exceeds top_k " + std::to_string(top_k));
        }
        if (parallelism == 0) {
            throw Error("pipeline config: parallelism must be positive");
        }
    }
};

enum class AnswerMode { briefcontext, rag, cot, oracle, closed_book };

inline const char* to_string(AnswerMode mode) {
    switch (mode) {
        case AnswerMode::briefcontext: return "briefcontext";
        case AnswerMode::rag: return "rag";
        case AnswerMode::cot: return "cot";
        case AnswerMode::oracle: return "oracle";
        case AnswerMode::closed_book: return "closed_book";
    }
    return "unknown";
}

inline AnswerMode answer_mode_from_string(const std::string& s) {
    if (s == "briefcontext") return AnswerMode::briefcontext;
    if (s == "rag") return AnswerMode::rag;
    if (s == "cot") return AnswerMode::cot;
    if (s == "oracle") return AnswerMode::oracle;
    if (s == "closed_book") return AnswerMode::closed_book;
    throw Error("unknown answer mode '" + s + "'");
}

struct Partition {
    size_t index = 0;
    std::vector<std::string> doc_ids;
};

struct PartitionResult {
    size_t partition_index = 0;
    std::string extracted_info;
    std::string provisional_answer; // option label, free text, or the abstain marker
    TokenCount input_tokens;
    TokenCount output_tokens;
};

struct CallRecord {
    std::string stage; // extraction | reduce | answer
    TokenCount input_tokens;
    TokenCount output_tokens;
};

/// Complete record of one answer attempt: which rankings fed the context,
/// what the preflight said, every backend call with its token usage, the
/// per-partition extractions, and the graded final answer.
struct AnswerTrace {
    std::string question_id;
    AnswerMode mode = AnswerMode::rag;
    bool delegated_to_rag = false;
    std::optional<Ranking> context_ranking;
    std::optional<Ranking> rerank_ranking;
    std::optional<PreflightVerdict> preflight;
    std::vector<Partition> partitions;
    std::vector<PartitionResult> partition_results;
    std::string final_answer; // option label, free text, or the abstain marker
    std::string gold_answer;
    bool correct = false;
    bool conflict_flag = false;
    CostTally cost;
    std::vector<CallRecord> calls;
    std::string error; // empty on success

    void record(const char* stage, const ChatResponse& response) {
        calls.push_back({stage, response.input_tokens, response.output_tokens});
        cost.add(response);
    }
};

/// Pipeline failure carrying the partial trace for post-mortem.
class PipelineError : public Error {
public:
    PipelineError(const std::string& message, AnswerTrace trace)
        : Error(message), trace_(std::move(trace)) {}

    const AnswerTrace& trace() const { return trace_; }

private:
    AnswerTrace trace_;
};

/// Everything retrieval needs, bundled so answer paths take one handle.
struct RetrievalStack {
    const Corpus* corpus = nullptr;
    const DenseIndex* index = nullptr;
    const EmbeddingProvider* provider = nullptr;
    Bm25Params bm25_params;

    void validate() const {
        if (!corpus || !index || !provider) {
            throw Error("retrieval stack: corpus, index, and provider must all be set");
        }
    }
};

// ---------------------------------------------------------------------------
// ContextMap
// ---------------------------------------------------------------------------

/// Slices the retrieved list into consecutive rank-order partitions of
/// batch_size documents; the last partition keeps the remainder. Partition
/// count M = ceil(|retrieved| / batch_size).
inline std::vector<Partition> context_map(const Ranking& retrieved, size_t batch_size) {
    if (retrieved.empty()) {
        throw Error("context_map: retrieved ranking must be non-empty");
    }
    if (batch_size == 0) {
        throw Error("context_map: batch_size must be positive");
    }
    std::vector<Partition> partitions;
    Partition current;
    for (const auto& entry : retrieved.entries) {
        current.doc_ids.push_back(entry.id);
        if (current.doc_ids.size() == batch_size) {
            current.index = partitions.size();
            partitions.push_back(std::move(current));
            current = Partition{};
        }
    }
    if (!current.doc_ids.empty()) {
        current.index = partitions.size();
        partitions.push_back(std::move(current));
    }
    return partitions;
}

namespace detail {

inline std::vector<const Document*> docs_for_ids(const Corpus& corpus,
                                                 const std::vector<std::string>& ids) {
    std::vector<const Document*> docs;
    docs.reserve(ids.size());
    for (const auto& id : ids) {
        const Document* doc = corpus.find(id);
        if (!doc) {
            throw Error("pipeline: document '" + id + "' not in corpus");
        }
        docs.push_back(doc);
    }
    return docs;
}

inline bool grade_answer(const std::string& final_answer, const QAItem& item) {
    if (final_answer == kAbstainMarker || final_answer.empty()) return false;
    if (!item.options.empty()) return final_answer == item.gold_answer;
    return iequals(trim(final_answer), trim(item.gold_answer));
}

inline bool derive_conflict_flag(const std::vector<PartitionResult>& results) {
    std::vector<std::string> distinct;
    for (const auto& r : results) {
        if (r.provisional_answer == kAbstainMarker || r.provisional_answer.empty()) continue;
        if (std::find(distinct.begin(), distinct.end(), r.provisional_answer) == distinct.end()) {
            distinct.push_back(r.provisional_answer);
        }
    }
    return distinct.size() >= 2;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Prompt construction entry points (thin wrappers binding the config)
// ---------------------------------------------------------------------------

inline ChatRequest build_extraction_prompt(const QAItem& item,
                                           const std::vector<const Document*>& docs,
                                           const PipelineConfig& config) {
    return make_extraction_request(item, docs, config.templates, config.max_output_tokens);
}

inline ChatRequest build_answer_prompt(const QAItem& item,
                                       const std::vector<const Document*>& docs,
                                       const PipelineConfig& config) {
    return make_answer_request(item, docs, config.templates, config.max_output_tokens);
}

// ---------------------------------------------------------------------------
// ContextReduce
// ---------------------------------------------------------------------------

struct ReduceOutcome {
    std::string final_answer; // parsed label/text or the abstain marker
    std::string raw_text;
    bool backend_called = false;
    std::optional<ChatResponse> response;
};

/// Aggregates the non-sentinel extractions into one summarization request.
/// When every partition reported no information, the backend call is
/// skipped entirely and the outcome is abstain.
inline ReduceOutcome context_reduce(const std::vector<PartitionResult>& partition_results,
                                    const QAItem& item, LlmBackend& backend,
                                    const PipelineConfig& config) {
    if (partition_results.empty()) {
        throw Error("context_reduce: at least one partition result required");
    }
    std::vector<std::pair<size_t, std::string>> info_blocks;
    for (const auto& result : partition_results) {
        if (is_no_info_sentinel(result.extracted_info)) continue;
        info_blocks.emplace_back(result.partition_index, result.extracted_info);
    }
    ReduceOutcome outcome;
    if (info_blocks.empty()) {
        outcome.final_answer = kAbstainMarker;
        return outcome;
    }
    ChatRequest request =
        make_reduce_request(item, info_blocks, config.templates, config.max_output_tokens);
    ChatResponse response;
    try {
        response = backend.complete(request);
    } catch (const Error& e) {
        throw Error(std::string("context_reduce: backend failed during aggregation over ") +
                    std::to_string(info_blocks.size()) + " partition blocks: " + e.what());
    }
    outcome.backend_called = true;
    outcome.raw_text = response.text;
    outcome.response = response;
    auto parsed = parse_final_answer(response.text, item.options);
    outcome.final_answer = parsed ? *parsed : kAbstainMarker;
    return outcome;
}

// ---------------------------------------------------------------------------
// Answer paths
// ---------------------------------------------------------------------------

/// Single-pass baseline: one prompt holding the whole ranked context.
inline AnswerTrace answer_rag(const QAItem& item, const Ranking& ranking, const Corpus& corpus,
                              LlmBackend& backend, const PipelineConfig& config) {
    config.validate();
    if (ranking.empty()) {
        throw Error("answer_rag: ranking must be non-empty");
    }
    AnswerTrace trace;
    trace.question_id = item.id;
    trace.mode = AnswerMode::rag;
    trace.gold_answer = item.gold_answer;
    trace.context_ranking = ranking;
    std::vector<const Document*> docs;
    try {
        docs = detail::docs_for_ids(corpus, ranking.top_ids(ranking.size()));
    } catch (const Error& e) {
        trace.error = e.what();
        throw PipelineError(e.what(), trace);
    }
    ChatRequest request = build_answer_prompt(item, docs, config);
    ChatResponse response;
    try {
        response = backend.complete(request);
    } catch (const Error& e) {
        trace.error = e.what();
        throw PipelineError(std::string("answer_rag: ") + e.what(), trace);
    }
    trace.record("answer", response);
    auto parsed = parse_final_answer(response.text, item.options);
    trace.final_answer = parsed ? *parsed : kAbstainMarker;
    trace.correct = detail::grade_answer(trace.final_answer, item);
    return trace;
}

/// Map-reduce path over an already-built ranking: partition, extract from
/// each partition concurrently, aggregate. Used directly by the controlled
/// experiments, and by answer_briefcontext after retrieval and preflight.
inline AnswerTrace answer_briefcontext_over(const QAItem& item, const Ranking& ranking,
                                            const Corpus& corpus, LlmBackend& backend,
                                            const PipelineConfig& config) {
    config.validate();
    if (ranking.empty()) {
        throw Error("answer_briefcontext: ranking must be non-empty");
    }
    AnswerTrace trace;
    trace.question_id = item.id;
    trace.mode = AnswerMode::briefcontext;
    trace.gold_answer = item.gold_answer;
    trace.context_ranking = ranking;
    trace.partitions = context_map(ranking, config.batch_size);

    const size_t m = trace.partitions.size();
    std::vector<std::optional<PartitionResult>> slots(m);
    std::vector<std::string> failures(m);
    std::atomic<size_t> next{0};
    auto worker = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= m) break;
            try {
                std::vector<const Document*> docs =
                    detail::docs_for_ids(corpus, trace.partitions[i].doc_ids);
                ChatRequest request = build_extraction_prompt(item, docs, config);
                ChatResponse response = backend.complete(request);
                PartitionResult result;
                result.partition_index = i;
                result.extracted_info = response.text;
                auto parsed = parse_final_answer(response.text, item.options);
                result.provisional_answer = parsed ? *parsed : kAbstainMarker;
                result.input_tokens = response.input_tokens;
                result.output_tokens = response.output_tokens;
                slots[i] = std::move(result);
            } catch (const std::exception& e) {
                failures[i] = e.what();
            }
        }
    };
    size_t worker_count = std::min(config.parallelism, m);
    if (worker_count <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(worker_count);
        for (size_t t = 0; t < worker_count; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    // Aggregate in partition-index order regardless of completion order.
    for (size_t i = 0; i < m; ++i) {
        if (!failures[i].empty()) {
            for (size_t j = 0; j < i; ++j) {
                if (slots[j]) {
                    trace.record("extraction", ChatResponse{slots[j]->extracted_info,
                                                            slots[j]->input_tokens,
                                                            slots[j]->output_tokens});
                    trace.partition_results.push_back(*slots[j]);
                }
            }
            std::string message =
                "extraction failed for partition " + std::to_string(i) + ": " + failures[i];
            trace.error = message;
            throw PipelineError(message, trace);
        }
    }
    for (size_t i = 0; i < m; ++i) {
        trace.record("extraction", ChatResponse{slots[i]->extracted_info, slots[i]->input_tokens,
                                                slots[i]->output_tokens});
        trace.partition_results.push_back(std::move(*slots[i]));
    }
    trace.conflict_flag = detail::derive_conflict_flag(trace.partition_results);

    ReduceOutcome outcome;
    try {
        outcome = context_reduce(trace.partition_results, item, backend, config);
    } catch (const Error& e) {
        trace.error = e.what();
        throw PipelineError(e.what(), trace);
    }
    if (outcome.backend_called) {
        trace.record("reduce", *outcome.response);
    }
    trace.final_answer = outcome.final_answer;
    trace.correct = detail::grade_answer(trace.final_answer, item);
    return trace;
}

/// Full four-stage path: dense retrieval, optional preflight gating, then
/// either delegation to the single-pass baseline (no issue predicted) or
/// the map-reduce subroutine.
inline AnswerTrace answer_briefcontext(const QAItem& item, const RetrievalStack& stack,
                                       LlmBackend& backend, const PipelineConfig& config) {
    config.validate();
    stack.validate();
    Ranking dense = dense_retrieve(*stack.index, item.question, *stack.provider, config.top_k);
    if (dense.empty()) {
        throw Error("answer_briefcontext: retrieval returned no documents");
    }
    std::optional<PreflightVerdict> verdict;
    std::optional<Ranking> rerank;
    if (config.preflight_enabled) {
        std::unordered_set<std::string> candidates;
        for (const auto& entry : dense.entries) candidates.insert(entry.id);
        rerank = bm25_rank(*stack.corpus, item.question, stack.bm25_params, candidates,
                           config.top_k);
        verdict = preflight_check(dense, *rerank, config.preflight);
        if (!verdict->predicts_issue) {
            AnswerTrace trace = answer_rag(item, dense, *stack.corpus, backend, config);
            trace.mode = AnswerMode::briefcontext;
            trace.delegated_to_rag = true;
            trace.preflight = verdict;
            trace.rerank_ranking = rerank;
            return trace;
        }
    }
    AnswerTrace trace = answer_briefcontext_over(item, dense, *stack.corpus, backend, config);
    trace.preflight = verdict;
    trace.rerank_ranking = rerank;
    return trace;
}

/// No-context baseline; cot=true appends the step-by-step instruction.
inline AnswerTrace answer_closed_book(const QAItem& item, LlmBackend& backend,
                                      const PipelineConfig& config, bool cot) {
    config.validate();
    AnswerTrace trace;
    trace.question_id = item.id;
    trace.mode = cot ? AnswerMode::cot : AnswerMode::closed_book;
    trace.gold_answer = item.gold_answer;
    ChatRequest request =
        make_closed_book_request(item, cot, config.templates, config.max_output_tokens);
    ChatResponse response;
    try {
        response = backend.complete(request);
    } catch (const Error& e) {
        trace.error = e.what();
        throw PipelineError(std::string("answer_closed_book: ") + e.what(), trace);
    }
    trace.record("answer", response);
    auto parsed = parse_final_answer(response.text, item.options);
    trace.final_answer = parsed ? *parsed : kAbstainMarker;
    trace.correct = detail::grade_answer(trace.final_answer, item);
    return trace;
}

/// Upper-bound baseline: the context holds exactly the key documents.
inline AnswerTrace answer_oracle(const QAItem& item, const Corpus& corpus, LlmBackend& backend,
                                 const PipelineConfig& config) {
    config.validate();
    if (item.key_doc_ids.empty()) {
        throw Error("answer_oracle: item '" + item.id + "' has no key documents");
    }
    Ranking ranking;
    ranking.source = RankerKind::synthetic;
    for (size_t i = 0; i < item.key_doc_ids.size(); ++i) {
        if (!corpus.contains(item.key_doc_ids[i])) {
            throw Error("answer_oracle: key document '" + item.key_doc_ids[i] +
                        "' not in corpus");
        }
        ranking.entries.push_back(
            {item.key_doc_ids[i], static_cast<double>(item.key_doc_ids.size() - i)});
    }
    AnswerTrace trace = answer_rag(item, ranking, corpus, backend, config);
    trace.mode = AnswerMode::oracle;
    return trace;
}

// ---------------------------------------------------------------------------
// Trace serialization
// ---------------------------------------------------------------------------

namespace detail {

inline nlohmann::ordered_json ranking_to_json(const Ranking& ranking) {
    nlohmann::ordered_json j;
    j["source"] = to_string(ranking.source);
    j["entries"] = nlohmann::ordered_json::array();
    for (const auto& entry : ranking.entries) {
        j["entries"].push_back({{"id", entry.id}, {"score", entry.score}});
    }
    return j;
}

inline Ranking ranking_from_json(const nlohmann::json& j) {
    Ranking ranking;
    ranking.source = ranker_kind_from_string(j.at("source").get<std::string>());
    for (const auto& entry : j.at("entries")) {
        ranking.entries.push_back(
            {entry.at("id").get<std::string>(), entry.at("score").get<double>()});
    }
    return ranking;
}

} // namespace detail

inline nlohmann::ordered_json answer_trace_to_json(const AnswerTrace& trace) {
    nlohmann::ordered_json j;
    j["question_id"] = trace.question_id;
    j["mode"] = to_string(trace.mode);
    j["delegated_to_rag"] = trace.delegated_to_rag;
    j["gold_answer"] = trace.gold_answer;
    j["final_answer"] = trace.final_answer;
    j["correct"] = trace.correct;
    j["conflict_flag"] = trace.conflict_flag;
    if (trace.context_ranking) {
        j["context_ranking"] = detail::ranking_to_json(*trace.context_ranking);
    }
    if (trace.rerank_ranking) {
        j["rerank_ranking"] = detail::ranking_to_json(*trace.rerank_ranking);
    }
    if (trace.preflight) {
        j["preflight"] = {{"iou", trace.preflight->iou},
                          {"predicts_issue", trace.preflight->predicts_issue}};
    }
    j["partitions"] = nlohmann::ordered_json::array();
    for (const auto& partition : trace.partitions) {
        j["partitions"].push_back({{"index", partition.index}, {"doc_ids", partition.doc_ids}});
    }
    j["partition_results"] = nlohmann::ordered_json::array();
    for (const auto& result : trace.partition_results) {
        j["partition_results"].push_back({{"partition_index", result.partition_index},
                                          {"extracted_info", result.extracted_info},
                                          {"provisional_answer", result.provisional_answer},
                                          {"input_tokens", result.input_tokens.value},
                                          {"output_tokens", result.output_tokens.value}});
    }
    j["calls"] = nlohmann::ordered_json::array();
    for (const auto& call : trace.calls) {
        j["calls"].push_back({{"stage", call.stage},
                              {"input_tokens", call.input_tokens.value},
                              {"output_tokens", call.output_tokens.value}});
    }
    j["cost"] = {{"requests", trace.cost.requests},
                 {"input_tokens", trace.cost.input_tokens.value},
                 {"output_tokens", trace.cost.output_tokens.value}};
    if (!trace.error.empty()) {
        j["error"] = trace.error;
    }
    return j;
}

inline AnswerTrace answer_trace_from_json(const nlohmann::json& j) {
    AnswerTrace trace;
    trace.question_id = j.at("question_id").get<std::string>();
    trace.mode = answer_mode_from_string(j.at("mode").get<std::string>());
    trace.delegated_to_rag = j.value("delegated_to_rag", false);
    trace.gold_answer = j.value("gold_answer", std::string{});
    trace.final_answer = j.value("final_answer", std::string{});
    trace.correct = j.value("correct", false);
    trace.conflict_flag = j.value("conflict_flag", false);
    if (j.contains("context_ranking")) {
        trace.context_ranking = detail::ranking_from_json(j["context_ranking"]);
    }
    if (j.contains("rerank_ranking")) {
        trace.rerank_ranking = detail::ranking_from_json(j["rerank_ranking"]);
    }
    if (j.contains("preflight")) {
        PreflightVerdict verdict;
        verdict.iou = j["preflight"].at("iou").get<double>();
        verdict.predicts_issue = j["preflight"].at("predicts_issue").get<bool>();
        trace.preflight = verdict;
    }
    for (const auto& p : j.value("partitions", nlohmann::json::array())) {
        Partition partition;
        partition.index = p.at("index").get<size_t>();
        partition.doc_ids = p.at("doc_ids").get<std::vector<std::string>>();
        trace.partitions.push_back(std::move(partition));
    }
    for (const auto& r : j.value("partition_results", nlohmann::json::array())) {
        PartitionResult result;
        result.partition_index = r.at("partition_index").get<size_t>();
        result.extracted_info = r.at("extracted_info").get<std::string>();
        result.provisional_answer = r.at("provisional_answer").get<std::string>();
        result.input_tokens = TokenCount{r.at("input_tokens").get<uint64_t>()};
        result.output_tokens = TokenCount{r.at("output_tokens").get<uint64_t>()};
        trace.partition_results.push_back(std::move(result));
    }
    for (const auto& c : j.value("calls", nlohmann::json::array())) {
        CallRecord call;
        call.stage = c.at("stage").get<std::string>();
        call.input_tokens = TokenCount{c.at("input_tokens").get<uint64_t>()};
        call.output_tokens = TokenCount{c.at("output_tokens").get<uint64_t>()};
        trace.calls.push_back(std::move(call));
    }
    if (j.contains("cost")) {
        trace.cost.requests = j["cost"].at("requests").get<uint64_t>();
        trace.cost.input_tokens = TokenCount{j["cost"].at("input_tokens").get<uint64_t>()};
        trace.cost.output_tokens = TokenCount{j["cost"].at("output_tokens").get<uint64_t>()};
    }
    trace.error = j.value("error", std::string{});
    return trace;
}

} // namespace briefcontext
