#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "briefcontext/corpus.hpp"
#include "briefcontext/pipeline.hpp"
#include "briefcontext/preflight.hpp"
#include "briefcontext/ranking.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

enum class ExperimentKind { position_sweep, integration, conflict, preflight_eval, attention_bias };

inline const char* to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::position_sweep: return "position_sweep";
        case ExperimentKind::integration: return "integration";
        case ExperimentKind::conflict: return "conflict";
        case ExperimentKind::preflight_eval: return "preflight_eval";
        case ExperimentKind::attention_bias: return "attention_bias";
    }
    return "unknown";
}

inline ExperimentKind experiment_kind_from_string(const std::string& s) {
    if (s == "position_sweep") return ExperimentKind::position_sweep;
    if (s == "integration") return ExperimentKind::integration;
    if (s == "conflict") return ExperimentKind::conflict;
    if (s == "preflight_eval") return ExperimentKind::preflight_eval;
    if (s == "attention_bias") return ExperimentKind::attention_bias;
    throw Error("unknown experiment kind '" + s + "'");
}

struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::position_sweep;
    PipelineConfig pipeline;
    std::vector<int> percentiles = {0, 25, 50, 75, 100};
    std::vector<size_t> top_k_values = {16};
    uint64_t seed = 0;

    void validate() const {
        pipeline.validate();
        for (int p : percentiles) {
            if (p < 0 || p > 100) {
                throw Error("experiment config: percentile " + std::to_string(p) +
                            " outside [0,100]");
            }
        }
        if (top_k_values.empty()) {
            throw Error("experiment config: top_k_values must be non-empty");
        }
        for (size_t k : top_k_values) {
            if (k == 0) {
                throw Error("experiment config: top_k values must be positive");
            }
        }
    }
};

/// 0-based context position for a percentile placement over k slots:
/// round(p/100 * (k-1)), half-up.
inline size_t percentile_to_index(int p, size_t k) {
    if (p < 0 || p > 100) {
        throw Error("percentile_to_index: percentile " + std::to_string(p) + " outside [0,100]");
    }
    if (k == 0) {
        throw Error("percentile_to_index: k must be positive");
    }
    double x = static_cast<double>(p) / 100.0 * static_cast<double>(k - 1);
    return static_cast<size_t>(std::floor(x + 0.5));
}

struct AccuracyResult {
    size_t total = 0;
    size_t correct = 0;
    bool empty = true;

    double value() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
};

/// Accuracy over traces; abstains already grade as incorrect upstream.
inline AccuracyResult score_accuracy(const std::vector<AnswerTrace>& traces) {
    AccuracyResult result;
    result.total = traces.size();
    result.empty = traces.empty();
    for (const auto& trace : traces) {
        if (trace.correct) ++result.correct;
    }
    return result;
}

inline AccuracyResult score_accuracy(const std::vector<AnswerTrace>& traces,
                                     const std::vector<QAItem>& items) {
    std::unordered_set<std::string> covered;
    for (const auto& trace : traces) covered.insert(trace.question_id);
    for (const auto& item : items) {
        if (!covered.count(item.id)) {
            throw Error("score_accuracy: no trace for item '" + item.id + "'");
        }
    }
    return score_accuracy(traces);
}

// ---------------------------------------------------------------------------
// Report structure
// ---------------------------------------------------------------------------

struct ConditionCell {
    std::string group; // sweep | integration | conflict | control | experimental | preflight
    std::string mode;  // rag | briefcontext | cot | oracle | closed_book | (empty)
    size_t top_k = 0;
    int percentile = -1; // -1 when not applicable
    size_t items = 0;
    size_t correct = 0;
    CostTally cost;

    double accuracy() const {
        return items == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(items);
    }
};

struct ConflictSection {
    size_t conflict_cases = 0;
    size_t resolved = 0;
    size_t win = 0;
    size_t tie = 0;
    size_t lose = 0;

    double resolved_rate() const {
        return conflict_cases == 0
                   ? 0.0
                   : static_cast<double>(resolved) / static_cast<double>(conflict_cases);
    }
    double win_pct() const {
        return conflict_cases == 0 ? 0.0 : 100.0 * static_cast<double>(win) / conflict_cases;
    }
    double tie_pct() const {
        return conflict_cases == 0 ? 0.0 : 100.0 * static_cast<double>(tie) / conflict_cases;
    }
    double lose_pct() const {
        return conflict_cases == 0 ? 0.0 : 100.0 * static_cast<double>(lose) / conflict_cases;
    }
};

struct ExperimentReport {
    std::string kind;
    uint64_t seed = 0;
    size_t items_total = 0;
    size_t items_skipped = 0;
    std::vector<std::string> warnings;
    std::vector<ConditionCell> cells;
    std::optional<ConflictSection> conflict;
    std::optional<PreflightMetrics> preflight;
    CostTally totals;
    nlohmann::ordered_json config_echo;
    std::string timestamp; // empty unless explicitly enabled
};

/// One trace plus the experiment condition that produced it; the pair is
/// what trace JSONL files hold, and reports can be refolded from them.
struct TraceRecord {
    std::string group;
    std::string mode;
    size_t top_k = 0;
    int percentile = -1;
    std::optional<bool> issue_occurred; // truth label, when the run computed one
    AnswerTrace trace;
};

struct ExperimentOutcome {
    ExperimentReport report;
    std::vector<TraceRecord> traces;
};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::unordered_set<std::string> key_id_set(const QAItem& item) {
    return {item.key_doc_ids.begin(), item.key_doc_ids.end()};
}

/// Items usable for key-document experiments; absent keys skip the item
/// with a warning rather than failing the run.
inline bool item_usable(const QAItem& item, const Corpus& corpus, ExperimentReport& report) {
    if (item.key_doc_ids.empty()) {
        report.warnings.push_back("item '" + item.id + "' skipped: no key documents");
        ++report.items_skipped;
        return false;
    }
    for (const auto& id : item.key_doc_ids) {
        if (!corpus.contains(id)) {
            report.warnings.push_back("item '" + item.id + "' skipped: key document '" + id +
                                      "' not in corpus");
            ++report.items_skipped;
            return false;
        }
    }
    return true;
}

/// Dense-ranked filler ids for synthetic rankings: the full dense ranking
/// for the question with the key documents removed.
inline std::vector<std::string> dense_fillers(const QAItem& item, const RetrievalStack& stack,
                                              size_t need) {
    Ranking full = dense_retrieve(*stack.index, item.question, *stack.provider,
                                  stack.corpus->size());
    std::unordered_set<std::string> keys = key_id_set(item);
    std::vector<std::string> fillers;
    for (const auto& entry : full.entries) {
        if (keys.count(entry.id)) continue;
        fillers.push_back(entry.id);
        if (fillers.size() == need) break;
    }
    return fillers;
}

/// Seeded uniform sample of `need` non-key document ids, drawn by partial
/// shuffle over the corpus order. The stream is keyed by (seed, item id) so
/// changing the seed reshuffles fillers per item deterministically.
inline std::vector<std::string> random_fillers(const QAItem& item, const Corpus& corpus,
                                               size_t need, uint64_t seed) {
    std::unordered_set<std::string> keys = key_id_set(item);
    std::vector<std::string> pool;
    pool.reserve(corpus.size());
    for (const auto& doc : corpus) {
        if (!keys.count(doc.id)) pool.push_back(doc.id);
    }
    if (pool.size() < need) {
        throw Error("random_fillers: need " + std::to_string(need) + " fillers but only " +
                    std::to_string(pool.size()) + " non-key documents exist");
    }
    SplitMix rng(splitmix64(seed ^ fnv1a64(item.id)));
    for (size_t i = 0; i < need; ++i) {
        size_t j = i + rng.next_below(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(need);
    return pool;
}

inline ConditionCell& cell_for(std::vector<ConditionCell>& cells, const std::string& group,
                               const std::string& mode, size_t top_k, int percentile) {
    for (auto& cell : cells) {
        if (cell.group == group && cell.mode == mode && cell.top_k == top_k &&
            cell.percentile == percentile) {
            return cell;
        }
    }
    ConditionCell cell;
    cell.group = group;
    cell.mode = mode;
    cell.top_k = top_k;
    cell.percentile = percentile;
    cells.push_back(cell);
    return cells.back();
}

inline void tally_trace(ExperimentOutcome& outcome, const std::string& group,
                        const std::string& mode, size_t top_k, int percentile,
                        AnswerTrace trace, std::optional<bool> issue_occurred = std::nullopt) {
    ConditionCell& cell =
        cell_for(outcome.report.cells, group, mode, top_k, percentile);
    ++cell.items;
    if (trace.correct) ++cell.correct;
    cell.cost.add(trace.cost);
    outcome.report.totals.add(trace.cost);
    TraceRecord record;
    record.group = group;
    record.mode = mode;
    record.top_k = top_k;
    record.percentile = percentile;
    record.issue_occurred = issue_occurred;
    record.trace = std::move(trace);
    outcome.traces.push_back(std::move(record));
}

inline nlohmann::ordered_json experiment_config_echo(const ExperimentConfig& config) {
    nlohmann::ordered_json j;
    j["kind"] = to_string(config.kind);
    j["seed"] = config.seed;
    j["percentiles"] = config.percentiles;
    j["top_k_values"] = config.top_k_values;
    j["pipeline"] = {{"top_k", config.pipeline.top_k},
                     {"batch_size", config.pipeline.batch_size},
                     {"preflight_enabled", config.pipeline.preflight_enabled},
                     {"preflight_n", config.pipeline.preflight.n},
                     {"preflight_iou_threshold", config.pipeline.preflight.iou_threshold},
                     {"max_output_tokens", config.pipeline.max_output_tokens},
                     {"parallelism", config.pipeline.parallelism},
                     {"template_hash",
                      fnv1a64(config.pipeline.templates.extraction_instruction + "\x1f" +
                              config.pipeline.templates.summarization_instruction + "\x1f" +
                              config.pipeline.templates.answer_instruction + "\x1f" +
                              config.pipeline.templates.closed_book_instruction + "\x1f" +
                              config.pipeline.templates.cot_suffix + "\x1f" +
                              config.pipeline.templates.user_layout)}};
    return j;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Conflict analysis
// ---------------------------------------------------------------------------

/// Win/tie/lose bookkeeping over paired traces. Only map-reduce traces with
/// the conflict flag count as conflict cases; resolution means the final
/// answer was correct; win/lose compare against the paired single-pass
/// trace for the same question.
inline ConflictSection run_conflict_analysis(const std::vector<AnswerTrace>& briefcontext_traces,
                                             const std::vector<AnswerTrace>& rag_traces) {
    std::unordered_map<std::string, const AnswerTrace*> rag_by_id;
    for (const auto& trace : rag_traces) {
        rag_by_id[trace.question_id] = &trace;
    }
    ConflictSection section;
    for (const auto& bc : briefcontext_traces) {
        if (!bc.conflict_flag) continue;
        auto it = rag_by_id.find(bc.question_id);
        if (it == rag_by_id.end()) {
            throw Error("conflict analysis: no paired single-pass trace for question '" +
                        bc.question_id + "'");
        }
        const AnswerTrace& rag = *it->second;
        ++section.conflict_cases;
        if (bc.correct) ++section.resolved;
        if (bc.correct && !rag.correct) ++section.win;
        else if (!bc.correct && rag.correct) ++section.lose;
        else ++section.tie;
    }
    return section;
}

// ---------------------------------------------------------------------------
// Experiment runners
// ---------------------------------------------------------------------------

/// Controlled placement study: for every (top_k, percentile) condition the
/// key documents are planted at the percentile position among dense-ranked
/// fillers, and both the single-pass and map-reduce paths answer from that
/// synthetic ranking.
inline ExperimentOutcome run_position_sweep(const std::vector<QAItem>& items,
                                            const RetrievalStack& stack, LlmBackend& backend,
                                            const ExperimentConfig& config) {
    config.validate();
    stack.validate();
    ExperimentOutcome outcome;
    outcome.report.kind = to_string(ExperimentKind::position_sweep);
    outcome.report.seed = config.seed;
    outcome.report.items_total = items.size();
    outcome.report.config_echo = detail::experiment_config_echo(config);

    for (size_t top_k : config.top_k_values) {
        PipelineConfig pipeline = config.pipeline;
        pipeline.top_k = top_k;
        pipeline.batch_size = std::min(pipeline.batch_size, top_k);
        for (int percentile : config.percentiles) {
            for (const auto& item : items) {
                if (!detail::item_usable(item, *stack.corpus, outcome.report)) continue;
                if (item.key_doc_ids.size() > top_k) {
                    outcome.report.warnings.push_back("item '" + item.id +
                                                      "' skipped: more key documents than top_k");
                    ++outcome.report.items_skipped;
                    continue;
                }
                size_t need = top_k - item.key_doc_ids.size();
                std::vector<std::string> fillers = detail::dense_fillers(item, stack, need);
                if (fillers.size() < need) {
                    outcome.report.warnings.push_back("item '" + item.id +
                                                      "' skipped: not enough filler documents");
                    ++outcome.report.items_skipped;
                    continue;
                }
                size_t index = percentile_to_index(percentile, top_k);
                index = std::min(index, top_k - item.key_doc_ids.size());
                Ranking synthetic =
                    make_synthetic_ranking(item.key_doc_ids, fillers, top_k, index);
                AnswerTrace rag_trace =
                    answer_rag(item, synthetic, *stack.corpus, backend, pipeline);
                detail::tally_trace(outcome, "sweep", "rag", top_k, percentile,
                                    std::move(rag_trace));
                AnswerTrace bc_trace = answer_briefcontext_over(item, synthetic, *stack.corpus,
                                                                backend, pipeline);
                detail::tally_trace(outcome, "sweep", "briefcontext", top_k, percentile,
                                    std::move(bc_trace));
            }
        }
    }
    return outcome;
}

/// Preflight prediction quality over real retrieval: verdict from the
/// dense-vs-BM25 consistency check, truth from whether any key document
/// made the dense top-n. No backend involved.
inline ExperimentOutcome run_preflight_eval(const std::vector<QAItem>& items,
                                            const RetrievalStack& stack,
                                            const ExperimentConfig& config) {
    config.validate();
    stack.validate();
    ExperimentOutcome outcome;
    outcome.report.kind = to_string(ExperimentKind::preflight_eval);
    outcome.report.seed = config.seed;
    outcome.report.items_total = items.size();
    outcome.report.config_echo = detail::experiment_config_echo(config);

    const size_t top_k = config.pipeline.top_k;
    std::vector<bool> predicted;
    std::vector<bool> occurred;
    for (const auto& item : items) {
        if (!detail::item_usable(item, *stack.corpus, outcome.report)) continue;
        Ranking dense = dense_retrieve(*stack.index, item.question, *stack.provider, top_k);
        std::unordered_set<std::string> candidates;
        for (const auto& entry : dense.entries) candidates.insert(entry.id);
        Ranking rerank =
            bm25_rank(*stack.corpus, item.question, stack.bm25_params, candidates, top_k);
        PreflightVerdict verdict = preflight_check(dense, rerank, config.pipeline.preflight);
        bool truth = label_issue_occurrence(dense, item.key_doc_ids, config.pipeline.preflight.n);
        predicted.push_back(verdict.predicts_issue);
        occurred.push_back(truth);
    }
    outcome.report.preflight = evaluate_preflight(predicted, occurred);
    return outcome;
}

/// End-to-end comparison on real retrieval: every answer mode runs over the
/// same items, conflicts are scored against the single-pass baseline, and
/// the preflight section is computed on the side.
inline ExperimentOutcome run_integration(const std::vector<QAItem>& items,
                                         const RetrievalStack& stack, LlmBackend& backend,
                                         const ExperimentConfig& config) {
    config.validate();
    stack.validate();
    ExperimentOutcome outcome;
    outcome.report.kind = to_string(ExperimentKind::integration);
    outcome.report.seed = config.seed;
    outcome.report.items_total = items.size();
    outcome.report.config_echo = detail::experiment_config_echo(config);

    const size_t top_k = config.pipeline.top_k;
    std::vector<AnswerTrace> bc_traces;
    std::vector<AnswerTrace> rag_traces;
    std::vector<bool> predicted;
    std::vector<bool> occurred;
    for (const auto& item : items) {
        if (!detail::item_usable(item, *stack.corpus, outcome.report)) continue;

        AnswerTrace closed = answer_closed_book(item, backend, config.pipeline, false);
        detail::tally_trace(outcome, "integration", "closed_book", top_k, -1, std::move(closed));
        AnswerTrace cot = answer_closed_book(item, backend, config.pipeline, true);
        detail::tally_trace(outcome, "integration", "cot", top_k, -1, std::move(cot));

        Ranking dense = dense_retrieve(*stack.index, item.question, *stack.provider, top_k);
        AnswerTrace rag = answer_rag(item, dense, *stack.corpus, backend, config.pipeline);
        rag_traces.push_back(rag);
        detail::tally_trace(outcome, "integration", "rag", top_k, -1, std::move(rag));

        std::unordered_set<std::string> candidates;
        for (const auto& entry : dense.entries) candidates.insert(entry.id);
        Ranking rerank =
            bm25_rank(*stack.corpus, item.question, stack.bm25_params, candidates, top_k);
        PreflightVerdict verdict = preflight_check(dense, rerank, config.pipeline.preflight);
        bool truth = label_issue_occurrence(dense, item.key_doc_ids, config.pipeline.preflight.n);
        predicted.push_back(verdict.predicts_issue);
        occurred.push_back(truth);

        AnswerTrace bc = answer_briefcontext(item, stack, backend, config.pipeline);
        bc_traces.push_back(bc);
        detail::tally_trace(outcome, "integration", "briefcontext", top_k, -1, std::move(bc),
                            truth);

        AnswerTrace oracle = answer_oracle(item, *stack.corpus, backend, config.pipeline);
        detail::tally_trace(outcome, "integration", "oracle", top_k, -1, std::move(oracle));
    }
    outcome.report.conflict = run_conflict_analysis(bc_traces, rag_traces);
    outcome.report.preflight = evaluate_preflight(predicted, occurred);
    return outcome;
}

/// Conflict-focused run: map-reduce and single-pass over the same real
/// retrieval, reported through the win/tie/lose bookkeeping.
inline ExperimentOutcome run_conflict_experiment(const std::vector<QAItem>& items,
                                                 const RetrievalStack& stack, LlmBackend& backend,
                                                 const ExperimentConfig& config) {
    config.validate();
    stack.validate();
    ExperimentOutcome outcome;
    outcome.report.kind = to_string(ExperimentKind::conflict);
    outcome.report.seed = config.seed;
    outcome.report.items_total = items.size();
    outcome.report.config_echo = detail::experiment_config_echo(config);

    const size_t top_k = config.pipeline.top_k;
    std::vector<AnswerTrace> bc_traces;
    std::vector<AnswerTrace> rag_traces;
    for (const auto& item : items) {
        if (!detail::item_usable(item, *stack.corpus, outcome.report)) continue;
        Ranking dense = dense_retrieve(*stack.index, item.question, *stack.provider, top_k);
        AnswerTrace rag = answer_rag(item, dense, *stack.corpus, backend, config.pipeline);
        rag_traces.push_back(rag);
        detail::tally_trace(outcome, "conflict", "rag", top_k, -1, std::move(rag));
        AnswerTrace bc =
            answer_briefcontext_over(item, dense, *stack.corpus, backend, config.pipeline);
        bc_traces.push_back(bc);
        detail::tally_trace(outcome, "conflict", "briefcontext", top_k, -1, std::move(bc));
    }
    outcome.report.conflict = run_conflict_analysis(bc_traces, rag_traces);
    return outcome;
}

/// Retrieval-composition control study. Both groups place the key documents
/// at the middle of the context; the control group surrounds them with the
/// dense-ranked documents (hard negatives), the experimental group with a
/// seeded uniform sample of the rest of the corpus.
inline ExperimentOutcome run_attention_bias(const std::vector<QAItem>& items,
                                            const RetrievalStack& stack, LlmBackend& backend,
                                            const ExperimentConfig& config) {
    config.validate();
    stack.validate();
    ExperimentOutcome outcome;
    outcome.report.kind = to_string(ExperimentKind::attention_bias);
    outcome.report.seed = config.seed;
    outcome.report.items_total = items.size();
    outcome.report.config_echo = detail::experiment_config_echo(config);

    const size_t top_k = config.pipeline.top_k;
    if (stack.corpus->size() < top_k) {
        throw Error("attention bias experiment: corpus has " +
                    std::to_string(stack.corpus->size()) + " documents, need at least " +
                    std::to_string(top_k));
    }
    for (const auto& item : items) {
        if (!detail::item_usable(item, *stack.corpus, outcome.report)) continue;
        if (item.key_doc_ids.size() > top_k) {
            outcome.report.warnings.push_back("item '" + item.id +
                                              "' skipped: more key documents than top_k");
            ++outcome.report.items_skipped;
            continue;
        }
        size_t need = top_k - item.key_doc_ids.size();
        size_t middle = std::min(top_k / 2, top_k - item.key_doc_ids.size());

        std::vector<std::string> control_fillers = detail::dense_fillers(item, stack, need);
        if (control_fillers.size() < need) {
            outcome.report.warnings.push_back("item '" + item.id +
                                              "' skipped: not enough filler documents");
            ++outcome.report.items_skipped;
            continue;
        }
        Ranking control =
            make_synthetic_ranking(item.key_doc_ids, control_fillers, top_k, middle);
        AnswerTrace control_trace =
            answer_rag(item, control, *stack.corpus, backend, config.pipeline);
        detail::tally_trace(outcome, "control", "rag", top_k, 50, std::move(control_trace));

        std::vector<std::string> random_fillers =
            detail::random_fillers(item, *stack.corpus, need, config.seed);
        Ranking experimental =
            make_synthetic_ranking(item.key_doc_ids, random_fillers, top_k, middle);
        AnswerTrace experimental_trace =
            answer_rag(item, experimental, *stack.corpus, backend, config.pipeline);
        detail::tally_trace(outcome, "experimental", "rag", top_k, 50,
                            std::move(experimental_trace));
    }
    return outcome;
}

inline ExperimentOutcome run_experiment(const std::vector<QAItem>& items,
                                        const RetrievalStack& stack, LlmBackend& backend,
                                        const ExperimentConfig& config) {
    switch (config.kind) {
        case ExperimentKind::position_sweep:
            return run_position_sweep(items, stack, backend, config);
        case ExperimentKind::integration:
            return run_integration(items, stack, backend, config);
        case ExperimentKind::conflict:
            return run_conflict_experiment(items, stack, backend, config);
        case ExperimentKind::preflight_eval:
            return run_preflight_eval(items, stack, config);
        case ExperimentKind::attention_bias:
            return run_attention_bias(items, stack, backend, config);
    }
    throw Error("run_experiment: unhandled experiment kind");
}

// ---------------------------------------------------------------------------
// Dataset preparation
// ---------------------------------------------------------------------------

/// Seeded uniform sample without replacement, by partial shuffle; input
/// order does not survive, output is the shuffled prefix.
inline std::vector<QAItem> sample_qa_items(const std::vector<QAItem>& items, size_t count,
                                           uint64_t seed) {
    if (count > items.size()) {
        throw Error("sample_qa_items: requested " + std::to_string(count) + " of " +
                    std::to_string(items.size()) + " items");
    }
    std::vector<QAItem> pool = items;
    SplitMix rng(splitmix64(seed ^ 0x53616d706c6572ULL));
    for (size_t i = 0; i < count; ++i) {
        size_t j = i + rng.next_below(pool.size() - i);
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

// ---------------------------------------------------------------------------
// Serialization: reports, CSV, trace records
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double value) {
    char buffer[32];
    std::snprintf(buffer, sizeof(buffer), "%.6f", value);
    return buffer;
}

} // namespace detail

inline nlohmann::ordered_json report_to_json(const ExperimentReport& report) {
    nlohmann::ordered_json j;
    j["kind"] = report.kind;
    j["seed"] = report.seed;
    j["items_total"] = report.items_total;
    j["items_skipped"] = report.items_skipped;
    j["warnings"] = report.warnings;
    j["cells"] = nlohmann::ordered_json::array();
    for (const auto& cell : report.cells) {
        nlohmann::ordered_json c;
        c["group"] = cell.group;
        c["mode"] = cell.mode;
        c["top_k"] = cell.top_k;
        if (cell.percentile >= 0) {
            c["percentile"] = cell.percentile;
        } else {
            c["percentile"] = nullptr;
        }
        c["items"] = cell.items;
        c["correct"] = cell.correct;
        c["accuracy"] = cell.accuracy();
        c["requests"] = cell.cost.requests;
        c["input_tokens"] = cell.cost.input_tokens.value;
        c["output_tokens"] = cell.cost.output_tokens.value;
        j["cells"].push_back(std::move(c));
    }
    if (report.conflict) {
        j["conflict"] = {{"conflict_cases", report.conflict->conflict_cases},
                         {"resolved", report.conflict->resolved},
                         {"resolved_rate", report.conflict->resolved_rate()},
                         {"win", report.conflict->win},
                         {"tie", report.conflict->tie},
                         {"lose", report.conflict->lose},
                         {"win_pct", report.conflict->win_pct()},
                         {"tie_pct", report.conflict->tie_pct()},
                         {"lose_pct", report.conflict->lose_pct()}};
    }
    if (report.preflight) {
        j["preflight"] = {{"tp", report.preflight->counts.tp},
                          {"fp", report.preflight->counts.fp},
                          {"fn", report.preflight->counts.fn},
                          {"tn", report.preflight->counts.tn},
                          {"precision", report.preflight->precision},
                          {"recall", report.preflight->recall},
                          {"f1", report.preflight->f1},
                          {"true_negative_rate", report.preflight->true_negative_rate},
                          {"division_by_zero", report.preflight->division_by_zero}};
    }
    j["totals"] = {{"requests", report.totals.requests},
                   {"input_tokens", report.totals.input_tokens.value},
                   {"output_tokens", report.totals.output_tokens.value}};
    j["config"] = report.config_echo;
    if (!report.timestamp.empty()) {
        j["timestamp"] = report.timestamp;
    }
    return j;
}

/// Flat CSV of the accuracy cells, one row per condition.
inline std::string report_to_csv(const ExperimentReport& report) {
    std::string csv = "kind,group,mode,top_k,percentile,items,correct,accuracy\n";
    for (const auto& cell : report.cells) {
        csv += report.kind + "," + cell.group + "," + cell.mode + "," +
               std::to_string(cell.top_k) + ",";
        if (cell.percentile >= 0) csv += std::to_string(cell.percentile);
        csv += "," + std::to_string(cell.items) + "," + std::to_string(cell.correct) + "," +
               detail::format_double(cell.accuracy()) + "\n";
    }
    return csv;
}

inline nlohmann::ordered_json trace_record_to_json(const TraceRecord& record) {
    nlohmann::ordered_json condition;
    condition["group"] = record.group;
    condition["mode"] = record.mode;
    condition["top_k"] = record.top_k;
    if (record.percentile >= 0) {
        condition["percentile"] = record.percentile;
    } else {
        condition["percentile"] = nullptr;
    }
    if (record.issue_occurred) {
        condition["issue_occurred"] = *record.issue_occurred;
    }
    nlohmann::ordered_json j;
    j["condition"] = std::move(condition);
    j["trace"] = answer_trace_to_json(record.trace);
    return j;
}

inline TraceRecord trace_record_from_json(const nlohmann::json& j) {
    TraceRecord record;
    const auto& condition = j.at("condition");
    record.group = condition.at("group").get<std::string>();
    record.mode = condition.at("mode").get<std::string>();
    record.top_k = condition.at("top_k").get<size_t>();
    if (condition.contains("percentile") && !condition["percentile"].is_null()) {
        record.percentile = condition["percentile"].get<int>();
    }
    if (condition.contains("issue_occurred")) {
        record.issue_occurred = condition["issue_occurred"].get<bool>();
    }
    record.trace = answer_trace_from_json(j.at("trace"));
    return record;
}

inline void write_traces_jsonl(const std::vector<TraceRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("traces: cannot write '" + path + "'");
    }
    for (const auto& record : records) {
        out << trace_record_to_json(record).dump() << "\n";
    }
}

inline std::vector<TraceRecord> read_traces_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("traces: cannot open '" + path + "'");
    }
    std::vector<TraceRecord> records;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw Error("traces: " + path + ":" + std::to_string(line_no) + ": malformed JSON");
        }
        records.push_back(trace_record_from_json(j));
    }
    return records;
}

/// Rebuilds a report purely from persisted trace records: accuracy cells
/// from the per-trace conditions, the conflict section from paired
/// map-reduce/single-pass traces inside each condition, and the preflight
/// section from verdicts plus persisted truth labels.
inline ExperimentReport fold_traces_to_report(const std::vector<TraceRecord>& records,
                                              const std::string& kind = "refold") {
    ExperimentReport report;
    report.kind = kind;
    std::unordered_set<std::string> questions;
    std::vector<AnswerTrace> bc_traces;
    std::vector<AnswerTrace> rag_traces;
    std::vector<bool> predicted;
    std::vector<bool> occurred;
    for (const auto& record : records) {
        questions.insert(record.trace.question_id);
        ConditionCell& cell = detail::cell_for(report.cells, record.group, record.mode,
                                               record.top_k, record.percentile);
        ++cell.items;
        if (record.trace.correct) ++cell.correct;
        cell.cost.add(record.trace.cost);
        report.totals.add(record.trace.cost);
        if (record.mode == "briefcontext") bc_traces.push_back(record.trace);
        if (record.mode == "rag") rag_traces.push_back(record.trace);
        if (record.issue_occurred && record.trace.preflight) {
            predicted.push_back(record.trace.preflight->predicts_issue);
            occurred.push_back(*record.issue_occurred);
        }
    }
    report.items_total = questions.size();
    bool bc_conflicts = std::any_of(bc_traces.begin(), bc_traces.end(),
                                    [](const AnswerTrace& t) { return t.conflict_flag; });
    if (!bc_traces.empty() && !rag_traces.empty() && bc_conflicts) {
        report.conflict = run_conflict_analysis(bc_traces, rag_traces);
    }
    if (!predicted.empty()) {
        report.preflight = evaluate_preflight(predicted, occurred);
    }
    return report;
}

} // namespace briefcontext
