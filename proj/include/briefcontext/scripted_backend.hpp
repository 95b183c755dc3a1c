#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "briefcontext/corpus.hpp"
#include "briefcontext/llm.hpp"
#include "briefcontext/prompt.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

/// Behavioral stand-in for the U-shaped positional attention pattern of
/// long-context models: answers drawn from key documents sitting within
/// `spotlight_window` positions of either context end succeed with
/// p_spotlight, mid-context keys with p_middle, absent keys with p_absent.
struct ScriptedBiasModel {
    size_t spotlight_window = 1;
    double p_spotlight = 1.0;
    double p_middle = 0.1;
    double p_absent = 0.0;
    uint64_t seed = 0;

    void validate() const {
        if (spotlight_window == 0) {
            throw Error("scripted model: spotlight_window must be positive");
        }
        if (!(0.0 <= p_absent && p_absent <= p_middle && p_middle <= p_spotlight &&
              p_spotlight <= 1.0)) {
            throw Error("scripted model: require 0 <= p_absent <= p_middle <= p_spotlight <= 1");
        }
    }
};

/// Per-question answer key the scripted backend consults: it recognizes the
/// question by its text inside the prompt and knows which documents carry
/// the answer.
struct ScriptedFact {
    std::string question_id;
    std::string question_text;
    std::string gold_answer;
    std::vector<std::string> option_labels; // sorted; empty for open-ended
    std::vector<std::string> key_doc_ids;
};

inline std::vector<ScriptedFact> make_fact_table(const std::vector<QAItem>& items) {
    std::vector<ScriptedFact> facts;
    facts.reserve(items.size());
    for (const auto& item : items) {
        ScriptedFact fact;
        fact.question_id = item.id;
        fact.question_text = item.question;
        fact.gold_answer = item.gold_answer;
        for (const auto& [label, text] : item.options) {
            (void)text;
            fact.option_labels.push_back(label);
        }
        fact.key_doc_ids = item.key_doc_ids;
        facts.push_back(std::move(fact));
    }
    return facts;
}

struct ScriptedOptions {
    /// Probability that an incorrect outcome surfaces as a wrong option
    /// instead of the no-information sentinel.
    double wrong_answer_rate = 0.0;
    /// When set, correctness stops depending on position: a key document in
    /// context succeeds with p_spotlight unless some non-key document's
    /// token Jaccard similarity against a key document reaches this
    /// threshold, in which case p_middle applies. Models confusability by
    /// lexically similar distractors.
    std::optional<double> distractor_similarity_threshold;
};

inline double token_jaccard(const std::string& a, const std::string& b) {
    std::vector<std::string> ta = tokenize(a);
    std::vector<std::string> tb = tokenize(b);
    std::unordered_set<std::string> sa(ta.begin(), ta.end());
    std::unordered_set<std::string> sb(tb.begin(), tb.end());
    if (sa.empty() && sb.empty()) return 1.0;
    size_t inter = 0;
    for (const auto& t : sa) {
        if (sb.count(t)) ++inter;
    }
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

/// Deterministic chat backend for offline experiments. Recognizes the three
/// prompt shapes the pipeline produces (document context, partition digest,
/// bare question), locates key documents by id in the parsed blocks, and
/// draws correctness from a stream keyed by (seed, question id, prompt
/// content) so identical runs are byte-identical.
class ScriptedBackend final : public LlmBackend {
public:
    ScriptedBackend(ScriptedBiasModel model, std::vector<ScriptedFact> facts,
                    ScriptedOptions options = {})
        : model_(model), facts_(std::move(facts)), options_(options) {
        model_.validate();
        if (options_.wrong_answer_rate < 0.0 || options_.wrong_answer_rate > 1.0) {
            throw Error("scripted backend: wrong_answer_rate must be in [0,1]");
        }
        if (options_.distractor_similarity_threshold &&
            (*options_.distractor_similarity_threshold < 0.0 ||
             *options_.distractor_similarity_threshold > 1.0)) {
            throw Error("scripted backend: distractor similarity threshold must be in [0,1]");
        }
    }

    std::string name() const override { return "scripted"; }

    ChatResponse complete(const ChatRequest& request) override {
        request.validate();
        std::string text;
        std::vector<PartitionBlock> partitions = parse_partition_blocks(request.user_content);
        if (!partitions.empty()) {
            text = answer_reduce(request, partitions);
        } else {
            std::vector<DocBlock> docs = parse_doc_blocks(request.user_content);
            if (!docs.empty()) {
                text = answer_with_context(request, docs);
            } else {
                text = answer_closed_book(request);
            }
        }
        ChatResponse response;
        response.text = std::move(text);
        response.input_tokens = measure_input_tokens(request);
        response.output_tokens = count_tokens(response.text);
        return response;
    }

private:
    const ScriptedFact& find_fact(const std::string& user_content) const {
        const ScriptedFact* best = nullptr;
        for (const auto& fact : facts_) {
            if (fact.question_text.empty()) continue;
            if (user_content.find(fact.question_text) == std::string::npos) continue;
            if (!best || fact.question_text.size() > best->question_text.size()) {
                best = &fact;
            }
        }
        if (!best) {
            throw Error("scripted backend: prompt contains no known question");
        }
        return *best;
    }

    double draw(const ScriptedFact& fact, const std::string& content, uint64_t stream) const {
        uint64_t h = splitmix64(model_.seed ^ fnv1a64(fact.question_id));
        h = splitmix64(h ^ fnv1a64(content));
        return unit_interval(splitmix64(h ^ stream));
    }

    std::string wrong_option(const ScriptedFact& fact) const {
        auto it = std::find(fact.option_labels.begin(), fact.option_labels.end(),
                            fact.gold_answer);
        if (it == fact.option_labels.end() || fact.option_labels.size() < 2) return {};
        ++it;
        if (it == fact.option_labels.end()) it = fact.option_labels.begin();
        return *it;
    }

    /// The user layout re-asks the question after the final document block,
    /// so that block's parsed content carries the question as a suffix. It
    /// is prompt furniture, not document text, and must not count toward
    /// lexical similarity.
    static std::string strip_question_suffix(std::string content, const std::string& question) {
        if (!question.empty() && content.size() >= question.size() &&
            content.compare(content.size() - question.size(), question.size(), question) == 0) {
            content.erase(content.size() - question.size());
            return trim(content);
        }
        return content;
    }

    std::string emit(const ScriptedFact& fact, const std::string& content,
                     double p_correct) const {
        if (draw(fact, content, 0) < p_correct) {
            return "Relevant information identified in the provided material. ANSWER: " +
                   fact.gold_answer;
        }
        if (draw(fact, content, 1) < options_.wrong_answer_rate) {
            std::string wrong = wrong_option(fact);
            if (!wrong.empty()) {
                return "Relevant information identified in the provided material. ANSWER: " +
                       wrong;
            }
        }
        return kNoInfoSentinel;
    }

    std::string answer_with_context(const ChatRequest& request,
                                    const std::vector<DocBlock>& docs) const {
        const ScriptedFact& fact = find_fact(request.user_content);
        std::unordered_set<std::string> keys(fact.key_doc_ids.begin(), fact.key_doc_ids.end());
        std::vector<size_t> key_positions;
        for (size_t i = 0; i < docs.size(); ++i) {
            if (keys.count(docs[i].id)) key_positions.push_back(i);
        }
        double p = model_.p_absent;
        if (!key_positions.empty()) {
            if (options_.distractor_similarity_threshold) {
                std::vector<std::string> contents(docs.size());
                for (size_t i = 0; i < docs.size(); ++i) {
                    contents[i] = strip_question_suffix(docs[i].content, fact.question_text);
                }
                p = model_.p_spotlight;
                for (size_t i = 0; i < docs.size() && p == model_.p_spotlight; ++i) {
                    if (keys.count(docs[i].id)) continue;
                    for (size_t kp : key_positions) {
                        if (token_jaccard(contents[i], contents[kp]) >=
                            *options_.distractor_similarity_threshold) {
                            p = model_.p_middle;
                            break;
                        }
                    }
                }
            } else {
                const size_t s = model_.spotlight_window;
                bool spotlight = false;
                for (size_t kp : key_positions) {
                    if (kp < s || kp + s >= docs.size()) {
                        spotlight = true;
                        break;
                    }
                }
                p = spotlight ? model_.p_spotlight : model_.p_middle;
            }
        }
        return emit(fact, request.user_content, p);
    }

    std::string answer_closed_book(const ChatRequest& request) const {
        const ScriptedFact& fact = find_fact(request.user_content);
        return emit(fact, request.user_content, model_.p_absent);
    }

    /// Digest prompts get a majority vote over the per-partition answers
    /// embedded in the blocks; ties go to the earliest block's answer.
    std::string answer_reduce(const ChatRequest& request,
                              const std::vector<PartitionBlock>& partitions) const {
        const ScriptedFact& fact = find_fact(request.user_content);
        if (fact.option_labels.empty()) {
            for (const auto& block : partitions) {
                if (is_no_info_sentinel(block.content)) continue;
                std::map<std::string, std::string> no_options;
                if (auto answer = parse_final_answer(block.content, no_options)) {
                    return "ANSWER: " + *answer;
                }
            }
            return kNoInfoSentinel;
        }
        std::map<std::string, std::string> options;
        for (const auto& label : fact.option_labels) options[label] = "";
        std::vector<std::string> votes;
        for (const auto& block : partitions) {
            if (is_no_info_sentinel(block.content)) continue;
            if (auto label = detail::parse_answer_keyword(block.content, options)) {
                votes.push_back(*label);
            }
        }
        if (votes.empty()) return kNoInfoSentinel;
        std::string winner;
        size_t winner_count = 0;
        for (size_t i = 0; i < votes.size(); ++i) {
            size_t count = 0;
            for (const auto& v : votes) {
                if (v == votes[i]) ++count;
            }
            if (count > winner_count) {
                winner = votes[i];
                winner_count = count;
            }
        }
        return "Aggregating the partition findings. ANSWER: " + winner;
    }

    ScriptedBiasModel model_;
    std::vector<ScriptedFact> facts_;
    ScriptedOptions options_;
};

} // namespace briefcontext
