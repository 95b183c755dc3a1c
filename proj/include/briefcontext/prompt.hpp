#pragma once

#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "briefcontext/corpus.hpp"
#include "briefcontext/llm.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

/// Exact reply emitted when a context partition holds nothing relevant;
/// matched case-insensitively after trimming wherever it is consumed.
inline constexpr const char* kNoInfoSentinel = "NO RELEVANT INFORMATION";

/// Marker stored in traces when no answer could be parsed or every
/// partition came back empty.
inline constexpr const char* kAbstainMarker = "ABSTAIN";

inline bool is_no_info_sentinel(const std::string& text) {
    return iequals(trim(text), kNoInfoSentinel);
}

/// Instruction and layout templates for every prompt the pipeline builds.
/// The user layout carries named placeholders {question}, {options},
/// {documents}; instructions are plain text. Each field can be replaced
/// from an external template file.
struct PromptTemplates {
    std::string extraction_instruction =
        "You will be given a question followed by a numbered set of documents. "
        "Extract the information from the documents that helps answer the question, "
        "quoting the relevant facts. If the documents support one of the listed options, "
        "end your reply with a line \"ANSWER: <option letter>\". If no document contains "
        "relevant information, reply with exactly \"NO RELEVANT INFORMATION\".";
    std::string summarization_instruction =
        "You will be given a question followed by numbered information blocks collected "
        "from different document partitions. Ignore blocks that say \"NO RELEVANT "
        "INFORMATION\". Weigh the remaining blocks against each other, resolve any "
        "disagreement, and answer the question. End your reply with a line "
        "\"ANSWER: <option letter>\".";
    std::string answer_instruction =
        "You will be given a question followed by a numbered set of documents. Answer "
        "the question using the documents. End your reply with a line "
        "\"ANSWER: <option letter>\".";
    std::string closed_book_instruction =
        "Answer the question from your own knowledge. End your reply with a line "
        "\"ANSWER: <option letter>\".";
    std::string cot_suffix =
        " Think step by step and explain your reasoning before giving the final answer.";
    std::string user_layout = "{question}\n\n{options}\n\n{documents}\n\n{question}";
};

inline std::string load_template_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("template: cannot open '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

namespace detail {

inline void replace_all(std::string& text, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
}

/// Collapses runs of 3+ newlines left behind by empty placeholder sections.
inline std::string squeeze_blank_runs(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    size_t run = 0;
    for (char c : text) {
        if (c == '\n') {
            if (++run <= 2) out.push_back(c);
        } else {
            run = 0;
            out.push_back(c);
        }
    }
    return trim(out);
}

} // namespace detail

inline std::string render_user_layout(const std::string& layout, const std::string& question,
                                      const std::string& options_text,
                                      const std::string& documents_text) {
    std::string rendered = layout;
    detail::replace_all(rendered, "{question}", question);
    detail::replace_all(rendered, "{options}", options_text);
    detail::replace_all(rendered, "{documents}", documents_text);
    return detail::squeeze_blank_runs(rendered);
}

inline std::string format_options(const std::map<std::string, std::string>& options) {
    if (options.empty()) return {};
    std::string out = "Options:";
    for (const auto& [label, text] : options) {
        out += "\n" + label + ". " + text;
    }
    return out;
}

/// One context entry: a bracketed header carrying the 1-based position and
/// the document id, then title and body.
inline std::string format_doc_block(size_t position, const Document& doc) {
    std::string block = "[doc " + std::to_string(position) + "] (" + doc.id + ")";
    if (!doc.title.empty()) block += " " + doc.title;
    block += "\n" + doc.body;
    return block;
}

inline std::string format_doc_blocks(const std::vector<const Document*>& docs) {
    std::string out;
    for (size_t i = 0; i < docs.size(); ++i) {
        if (i > 0) out += "\n\n";
        out += format_doc_block(i + 1, *docs[i]);
    }
    return out;
}

inline std::string format_partition_block(size_t partition_index, const std::string& info) {
    return "[partition " + std::to_string(partition_index + 1) + "]\n" + info;
}

// ---------------------------------------------------------------------------
// Prompt parsing (used by the scripted backend and by tests)
// ---------------------------------------------------------------------------

struct DocBlock {
    size_t position = 0; // 1-based, as printed in the header
    std::string id;
    std::string content; // header remainder plus body lines
};

namespace detail {

inline bool parse_block_header(const std::string& line, const std::string& prefix, size_t& number,
                               size_t& after_bracket) {
    if (line.rfind(prefix, 0) != 0) return false;
    size_t pos = prefix.size();
    size_t start = pos;
    while (pos < line.size() && std::isdigit(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos == start || pos >= line.size() || line[pos] != ']') return false;
    number = std::stoul(line.substr(start, pos - start));
    after_bracket = pos + 1;
    return true;
}

} // namespace detail

/// Extracts "[doc N] (id) ..." blocks from a prompt body. Returns blocks in
/// textual order; a header without a parenthesized id is an error so that
/// prompt-format regressions fail loudly instead of silently losing ids.
inline std::vector<DocBlock> parse_doc_blocks(const std::string& text) {
    std::vector<DocBlock> blocks;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t number = 0;
        size_t after = 0;
        if (!detail::parse_block_header(line, "[doc ", number, after)) {
            if (!blocks.empty()) {
                blocks.back().content += "\n" + line;
            }
            continue;
        }
        std::string rest = trim(line.substr(after));
        if (rest.empty() || rest[0] != '(') {
            throw Error("prompt parse: document block " + std::to_string(number) +
                        " is missing its parenthesized id");
        }
        size_t close = rest.find(')');
        if (close == std::string::npos || close == 1) {
            throw Error("prompt parse: document block " + std::to_string(number) +
                        " is missing its parenthesized id");
        }
        DocBlock block;
        block.position = number;
        block.id = rest.substr(1, close - 1);
        block.content = trim(rest.substr(close + 1));
        blocks.push_back(std::move(block));
    }
    return blocks;
}

struct PartitionBlock {
    size_t position = 0; // 1-based, as printed in the header
    std::string content;
};

inline std::vector<PartitionBlock> parse_partition_blocks(const std::string& text) {
    std::vector<PartitionBlock> blocks;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        size_t number = 0;
        size_t after = 0;
        if (detail::parse_block_header(line, "[partition ", number, after)) {
            PartitionBlock block;
            block.position = number;
            block.content = trim(line.substr(after));
            blocks.push_back(std::move(block));
        } else if (!blocks.empty()) {
            blocks.back().content += blocks.back().content.empty() ? line : "\n" + line;
        }
    }
    for (auto& block : blocks) {
        block.content = trim(block.content);
    }
    return blocks;
}

// ---------------------------------------------------------------------------
// Final-answer parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<std::string> match_option_label(char c,
                                                     const std::map<std::string, std::string>& options) {
    if (!std::isalpha(static_cast<unsigned char>(c))) return std::nullopt;
    std::string label(1, static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (options.count(label)) return label;
    return std::nullopt;
}

/// Rule 1: "ANSWER: X" anywhere in the text, case-insensitive; the token
/// after the colon must be a known option label once stripped of
/// punctuation.
inline std::optional<std::string> parse_answer_keyword(const std::string& text,
                                                       const std::map<std::string, std::string>& options) {
    const std::string lowered = to_lower(text);
    size_t pos = lowered.find("answer:");
    while (pos != std::string::npos) {
        size_t cursor = pos + 7;
        while (cursor < text.size() && std::isspace(static_cast<unsigned char>(text[cursor]))) {
            ++cursor;
        }
        size_t end = cursor;
        while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) {
            ++end;
        }
        std::string token = text.substr(cursor, end - cursor);
        while (!token.empty() && !std::isalnum(static_cast<unsigned char>(token.front()))) {
            token.erase(token.begin());
        }
        while (!token.empty() && !std::isalnum(static_cast<unsigned char>(token.back()))) {
            token.pop_back();
        }
        if (token.size() == 1) {
            if (auto label = match_option_label(token[0], options)) return label;
        }
        pos = lowered.find("answer:", pos + 1);
    }
    return std::nullopt;
}

/// Rule 2: a standalone option letter immediately followed by one of the
/// delimiters ")" and ".", or wrapped as "(X)". Case-insensitive.
inline std::optional<std::string> parse_delimited_letter(const std::string& text,
                                                         const std::map<std::string, std::string>& options) {
    for (size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '(' && i + 2 < text.size() && text[i + 2] == ')') {
            if (auto label = match_option_label(text[i + 1], options)) return label;
        }
        if (i + 1 < text.size() && (text[i + 1] == '.' || text[i + 1] == ')')) {
            bool standalone = i == 0 || !std::isalnum(static_cast<unsigned char>(text[i - 1]));
            if (standalone) {
                if (auto label = match_option_label(text[i], options)) return label;
            }
        }
    }
    return std::nullopt;
}

/// Rule 3: case-insensitive containment of an option's text at token
/// granularity, checked in label order.
inline std::optional<std::string> parse_option_text(const std::string& text,
                                                    const std::map<std::string, std::string>& options) {
    const std::vector<std::string> text_tokens = tokenize(text);
    for (const auto& [label, option_text] : options) {
        const std::vector<std::string> needle = tokenize(option_text);
        if (needle.empty() || needle.size() > text_tokens.size()) continue;
        for (size_t i = 0; i + needle.size() <= text_tokens.size(); ++i) {
            if (std::equal(needle.begin(), needle.end(), text_tokens.begin() + i)) {
                return label;
            }
        }
    }
    return std::nullopt;
}

} // namespace detail

/// Maps a completion to an option label, applying in order: the "ANSWER: X"
/// keyword, a delimited standalone letter, option-text containment. The
/// no-information sentinel and anything unparseable map to abstain
/// (nullopt). Open-ended items (no options) pass the completion through as
/// free text, preferring the text after "ANSWER:" when present.
inline std::optional<std::string> parse_final_answer(const std::string& completion,
                                                     const std::map<std::string, std::string>& options) {
    const std::string trimmed = trim(completion);
    if (trimmed.empty() || is_no_info_sentinel(trimmed)) return std::nullopt;
    if (options.empty()) {
        const std::string lowered = to_lower(trimmed);
        size_t pos = lowered.rfind("answer:");
        if (pos != std::string::npos) {
            std::string rest = trim(trimmed.substr(pos + 7));
            if (!rest.empty()) return rest;
        }
        return trimmed;
    }
    if (auto label = detail::parse_answer_keyword(trimmed, options)) return label;
    if (auto label = detail::parse_delimited_letter(trimmed, options)) return label;
    if (auto label = detail::parse_option_text(trimmed, options)) return label;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Prompt builders
// ---------------------------------------------------------------------------

inline ChatRequest make_extraction_request(const QAItem& item,
                                           const std::vector<const Document*>& docs,
                                           const PromptTemplates& templates,
                                           size_t max_output_tokens) {
    if (docs.empty()) {
        throw Error("extraction prompt: partition must be non-empty");
    }
    ChatRequest request;
    request.system_instruction = templates.extraction_instruction;
    request.user_content = render_user_layout(templates.user_layout, item.question,
                                              format_options(item.options),
                                              format_doc_blocks(docs));
    request.max_output_tokens = max_output_tokens;
    return request;
}

inline ChatRequest make_answer_request(const QAItem& item,
                                       const std::vector<const Document*>& docs,
                                       const PromptTemplates& templates,
                                       size_t max_output_tokens) {
    if (docs.empty()) {
        throw Error("answer prompt: context must be non-empty");
    }
    ChatRequest request;
    request.system_instruction = templates.answer_instruction;
    request.user_content = render_user_layout(templates.user_layout, item.question,
                                              format_options(item.options),
                                              format_doc_blocks(docs));
    request.max_output_tokens = max_output_tokens;
    return request;
}

inline ChatRequest make_reduce_request(const QAItem& item,
                                       const std::vector<std::pair<size_t, std::string>>& info_blocks,
                                       const PromptTemplates& templates,
                                       size_t max_output_tokens) {
    if (info_blocks.empty()) {
        throw Error("reduce prompt: at least one information block required");
    }
    std::string blocks;
    for (size_t i = 0; i < info_blocks.size(); ++i) {
        if (i > 0) blocks += "\n\n";
        blocks += format_partition_block(info_blocks[i].first, info_blocks[i].second);
    }
    ChatRequest request;
    request.system_instruction = templates.summarization_instruction;
    request.user_content = render_user_layout(templates.user_layout, item.question,
                                              format_options(item.options), blocks);
    request.max_output_tokens = max_output_tokens;
    return request;
}

inline ChatRequest make_closed_book_request(const QAItem& item, bool cot,
                                            const PromptTemplates& templates,
                                            size_t max_output_tokens) {
    ChatRequest request;
    request.system_instruction = templates.closed_book_instruction;
    if (cot) request.system_instruction += templates.cot_suffix;
    request.user_content = render_user_layout(templates.user_layout, item.question,
                                              format_options(item.options), "");
    request.max_output_tokens = max_output_tokens;
    return request;
}

} // namespace briefcontext
