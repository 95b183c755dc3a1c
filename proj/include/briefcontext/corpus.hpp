#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "briefcontext/text.hpp"

namespace briefcontext {

/// One retrievable snippet (abstract or textbook chunk).
struct Document {
    std::string id;
    std::string title; // may be empty
    std::string body;
};

/// Text used when a document is scored or embedded: title first, then body.
inline std::string indexing_text(const Document& doc) {
    if (doc.title.empty()) return doc.body;
    return doc.title + "\n" + doc.body;
}

/// Immutable after ingestion; iteration order is insertion order and the
/// id lookup always agrees with it.
class Corpus {
public:
    void add(Document doc) {
        if (doc.id.empty()) {
            throw Error("corpus: document with empty id");
        }
        if (doc.body.empty()) {
            throw Error("corpus: document '" + doc.id + "' has empty body");
        }
        if (by_id_.count(doc.id) > 0) {
            throw Error("corpus: duplicate document id '" + doc.id + "'");
        }
        by_id_.emplace(doc.id, documents_.size());
        documents_.push_back(std::move(doc));
    }

    size_t size() const { return documents_.size(); }
    bool empty() const { return documents_.empty(); }
    bool contains(const std::string& id) const { return by_id_.count(id) > 0; }

    const Document& at(size_t index) const { return documents_.at(index); }

    const Document& by_id(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) {
            throw Error("corpus: unknown document id '" + id + "'");
        }
        return documents_[it->second];
    }

    const Document* find(const std::string& id) const {
        auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &documents_[it->second];
    }

    auto begin() const { return documents_.begin(); }
    auto end() const { return documents_.end(); }

private:
    std::vector<Document> documents_;
    std::unordered_map<std::string, size_t> by_id_;
};

/// A question with options, gold answer, and annotated key-document ids.
/// Empty options means open-ended.
struct QAItem {
    std::string id;
    std::string question;
    std::map<std::string, std::string> options; // label -> text, labels are single uppercase letters
    std::string gold_answer;                    // option label, or free text when open-ended
    std::vector<std::string> key_doc_ids;

    bool open_ended() const { return options.empty(); }
};

namespace detail {

inline nlohmann::json parse_jsonl_line(const std::string& line, const std::string& path,
                                       size_t line_no) {
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw Error(path + ":" + std::to_string(line_no) + ": malformed JSON record");
    }
    return j;
}

inline std::string require_string_field(const nlohmann::json& j, const char* key,
                                        const std::string& where) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
        throw Error(where + ": missing or non-string field '" + std::string(key) + "'");
    }
    return it->get<std::string>();
}

} // namespace detail

/// Reads a UTF-8 JSONL corpus: one object per line with keys "id", "text"
/// and optional "title". Blank lines are skipped. Input order is preserved.
/// `path` is only used to label error messages.
inline Corpus ingest_corpus(std::istream& in, const std::string& path) {
    Corpus corpus;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json j = detail::parse_jsonl_line(line, path, line_no);
        Document doc;
        doc.id = detail::require_string_field(j, "id", where);
        doc.body = detail::require_string_field(j, "text", where);
        if (auto it = j.find("title"); it != j.end()) {
            if (!it->is_string()) {
                throw Error(where + ": field 'title' must be a string");
            }
            doc.title = it->get<std::string>();
        }
        if (doc.body.empty()) {
            throw Error(where + ": document '" + doc.id + "' has empty text");
        }
        try {
            corpus.add(std::move(doc));
        } catch (const Error& e) {
            throw Error(where + ": " + e.what());
        }
    }
    return corpus;
}

inline Corpus ingest_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("corpus: cannot open '" + path + "'");
    }
    return ingest_corpus(in, path);
}

inline nlohmann::ordered_json document_to_json(const Document& doc) {
    nlohmann::ordered_json j;
    j["id"] = doc.id;
    if (!doc.title.empty()) j["title"] = doc.title;
    j["text"] = doc.body;
    return j;
}

/// Writes the corpus back out as JSONL, one record per document in
/// iteration order.
inline void write_corpus(const Corpus& corpus, std::ostream& out) {
    for (const auto& doc : corpus) {
        out << document_to_json(doc).dump() << "\n";
    }
}

/// Reads a JSONL QA dataset: keys "id", "question", "gold_answer", plus
/// optional "options" (object) and "key_doc_ids" (array of strings).
inline std::vector<QAItem> ingest_qa(std::istream& in, const std::string& path) {
    std::vector<QAItem> items;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        nlohmann::json j = detail::parse_jsonl_line(line, path, line_no);
        QAItem item;
        item.id = detail::require_string_field(j, "id", where);
        item.question = detail::require_string_field(j, "question", where);
        item.gold_answer = detail::require_string_field(j, "gold_answer", where);
        if (auto it = j.find("options"); it != j.end() && !it->is_null()) {
            if (!it->is_object()) {
                throw Error(where + ": field 'options' must be an object");
            }
            for (const auto& [label, text] : it->items()) {
                if (label.size() != 1 || label[0] < 'A' || label[0] > 'Z') {
                    throw Error("qa item '" + item.id + "': option label '" + label +
                                "' is not a single uppercase letter");
                }
                if (!text.is_string()) {
                    throw Error("qa item '" + item.id + "': option '" + label +
                                "' text must be a string");
                }
                item.options.emplace(label, text.get<std::string>());
            }
        }
        if (auto it = j.find("key_doc_ids"); it != j.end() && !it->is_null()) {
            if (!it->is_array()) {
                throw Error(where + ": field 'key_doc_ids' must be an array");
            }
            for (const auto& v : *it) {
                if (!v.is_string()) {
                    throw Error(where + ": key_doc_ids entries must be strings");
                }
                std::string id = v.get<std::string>();
                for (const auto& seen : item.key_doc_ids) {
                    if (seen == id) {
                        throw Error("qa item '" + item.id + "': duplicate key doc id '" + id + "'");
                    }
                }
                item.key_doc_ids.push_back(std::move(id));
            }
        }
        if (!item.options.empty() && item.options.count(item.gold_answer) == 0) {
            throw Error("qa item '" + item.id + "': gold_answer '" + item.gold_answer +
                        "' is not an option label");
        }
        for (const auto& seen : items) {
            if (seen.id == item.id) {
                throw Error(where + ": duplicate qa item id '" + item.id + "'");
            }
        }
        items.push_back(std::move(item));
    }
    return items;
}

inline std::vector<QAItem> ingest_qa(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("qa: cannot open '" + path + "'");
    }
    return ingest_qa(in, path);
}

inline nlohmann::ordered_json qa_item_to_json(const QAItem& item) {
    nlohmann::ordered_json j;
    j["id"] = item.id;
    j["question"] = item.question;
    if (!item.options.empty()) {
        nlohmann::ordered_json opts;
        for (const auto& [label, text] : item.options) opts[label] = text;
        j["options"] = opts;
    }
    j["gold_answer"] = item.gold_answer;
    if (!item.key_doc_ids.empty()) j["key_doc_ids"] = item.key_doc_ids;
    return j;
}

inline void write_qa(const std::vector<QAItem>& items, std::ostream& out) {
    for (const auto& item : items) {
        out << qa_item_to_json(item).dump() << "\n";
    }
}

inline void write_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("corpus: cannot write '" + path + "'");
    }
    write_corpus(corpus, out);
}

inline void write_qa(const std::vector<QAItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("qa: cannot write '" + path + "'");
    }
    write_qa(items, out);
}

} // namespace briefcontext
