#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "briefcontext/corpus.hpp"
#include "briefcontext/text.hpp"

namespace briefcontext {

enum class RankerKind { dense, bm25, rrf, synthetic };

inline const char* to_string(RankerKind kind) {
    switch (kind) {
        case RankerKind::dense: return "dense";
        case RankerKind::bm25: return "bm25";
        case RankerKind::rrf: return "rrf";
        case RankerKind::synthetic: return "synthetic";
    }
    return "unknown";
}

inline RankerKind ranker_kind_from_string(const std::string& s) {
    if (s == "dense") return RankerKind::dense;
    if (s == "bm25") return RankerKind::bm25;
    if (s == "rrf") return RankerKind::rrf;
    if (s == "synthetic") return RankerKind::synthetic;
    throw Error("unknown ranker kind '" + s + "'");
}

struct RankedDoc {
    std::string id;
    double score = 0.0;
};

/// Relevance-ordered document list. Scores are non-increasing and ids are
/// distinct; ties are broken by ascending id so every ranking is a total
/// deterministic order.
struct Ranking {
    std::vector<RankedDoc> entries;
    RankerKind source = RankerKind::dense;

    size_t size() const { return entries.size(); }
    bool empty() const { return entries.empty(); }

    /// Ids of the first min(n, size) entries.
    std::vector<std::string> top_ids(size_t n) const {
        size_t m = std::min(n, entries.size());
        std::vector<std::string> ids;
        ids.reserve(m);
        for (size_t i = 0; i < m; ++i) ids.push_back(entries[i].id);
        return ids;
    }
};

namespace detail {

inline void sort_ranked(std::vector<RankedDoc>& entries) {
    std::sort(entries.begin(), entries.end(), [](const RankedDoc& a, const RankedDoc& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
}

inline void check_ranking_invariants(const Ranking& r, const char* op) {
    std::unordered_set<std::string> seen;
    for (size_t i = 0; i < r.entries.size(); ++i) {
        if (!seen.insert(r.entries[i].id).second) {
            throw Error(std::string(op) + ": duplicate document id '" + r.entries[i].id +
                        "' in ranking");
        }
        if (i > 0 && r.entries[i - 1].score < r.entries[i].score) {
            throw Error(std::string(op) + ": ranking scores increase at position " +
                        std::to_string(i));
        }
    }
}

} // namespace detail

// ---------------------------------------------------------------------------
// Dense retrieval
// ---------------------------------------------------------------------------

/// Maps text to a fixed-dimension vector. Implementations used in tests
/// must be deterministic: the same text always embeds to the same vector.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual size_t dimension() const = 0;
    virtual std::vector<double> embed(const std::string& text) const = 0;
};

/// Deterministic bag-of-words hashing embedder: each token is hashed into
/// one of `dimension` buckets and the count vector is L2-normalized.
class HashingEmbedder final : public EmbeddingProvider {
public:
    explicit HashingEmbedder(size_t dimension = 256) : dimension_(dimension) {
        if (dimension_ == 0) {
            throw Error("embedder: dimension must be positive");
        }
    }

    size_t dimension() const override { return dimension_; }

    std::vector<double> embed(const std::string& text) const override {
        std::vector<double> v(dimension_, 0.0);
        for (const auto& token : tokenize(text)) {
            v[fnv1a64(token) % dimension_] += 1.0;
        }
        double norm_sq = 0.0;
        for (double x : v) norm_sq += x * x;
        if (norm_sq > 0.0) {
            double inv = 1.0 / std::sqrt(norm_sq);
            for (double& x : v) x *= inv;
        }
        return v;
    }

    static constexpr const char* kProviderTag = "bow_hash_v1";

private:
    size_t dimension_;
};

/// Encoded knowledge base: one vector per document, in corpus order.
struct DenseIndex {
    size_t dimension = 0;
    std::string provider_tag;
    std::vector<std::pair<std::string, std::vector<double>>> entries;

    size_t size() const { return entries.size(); }
};

inline DenseIndex build_dense_index(const Corpus& corpus, const EmbeddingProvider& provider,
                                    std::string provider_tag = HashingEmbedder::kProviderTag) {
    if (provider.dimension() == 0) {
        throw Error("dense index: provider dimension must be positive");
    }
    DenseIndex index;
    index.dimension = provider.dimension();
    index.provider_tag = std::move(provider_tag);
    index.entries.reserve(corpus.size());
    for (const auto& doc : corpus) {
        std::vector<double> v;
        try {
            v = provider.embed(indexing_text(doc));
        } catch (const std::exception& e) {
            throw Error("dense index: embedding failed for document '" + doc.id + "': " + e.what());
        }
        if (v.size() != index.dimension) {
            throw Error("dense index: provider returned dimension " + std::to_string(v.size()) +
                        " for document '" + doc.id + "', expected " +
                        std::to_string(index.dimension));
        }
        index.entries.emplace_back(doc.id, std::move(v));
    }
    return index;
}

inline double inner_product(const std::vector<double>& a, const std::vector<double>& b) {
    double sum = 0.0;
    for (size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

/// Exhaustive inner-product scan: scores every entry against the embedded
/// query and returns the top min(k, index size) documents.
inline Ranking dense_retrieve(const DenseIndex& index, const std::string& query,
                              const EmbeddingProvider& provider, size_t k) {
    if (k == 0) {
        throw Error("dense_retrieve: k must be positive");
    }
    if (provider.dimension() != index.dimension) {
        throw Error("dense_retrieve: provider dimension " + std::to_string(provider.dimension()) +
                    " does not match index dimension " + std::to_string(index.dimension));
    }
    std::vector<double> q = provider.embed(query);
    if (q.size() != index.dimension) {
        throw Error("dense_retrieve: query embedding has wrong dimension");
    }
    Ranking ranking;
    ranking.source = RankerKind::dense;
    ranking.entries.reserve(index.entries.size());
    for (const auto& [id, vec] : index.entries) {
        ranking.entries.push_back({id, inner_product(vec, q)});
    }
    detail::sort_ranked(ranking.entries);
    if (ranking.entries.size() > k) ranking.entries.resize(k);
    return ranking;
}

// Index persistence: JSONL sidecar with a header line, then one line per
// entry. Doubles survive the round trip exactly (shortest-repr output).

inline void save_dense_index(const DenseIndex& index, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw Error("dense index: cannot write '" + path + "'");
    }
    nlohmann::ordered_json header;
    header["dimension"] = index.dimension;
    header["provider"] = index.provider_tag;
    header["count"] = index.entries.size();
    out << header.dump() << "\n";
    for (const auto& [id, vec] : index.entries) {
        nlohmann::ordered_json line;
        line["id"] = id;
        line["vector"] = vec;
        out << line.dump() << "\n";
    }
}

inline DenseIndex load_dense_index(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("dense index: cannot open '" + path + "'");
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw Error("dense index: '" + path + "' is empty");
    }
    nlohmann::json header = nlohmann::json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("dimension")) {
        throw Error("dense index: '" + path + "' has a malformed header");
    }
    DenseIndex index;
    index.dimension = header["dimension"].get<size_t>();
    index.provider_tag = header.value("provider", std::string{});
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw Error("dense index: " + path + ":" + std::to_string(line_no) +
                        ": malformed entry");
        }
        std::string id = j.at("id").get<std::string>();
        std::vector<double> vec = j.at("vector").get<std::vector<double>>();
        if (vec.size() != index.dimension) {
            throw Error("dense index: entry '" + id + "' has dimension " +
                        std::to_string(vec.size()) + ", expected " +
                        std::to_string(index.dimension));
        }
        index.entries.emplace_back(std::move(id), std::move(vec));
    }
    if (header.contains("count") && header["count"].get<size_t>() != index.entries.size()) {
        throw Error("dense index: '" + path + "' count header does not match entries");
    }
    return index;
}

// ---------------------------------------------------------------------------
// BM25
// ---------------------------------------------------------------------------

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

/// Okapi BM25 over tokenized title+body. Document-frequency statistics are
/// always computed over the full corpus, also in rerank mode, where only
/// `candidate_ids` are scored and returned. idf = ln(1 + (N-df+0.5)/(df+0.5)).
inline Ranking bm25_rank(const Corpus& corpus, const std::string& query, const Bm25Params& params,
                         const std::optional<std::unordered_set<std::string>>& candidate_ids,
                         size_t k) {
    if (params.k1 <= 0.0) {
        throw Error("bm25: k1 must be > 0");
    }
    if (params.b < 0.0 || params.b > 1.0) {
        throw Error("bm25: b must be in [0,1]");
    }
    if (k == 0) {
        throw Error("bm25: k must be positive");
    }
    if (candidate_ids) {
        for (const auto& id : *candidate_ids) {
            if (!corpus.contains(id)) {
                throw Error("bm25: unknown candidate id '" + id + "'");
            }
        }
    }

    Ranking ranking;
    ranking.source = RankerKind::bm25;
    if (corpus.empty()) return ranking;

    const std::vector<std::string> query_tokens = tokenize(query);

    // Corpus-wide statistics.
    std::vector<std::unordered_map<std::string, size_t>> term_freqs;
    std::vector<size_t> lengths;
    term_freqs.reserve(corpus.size());
    lengths.reserve(corpus.size());
    std::unordered_map<std::string, size_t> doc_freq;
    size_t total_length = 0;
    for (const auto& doc : corpus) {
        std::unordered_map<std::string, size_t> tf;
        for (const auto& token : tokenize(indexing_text(doc))) {
            ++tf[token];
        }
        for (const auto& [term, unused] : tf) {
            (void)unused;
            ++doc_freq[term];
        }
        lengths.push_back([&] {
            size_t n = 0;
            for (const auto& [t, c] : tf) {
                (void)t;
                n += c;
            }
            return n;
        }());
        term_freqs.push_back(std::move(tf));
        total_length += lengths.back();
    }
    const double n_docs = static_cast<double>(corpus.size());
    const double avg_len = total_length > 0 ? static_cast<double>(total_length) / n_docs : 0.0;

    auto score_doc = [&](size_t doc_index) {
        const auto& tf = term_freqs[doc_index];
        const double len = static_cast<double>(lengths[doc_index]);
        double score = 0.0;
        for (const auto& term : query_tokens) {
            auto tf_it = tf.find(term);
            if (tf_it == tf.end()) continue;
            const double df = static_cast<double>(doc_freq[term]);
            const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
            const double f = static_cast<double>(tf_it->second);
            const double denom =
                f + params.k1 * (1.0 - params.b + params.b * (avg_len > 0.0 ? len / avg_len : 0.0));
            score += idf * (f * (params.k1 + 1.0)) / denom;
        }
        return score;
    };

    for (size_t i = 0; i < corpus.size(); ++i) {
        const std::string& id = corpus.at(i).id;
        if (candidate_ids && candidate_ids->count(id) == 0) continue;
        ranking.entries.push_back({id, score_doc(i)});
    }
    detail::sort_ranked(ranking.entries);
    if (ranking.entries.size() > k) ranking.entries.resize(k);
    return ranking;
}

inline Ranking bm25_rank(const Corpus& corpus, const std::string& query, const Bm25Params& params,
                         size_t k) {
    return bm25_rank(corpus, query, params, std::nullopt, k);
}

// ---------------------------------------------------------------------------
// Reciprocal rank fusion
// ---------------------------------------------------------------------------

/// Each document scores sum over rankings of 1/(k_rrf + position), with
/// 1-based positions; documents absent from a ranking contribute nothing.
inline Ranking rrf_fuse(const std::vector<Ranking>& rankings, double k_rrf) {
    if (rankings.empty()) {
        throw Error("rrf_fuse: at least one ranking required");
    }
    if (k_rrf <= 0.0) {
        throw Error("rrf_fuse: k_rrf must be positive");
    }
    std::unordered_map<std::string, double> accum;
    std::vector<std::string> order; // first-seen order, for deterministic iteration
    for (const auto& ranking : rankings) {
        for (size_t pos = 0; pos < ranking.entries.size(); ++pos) {
            const auto& id = ranking.entries[pos].id;
            auto [it, inserted] = accum.try_emplace(id, 0.0);
            if (inserted) order.push_back(id);
            it->second += 1.0 / (k_rrf + static_cast<double>(pos + 1));
        }
    }
    Ranking fused;
    fused.source = RankerKind::rrf;
    fused.entries.reserve(order.size());
    for (const auto& id : order) {
        fused.entries.push_back({id, accum[id]});
    }
    detail::sort_ranked(fused.entries);
    return fused;
}

// ---------------------------------------------------------------------------
// Synthetic rankings
// ---------------------------------------------------------------------------

/// Builds a length-k ranking with `key_ids` occupying consecutive positions
/// starting at `key_position_index` and fillers elsewhere in their given
/// order. Scores are rank-derived placeholders (k - position).
inline Ranking make_synthetic_ranking(const std::vector<std::string>& key_ids,
                                      const std::vector<std::string>& filler_ids, size_t k,
                                      size_t key_position_index) {
    if (key_ids.empty()) {
        throw Error("synthetic ranking: key_ids must be non-empty");
    }
    if (key_ids.size() > k) {
        throw Error("synthetic ranking: more key ids than positions");
    }
    if (key_position_index > k - key_ids.size()) {
        throw Error("synthetic ranking: key position " + std::to_string(key_position_index) +
                    " does not fit " + std::to_string(key_ids.size()) + " key ids in k=" +
                    std::to_string(k));
    }
    const size_t fillers_needed = k - key_ids.size();
    if (filler_ids.size() < fillers_needed) {
        throw Error("synthetic ranking: insufficient fillers (" +
                    std::to_string(filler_ids.size()) + " given, " +
                    std::to_string(fillers_needed) + " needed)");
    }
    Ranking ranking;
    ranking.source = RankerKind::synthetic;
    ranking.entries.reserve(k);
    size_t filler_next = 0;
    for (size_t pos = 0; pos < k; ++pos) {
        const bool in_key_block =
            pos >= key_position_index && pos < key_position_index + key_ids.size();
        const std::string& id =
            in_key_block ? key_ids[pos - key_position_index] : filler_ids[filler_next++];
        ranking.entries.push_back({id, static_cast<double>(k - pos)});
    }
    detail::check_ranking_invariants(ranking, "synthetic ranking");
    return ranking;
}

} // namespace briefcontext
