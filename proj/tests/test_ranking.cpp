#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "briefcontext/ranking.hpp"

namespace bc = briefcontext;
using Catch::Matchers::WithinAbs;

namespace {

bc::Corpus three_doc_corpus() {
    bc::Corpus corpus;
    corpus.add({"d1", "", "apple banana apple"});
    corpus.add({"d2", "", "banana cherry"});
    corpus.add({"d3", "", "cherry cherry cherry durian"});
    return corpus;
}

// Independent BM25 oracle, written from the formula with its own bookkeeping
// (ordered maps instead of hash maps, separate passes for df and tf).
std::map<std::string, double> bm25_oracle(const bc::Corpus& corpus, const std::string& query,
                                          double k1, double b) {
    const size_t n = corpus.size();
    std::map<std::string, size_t> df;
    std::vector<std::map<std::string, size_t>> tfs(n);
    std::vector<size_t> lens(n);
    size_t total = 0;
    for (size_t i = 0; i < n; ++i) {
        auto tokens = bc::tokenize(bc::indexing_text(corpus.at(i)));
        lens[i] = tokens.size();
        total += tokens.size();
        for (const auto& t : tokens) ++tfs[i][t];
        std::set<std::string> uniq(tokens.begin(), tokens.end());
        for (const auto& t : uniq) ++df[t];
    }
    const double avg = n > 0 ? static_cast<double>(total) / static_cast<double>(n) : 0.0;
    std::map<std::string, double> scores;
    for (size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (const auto& term : bc::tokenize(query)) {
            auto it = tfs[i].find(term);
            if (it == tfs[i].end()) continue;
            double d = static_cast<double>(df.at(term));
            double idf = std::log(1.0 + (static_cast<double>(n) - d + 0.5) / (d + 0.5));
            double f = static_cast<double>(it->second);
            s += idf * f * (k1 + 1.0) /
                 (f + k1 * (1.0 - b + b * (avg > 0.0 ? static_cast<double>(lens[i]) / avg : 0.0)));
        }
        scores[corpus.at(i).id] = s;
    }
    return scores;
}

std::string vocab_word(uint64_t i) { return "w" + std::to_string(i); }

bc::Corpus random_corpus(bc::SplitMix& rng, size_t n_docs, uint64_t vocab_size) {
    bc::Corpus corpus;
    for (size_t d = 0; d < n_docs; ++d) {
        std::string body;
        size_t len = 1 + rng.next_below(12);
        for (size_t t = 0; t < len; ++t) {
            if (t) body += " ";
            body += vocab_word(rng.next_below(vocab_size));
        }
        corpus.add({"doc-" + std::to_string(d), "", body});
    }
    return corpus;
}

} // namespace

TEST_CASE("hashing embedder is a normalized bag of words") {
    bc::HashingEmbedder embedder(64);
    CHECK(embedder.dimension() == 64);

    auto v = embedder.embed("Apple banana CHERRY");
    REQUIRE(v.size() == 64);
    double norm = 0.0;
    for (double x : v) norm += x * x;
    CHECK_THAT(norm, WithinAbs(1.0, 1e-12));

    CHECK(embedder.embed("apple banana") == embedder.embed("banana apple"));
    CHECK(embedder.embed("same text") == embedder.embed("same text"));

    auto zero = embedder.embed("");
    CHECK(std::all_of(zero.begin(), zero.end(), [](double x) { return x == 0.0; }));

    CHECK_THROWS_AS(bc::HashingEmbedder(0), bc::Error);
}

TEST_CASE("dense index preserves corpus order") {
    auto corpus = three_doc_corpus();
    bc::HashingEmbedder embedder(32);
    auto index = bc::build_dense_index(corpus, embedder);
    REQUIRE(index.size() == 3);
    CHECK(index.dimension == 32);
    CHECK(index.provider_tag == bc::HashingEmbedder::kProviderTag);
    CHECK(index.entries[0].first == "d1");
    CHECK(index.entries[1].first == "d2");
    CHECK(index.entries[2].first == "d3");
    CHECK(index.entries[0].second == embedder.embed("apple banana apple"));
}

TEST_CASE("dense retrieval matches an exhaustive scan oracle") {
    bc::SplitMix rng(0x9e3779b97f4a7c15ull);
    bc::HashingEmbedder embedder(48);
    for (int round = 0; round < 30; ++round) {
        auto corpus = random_corpus(rng, 4 + rng.next_below(20), 30);
        auto index = bc::build_dense_index(corpus, embedder);

        std::string query;
        size_t q_len = 1 + rng.next_below(5);
        for (size_t t = 0; t < q_len; ++t) {
            if (t) query += " ";
            query += vocab_word(rng.next_below(30));
        }
        size_t k = 1 + rng.next_below(corpus.size() + 3);

        auto ranking = bc::dense_retrieve(index, query, embedder, k);

        // Oracle: score everything, order by score then id, truncate.
        auto q = embedder.embed(query);
        std::vector<std::pair<std::string, double>> all;
        for (const auto& doc : corpus) {
            all.emplace_back(doc.id, bc::inner_product(embedder.embed(bc::indexing_text(doc)), q));
        }
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        if (all.size() > k) all.resize(k);

        REQUIRE(ranking.size() == all.size());
        for (size_t i = 0; i < all.size(); ++i) {
            CHECK(ranking.entries[i].id == all[i].first);
            CHECK_THAT(ranking.entries[i].score, WithinAbs(all[i].second, 1e-12));
        }
    }
}

TEST_CASE("dense retrieval argument validation") {
    auto corpus = three_doc_corpus();
    bc::HashingEmbedder embedder(32);
    auto index = bc::build_dense_index(corpus, embedder);
    CHECK_THROWS_AS(bc::dense_retrieve(index, "apple", embedder, 0), bc::Error);
    bc::HashingEmbedder other(16);
    CHECK_THROWS_AS(bc::dense_retrieve(index, "apple", other, 2), bc::Error);
    auto all = bc::dense_retrieve(index, "apple", embedder, 99);
    CHECK(all.size() == corpus.size());
    CHECK(all.source == bc::RankerKind::dense);
}

TEST_CASE("dense index save and load round trip") {
    namespace fs = std::filesystem;
    auto corpus = three_doc_corpus();
    bc::HashingEmbedder embedder(24);
    auto index = bc::build_dense_index(corpus, embedder);

    const std::string path = (fs::temp_directory_path() / "bc_test_index.jsonl").string();
    bc::save_dense_index(index, path);
    auto loaded = bc::load_dense_index(path);

    CHECK(loaded.dimension == index.dimension);
    CHECK(loaded.provider_tag == index.provider_tag);
    REQUIRE(loaded.size() == index.size());
    for (size_t i = 0; i < index.size(); ++i) {
        CHECK(loaded.entries[i].first == index.entries[i].first);
        CHECK(loaded.entries[i].second == index.entries[i].second); // exact doubles
    }
    std::remove(path.c_str());

    CHECK_THROWS_AS(bc::load_dense_index(path), bc::Error);
}

TEST_CASE("bm25 matches hand-computed scores") {
    auto corpus = three_doc_corpus();
    auto ranking = bc::bm25_rank(corpus, "apple cherry", bc::Bm25Params{}, 10);

    // N=3, df(apple)=1, df(cherry)=2, lengths 3/2/4, avgdl=3, k1=1.2, b=0.75.
    // idf(apple)=ln(1+2.5/1.5), idf(cherry)=ln(1.6); worked through by hand:
    //   d1 = 0.9808293 * 4.4/3.2        = 1.3486403
    //   d2 = 0.4700036 * 2.2/1.9        = 0.5442147
    //   d3 = 0.4700036 * 6.6/4.5        = 0.6893387
    REQUIRE(ranking.size() == 3);
    CHECK(ranking.entries[0].id == "d1");
    CHECK_THAT(ranking.entries[0].score, WithinAbs(1.3486403, 1e-6));
    CHECK(ranking.entries[1].id == "d3");
    CHECK_THAT(ranking.entries[1].score, WithinAbs(0.6893387, 1e-6));
    CHECK(ranking.entries[2].id == "d2");
    CHECK_THAT(ranking.entries[2].score, WithinAbs(0.5442147, 1e-6));
    CHECK(ranking.source == bc::RankerKind::bm25);
}

TEST_CASE("bm25 rerank mode keeps full-corpus statistics") {
    auto corpus = three_doc_corpus();
    auto full = bc::bm25_rank(corpus, "apple cherry", bc::Bm25Params{}, 10);
    std::unordered_set<std::string> candidates{"d2", "d3"};
    auto rerank = bc::bm25_rank(corpus, "apple cherry", bc::Bm25Params{}, candidates, 10);

    REQUIRE(rerank.size() == 2);
    CHECK(rerank.entries[0].id == "d3");
    CHECK(rerank.entries[1].id == "d2");
    // Scores must equal the full-mode scores for the same documents: df and
    // average length do not change when only a subset is scored.
    for (const auto& e : rerank.entries) {
        auto it = std::find_if(full.entries.begin(), full.entries.end(),
                               [&](const bc::RankedDoc& f) { return f.id == e.id; });
        REQUIRE(it != full.entries.end());
        CHECK_THAT(e.score, WithinAbs(it->score, 1e-12));
    }
}

TEST_CASE("bm25 agrees with an independent oracle on random corpora") {
    bc::SplitMix rng(0x51afb0c1d2e3f405ull);
    for (int round = 0; round < 30; ++round) {
        auto corpus = random_corpus(rng, 3 + rng.next_below(15), 12);
        std::string query;
        size_t q_len = 1 + rng.next_below(4);
        for (size_t t = 0; t < q_len; ++t) {
            if (t) query += " ";
            query += vocab_word(rng.next_below(12));
        }
        auto expected = bm25_oracle(corpus, query, 1.2, 0.75);
        auto ranking = bc::bm25_rank(corpus, query, bc::Bm25Params{}, corpus.size());
        REQUIRE(ranking.size() == corpus.size());
        for (size_t i = 0; i < ranking.size(); ++i) {
            CHECK_THAT(ranking.entries[i].score, WithinAbs(expected.at(ranking.entries[i].id), 1e-9));
            if (i > 0) {
                CHECK(ranking.entries[i - 1].score >= ranking.entries[i].score);
                if (ranking.entries[i - 1].score == ranking.entries[i].score) {
                    CHECK(ranking.entries[i - 1].id < ranking.entries[i].id);
                }
            }
        }
    }
}

TEST_CASE("bm25 argument validation") {
    auto corpus = three_doc_corpus();
    CHECK_THROWS_AS(bc::bm25_rank(corpus, "q", bc::Bm25Params{0.0, 0.75}, 5), bc::Error);
    CHECK_THROWS_AS(bc::bm25_rank(corpus, "q", bc::Bm25Params{1.2, 1.5}, 5), bc::Error);
    CHECK_THROWS_AS(bc::bm25_rank(corpus, "q", bc::Bm25Params{1.2, -0.1}, 5), bc::Error);
    CHECK_THROWS_AS(bc::bm25_rank(corpus, "q", bc::Bm25Params{}, 0), bc::Error);
    std::unordered_set<std::string> bad{"nope"};
    CHECK_THROWS_AS(bc::bm25_rank(corpus, "q", bc::Bm25Params{}, bad, 5), bc::Error);
}

TEST_CASE("rrf fusion scores by reciprocal rank") {
    bc::Ranking a;
    a.entries = {{"x", 0.9}, {"y", 0.8}, {"z", 0.7}};
    bc::Ranking b;
    b.entries = {{"x", 12.0}, {"w", 11.0}, {"y", 10.0}};

    auto fused = bc::rrf_fuse({a, b}, 60.0);
    REQUIRE(fused.size() == 4);
    CHECK(fused.source == bc::RankerKind::rrf);
    CHECK(fused.entries[0].id == "x");
    CHECK_THAT(fused.entries[0].score, WithinAbs(1.0 / 61.0 + 1.0 / 61.0, 1e-12));
    CHECK(fused.entries[1].id == "y");
    CHECK_THAT(fused.entries[1].score, WithinAbs(1.0 / 62.0 + 1.0 / 63.0, 1e-12));
    CHECK(fused.entries[2].id == "w");
    CHECK_THAT(fused.entries[2].score, WithinAbs(1.0 / 62.0, 1e-12));
    CHECK(fused.entries[3].id == "z");
    CHECK_THAT(fused.entries[3].score, WithinAbs(1.0 / 63.0, 1e-12));
}

TEST_CASE("rrf ties break by ascending id") {
    bc::Ranking a;
    a.entries = {{"b", 2.0}, {"a", 1.0}};
    bc::Ranking b;
    b.entries = {{"a", 2.0}, {"b", 1.0}};
    auto fused = bc::rrf_fuse({a, b}, 60.0);
    REQUIRE(fused.size() == 2);
    CHECK(fused.entries[0].id == "a");
    CHECK(fused.entries[1].id == "b");
    CHECK(fused.entries[0].score == fused.entries[1].score);
}

TEST_CASE("rrf over a single ranking preserves its order") {
    bc::Ranking a;
    for (int i = 0; i < 10; ++i) {
        a.entries.push_back({"doc-" + std::to_string(i), 10.0 - i});
    }
    auto fused = bc::rrf_fuse({a}, 60.0);
    REQUIRE(fused.size() == a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(fused.entries[i].id == a.entries[i].id);
    }
}

TEST_CASE("rrf argument validation") {
    CHECK_THROWS_AS(bc::rrf_fuse({}, 60.0), bc::Error);
    bc::Ranking a;
    a.entries = {{"x", 1.0}};
    CHECK_THROWS_AS(bc::rrf_fuse({a}, 0.0), bc::Error);
}

TEST_CASE("synthetic ranking places the key block exactly") {
    std::vector<std::string> fillers{"f0", "f1", "f2", "f3", "f4", "f5"};

    SECTION("single key in the middle") {
        auto r = bc::make_synthetic_ranking({"key"}, fillers, 5, 2);
        REQUIRE(r.size() == 5);
        CHECK(r.entries[0].id == "f0");
        CHECK(r.entries[1].id == "f1");
        CHECK(r.entries[2].id == "key");
        CHECK(r.entries[3].id == "f2");
        CHECK(r.entries[4].id == "f3");
        for (size_t i = 0; i < 5; ++i) {
            CHECK(r.entries[i].score == static_cast<double>(5 - i));
        }
        CHECK(r.source == bc::RankerKind::synthetic);
    }

    SECTION("key block of two at the start and end") {
        auto front = bc::make_synthetic_ranking({"k1", "k2"}, fillers, 4, 0);
        CHECK(front.top_ids(4) == std::vector<std::string>{"k1", "k2", "f0", "f1"});
        auto back = bc::make_synthetic_ranking({"k1", "k2"}, fillers, 4, 2);
        CHECK(back.top_ids(4) == std::vector<std::string>{"f0", "f1", "k1", "k2"});
    }

    SECTION("validation") {
        CHECK_THROWS_AS(bc::make_synthetic_ranking({}, fillers, 5, 0), bc::Error);
        CHECK_THROWS_AS(bc::make_synthetic_ranking({"k"}, fillers, 5, 5), bc::Error);
        CHECK_THROWS_AS(bc::make_synthetic_ranking({"a", "b", "c"}, fillers, 2, 0), bc::Error);
        CHECK_THROWS_AS(bc::make_synthetic_ranking({"k"}, {"f0"}, 5, 0), bc::Error);
    }
}

TEST_CASE("top_ids truncates to available entries") {
    bc::Ranking r;
    r.entries = {{"a", 3.0}, {"b", 2.0}};
    CHECK(r.top_ids(1) == std::vector<std::string>{"a"});
    CHECK(r.top_ids(5) == std::vector<std::string>{"a", "b"});
    CHECK(r.top_ids(0).empty());
}
