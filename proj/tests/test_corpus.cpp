#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "briefcontext/corpus.hpp"

namespace bc = briefcontext;

TEST_CASE("ingest_corpus reads JSONL documents") {
    std::istringstream in(
        R"({"id": "d1", "title": "Alpha", "text": "first body"})" "\n"
        R"({"id": "d2", "text": "second body"})" "\n"
        "\n"
        R"({"id": "d3", "title": "", "text": "third body"})" "\n");
    auto corpus = bc::ingest_corpus(in, "mem.jsonl");
    REQUIRE(corpus.size() == 3);
    CHECK(corpus.at(0).id == "d1");
    CHECK(corpus.at(0).title == "Alpha");
    CHECK(corpus.at(0).body == "first body");
    CHECK(corpus.at(1).title.empty());
    CHECK(corpus.at(2).id == "d3");
    CHECK(corpus.contains("d2"));
    CHECK_FALSE(corpus.contains("d4"));
}

TEST_CASE("ingest_corpus errors carry path and line number") {
    SECTION("duplicate id") {
        std::istringstream in(
            R"({"id": "d1", "text": "a"})" "\n"
            R"({"id": "d1", "text": "b"})" "\n");
        try {
            bc::ingest_corpus(in, "dup.jsonl");
            FAIL("expected Error");
        } catch (const bc::Error& e) {
            std::string msg = e.what();
            CHECK(msg.find("dup.jsonl:2") != std::string::npos);
            CHECK(msg.find("d1") != std::string::npos);
        }
    }
    SECTION("missing text field") {
        std::istringstream in(R"({"id": "d1"})" "\n");
        try {
            bc::ingest_corpus(in, "net.jsonl");
            FAIL("expected Error");
        } catch (const bc::Error& e) {
            CHECK(std::string(e.what()).find("net.jsonl:1") != std::string::npos);
        }
    }
    SECTION("malformed json") {
        std::istringstream in("{not json\n");
        CHECK_THROWS_AS(bc::ingest_corpus(in, "bad.jsonl"), bc::Error);
    }
    SECTION("empty body") {
        std::istringstream in(R"({"id": "d1", "text": ""})" "\n");
        CHECK_THROWS_AS(bc::ingest_corpus(in, "empty.jsonl"), bc::Error);
    }
}

TEST_CASE("Corpus::add rejects bad documents") {
    bc::Corpus corpus;
    CHECK_THROWS_AS(corpus.add({"", "t", "body"}), bc::Error);
    CHECK_THROWS_AS(corpus.add({"d1", "t", ""}), bc::Error);
    corpus.add({"d1", "t", "body"});
    CHECK_THROWS_AS(corpus.add({"d1", "t", "other"}), bc::Error);
}

TEST_CASE("indexing_text joins title and body") {
    CHECK(bc::indexing_text({"d", "Heat pumps", "Move heat."}) == "Heat pumps\nMove heat.");
    CHECK(bc::indexing_text({"d", "", "Body only."}) == "Body only.");
}

TEST_CASE("corpus round trip through write and ingest") {
    bc::Corpus original;
    original.add({"a", "First", "alpha beta"});
    original.add({"b", "", "gamma"});
    original.add({"c", "Third", "delta epsilon zeta"});

    std::ostringstream out;
    bc::write_corpus(original, out);
    std::istringstream in(out.str());
    auto restored = bc::ingest_corpus(in, "roundtrip.jsonl");

    REQUIRE(restored.size() == original.size());
    for (std::size_t i = 0; i < original.size(); ++i) {
        CHECK(restored.at(i).id == original.at(i).id);
        CHECK(restored.at(i).title == original.at(i).title);
        CHECK(restored.at(i).body == original.at(i).body);
    }
}

TEST_CASE("document_to_json omits empty title") {
    auto with_title = bc::document_to_json({"d", "T", "b"});
    CHECK(with_title.contains("title"));
    auto without = bc::document_to_json({"d", "", "b"});
    CHECK_FALSE(without.contains("title"));
}

TEST_CASE("by_id finds every added document") {
    bc::Corpus corpus;
    for (int i = 0; i < 50; ++i) {
        corpus.add({"doc-" + std::to_string(i), "", "body " + std::to_string(i)});
    }
    for (int i = 0; i < 50; ++i) {
        const std::string id = "doc-" + std::to_string(i);
        const auto* doc = corpus.find(id);
        REQUIRE(doc != nullptr);
        CHECK(doc->id == id);
        CHECK(corpus.by_id(id).body == "body " + std::to_string(i));
    }
    CHECK(corpus.find("doc-50") == nullptr);
    CHECK_THROWS_AS(corpus.by_id("doc-50"), bc::Error);
}

TEST_CASE("ingest_qa reads multiple choice items") {
    std::istringstream in(
        R"({"id": "q1", "question": "Which?", "options": {"A": "one", "B": "two"}, "gold_answer": "B", "key_doc_ids": ["d1", "d2"]})" "\n"
        R"({"id": "q2", "question": "Explain.", "gold_answer": "a free text answer", "key_doc_ids": ["d3"]})" "\n");
    auto items = bc::ingest_qa(in, "qa.jsonl");
    REQUIRE(items.size() == 2);
    CHECK(items[0].id == "q1");
    CHECK(items[0].options.size() == 2);
    CHECK(items[0].gold_answer == "B");
    CHECK(items[0].key_doc_ids == std::vector<std::string>{"d1", "d2"});
    CHECK_FALSE(items[0].open_ended());
    CHECK(items[1].open_ended());
    CHECK(items[1].options.empty());
}

TEST_CASE("ingest_qa errors name the offending item") {
    SECTION("gold answer not an option label") {
        std::istringstream in(
            R"({"id": "q1", "question": "?", "options": {"A": "x"}, "gold_answer": "B", "key_doc_ids": ["d1"]})" "\n");
        try {
            bc::ingest_qa(in, "qa.jsonl");
            FAIL("expected Error");
        } catch (const bc::Error& e) {
            CHECK(std::string(e.what()).find("q1") != std::string::npos);
        }
    }
    SECTION("option label must be a single uppercase letter") {
        std::istringstream in(
            R"({"id": "q2", "question": "?", "options": {"AA": "x"}, "gold_answer": "AA", "key_doc_ids": ["d1"]})" "\n");
        CHECK_THROWS_AS(bc::ingest_qa(in, "qa.jsonl"), bc::Error);
        std::istringstream lower(
            R"({"id": "q3", "question": "?", "options": {"a": "x"}, "gold_answer": "a", "key_doc_ids": ["d1"]})" "\n");
        CHECK_THROWS_AS(bc::ingest_qa(lower, "qa.jsonl"), bc::Error);
    }
    SECTION("duplicate key doc ids") {
        std::istringstream in(
            R"({"id": "q4", "question": "?", "options": {"A": "x"}, "gold_answer": "A", "key_doc_ids": ["d1", "d1"]})" "\n");
        try {
            bc::ingest_qa(in, "qa.jsonl");
            FAIL("expected Error");
        } catch (const bc::Error& e) {
            CHECK(std::string(e.what()).find("q4") != std::string::npos);
        }
    }
    SECTION("duplicate item id") {
        std::istringstream in(
            R"({"id": "q5", "question": "?", "options": {"A": "x"}, "gold_answer": "A", "key_doc_ids": ["d1"]})" "\n"
            R"({"id": "q5", "question": "?", "options": {"A": "x"}, "gold_answer": "A", "key_doc_ids": ["d1"]})" "\n");
        CHECK_THROWS_AS(bc::ingest_qa(in, "qa.jsonl"), bc::Error);
    }
    SECTION("missing gold answer") {
        std::istringstream in(
            R"({"id": "q6", "question": "?", "options": {"A": "x"}, "key_doc_ids": ["d1"]})" "\n");
        CHECK_THROWS_AS(bc::ingest_qa(in, "qa.jsonl"), bc::Error);
    }
}

TEST_CASE("qa round trip through write and ingest") {
    std::vector<bc::QAItem> original;
    original.push_back({"q1", "Which?", {{"A", "one"}, {"B", "two"}, {"C", "three"}}, "C", {"d1"}});
    original.push_back({"q2", "Describe the process.", {}, "through staged filtering", {"d2", "d3"}});

    std::ostringstream out;
    bc::write_qa(original, out);
    std::istringstream in(out.str());
    auto restored = bc::ingest_qa(in, "roundtrip.jsonl");

    REQUIRE(restored.size() == original.size());
    for (std::size_t i = 0; i < original.size(); ++i) {
        CHECK(restored[i].id == original[i].id);
        CHECK(restored[i].question == original[i].question);
        CHECK(restored[i].options == original[i].options);
        CHECK(restored[i].gold_answer == original[i].gold_answer);
        CHECK(restored[i].key_doc_ids == original[i].key_doc_ids);
    }
}
