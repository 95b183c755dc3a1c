#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <briefcontext/briefcontext.hpp>

namespace bc = briefcontext;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct GlobalFlags {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<std::string> backend;
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    std::optional<size_t> parallelism;
};

void apply_flag_overrides(bc::RunConfig& config, const GlobalFlags& flags) {
    if (flags.seed) config.seed = *flags.seed;
    if (flags.output_dir) config.output_dir = *flags.output_dir;
    if (flags.backend) config.backend.kind = bc::backend_kind_from_string(*flags.backend);
    if (flags.endpoint) config.backend.wire.endpoint = *flags.endpoint;
    if (flags.model) config.backend.wire.model = *flags.model;
    if (flags.parallelism) {
        config.pipeline.parallelism = *flags.parallelism;
        config.backend.wire.parallelism = *flags.parallelism;
    }
}

bc::RunConfig resolve_config(const GlobalFlags& flags) {
    bc::RunConfig config;
    if (!flags.config_path.empty()) {
        config = bc::load_run_config(flags.config_path);
    }
    apply_flag_overrides(config, flags);
    bc::finalize_run_config(config);
    return config;
}

std::string default_index_path(const bc::RunConfig& config) {
    if (!config.index_cache_path.empty()) return config.index_cache_path;
    return (fs::path(config.output_dir) / "dense_index.jsonl").string();
}

/// Loads the persisted dense index when it matches the corpus, otherwise
/// embeds from scratch in memory.
bc::DenseIndex obtain_index(const bc::Corpus& corpus, const bc::EmbeddingProvider& provider,
                            const std::string& cache_path) {
    if (!cache_path.empty() && fs::exists(cache_path)) {
        bc::DenseIndex index = bc::load_dense_index(cache_path);
        if (index.dimension == provider.dimension() && index.size() == corpus.size()) {
            return index;
        }
        std::cerr << "note: index cache '" << cache_path
                  << "' does not match the corpus; re-embedding\n";
    }
    return bc::build_dense_index(corpus, provider);
}

std::string utc_timestamp() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof(buffer), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

void print_report_headline(const bc::ExperimentReport& report) {
    std::printf("experiment: %s  (items: %zu, skipped: %zu)\n", report.kind.c_str(),
                report.items_total, report.items_skipped);
    std::printf("%-14s %-14s %6s %11s %7s %9s %9s\n", "group", "mode", "top_k", "percentile",
                "items", "correct", "accuracy");
    for (const auto& cell : report.cells) {
        std::string percentile = cell.percentile >= 0 ? std::to_string(cell.percentile) : "-";
        std::printf("%-14s %-14s %6zu %11s %7zu %9zu %8.2f%%\n", cell.group.c_str(),
                    cell.mode.c_str(), cell.top_k, percentile.c_str(), cell.items, cell.correct,
                    100.0 * cell.accuracy());
    }
    if (report.conflict) {
        const auto& c = *report.conflict;
        std::printf("conflicts: %zu (resolved %zu, %.2f%%)  win/tie/lose: %zu/%zu/%zu "
                    "(%.2f%%/%.2f%%/%.2f%%)\n",
                    c.conflict_cases, c.resolved, 100.0 * c.resolved_rate(), c.win, c.tie, c.lose,
                    c.win_pct(), c.tie_pct(), c.lose_pct());
    }
    if (report.preflight) {
        const auto& p = *report.preflight;
        std::printf("preflight confusion: TP=%zu FP=%zu FN=%zu TN=%zu\n", p.counts.tp,
                    p.counts.fp, p.counts.fn, p.counts.tn);
        std::printf("preflight metrics: precision %.2f%%  recall %.2f%%  F1 %.2f%%  "
                    "TN-rate %.2f%%\n",
                    100.0 * p.precision, 100.0 * p.recall, 100.0 * p.f1,
                    100.0 * p.true_negative_rate);
    }
    std::printf("backend requests: %llu  input tokens: %llu  output tokens: %llu\n",
                static_cast<unsigned long long>(report.totals.requests),
                static_cast<unsigned long long>(report.totals.input_tokens.value),
                static_cast<unsigned long long>(report.totals.output_tokens.value));
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw bc::Error("cannot write '" + path + "'");
    }
    out << content;
}

int cmd_ingest(const bc::RunConfig& config, const std::string& corpus_flag, bool force) {
    std::string corpus_path = corpus_flag.empty() ? config.corpus_path : corpus_flag;
    if (corpus_path.empty()) {
        std::cerr << "error: no corpus file given (--corpus or config field 'corpus')\n";
        return kExitUsage;
    }
    std::string index_path = default_index_path(config);
    if (fs::exists(index_path) && !force) {
        std::cerr << "error: index cache '" << index_path
                  << "' already exists; pass --force to rebuild\n";
        return kExitUsage;
    }
    bc::Corpus corpus = bc::ingest_corpus(corpus_path);
    bc::HashingEmbedder embedder(config.embedder_dimension);
    bc::DenseIndex index = bc::build_dense_index(corpus, embedder);
    fs::create_directories(fs::path(index_path).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(index_path).parent_path());
    bc::save_dense_index(index, index_path);
    std::printf("ingested %zu documents; dense index written to %s\n", corpus.size(),
                index_path.c_str());
    return kExitOk;
}

int cmd_answer(const bc::RunConfig& config, const std::string& question,
               const std::string& item_id, const std::string& mode_name, bool show_trace) {
    if (config.corpus_path.empty()) {
        std::cerr << "error: config field 'corpus' is required for answer\n";
        return kExitUsage;
    }
    bc::Corpus corpus = bc::ingest_corpus(config.corpus_path);
    std::vector<bc::QAItem> items;
    if (!config.qa_path.empty()) {
        items = bc::ingest_qa(config.qa_path);
    }

    bc::QAItem item;
    if (!item_id.empty()) {
        auto it = std::find_if(items.begin(), items.end(),
                               [&](const bc::QAItem& qa) { return qa.id == item_id; });
        if (it == items.end()) {
            std::cerr << "error: no QA item with id '" << item_id << "'\n";
            return kExitUsage;
        }
        item = *it;
    } else if (!question.empty()) {
        item.id = "adhoc";
        item.question = question;
        items.push_back(item);
    } else {
        std::cerr << "error: pass --item <id> or --question <text>\n";
        return kExitUsage;
    }

    bc::AnswerMode mode = bc::answer_mode_from_string(mode_name);
    bc::HashingEmbedder embedder(config.embedder_dimension);
    bc::DenseIndex index = obtain_index(corpus, embedder, config.index_cache_path);
    bc::RetrievalStack stack{&corpus, &index, &embedder, config.bm25};
    std::unique_ptr<bc::LlmBackend> backend = bc::make_backend(config.backend, items);

    bc::AnswerTrace trace;
    switch (mode) {
        case bc::AnswerMode::briefcontext:
            trace = bc::answer_briefcontext(item, stack, *backend, config.pipeline);
            break;
        case bc::AnswerMode::rag: {
            bc::Ranking dense =
                bc::dense_retrieve(index, item.question, embedder, config.pipeline.top_k);
            trace = bc::answer_rag(item, dense, corpus, *backend, config.pipeline);
            break;
        }
        case bc::AnswerMode::cot:
            trace = bc::answer_closed_book(item, *backend, config.pipeline, true);
            break;
        case bc::AnswerMode::closed_book:
            trace = bc::answer_closed_book(item, *backend, config.pipeline, false);
            break;
        case bc::AnswerMode::oracle:
            trace = bc::answer_oracle(item, corpus, *backend, config.pipeline);
            break;
    }
    std::printf("answer: %s\n", trace.final_answer.c_str());
    if (!item.gold_answer.empty()) {
        std::printf("gold: %s (%s)\n", trace.gold_answer.c_str(),
                    trace.correct ? "correct" : "incorrect");
    }
    if (show_trace) {
        std::printf("%s\n", bc::answer_trace_to_json(trace).dump(2).c_str());
    }
    return kExitOk;
}

int cmd_experiment(bc::RunConfig config, const GlobalFlags& flags,
                   const std::string& config_positional) {
    if (!config_positional.empty()) {
        config = bc::load_run_config(config_positional);
        apply_flag_overrides(config, flags);
        bc::finalize_run_config(config);
    }
    if (config.corpus_path.empty() || config.qa_path.empty()) {
        std::cerr << "error: config fields 'corpus' and 'qa' are required for experiment\n";
        return kExitUsage;
    }
    bc::Corpus corpus = bc::ingest_corpus(config.corpus_path);
    std::vector<bc::QAItem> items = bc::ingest_qa(config.qa_path);
    bc::HashingEmbedder embedder(config.embedder_dimension);
    bc::DenseIndex index = obtain_index(corpus, embedder, config.index_cache_path);
    bc::RetrievalStack stack{&corpus, &index, &embedder, config.bm25};
    std::unique_ptr<bc::LlmBackend> backend = bc::make_backend(config.backend, items);

    bc::ExperimentOutcome outcome =
        bc::run_experiment(items, stack, *backend, config.experiment);
    if (config.include_timestamps) {
        outcome.report.timestamp = utc_timestamp();
    }

    fs::create_directories(config.output_dir);
    fs::path dir(config.output_dir);
    write_text_file((dir / "report.json").string(),
                    bc::report_to_json(outcome.report).dump(2) + "\n");
    write_text_file((dir / "report.csv").string(), bc::report_to_csv(outcome.report));
    bc::write_traces_jsonl(outcome.traces, (dir / "traces.jsonl").string());

    print_report_headline(outcome.report);
    std::printf("report written to %s\n", (dir / "report.json").string().c_str());
    return kExitOk;
}

int cmd_report(const bc::RunConfig& config, const std::string& traces_path) {
    std::vector<bc::TraceRecord> records = bc::read_traces_jsonl(traces_path);
    bc::ExperimentReport report = bc::fold_traces_to_report(records);
    fs::create_directories(config.output_dir);
    fs::path out = fs::path(config.output_dir) / "report_refold.json";
    write_text_file(out.string(), bc::report_to_json(report).dump(2) + "\n");
    print_report_headline(report);
    std::printf("report written to %s\n", out.string().c_str());
    return kExitOk;
}

int cmd_sample(const bc::RunConfig& config, const std::string& qa_flag, size_t count,
               double fraction, const std::string& out_path) {
    std::string qa_path = qa_flag.empty() ? config.qa_path : qa_flag;
    if (qa_path.empty()) {
        std::cerr << "error: no QA file given (--qa or config field 'qa')\n";
        return kExitUsage;
    }
    if (out_path.empty()) {
        std::cerr << "error: --out is required\n";
        return kExitUsage;
    }
    if ((count == 0) == (fraction <= 0.0)) {
        std::cerr << "error: pass exactly one of --count or --fraction\n";
        return kExitUsage;
    }
    std::vector<bc::QAItem> items = bc::ingest_qa(qa_path);
    size_t n = count > 0
                   ? count
                   : static_cast<size_t>(fraction * static_cast<double>(items.size()) + 0.5);
    std::vector<bc::QAItem> sampled = bc::sample_qa_items(items, n, config.seed);
    bc::write_qa(sampled, out_path);
    std::printf("sampled %zu of %zu items into %s\n", sampled.size(), items.size(),
                out_path.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"map-reduce RAG engine and evaluation harness"};
    app.require_subcommand(1);

    GlobalFlags flags;
    app.add_option("--config", flags.config_path, "JSON run configuration file");
    app.add_option("--seed", flags.seed, "random seed override");
    app.add_option("--output-dir", flags.output_dir, "directory for generated files");
    app.add_option("--backend", flags.backend, "backend kind: scripted or wire")
        ->check(CLI::IsMember({"scripted", "wire"}));
    app.add_option("--endpoint", flags.endpoint, "wire backend base URL");
    app.add_option("--model", flags.model, "wire backend model name");
    app.add_option("--parallelism", flags.parallelism, "max concurrent backend requests");

    auto* ingest = app.add_subcommand("ingest", "build the corpus and persist the dense index");
    std::string ingest_corpus_path;
    bool ingest_force = false;
    ingest->add_option("--corpus", ingest_corpus_path, "corpus JSONL file");
    ingest->add_flag("--force", ingest_force, "replace an existing index cache");

    auto* answer = app.add_subcommand("answer", "answer one question through a pipeline mode");
    std::string answer_question;
    std::string answer_item;
    std::string answer_mode = "briefcontext";
    bool answer_trace = false;
    answer->add_option("--question", answer_question, "ad-hoc question text");
    answer->add_option("--item", answer_item, "QA item id from the configured dataset");
    answer->add_option("--mode", answer_mode, "answer path")
        ->check(CLI::IsMember({"briefcontext", "rag", "cot", "oracle", "closed_book"}));
    answer->add_flag("--trace", answer_trace, "print the full answer trace JSON");

    auto* experiment = app.add_subcommand("experiment", "run a configured experiment");
    std::string experiment_config;
    experiment->add_option("config_file", experiment_config,
                           "experiment config path (overrides --config)");

    auto* report = app.add_subcommand("report", "refold persisted traces into a report");
    std::string report_traces;
    report->add_option("traces", report_traces, "trace JSONL file")->required();

    auto* sample = app.add_subcommand("sample", "seeded uniform sample of a QA dataset");
    std::string sample_qa;
    std::string sample_out;
    size_t sample_count = 0;
    double sample_fraction = 0.0;
    sample->add_option("--qa", sample_qa, "QA JSONL file");
    sample->add_option("--count", sample_count, "number of items to keep");
    sample->add_option("--fraction", sample_fraction, "fraction of items to keep");
    sample->add_option("--out", sample_out, "output QA JSONL path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    bc::RunConfig config;
    try {
        config = resolve_config(flags);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    try {
        if (ingest->parsed()) return cmd_ingest(config, ingest_corpus_path, ingest_force);
        if (answer->parsed()) {
            return cmd_answer(config, answer_question, answer_item, answer_mode, answer_trace);
        }
        if (experiment->parsed()) return cmd_experiment(config, flags, experiment_config);
        if (report->parsed()) return cmd_report(config, report_traces);
        if (sample->parsed()) {
            return cmd_sample(config, sample_qa, sample_count, sample_fraction, sample_out);
        }
    } catch (const bc::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
