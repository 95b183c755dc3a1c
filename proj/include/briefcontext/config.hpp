#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "briefcontext/eval.hpp"
#include "briefcontext/llm.hpp"
#include "briefcontext/pipeline.hpp"
#include "briefcontext/prompt.hpp"
#include "briefcontext/scripted_backend.hpp"
#include "briefcontext/wire_backend.hpp"

namespace briefcontext {

enum class BackendKind { scripted, wire };

inline const char* to_string(BackendKind kind) {
    return kind == BackendKind::scripted ? "scripted" : "wire";
}

inline BackendKind backend_kind_from_string(const std::string& s) {
    if (s == "scripted") return BackendKind::scripted;
    if (s == "wire") return BackendKind::wire;
    throw Error("unknown backend kind '" + s + "' (expected scripted or wire)");
}

struct BackendSpec {
    BackendKind kind = BackendKind::scripted;
    WireConfig wire;
    ScriptedBiasModel scripted_model;
    ScriptedOptions scripted_options;
};

/// Merged view of everything one run needs. Field values come from the JSON
/// config file; command-line flags override individual fields afterwards.
struct RunConfig {
    std::string corpus_path;
    std::string qa_path;
    std::string index_cache_path;
    std::string output_dir = ".";
    uint64_t seed = 0;
    size_t embedder_dimension = 256;
    BackendSpec backend;
    PricingModel pricing;
    PipelineConfig pipeline;
    ExperimentConfig experiment;
    Bm25Params bm25;
    bool include_timestamps = false;
};

namespace detail {

class ConfigReader {
public:
    ConfigReader(const nlohmann::json& j, std::string prefix)
        : j_(j), prefix_(std::move(prefix)) {
        if (!j_.is_object()) {
            throw Error("config: field '" + prefix_ + "' must be an object");
        }
    }

    bool has(const char* name) const { return j_.contains(name); }

    ConfigReader object(const char* name) const { return ConfigReader(j_.at(name), path(name)); }

    template <typename T>
    void read(const char* name, T& out) const {
        if (!j_.contains(name)) return;
        try {
            out = j_.at(name).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw Error("config: field '" + path(name) + "' has the wrong type");
        }
    }

    std::string path(const char* name) const {
        return prefix_.empty() ? name : prefix_ + "." + name;
    }

    /// Rejects unknown fields so typos fail loudly instead of silently
    /// falling back to defaults.
    void allow_only(std::initializer_list<const char*> names) const {
        for (const auto& [key, value] : j_.items()) {
            (void)value;
            bool known = false;
            for (const char* name : names) {
                if (key == name) {
                    known = true;
                    break;
                }
            }
            if (!known) {
                throw Error("config: unknown field '" + path(key.c_str()) + "'");
            }
        }
    }

private:
    const nlohmann::json& j_;
    std::string prefix_;
};

inline void read_templates(const ConfigReader& reader, PromptTemplates& templates) {
    reader.allow_only({"extraction_instruction", "summarization_instruction",
                       "answer_instruction", "closed_book_instruction", "cot_suffix",
                       "user_layout", "extraction_instruction_file",
                       "summarization_instruction_file", "answer_instruction_file",
                       "closed_book_instruction_file"});
    reader.read("extraction_instruction", templates.extraction_instruction);
    reader.read("summarization_instruction", templates.summarization_instruction);
    reader.read("answer_instruction", templates.answer_instruction);
    reader.read("closed_book_instruction", templates.closed_book_instruction);
    reader.read("cot_suffix", templates.cot_suffix);
    reader.read("user_layout", templates.user_layout);
    auto read_file = [&](const char* name, std::string& out) {
        std::string path;
        reader.read(name, path);
        if (!path.empty()) out = load_template_file(path);
    };
    read_file("extraction_instruction_file", templates.extraction_instruction);
    read_file("summarization_instruction_file", templates.summarization_instruction);
    read_file("answer_instruction_file", templates.answer_instruction);
    read_file("closed_book_instruction_file", templates.closed_book_instruction);
}

} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig config;
    detail::ConfigReader root(j, "");
    root.allow_only({"corpus", "qa", "index_cache", "output_dir", "seed", "embedder", "backend",
                     "pricing", "pipeline", "experiment", "bm25", "include_timestamps"});
    root.read("corpus", config.corpus_path);
    root.read("qa", config.qa_path);
    root.read("index_cache", config.index_cache_path);
    root.read("output_dir", config.output_dir);
    root.read("seed", config.seed);
    root.read("include_timestamps", config.include_timestamps);

    if (root.has("embedder")) {
        auto embedder = root.object("embedder");
        embedder.allow_only({"dimension"});
        embedder.read("dimension", config.embedder_dimension);
        if (config.embedder_dimension == 0) {
            throw Error("config: field 'embedder.dimension' must be positive");
        }
    }

    if (root.has("backend")) {
        auto backend = root.object("backend");
        backend.allow_only({"kind", "endpoint", "model", "max_attempts", "initial_backoff_ms",
                            "backoff_multiplier", "timeout_seconds", "parallelism",
                            "max_requests", "scripted"});
        std::string kind = to_string(config.backend.kind);
        backend.read("kind", kind);
        config.backend.kind = backend_kind_from_string(kind);
        backend.read("endpoint", config.backend.wire.endpoint);
        backend.read("model", config.backend.wire.model);
        backend.read("max_attempts", config.backend.wire.max_attempts);
        backend.read("initial_backoff_ms", config.backend.wire.initial_backoff_ms);
        backend.read("backoff_multiplier", config.backend.wire.backoff_multiplier);
        backend.read("timeout_seconds", config.backend.wire.timeout_seconds);
        backend.read("parallelism", config.backend.wire.parallelism);
        backend.read("max_requests", config.backend.wire.max_requests);
        if (backend.has("scripted")) {
            auto scripted = backend.object("scripted");
            scripted.allow_only({"spotlight_window", "p_spotlight", "p_middle", "p_absent",
                                 "wrong_answer_rate", "distractor_similarity_threshold"});
            scripted.read("spotlight_window", config.backend.scripted_model.spotlight_window);
            scripted.read("p_spotlight", config.backend.scripted_model.p_spotlight);
            scripted.read("p_middle", config.backend.scripted_model.p_middle);
            scripted.read("p_absent", config.backend.scripted_model.p_absent);
            scripted.read("wrong_answer_rate", config.backend.scripted_options.wrong_answer_rate);
            if (scripted.has("distractor_similarity_threshold")) {
                double threshold = 0.0;
                scripted.read("distractor_similarity_threshold", threshold);
                config.backend.scripted_options.distractor_similarity_threshold = threshold;
            }
        }
    }

    if (root.has("pricing")) {
        auto pricing = root.object("pricing");
        pricing.allow_only({"p_input", "p_output"});
        pricing.read("p_input", config.pricing.p_input);
        pricing.read("p_output", config.pricing.p_output);
        config.pricing.validate();
    }

    if (root.has("pipeline")) {
        auto pipeline = root.object("pipeline");
        pipeline.allow_only({"top_k", "batch_size", "preflight_enabled", "preflight",
                             "max_output_tokens", "parallelism", "templates"});
        pipeline.read("top_k", config.pipeline.top_k);
        pipeline.read("batch_size", config.pipeline.batch_size);
        pipeline.read("preflight_enabled", config.pipeline.preflight_enabled);
        if (pipeline.has("preflight")) {
            auto preflight = pipeline.object("preflight");
            preflight.allow_only({"n", "iou_threshold"});
            preflight.read("n", config.pipeline.preflight.n);
            preflight.read("iou_threshold", config.pipeline.preflight.iou_threshold);
        }
        pipeline.read("max_output_tokens", config.pipeline.max_output_tokens);
        pipeline.read("parallelism", config.pipeline.parallelism);
        if (pipeline.has("templates")) {
            detail::read_templates(pipeline.object("templates"), config.pipeline.templates);
        }
        config.pipeline.validate();
    }

    if (root.has("experiment")) {
        auto experiment = root.object("experiment");
        experiment.allow_only({"kind", "percentiles", "top_k_values"});
        std::string kind = to_string(config.experiment.kind);
        experiment.read("kind", kind);
        config.experiment.kind = experiment_kind_from_string(kind);
        experiment.read("percentiles", config.experiment.percentiles);
        experiment.read("top_k_values", config.experiment.top_k_values);
    }

    if (root.has("bm25")) {
        auto bm25 = root.object("bm25");
        bm25.allow_only({"k1", "b"});
        bm25.read("k1", config.bm25.k1);
        bm25.read("b", config.bm25.b);
    }

    // The experiment carries the pipeline and the run seed with it.
    config.experiment.pipeline = config.pipeline;
    config.experiment.seed = config.seed;
    config.backend.scripted_model.seed = config.seed;
    config.experiment.validate();
    return config;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error("config: cannot open '" + path + "'");
    }
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) {
        throw Error("config: '" + path + "' is not valid JSON");
    }
    return run_config_from_json(j);
}

/// Re-syncs the derived fields after flag overrides touched seed or
/// pipeline values.
inline void finalize_run_config(RunConfig& config) {
    config.pipeline.validate();
    config.experiment.pipeline = config.pipeline;
    config.experiment.seed = config.seed;
    config.backend.scripted_model.seed = config.seed;
    config.experiment.validate();
}

inline std::unique_ptr<LlmBackend> make_backend(const BackendSpec& spec,
                                                const std::vector<QAItem>& items) {
    if (spec.kind == BackendKind::scripted) {
        return std::make_unique<ScriptedBackend>(spec.scripted_model, make_fact_table(items),
                                                 spec.scripted_options);
    }
    return std::make_unique<WireBackend>(spec.wire);
}

} // namespace briefcontext
