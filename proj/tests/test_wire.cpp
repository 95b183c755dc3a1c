#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>

#include <json.hpp>

#include "briefcontext/wire_backend.hpp"

namespace bc = briefcontext;

namespace {

std::string fixture_path(const std::string& name) {
    return std::string(BRIEFCONTEXT_FIXTURE_DIR) + "/" + name;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

/// Local chat-completions stand-in. Each test installs one handler; the
/// server records how many requests arrived and the last request body.
struct LoopbackServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};
    std::mutex mutex;
    std::string last_body;
    httplib::Headers last_headers;

    template <typename Handler>
    void start(Handler handler) {
        server.Post("/v1/chat/completions",
                    [this, handler](const httplib::Request& req, httplib::Response& res) {
                        ++hits;
                        {
                            std::lock_guard lock(mutex);
                            last_body = req.body;
                            last_headers = req.headers;
                        }
                        handler(req, res);
                    });
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~LoopbackServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }

    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port); }
};

bc::WireConfig fast_config(const std::string& endpoint) {
    bc::WireConfig config;
    config.endpoint = endpoint;
    config.model = "test-model";
    config.initial_backoff_ms = 0;
    config.timeout_seconds = 5;
    return config;
}

bc::ChatRequest sample_request() {
    bc::ChatRequest request;
    request.system_instruction = "You answer multiple choice questions.";
    request.user_content = "What is two plus two?";
    request.max_output_tokens = 64;
    return request;
}

/// Scoped environment override that restores the prior value on exit.
struct EnvGuard {
    std::string name;
    std::string saved;
    bool had = false;

    EnvGuard(const std::string& variable, const char* value) : name(variable) {
        if (const char* old = std::getenv(name.c_str())) {
            had = true;
            saved = old;
        }
        if (value) {
            setenv(name.c_str(), value, 1);
        } else {
            unsetenv(name.c_str());
        }
    }

    ~EnvGuard() {
        if (had) {
            setenv(name.c_str(), saved.c_str(), 1);
        } else {
            unsetenv(name.c_str());
        }
    }
};

} // namespace

TEST_CASE("wire config validation") {
    bc::WireConfig config;
    CHECK_NOTHROW(config.validate());
    config.endpoint = "";
    CHECK_THROWS_AS(config.validate(), bc::Error);
    config = {};
    config.max_attempts = 0;
    CHECK_THROWS_AS(config.validate(), bc::Error);
    config = {};
    config.parallelism = 0;
    CHECK_THROWS_AS(config.validate(), bc::Error);
}

TEST_CASE("endpoint splitting") {
    auto bare = bc::detail::split_endpoint("http://127.0.0.1:8080");
    CHECK(bare.host_part == "http://127.0.0.1:8080");
    CHECK(bare.path == "/v1/chat/completions");

    auto full = bc::detail::split_endpoint("https://api.example.com/v1/chat/completions");
    CHECK(full.host_part == "https://api.example.com");
    CHECK(full.path == "/v1/chat/completions");

    auto prefixed = bc::detail::split_endpoint("http://gateway:9000/openai/");
    CHECK(prefixed.host_part == "http://gateway:9000");
    CHECK(prefixed.path == "/openai/v1/chat/completions");

    CHECK_THROWS_AS(bc::detail::split_endpoint("127.0.0.1:8080"), bc::Error);
}

TEST_CASE("api key comes from the environment in priority order") {
    EnvGuard primary("BRIEFCONTEXT_API_KEY", nullptr);
    EnvGuard fallback("OPENAI_API_KEY", nullptr);
    CHECK(bc::wire_api_key_from_env().empty());

    setenv("OPENAI_API_KEY", "sk-fallback", 1);
    CHECK(bc::wire_api_key_from_env() == "sk-fallback");

    setenv("BRIEFCONTEXT_API_KEY", "sk-primary", 1);
    CHECK(bc::wire_api_key_from_env() == "sk-primary");
}

TEST_CASE("successful completion replays fixture text and usage") {
    const std::string fixture = slurp(fixture_path("chat_ok.json"));
    LoopbackServer server;
    server.start([&fixture](const httplib::Request&, httplib::Response& res) {
        res.set_content(fixture, "application/json");
    });

    EnvGuard primary("BRIEFCONTEXT_API_KEY", "sk-test-units");
    EnvGuard fallback("OPENAI_API_KEY", nullptr);
    bc::WireBackend backend(fast_config(server.endpoint()));
    CHECK(backend.name() == "wire");

    auto request = sample_request();
    auto response = backend.complete(request);
    CHECK(response.text ==
          "Relevant information identified in the provided material. ANSWER: B");
    CHECK(response.input_tokens.value == 42);
    CHECK(response.output_tokens.value == 7);
    CHECK(server.hits == 1);
    CHECK(backend.requests_used() == 1);

    // The outgoing request carries the standard chat-completions shape.
    auto body = nlohmann::json::parse(server.last_body);
    CHECK(body.at("model") == "test-model");
    REQUIRE(body.at("messages").size() == 2);
    CHECK(body.at("messages")[0].at("role") == "system");
    CHECK(body.at("messages")[0].at("content") == request.system_instruction);
    CHECK(body.at("messages")[1].at("role") == "user");
    CHECK(body.at("messages")[1].at("content") == request.user_content);
    CHECK(body.at("max_tokens") == 64);
    CHECK(body.at("temperature") == 0.0);

    bool authorized = false;
    for (const auto& [key, value] : server.last_headers) {
        if (key == "Authorization") {
            authorized = true;
            CHECK(value == "Bearer sk-test-units");
        }
    }
    CHECK(authorized);
}

TEST_CASE("empty system instruction sends a single user message") {
    const std::string fixture = slurp(fixture_path("chat_ok.json"));
    LoopbackServer server;
    server.start([&fixture](const httplib::Request&, httplib::Response& res) {
        res.set_content(fixture, "application/json");
    });

    bc::WireBackend backend(fast_config(server.endpoint()));
    bc::ChatRequest request;
    request.user_content = "just the user turn";
    backend.complete(request);

    auto body = nlohmann::json::parse(server.last_body);
    REQUIRE(body.at("messages").size() == 1);
    CHECK(body.at("messages")[0].at("role") == "user");
}

TEST_CASE("missing usage block falls back to the local tokenizer") {
    const std::string fixture = slurp(fixture_path("chat_no_usage.json"));
    LoopbackServer server;
    server.start([&fixture](const httplib::Request&, httplib::Response& res) {
        res.set_content(fixture, "application/json");
    });

    bc::WireBackend backend(fast_config(server.endpoint()));
    auto request = sample_request();
    auto response = backend.complete(request);
    CHECK(response.text == "Aggregating the partition findings. ANSWER: A");
    CHECK(response.input_tokens == bc::measure_input_tokens(request));
    CHECK(response.output_tokens == bc::count_tokens(response.text));
}

TEST_CASE("malformed body retries up to max_attempts then surfaces the endpoint") {
    const std::string fixture = slurp(fixture_path("chat_malformed.txt"));
    LoopbackServer server;
    server.start([&fixture](const httplib::Request&, httplib::Response& res) {
        res.set_content(fixture, "application/json");
    });

    bc::WireBackend backend(fast_config(server.endpoint()));
    bool threw = false;
    try {
        backend.complete(sample_request());
    } catch (const bc::RetryableError& e) {
        threw = true;
        std::string what = e.what();
        CHECK(what.find("3 attempts") != std::string::npos);
        CHECK(what.find("/v1/chat/completions") != std::string::npos);
        CHECK(what.find("malformed response body") != std::string::npos);
    }
    CHECK(threw);
    CHECK(server.hits == 3);
}

TEST_CASE("responses missing choices or content are treated as malformed") {
    LoopbackServer server;
    server.start([](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices": []})", "application/json");
    });
    auto config = fast_config(server.endpoint());
    config.max_attempts = 1;
    bc::WireBackend backend(config);
    bool threw = false;
    try {
        backend.complete(sample_request());
    } catch (const bc::RetryableError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("no choices") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("non-2xx statuses retry and then fail") {
    LoopbackServer server;
    server.start([](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
        res.set_content("upstream exploded", "text/plain");
    });

    bc::WireBackend backend(fast_config(server.endpoint()));
    bool threw = false;
    try {
        backend.complete(sample_request());
    } catch (const bc::RetryableError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("status 500") != std::string::npos);
    }
    CHECK(threw);
    CHECK(server.hits == 3);
}

TEST_CASE("a transient failure recovers on a later attempt") {
    const std::string fixture = slurp(fixture_path("chat_ok.json"));
    LoopbackServer server;
    server.start([&fixture, &server](const httplib::Request&, httplib::Response& res) {
        if (server.hits == 1) {
            res.status = 503;
            res.set_content("warming up", "text/plain");
        } else {
            res.set_content(fixture, "application/json");
        }
    });

    bc::WireBackend backend(fast_config(server.endpoint()));
    auto response = backend.complete(sample_request());
    CHECK(response.input_tokens.value == 42);
    CHECK(server.hits == 2);
}

TEST_CASE("transport errors against a dead endpoint retry then fail") {
    auto config = fast_config("http://127.0.0.1:1");
    config.max_attempts = 2;
    config.timeout_seconds = 1;
    bc::WireBackend backend(config);
    bool threw = false;
    try {
        backend.complete(sample_request());
    } catch (const bc::RetryableError& e) {
        threw = true;
        CHECK(std::string(e.what()).find("2 attempts") != std::string::npos);
    }
    CHECK(threw);
}

TEST_CASE("request budget exhaustion is not retried") {
    const std::string fixture = slurp(fixture_path("chat_ok.json"));
    LoopbackServer server;
    server.start([&fixture](const httplib::Request&, httplib::Response& res) {
        res.set_content(fixture, "application/json");
    });

    auto config = fast_config(server.endpoint());
    config.max_requests = 2;
    bc::WireBackend backend(config);
    CHECK_NOTHROW(backend.complete(sample_request()));
    CHECK_NOTHROW(backend.complete(sample_request()));
    CHECK_THROWS_AS(backend.complete(sample_request()), bc::BudgetError);
    CHECK(server.hits == 2); // the refused request never reached the wire
}
