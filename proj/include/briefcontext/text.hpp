#pragma once

#include <cctype>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace briefcontext {

/// Base error type for everything raised by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline bool is_token_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

/// Lowercases and splits on non-alphanumeric boundaries, dropping empty
/// tokens. Deterministic; byte-level, so multi-byte UTF-8 sequences act
/// as boundaries.
inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char c : text) {
        if (is_token_char(c)) {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) {
        tokens.push_back(std::move(current));
    }
    return tokens;
}

/// Token count under the engine tokenizer. Counts over concatenated text
/// are always taken by tokenizing the concatenated string directly, never
/// by summing per-part counts.
struct TokenCount {
    std::uint64_t value = 0;

    TokenCount& operator+=(TokenCount other) {
        value += other.value;
        return *this;
    }
    friend TokenCount operator+(TokenCount a, TokenCount b) { return {a.value + b.value}; }
    friend bool operator==(TokenCount a, TokenCount b) { return a.value == b.value; }
};

inline TokenCount count_tokens(std::string_view text) {
    return TokenCount{tokenize(text).size()};
}

inline std::string to_lower(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

inline std::string trim(std::string_view s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

inline bool iequals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(a[i])) !=
            std::tolower(static_cast<unsigned char>(b[i]))) {
            return false;
        }
    }
    return true;
}

// Stable 64-bit hashing. std::hash is implementation-defined, so anything
// that must reproduce across builds goes through these.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Maps a 64-bit word to [0, 1).
inline double unit_interval(std::uint64_t x) {
    return static_cast<double>(x >> 11) * (1.0 / 9007199254740992.0);
}

/// Small deterministic generator for seeded sampling. Not a stdlib engine
/// so that sequences are identical on every platform.
class SplitMix {
public:
    explicit SplitMix(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) {
        return bound == 0 ? 0 : next() % bound;
    }

    double next_unit() { return unit_interval(next()); }

private:
    std::uint64_t state_;
};

} // namespace briefcontext
