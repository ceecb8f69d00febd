#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "rigline/error.hpp"

namespace rigline {

/// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Fixed-point text with `digits` decimals ("%.3f" style).
inline std::string format_fixed(double v, int digits) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, digits);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(sep, start);
        out.emplace_back(s.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Strict parse: the whole (trimmed) string must be one finite real.
inline bool try_parse_double(std::string_view s, double& out) {
    s = trim(s);
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline double parse_double(std::string_view s, std::string_view what) {
    double v = 0.0;
    if (!try_parse_double(s, v)) {
        throw ParseError("invalid number '" + std::string(s) + "' for " + std::string(what));
    }
    return v;
}

inline std::int64_t parse_int(std::string_view s, std::string_view what) {
    s = trim(s);
    std::int64_t v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw ParseError("invalid integer '" + std::string(s) + "' for " + std::string(what));
    }
    return v;
}

/// Writes the whitespace-separated tagged documents used for model files.
class TokenWriter {
public:
    explicit TokenWriter(std::ostream& os) : os_(os) {}

    TokenWriter& key(std::string_view k) {
        if (!line_empty_) os_ << '\n';
        os_ << k;
        line_empty_ = false;
        return *this;
    }
    TokenWriter& word(std::string_view w) {
        os_ << ' ' << w;
        return *this;
    }
    TokenWriter& num(double v) { return word(format_double(v)); }
    TokenWriter& count(std::uint64_t v) { return word(std::to_string(v)); }
    TokenWriter& integer(std::int64_t v) { return word(std::to_string(v)); }
    TokenWriter& nums(std::span<const double> vs) {
        for (double v : vs) num(v);
        return *this;
    }
    void end() {
        os_ << '\n';
        line_empty_ = true;
    }

private:
    std::ostream& os_;
    bool line_empty_ = true;
};

/// Reads documents produced by TokenWriter; every mismatch is a ParseError.
class TokenReader {
public:
    explicit TokenReader(std::istream& is) : is_(is) {}

    std::string word() {
        std::string w;
        if (!(is_ >> w)) throw ParseError("unexpected end of model document");
        return w;
    }
    void expect(std::string_view k) {
        auto w = word();
        if (w != k) {
            throw ParseError("model document: expected '" + std::string(k) + "', found '" + w + "'");
        }
    }
    double num() { return parse_double(word(), "model document"); }
    std::size_t count() {
        auto v = parse_int(word(), "model document");
        if (v < 0) throw ParseError("model document: negative count");
        return static_cast<std::size_t>(v);
    }
    std::int64_t integer() { return parse_int(word(), "model document"); }
    std::vector<double> nums(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = num();
        return out;
    }

private:
    std::istream& is_;
};

}  // namespace rigline
