#pragma once

#include <charconv>
#include <cstddef>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tdm/errors.hpp"

namespace tdm::csv {

// Minimal RFC-4180-ish CSV: comma separated, optional double-quoted fields
// with "" escapes, quoted fields may contain commas and newlines.

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    /// Reads one record into `out`. Returns false at end of input.
    /// Throws SchemaError on an unterminated quoted field.
    bool read_row(std::vector<std::string>& out) {
        out.clear();
        int c = in_.get();
        if (c == EOF) return false;
        row_line_ = line_;
        std::string field;
        bool quoted = false;
        while (true) {
            if (c == EOF) {
                if (quoted) throw SchemaError("line " + std::to_string(row_line_) + ": unterminated quoted field");
                out.push_back(std::move(field));
                return true;
            }
            if (quoted) {
                if (c == '"') {
                    const int next = in_.peek();
                    if (next == '"') {
                        field.push_back('"');
                        in_.get();
                    } else {
                        quoted = false;
                    }
                } else {
                    if (c == '\n') ++line_;
                    field.push_back(char(c));
                }
            } else if (c == '"' && field.empty()) {
                quoted = true;
            } else if (c == ',') {
                out.push_back(std::move(field));
                field.clear();
            } else if (c == '\n') {
                ++line_;
                if (!field.empty() && field.back() == '\r') field.pop_back();
                out.push_back(std::move(field));
                return true;
            } else {
                field.push_back(char(c));
            }
            c = in_.get();
        }
    }

    /// 1-based line number where the last returned row started.
    std::size_t line() const { return row_line_; }

private:
    std::istream& in_;
    std::size_t line_ = 1;
    std::size_t row_line_ = 1;
};

inline std::string escape(std::string_view field) {
    const bool needs_quotes =
        field.find_first_of(",\"\n\r") != std::string_view::npos;
    if (!needs_quotes) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    out += '"';
    return out;
}

inline void write_row(std::ostream& os, std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        os << escape(fields[i]);
    }
    os << '\n';
}

/// Shortest round-trip decimal form, deterministic across runs.
inline std::string format_double(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
    double v = 0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto r = std::from_chars(begin, end, v);
    if (r.ec != std::errc() || r.ptr != end) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    long long v = 0;
    const char* begin = s.data();
    const char* end = begin + s.size();
    auto r = std::from_chars(begin, end, v);
    if (r.ec != std::errc() || r.ptr != end) return std::nullopt;
    return v;
}

/// Maps header names to column positions; `require` throws SchemaError when a
/// column is absent so parse errors name the missing column.
class Header {
public:
    explicit Header(const std::vector<std::string>& row) {
        for (std::size_t i = 0; i < row.size(); ++i) pos_.emplace(row[i], i);
    }

    std::size_t require(const std::string& name) const {
        auto it = pos_.find(name);
        if (it == pos_.end()) throw SchemaError("missing required column: " + name);
        return it->second;
    }

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = pos_.find(name);
        if (it == pos_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::map<std::string, std::size_t> pos_;
};

}  // namespace tdm::csv
