#pragma once

// CSV helpers. Numbers are written in shortest round-trip form so identical
// results always produce identical bytes.

#include <charconv>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <span>
#include <string>
#include <system_error>
#include <vector>

#include "crip/error.hpp"

namespace crip::io {

inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw InvalidArgument("not a number: '" + s + "'");
    return v;
}

class CsvWriter {
public:
    CsvWriter(std::ostream& out, std::initializer_list<std::string> header) : out_(out), columns_(header.size()) {
        write_strings(std::vector<std::string>(header));
    }
    CsvWriter(std::ostream& out, const std::vector<std::string>& header) : out_(out), columns_(header.size()) {
        write_strings(header);
    }

    void row(std::span<const double> values) {
        require(values.size() == columns_, "csv: row width does not match header");
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(values[i]);
        }
        out_ << '\n';
    }
    void row(std::initializer_list<double> values) { row(std::span<const double>(values.begin(), values.size())); }

private:
    void write_strings(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << quote(cells[i]);
        }
        out_ << '\n';
    }

    static std::string quote(const std::string& s) {
        if (s.find_first_of(",\"\n") == std::string::npos) return s;
        std::string q = "\"";
        for (char c : s) {
            if (c == '"') q += '"';
            q += c;
        }
        return q + '"';
    }

    std::ostream& out_;
    std::size_t columns_;
};

/// Split one CSV line on commas (no quoted fields).
inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace crip::io
