#pragma once

// Minimal CSV reader/writer for the artifact schemas. Fields in this project
// never contain commas or quotes (record ids, numbers, semicolon-joined
// lists), so no quoting layer is needed; the writer refuses fields that would
// require one rather than silently corrupting a file.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecgfreq/errors.hpp"

namespace ecgfreq::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::unordered_map<std::string, std::size_t> index; // column name -> position

    std::size_t col(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) fail(Errc::MissingColumn, "column '" + name + "' not found");
        return it->second;
    }

    const std::string& at(std::size_t row, const std::string& name) const {
        return rows[row][col(name)];
    }
};

inline std::vector<std::string> split_line(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

// Reads a whole CSV file. Leading lines starting with '#' are metadata
// comments (e.g. "# config_hash=...") and are collected separately.
inline Table read_file(const std::string& path, std::vector<std::string>* comments = nullptr) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoFailure, "cannot open " + path);
    Table t;
    std::string line;
    bool have_header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty() && line[0] == '#') {
            if (comments) comments->push_back(line);
            continue;
        }
        if (line.empty()) continue;
        auto fields = split_line(line);
        if (!have_header) {
            t.header = fields;
            for (std::size_t i = 0; i < fields.size(); ++i) t.index[fields[i]] = i;
            have_header = true;
        } else {
            if (fields.size() != t.header.size())
                fail(Errc::UnparsableRow, path + ":" + std::to_string(lineno) + ": expected " +
                                              std::to_string(t.header.size()) + " fields, got " +
                                              std::to_string(fields.size()));
            t.rows.push_back(std::move(fields));
        }
    }
    if (!have_header) fail(Errc::UnparsableRow, path + ": no header row");
    return t;
}

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) fail(Errc::IoFailure, "cannot open " + path + " for writing");
        path_ = path;
    }

    void comment(const std::string& text) { out_ << "# " << text << "\n"; }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            const std::string& f = fields[i];
            if (f.find(',') != std::string::npos || f.find('"') != std::string::npos ||
                f.find('\n') != std::string::npos)
                fail(Errc::InvariantViolation, path_ + ": field would need quoting: " + f);
            if (i) out_ << ',';
            out_ << f;
        }
        out_ << '\n';
    }

    void close() {
        out_.flush();
        if (!out_) fail(Errc::IoFailure, "write failed for " + path_);
        out_.close();
    }

private:
    std::ofstream out_;
    std::string path_;
};

// Formatting helpers. Prediction files carry full double precision so
// downstream metrics are bit-reproducible; everything else uses %.9g.
inline std::string fmt_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_short(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

inline long long parse_ll(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(Errc::UnparsableRow, ctx + ": bad integer '" + s + "'");
    }
}

inline double parse_double(const std::string& s, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(Errc::UnparsableRow, ctx + ": bad number '" + s + "'");
    }
}

} // namespace ecgfreq::csv
