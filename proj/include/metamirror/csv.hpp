#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "metamirror/errors.hpp"

namespace metamirror {

// Formats a double so the text form round-trips: 17 significant digits.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Minimal CSV emitter: one header row, then data rows built cell by cell.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path) {
        if (!out_) {
            throw InvalidArgumentError("cannot open CSV file for writing: " + path);
        }
    }

    void header(const std::vector<std::string>& columns) {
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (i) out_ << ',';
            out_ << columns[i];
        }
        out_ << '\n';
    }

    void cell(double v) {
        sep();
        out_ << format_double(v);
    }

    void cell(std::int64_t v) {
        sep();
        out_ << v;
    }

    void cell(int v) {
        sep();
        out_ << v;
    }

    void cell(const std::string& v) {
        sep();
        out_ << v;
    }

    void end_row() {
        out_ << '\n';
        row_open_ = false;
    }

private:
    void sep() {
        if (row_open_) out_ << ',';
        row_open_ = true;
    }

    std::ofstream out_;
    bool row_open_ = false;
};

}  // namespace metamirror
