#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ams {

/// RFC-4180-style CSV reader: quoted fields may contain commas, doubled
/// quotes and newlines; CRLF line endings are accepted. Field bytes are
/// passed through untouched (UTF-8 safe). Tracks line numbers for error
/// reporting.
class CsvReader {
public:
    /// Opens the file and reads the header row. Throws IoError if the file
    /// cannot be opened, ParseError if the header is malformed or does not
    /// equal `expected_header` (when non-empty).
    CsvReader(const std::string& path, std::span<const std::string_view> expected_header = {});

    const std::vector<std::string>& header() const { return header_; }

    /// Reads the next record into `fields`. Returns false at end of file.
    /// Throws ParseError on structural problems (unterminated quote, wrong
    /// field count).
    bool next(std::vector<std::string>& fields);

    /// 1-based line number where the most recent record started.
    std::int64_t record_line() const { return record_line_; }

    const std::string& path() const { return path_; }

private:
    bool read_record(std::vector<std::string>& fields);

    std::string path_;
    std::ifstream in_;
    std::vector<std::string> header_;
    std::int64_t line_ = 0;         // current physical line
    std::int64_t record_line_ = 0;  // line where the last record started
};

/// CSV writer with minimal quoting (only when a field contains a comma,
/// quote, CR or LF). '\n' line endings, no trailing newline surprises:
/// every row ends with exactly one '\n'.
class CsvWriter {
public:
    explicit CsvWriter(const std::string& path);

    void write_row(std::span<const std::string> fields);
    void write_row(std::span<const std::string_view> fields);
    void write_row(std::initializer_list<std::string_view> fields);

    void flush() { out_.flush(); }

private:
    void put_field(std::string_view f, bool first);

    std::string path_;
    std::ofstream out_;
};

/// Shortest decimal representation that round-trips the exact double
/// (std::to_chars). Used for every float written to disk so that equal
/// runs produce byte-identical files.
std::string format_double(double v);

/// Strict double parser: the whole field must be consumed. Throws ParseError.
double parse_double(std::string_view text, const std::string& context);

/// Strict integer parser. Throws ParseError.
std::int64_t parse_int(std::string_view text, const std::string& context);

}  // namespace ams
