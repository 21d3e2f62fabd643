#include "amsbench/csv.hpp"

#include <charconv>

#include "amsbench/errors.hpp"

namespace ams {

CsvReader::CsvReader(const std::string& path, std::span<const std::string_view> expected_header)
    : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open " + path);
    std::vector<std::string> fields;
    if (!read_record(fields)) throw ParseError(path + ": empty file, header row expected");
    header_ = fields;
    if (!expected_header.empty()) {
        bool ok = header_.size() == expected_header.size();
        for (std::size_t i = 0; ok && i < header_.size(); ++i)
            ok = header_[i] == expected_header[i];
        if (!ok) {
            std::string want;
            for (auto h : expected_header) {
                if (!want.empty()) want += ',';
                want += h;
            }
            throw ParseError(path + ":1: unexpected header, want '" + want + "'");
        }
    }
}

bool CsvReader::next(std::vector<std::string>& fields) {
    if (!read_record(fields)) return false;
    if (fields.size() != header_.size())
        throw ParseError(path_ + ":" + std::to_string(record_line_) + ": expected " +
                         std::to_string(header_.size()) + " fields, got " +
                         std::to_string(fields.size()));
    return true;
}

bool CsvReader::read_record(std::vector<std::string>& fields) {
    fields.clear();
    int c = in_.get();
    if (c == EOF) return false;
    ++line_;
    record_line_ = line_;

    std::string field;
    bool in_quotes = false;
    bool quoted_field = false;  // current field started with a quote
    for (;;) {
        if (c == EOF) {
            if (in_quotes)
                throw ParseError(path_ + ":" + std::to_string(record_line_) +
                                 ": unterminated quoted field");
            fields.push_back(std::move(field));
            return true;
        }
        const char ch = static_cast<char>(c);
        if (in_quotes) {
            if (ch == '"') {
                const int peek = in_.peek();
                if (peek == '"') {
                    field += '"';
                    in_.get();
                } else {
                    in_quotes = false;
                }
            } else {
                if (ch == '\n') ++line_;
                field += ch;
            }
        } else if (ch == '"' && field.empty() && !quoted_field) {
            in_quotes = true;
            quoted_field = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
            quoted_field = false;
        } else if (ch == '\n') {
            if (!field.empty() && field.back() == '\r') field.pop_back();
            fields.push_back(std::move(field));
            return true;
        } else {
            field += ch;
        }
        c = in_.get();
    }
}

CsvWriter::CsvWriter(const std::string& path) : path_(path), out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
}

void CsvWriter::put_field(std::string_view f, bool first) {
    if (!first) out_.put(',');
    const bool needs_quotes = f.find_first_of(",\"\r\n") != std::string_view::npos;
    if (!needs_quotes) {
        out_.write(f.data(), static_cast<std::streamsize>(f.size()));
        return;
    }
    out_.put('"');
    for (char c : f) {
        if (c == '"') out_.put('"');
        out_.put(c);
    }
    out_.put('"');
}

void CsvWriter::write_row(std::span<const std::string> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) put_field(fields[i], i == 0);
    out_.put('\n');
    if (!out_) throw IoError("write failed: " + path_);
}

void CsvWriter::write_row(std::span<const std::string_view> fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) put_field(fields[i], i == 0);
    out_.put('\n');
    if (!out_) throw IoError("write failed: " + path_);
}

void CsvWriter::write_row(std::initializer_list<std::string_view> fields) {
    write_row(std::span<const std::string_view>(fields.begin(), fields.size()));
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, const std::string& context) {
    double v = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError(context + ": not a number: '" + std::string(text) + "'");
    return v;
}

std::int64_t parse_int(std::string_view text, const std::string& context) {
    std::int64_t v = 0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw ParseError(context + ": not an integer: '" + std::string(text) + "'");
    return v;
}

}  // namespace ams
