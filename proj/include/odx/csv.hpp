#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace odx::csv {

using Row = std::vector<std::string>;

struct Table {
    Row header;
    std::vector<Row> rows;
};

/// RFC 4180 reader: quoted fields may contain separators, quotes ("") and
/// newlines. Accepts LF or CRLF line endings.
Table parse(std::istream& in);
Table read_file(const std::filesystem::path& path);

/// Quotes a field only when it contains a comma, quote, or line break.
std::string escape(const std::string& field);
void write_row(std::ostream& out, const Row& row);
void write_file(const std::filesystem::path& path, const Table& table);

/// Index of `name` in the header; throws ValidationError naming `table_name`.
std::size_t column(const Table& table, const std::string& name, const std::string& table_name);

}  // namespace odx::csv
