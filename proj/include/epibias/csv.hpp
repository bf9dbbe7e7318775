#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace epibias::csv {

/// A parsed CSV file with a mandatory header row.
struct Table {
    std::filesystem::path source;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    /// Position of a named column; throws ValidationError naming the file if absent.
    std::size_t column(std::string_view name) const;
};

Table read(const std::filesystem::path& path);
Table parse(std::istream& in, const std::filesystem::path& source = "<stream>");

double to_double(std::string_view field, const Table& table, std::size_t row);
long to_long(std::string_view field, const Table& table, std::size_t row);

/// Shortest decimal representation that round-trips exactly.
std::string format_double(double value);

/// Quotes a field if it contains a separator, quote or newline.
std::string escape(std::string_view field);

}  // namespace epibias::csv
