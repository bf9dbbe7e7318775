#include "epibias/csv.hpp"

#include "epibias/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace epibias::csv {

namespace {

std::vector<std::string> split_record(const std::string& line, const std::filesystem::path& source,
                                      std::size_t line_no)
{
    std::vector<std::string> fields;
    std::string current;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    current.push_back('"');
                    ++i;
                }
                else {
                    quoted = false;
                }
            }
            else {
                current.push_back(c);
            }
        }
        else if (c == '"') {
            quoted = true;
        }
        else if (c == ',') {
            fields.push_back(std::move(current));
            current.clear();
        }
        else {
            current.push_back(c);
        }
    }
    if (quoted) {
        throw ValidationError(source.string() + ":" + std::to_string(line_no) + ": unterminated quote");
    }
    fields.push_back(std::move(current));
    return fields;
}

std::string trim(std::string s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

}  // namespace

std::size_t Table::column(std::string_view name) const
{
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (header[i] == name) {
            return i;
        }
    }
    throw ValidationError(source.string() + ": missing column '" + std::string(name) + "'");
}

Table parse(std::istream& in, const std::filesystem::path& source)
{
    Table table;
    table.source = source;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
            line.erase(0, 3);
        }
        if (trim(line).empty()) {
            continue;
        }
        auto fields = split_record(line, source, line_no);
        for (auto& f : fields) {
            f = trim(std::move(f));
        }
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size()) {
            throw ValidationError(source.string() + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(table.header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        }
        table.rows.push_back(std::move(fields));
    }
    return table;
}

Table read(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    return parse(in, path);
}

double to_double(std::string_view field, const Table& table, std::size_t row)
{
    double value = 0.0;
    const auto* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ValidationError(table.source.string() + ": row " + std::to_string(row + 1) +
                              ": not a number: '" + std::string(field) + "'");
    }
    return value;
}

long to_long(std::string_view field, const Table& table, std::size_t row)
{
    long value = 0;
    const auto* end = field.data() + field.size();
    const auto [ptr, ec] = std::from_chars(field.data(), end, value);
    if (ec != std::errc() || ptr != end) {
        throw ValidationError(table.source.string() + ": row " + std::to_string(row + 1) +
                              ": not an integer: '" + std::string(field) + "'");
    }
    return value;
}

std::string format_double(double value)
{
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, ptr);
}

std::string escape(std::string_view field)
{
    if (field.find_first_of(",\"\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out.push_back('"');
        }
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace epibias::csv
