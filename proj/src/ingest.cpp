#include "epibias/ingest.hpp"

#include "epibias/csv.hpp"
#include "epibias/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <limits>
#include <ostream>
#include <regex>
#include <set>

namespace epibias {

namespace {

// Days since 1970-01-01 in the proleptic Gregorian calendar (H. Hinnant's algorithm).
long days_from_civil(long y, unsigned m, unsigned d)
{
    y -= m <= 2;
    const long era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<long>(doe) - 719468;
}

long civil_year_from_days(long z)
{
    z += 719468;
    const long era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const long y = static_cast<long>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return y + (m <= 2);
}

std::ofstream open_out(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    return out;
}

std::size_t require_province(const ProvinceIndex& provinces, const std::string& id, const csv::Table& t,
                             std::size_t row)
{
    const auto pos = provinces.find(id);
    if (!pos) {
        throw ValidationError(t.source.string() + ": row " + std::to_string(row + 1) +
                              ": unknown province id '" + id + "'");
    }
    return *pos;
}

}  // namespace

IsoWeek iso_week_of(int year, unsigned month, unsigned day)
{
    const long days = days_from_civil(year, month, day);
    const long iso_weekday = ((days % 7) + 7 + 3) % 7 + 1;  // Monday = 1
    const long thursday = days - iso_weekday + 4;
    const long iso_year = civil_year_from_days(thursday);
    const long ordinal = thursday - days_from_civil(iso_year, 1, 1);
    return {static_cast<int>(iso_year), static_cast<int>(ordinal / 7 + 1)};
}

int iso_weeks_in_year(int year)
{
    return iso_week_of(year, 12, 28).week;
}

IsoWeek next_week(IsoWeek w)
{
    if (w.week >= iso_weeks_in_year(w.year)) {
        return {w.year + 1, 1};
    }
    return {w.year, w.week + 1};
}

IsoWeek parse_iso_week(const std::string& text)
{
    static const std::regex pattern(R"((\d{4})-W?(\d{1,2}))");
    std::smatch m;
    if (!std::regex_match(text, m, pattern)) {
        throw ValidationError("malformed ISO week '" + text + "' (expected YYYY-Www)");
    }
    IsoWeek w{std::stoi(m[1]), std::stoi(m[2])};
    if (w.week < 1 || w.week > iso_weeks_in_year(w.year)) {
        throw ValidationError("ISO week out of range: '" + text + "'");
    }
    return w;
}

std::string to_string(IsoWeek w)
{
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-W%02d", w.year, w.week);
    return buf;
}

ProvinceIndex::ProvinceIndex(std::vector<std::string> ids) : ids_(std::move(ids))
{
    for (std::size_t i = 0; i < ids_.size(); ++i) {
        if (ids_[i].empty()) {
            throw ValidationError("empty province id at position " + std::to_string(i));
        }
        if (!positions_.emplace(ids_[i], i).second) {
            throw ValidationError("duplicate province id '" + ids_[i] + "'");
        }
    }
}

std::optional<std::size_t> ProvinceIndex::find(const std::string& id) const
{
    const auto it = positions_.find(id);
    if (it == positions_.end()) {
        return std::nullopt;
    }
    return it->second;
}

WeekIndex::WeekIndex(std::vector<IsoWeek> weeks) : weeks_(std::move(weeks))
{
    for (const auto& w : weeks_) {
        if (w.week < 1 || w.week > iso_weeks_in_year(w.year)) {
            throw ValidationError("ISO week out of range: " + to_string(w));
        }
    }
    for (std::size_t j = 1; j < weeks_.size(); ++j) {
        if (weeks_[j] != next_week(weeks_[j - 1])) {
            throw ValidationError("week index not contiguous at " + to_string(weeks_[j - 1]) + " -> " +
                                  to_string(weeks_[j]));
        }
    }
}

WeekIndex WeekIndex::range(IsoWeek first, IsoWeek last)
{
    if (last < first) {
        throw ValidationError("empty week range " + to_string(first) + ".." + to_string(last));
    }
    std::vector<IsoWeek> weeks{first};
    while (weeks.back() < last) {
        weeks.push_back(next_week(weeks.back()));
    }
    return WeekIndex(std::move(weeks));
}

std::optional<std::size_t> WeekIndex::find(IsoWeek w) const
{
    const auto it = std::lower_bound(weeks_.begin(), weeks_.end(), w);
    if (it == weeks_.end() || *it != w) {
        return std::nullopt;
    }
    return static_cast<std::size_t>(it - weeks_.begin());
}

WeekIndex WeekIndex::shifted(int years) const
{
    std::vector<IsoWeek> out;
    out.reserve(weeks_.size());
    for (const auto& w : weeks_) {
        out.push_back({w.year + years, w.week});
    }
    return WeekIndex(std::move(out));
}

bool WeekIndex::same_iso_weeks(const WeekIndex& other) const
{
    return std::equal(weeks_.begin(), weeks_.end(), other.weeks_.begin(), other.weeks_.end(),
                      [](const IsoWeek& a, const IsoWeek& b) { return a.week == b.week; });
}

void ValidationLog::info(std::string code, std::string message)
{
    entries_.push_back({"info", std::move(code), std::move(message)});
}

void ValidationLog::warn(std::string code, std::string message)
{
    entries_.push_back({"warning", std::move(code), std::move(message)});
}

std::size_t ValidationLog::count(const std::string& code) const
{
    return static_cast<std::size_t>(
        std::count_if(entries_.begin(), entries_.end(), [&](const LogEntry& e) { return e.code == code; }));
}

void ValidationLog::write_jsonl(std::ostream& out) const
{
    for (const auto& e : entries_) {
        out << nlohmann::json{{"level", e.level}, {"code", e.code}, {"message", e.message}}.dump() << '\n';
    }
}

MortalityPanel load_weekly_deaths_panel(const std::filesystem::path& path, const ProvinceIndex& provinces,
                                        const WeekIndex& weeks, ValidationLog* log)
{
    const auto table = csv::read(path);
    const auto c_prov = table.column("province_id");
    const auto c_year = table.column("year");
    const auto c_week = table.column("iso_week");
    const auto c_deaths = table.column("deaths");

    MortalityPanel panel;
    panel.provinces = provinces;
    panel.weeks = weeks;
    panel.year_label = weeks.size() > 0 ? weeks.at(0).year : 0;
    panel.counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(provinces.size()),
                                         static_cast<Eigen::Index>(weeks.size()));
    std::vector<char> seen(provinces.size() * weeks.size(), 0);
    std::size_t skipped = 0;

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto i = require_province(provinces, row[c_prov], table, r);
        const IsoWeek w{static_cast<int>(csv::to_long(row[c_year], table, r)),
                        static_cast<int>(csv::to_long(row[c_week], table, r))};
        const double deaths = csv::to_double(row[c_deaths], table, r);
        if (!(deaths >= 0.0)) {
            throw ValidationError(path.string() + ": row " + std::to_string(r + 1) + ": negative count " +
                                  row[c_deaths]);
        }
        const auto j = weeks.find(w);
        if (!j) {
            ++skipped;
            continue;
        }
        auto& flag = seen[i * weeks.size() + *j];
        if (flag) {
            throw ValidationError(path.string() + ": row " + std::to_string(r + 1) + ": duplicate cell (" +
                                  row[c_prov] + ", " + to_string(w) + ")");
        }
        flag = 1;
        panel.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(*j)) = deaths;
    }

    if (log) {
        if (skipped > 0) {
            log->info("rows_outside_window", path.string() + ": " + std::to_string(skipped) +
                                                 " rows outside the week index skipped");
        }
        for (std::size_t i = 0; i < provinces.size(); ++i) {
            for (std::size_t j = 0; j < weeks.size(); ++j) {
                if (!seen[i * weeks.size() + j]) {
                    log->warn("missing_cell", path.string() + ": no row for (" + provinces.id(i) + ", " +
                                                  to_string(weeks.at(j)) + "), filled with 0");
                }
            }
        }
    }
    return panel;
}

PopulationTable load_population(const std::filesystem::path& path, const ProvinceIndex& provinces)
{
    const auto table = csv::read(path);
    const auto c_prov = table.column("province_id");
    const auto c_pop = table.column("population");

    PopulationTable out{provinces, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(provinces.size()))};
    std::vector<char> seen(provinces.size(), 0);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto i = require_province(provinces, row[c_prov], table, r);
        const double pop = csv::to_double(row[c_pop], table, r);
        if (!(pop > 0.0)) {
            throw ValidationError(path.string() + ": non-positive population for '" + row[c_prov] + "'");
        }
        if (seen[i]) {
            throw ValidationError(path.string() + ": duplicate population row for '" + row[c_prov] + "'");
        }
        seen[i] = 1;
        out.pop(static_cast<Eigen::Index>(i)) = pop;
    }
    for (std::size_t i = 0; i < provinces.size(); ++i) {
        if (!seen[i]) {
            throw ValidationError(path.string() + ": province uncovered: '" + provinces.id(i) + "'");
        }
    }
    return out;
}

ProvinceIndex read_province_index(const std::filesystem::path& population_csv)
{
    const auto table = csv::read(population_csv);
    const auto c_prov = table.column("province_id");
    std::vector<std::string> ids;
    ids.reserve(table.rows.size());
    for (const auto& row : table.rows) {
        ids.push_back(row[c_prov]);
    }
    return ProvinceIndex(std::move(ids));
}

MobilityStack load_mobility_stack(const std::filesystem::path& dir, const ProvinceIndex& provinces,
                                  ValidationLog* log)
{
    if (!std::filesystem::is_directory(dir)) {
        throw ValidationError("mobility directory not found: " + dir.string());
    }
    static const std::regex date_name(R"(\d{4}-\d{2}-\d{2})");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto& p = entry.path();
        if (!entry.is_regular_file() || p.extension() != ".csv") {
            continue;
        }
        if (!std::regex_match(p.stem().string(), date_name)) {
            if (log) {
                log->info("ignored_file", p.string() + ": name is not a YYYY-MM-DD date");
            }
            continue;
        }
        files.push_back(p);
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.stem().string() < b.stem().string(); });

    const auto n = static_cast<Eigen::Index>(provinces.size());
    MobilityStack stack{provinces, {}, {}};
    for (const auto& file : files) {
        const auto table = csv::read(file);
        const auto c_o = table.column("origin_id");
        const auto c_d = table.column("destination_id");
        const auto c_f = table.column("flow");
        Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto& row = table.rows[r];
            const auto o = require_province(provinces, row[c_o], table, r);
            const auto d = require_province(provinces, row[c_d], table, r);
            const double flow = csv::to_double(row[c_f], table, r);
            if (!(flow >= 0.0)) {
                throw ValidationError(file.string() + ": row " + std::to_string(r + 1) + ": negative flow " +
                                      row[c_f]);
            }
            if (!seen.emplace(o, d).second) {
                throw ValidationError(file.string() + ": duplicate pair (" + row[c_o] + ", " + row[c_d] + ")");
            }
            m(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(d)) = flow;
        }
        stack.days.push_back(file.stem().string());
        stack.flows.push_back(std::move(m));
    }
    return stack;
}

void write_weekly_panel(const std::filesystem::path& path, const ProvinceIndex& provinces,
                        const WeekIndex& weeks, const Eigen::MatrixXd& values, const std::string& value_column)
{
    auto out = open_out(path);
    out << "province_id,year,iso_week," << value_column << '\n';
    for (std::size_t i = 0; i < provinces.size(); ++i) {
        for (std::size_t j = 0; j < weeks.size(); ++j) {
            out << csv::escape(provinces.id(i)) << ',' << weeks.at(j).year << ',' << weeks.at(j).week << ','
                << csv::format_double(values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))
                << '\n';
        }
    }
}

void write_population(const std::filesystem::path& path, const PopulationTable& table)
{
    auto out = open_out(path);
    out << "province_id,population\n";
    for (std::size_t i = 0; i < table.provinces.size(); ++i) {
        out << csv::escape(table.provinces.id(i)) << ','
            << csv::format_double(table.pop(static_cast<Eigen::Index>(i))) << '\n';
    }
}

void write_mobility_day(const std::filesystem::path& path, const ProvinceIndex& provinces,
                        const Eigen::MatrixXd& flows)
{
    auto out = open_out(path);
    out << "origin_id,destination_id,flow\n";
    for (Eigen::Index o = 0; o < flows.rows(); ++o) {
        for (Eigen::Index d = 0; d < flows.cols(); ++d) {
            if (flows(o, d) != 0.0) {
                out << csv::escape(provinces.id(static_cast<std::size_t>(o))) << ','
                    << csv::escape(provinces.id(static_cast<std::size_t>(d))) << ','
                    << csv::format_double(flows(o, d)) << '\n';
            }
        }
    }
}

WeeklyTable read_weekly_table(const std::filesystem::path& path, const std::string& value_column)
{
    const auto table = csv::read(path);
    const auto c_prov = table.column("province_id");
    const auto c_year = table.column("year");
    const auto c_week = table.column("iso_week");
    const auto c_val = table.column(value_column);
    if (table.rows.empty()) {
        throw ValidationError(path.string() + ": no rows");
    }

    std::vector<std::string> ids;
    std::set<std::string> seen_ids;
    std::vector<IsoWeek> row_weeks(table.rows.size());
    IsoWeek lo{std::numeric_limits<int>::max(), 0};
    IsoWeek hi{0, 0};
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        if (seen_ids.insert(row[c_prov]).second) {
            ids.push_back(row[c_prov]);
        }
        row_weeks[r] = {static_cast<int>(csv::to_long(row[c_year], table, r)),
                        static_cast<int>(csv::to_long(row[c_week], table, r))};
        lo = std::min(lo, row_weeks[r]);
        hi = std::max(hi, row_weeks[r]);
    }
    WeeklyTable out{ProvinceIndex(std::move(ids)), WeekIndex::range(lo, hi), {}};
    const auto ns = out.provinces.size();
    const auto nt = out.weeks.size();
    out.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ns), static_cast<Eigen::Index>(nt));
    std::vector<char> seen(ns * nt, 0);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto i = *out.provinces.find(row[c_prov]);
        const auto j = *out.weeks.find(row_weeks[r]);
        if (seen[i * nt + j]) {
            throw ValidationError(path.string() + ": duplicate cell on row " + std::to_string(r + 1));
        }
        seen[i * nt + j] = 1;
        out.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            csv::to_double(row[c_val], table, r);
    }
    for (std::size_t k = 0; k < seen.size(); ++k) {
        if (!seen[k]) {
            throw ValidationError(path.string() + ": missing cell (" + out.provinces.id(k / nt) + ", " +
                                  to_string(out.weeks.at(k % nt)) + ")");
        }
    }
    return out;
}

}  // namespace epibias
