#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace epibias {

/// ISO-8601 week of a given ISO week-numbering year.
struct IsoWeek {
    int year = 0;
    int week = 0;

    auto operator<=>(const IsoWeek&) const = default;
};

/// Number of ISO weeks (52 or 53) in an ISO week-numbering year.
int iso_weeks_in_year(int year);
IsoWeek next_week(IsoWeek w);
/// ISO week containing a proleptic Gregorian calendar date.
IsoWeek iso_week_of(int year, unsigned month, unsigned day);

/// Parses "2020-W09" (or "2020-9").
IsoWeek parse_iso_week(const std::string& text);
std::string to_string(IsoWeek w);

/// Ordered province identifiers; position i is row i of every panel and matrix.
class ProvinceIndex {
public:
    ProvinceIndex() = default;
    explicit ProvinceIndex(std::vector<std::string> ids);

    std::size_t size() const { return ids_.size(); }
    const std::string& id(std::size_t i) const { return ids_.at(i); }
    const std::vector<std::string>& ids() const { return ids_; }
    std::optional<std::size_t> find(const std::string& id) const;

    bool operator==(const ProvinceIndex& other) const { return ids_ == other.ids_; }

private:
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> positions_;
};

/// Contiguous, strictly increasing run of ISO weeks.
class WeekIndex {
public:
    WeekIndex() = default;
    explicit WeekIndex(std::vector<IsoWeek> weeks);
    static WeekIndex range(IsoWeek first, IsoWeek last);

    std::size_t size() const { return weeks_.size(); }
    const IsoWeek& at(std::size_t j) const { return weeks_.at(j); }
    const std::vector<IsoWeek>& weeks() const { return weeks_; }
    std::optional<std::size_t> find(IsoWeek w) const;

    /// Same run of weeks moved by a whole number of years (baseline alignment by ISO week).
    WeekIndex shifted(int years) const;
    /// True when both indices list the same ISO week numbers in the same order.
    bool same_iso_weeks(const WeekIndex& other) const;

    bool operator==(const WeekIndex& other) const { return weeks_ == other.weeks_; }

private:
    std::vector<IsoWeek> weeks_;
};

struct MortalityPanel {
    ProvinceIndex provinces;
    WeekIndex weeks;
    Eigen::MatrixXd counts;  // provinces x weeks, deaths per week
    int year_label = 0;
};

struct PopulationTable {
    ProvinceIndex provinces;
    Eigen::VectorXd pop;
};

struct MobilityStack {
    ProvinceIndex provinces;
    std::vector<std::string> days;       // YYYY-MM-DD, ascending
    std::vector<Eigen::MatrixXd> flows;  // one origin x destination matrix per day
};

/// One record of the ingest validation log, emitted as a JSON line.
struct LogEntry {
    std::string level;  // "info" | "warning"
    std::string code;
    std::string message;
};

class ValidationLog {
public:
    void info(std::string code, std::string message);
    void warn(std::string code, std::string message);
    const std::vector<LogEntry>& entries() const { return entries_; }
    std::size_t count(const std::string& code) const;
    void write_jsonl(std::ostream& out) const;

private:
    std::vector<LogEntry> entries_;
};

/// Reads province_id,year,iso_week,deaths rows onto the given indices.
/// Cells absent from the file are zero and logged; rows outside the week index are skipped.
MortalityPanel load_weekly_deaths_panel(const std::filesystem::path& path, const ProvinceIndex& provinces,
                                        const WeekIndex& weeks, ValidationLog* log = nullptr);

PopulationTable load_population(const std::filesystem::path& path, const ProvinceIndex& provinces);

/// Province index in file order of a population table (province_id column).
ProvinceIndex read_province_index(const std::filesystem::path& population_csv);

/// Reads every <YYYY-MM-DD>.csv under dir (origin_id,destination_id,flow).
MobilityStack load_mobility_stack(const std::filesystem::path& dir, const ProvinceIndex& provinces,
                                  ValidationLog* log = nullptr);

/// A complete province x week panel read from province_id,year,iso_week,<value_column>.
struct WeeklyTable {
    ProvinceIndex provinces;  // first-appearance order
    WeekIndex weeks;          // earliest to latest week present
    Eigen::MatrixXd values;
};

/// Every cell must be present exactly once.
WeeklyTable read_weekly_table(const std::filesystem::path& path, const std::string& value_column);

void write_weekly_panel(const std::filesystem::path& path, const ProvinceIndex& provinces,
                        const WeekIndex& weeks, const Eigen::MatrixXd& values,
                        const std::string& value_column);
void write_population(const std::filesystem::path& path, const PopulationTable& table);
void write_mobility_day(const std::filesystem::path& path, const ProvinceIndex& provinces,
                        const Eigen::MatrixXd& flows);

}  // namespace epibias
