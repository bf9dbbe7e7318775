#include "epibias/error.hpp"
#include "epibias/ingest.hpp"
#include "support.hpp"

#include <doctest.h>

#include <sstream>

using namespace epibias;
using epibias::testing::TempDir;
using epibias::testing::write_file;

namespace {

ProvinceIndex two_provinces()
{
    return ProvinceIndex({"P1", "P2"});
}

}  // namespace

TEST_CASE("iso week arithmetic")
{
    CHECK(iso_weeks_in_year(2020) == 53);
    CHECK(iso_weeks_in_year(2019) == 52);
    CHECK(iso_weeks_in_year(2015) == 53);
    CHECK(next_week({2020, 53}) == IsoWeek{2021, 1});
    CHECK(next_week({2019, 52}) == IsoWeek{2020, 1});
    // 2020-02-24 (study start) is the Monday of week 9
    CHECK(iso_week_of(2020, 2, 24) == IsoWeek{2020, 9});
    CHECK(iso_week_of(2021, 1, 3) == IsoWeek{2020, 53});
    CHECK(iso_week_of(2019, 12, 30) == IsoWeek{2020, 1});
    CHECK(parse_iso_week("2020-W09") == IsoWeek{2020, 9});
    CHECK(to_string(IsoWeek{2020, 9}) == "2020-W09");
    CHECK_THROWS_AS(parse_iso_week("2019-W53"), ValidationError);
    CHECK_THROWS_AS(parse_iso_week("week 9"), ValidationError);
}

TEST_CASE("indices validate their contents")
{
    CHECK_THROWS_AS(ProvinceIndex({"P1", "P1"}), ValidationError);
    CHECK_THROWS_AS(ProvinceIndex({"P1", ""}), ValidationError);
    CHECK_THROWS_AS(WeekIndex({{2020, 9}, {2020, 11}}), ValidationError);
    const auto w = WeekIndex::range({2019, 51}, {2020, 2});
    CHECK(w.size() == 4);
    CHECK(w.find({2020, 1}) == 2u);
    CHECK(w.shifted(-1).same_iso_weeks(w));
}

TEST_CASE("deaths panel: direct placement")
{
    TempDir dir("ingest");
    write_file(dir / "d.csv", "province_id,year,iso_week,deaths\nP1,2020,1,10\nP2,2020,1,7\n");
    const auto panel = load_weekly_deaths_panel(dir / "d.csv", two_provinces(), WeekIndex({{2020, 1}}));
    REQUIRE(panel.counts.rows() == 2);
    REQUIRE(panel.counts.cols() == 1);
    CHECK(panel.counts(0, 0) == 10.0);
    CHECK(panel.counts(1, 0) == 7.0);
    CHECK(panel.year_label == 2020);
}

TEST_CASE("deaths panel: empty file is zero-filled with one warning per cell")
{
    TempDir dir("ingest");
    write_file(dir / "d.csv", "province_id,year,iso_week,deaths\n");
    ValidationLog log;
    const auto weeks = WeekIndex::range({2020, 1}, {2020, 3});
    const auto panel = load_weekly_deaths_panel(dir / "d.csv", two_provinces(), weeks, &log);
    CHECK(panel.counts.rows() == 2);
    CHECK(panel.counts.cols() == 3);
    CHECK(panel.counts.isZero());
    CHECK(log.count("missing_cell") == 6);
    std::ostringstream out;
    log.write_jsonl(out);
    CHECK(out.str().find("\"level\":\"warning\"") != std::string::npos);
}

TEST_CASE("deaths panel: hard errors")
{
    TempDir dir("ingest");
    const auto weeks = WeekIndex({{2020, 1}});
    write_file(dir / "neg.csv", "province_id,year,iso_week,deaths\nP1,2020,1,-1\n");
    CHECK_THROWS_WITH_AS(load_weekly_deaths_panel(dir / "neg.csv", two_provinces(), weeks),
                         doctest::Contains("negative count"), ValidationError);
    write_file(dir / "unk.csv", "province_id,year,iso_week,deaths\nP9,2020,1,3\n");
    CHECK_THROWS_WITH_AS(load_weekly_deaths_panel(dir / "unk.csv", two_provinces(), weeks),
                         doctest::Contains("unknown province"), ValidationError);
    write_file(dir / "dup.csv", "province_id,year,iso_week,deaths\nP1,2020,1,3\nP1,2020,1,4\n");
    CHECK_THROWS_WITH_AS(load_weekly_deaths_panel(dir / "dup.csv", two_provinces(), weeks),
                         doctest::Contains("duplicate cell"), ValidationError);
    CHECK_THROWS_WITH_AS(load_weekly_deaths_panel(dir / "absent.csv", two_provinces(), weeks),
                         doctest::Contains("absent.csv"), ValidationError);
}

TEST_CASE("deaths panel: rows outside the window are skipped and totals preserved")
{
    TempDir dir("ingest");
    write_file(dir / "d.csv",
               "province_id,year,iso_week,deaths\nP1,2020,1,4\nP1,2020,2,5.5\nP2,2020,2,1\nP2,2020,7,100\n");
    ValidationLog log;
    const auto panel =
        load_weekly_deaths_panel(dir / "d.csv", two_provinces(), WeekIndex::range({2020, 1}, {2020, 2}), &log);
    CHECK(panel.counts.sum() == doctest::Approx(10.5));
    CHECK(log.count("rows_outside_window") == 1);
    CHECK(log.count("missing_cell") == 1);
}

TEST_CASE("deaths panel round-trips through CSV")
{
    TempDir dir("ingest");
    const auto provinces = ProvinceIndex({"A", "B", "C"});
    const auto weeks = WeekIndex::range({2020, 52}, {2021, 2});
    Eigen::MatrixXd counts(3, 4);
    counts << 1, 2, 3, 4, 0.1, 0.2, 1e-7, 123456789.125, 9, 8, 7, 6;
    write_weekly_panel(dir / "p.csv", provinces, weeks, counts, "deaths");
    const auto back = load_weekly_deaths_panel(dir / "p.csv", provinces, weeks);
    CHECK(back.provinces == provinces);
    CHECK(back.weeks == weeks);
    CHECK(back.counts == counts);
}

TEST_CASE("population table")
{
    TempDir dir("ingest");
    write_file(dir / "pop.csv", "province_id,population\nP1,500000\nP2,120000\n");
    const auto pop = load_population(dir / "pop.csv", two_provinces());
    CHECK(pop.pop(0) == 500000.0);
    CHECK(pop.pop(1) == 120000.0);
    CHECK(read_province_index(dir / "pop.csv") == two_provinces());

    write_file(dir / "missing.csv", "province_id,population\nP1,500000\n");
    CHECK_THROWS_WITH_AS(load_population(dir / "missing.csv", two_provinces()),
                         doctest::Contains("province uncovered"), ValidationError);
    write_file(dir / "zero.csv", "province_id,population\nP1,0\nP2,5\n");
    CHECK_THROWS_WITH_AS(load_population(dir / "zero.csv", two_provinces()),
                         doctest::Contains("non-positive population"), ValidationError);

    write_population(dir / "rt.csv", pop);
    CHECK(load_population(dir / "rt.csv", two_provinces()).pop == pop.pop);
}

TEST_CASE("mobility stack")
{
    TempDir dir("ingest");
    write_file(dir / "m" / "2020-01-19.csv", "origin_id,destination_id,flow\nP1,P2,0.5\n");
    write_file(dir / "m" / "2020-01-18.csv", "origin_id,destination_id,flow\nP1,P2,0.3\nP2,P1,0.1\n");
    write_file(dir / "m" / "README.txt", "notes");
    write_file(dir / "m" / "summary.csv", "origin_id,destination_id,flow\n");
    ValidationLog log;
    const auto stack = load_mobility_stack(dir / "m", two_provinces(), &log);
    REQUIRE(stack.days.size() == 2);
    CHECK(stack.days[0] == "2020-01-18");
    CHECK(stack.days[1] == "2020-01-19");
    Eigen::Matrix2d expected;
    expected << 0, 0.3, 0.1, 0;
    CHECK(stack.flows[0] == expected);
    CHECK(stack.flows[1](0, 1) == 0.5);
    CHECK(stack.flows[1](1, 0) == 0.0);
    CHECK(log.count("ignored_file") == 1);

    write_file(dir / "bad" / "2020-01-18.csv", "origin_id,destination_id,flow\nP1,P2,-0.2\n");
    CHECK_THROWS_WITH_AS(load_mobility_stack(dir / "bad", two_provinces()), doctest::Contains("negative flow"),
                         ValidationError);
    write_file(dir / "unk" / "2020-01-18.csv", "origin_id,destination_id,flow\nP1,P7,0.2\n");
    CHECK_THROWS_AS(load_mobility_stack(dir / "unk", two_provinces()), ValidationError);
    CHECK_THROWS_AS(load_mobility_stack(dir / "nowhere", two_provinces()), ValidationError);
}

TEST_CASE("mobility day round-trip")
{
    TempDir dir("ingest");
    Eigen::Matrix2d flows;
    flows << 0.0, 0.25, 0.125, 0.0;
    write_mobility_day(dir / "m" / "2020-02-01.csv", two_provinces(), flows);
    const auto stack = load_mobility_stack(dir / "m", two_provinces());
    CHECK(stack.flows.at(0) == flows);
}
