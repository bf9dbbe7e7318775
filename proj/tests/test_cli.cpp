#include "epibias/bias.hpp"
#include "epibias/cli.hpp"
#include "epibias/ingest.hpp"
#include "epibias/structure.hpp"
#include "fixtures.hpp"
#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <sys/wait.h>

using namespace epibias;
using epibias::cli::run_command;
using epibias::testing::read_file;
using epibias::testing::TempDir;
using epibias::testing::write_file;

namespace {

/// Runs a command in-process with stderr captured.
struct Captured {
    int code = 0;
    std::string err;
};

Captured run(const std::vector<std::string>& args)
{
    std::ostringstream buf;
    auto* old = std::cerr.rdbuf(buf.rdbuf());
    Captured c;
    c.code = run_command(args);
    std::cerr.rdbuf(old);
    c.err = buf.str();
    return c;
}

nlohmann::json load_json(const std::filesystem::path& p)
{
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

std::vector<std::string> fit_args(const TempDir& dir, const std::string& out, const std::string& extra_seed = "7")
{
    return {"fit",    "--bias",   (dir / "sim/bias_simulated.csv").string(), "--weights", (dir / "sim/weights.csv").string(),
            "--warmup", "300",    "--draws", "200", "--chains", "2", "--seed", extra_seed, "-o", (dir / out).string(),
            "--log",  (dir / (out + ".log")).string()};
}

}  // namespace

TEST_CASE("simulate then fit writes draws, metadata and a recovery report")
{
    TempDir dir("cli_pipeline");
    REQUIRE(run({"simulate", "--ns", "6", "--nt", "8", "--seed", "7", "-o", (dir / "sim").string()}).code == 0);
    for (const char* f : {"bias_simulated.csv", "weights.csv", "truth.json", "graph_report.json", "manifest.json"}) {
        CHECK(std::filesystem::exists(dir / "sim" / f));
    }
    auto args = fit_args(dir, "fit");
    args.insert(args.end(), {"--truth", (dir / "sim/truth.json").string(), "--save-latent"});
    REQUIRE(run(args).code == 0);

    const auto rec = load_json(dir / "fit/recovery.json");
    for (const char* p : {"V", "phi", "psi", "sigma2_eps"}) {
        const auto& e = rec.at("parameters").at(p);
        CHECK(e.at("q05").get<double>() <= e.at("q95").get<double>());
        CHECK(e.contains("covered90"));
    }
    const auto meta = load_json(dir / "fit/draws_meta.json");
    CHECK(meta.at("seed").get<int>() == 7);
    CHECK(meta.at("provinces").size() == 6);
    CHECK(meta.at("weeks").size() == 8);
    CHECK(meta.at("config").at("prior").at("U").get<double>() == 1.0);

    // 2 chains x 200 draws plus the header, 7 scalar and 6 + 8 + 48 latent columns
    const std::string draws = read_file(dir / "fit/draws.csv");
    CHECK(std::count(draws.begin(), draws.end(), '\n') == 401);
    const auto header = draws.substr(0, draws.find('\n'));
    CHECK(std::count(header.begin(), header.end(), ',') == 7 + 62 - 1);

    REQUIRE(run({"summarize", "--draws", (dir / "fit/draws.csv").string(), "-o", (dir / "sum").string()}).code == 0);
    for (const char* f : {"variance_shares.csv", "spatial_effect.csv", "temporal_effect.csv", "fitted.csv"}) {
        CHECK(std::filesystem::exists(dir / "sum" / f));
    }
    REQUIRE(run({"cluster", "--fitted", (dir / "sum/fitted.csv").string(), "--k", "2", "-o", (dir / "clu").string()})
                .code == 0);
    CHECK(std::filesystem::exists(dir / "clu/clusters.csv"));
}

TEST_CASE("fit reruns are byte-identical and independent of the thread count")
{
    TempDir dir("cli_determinism");
    REQUIRE(run({"simulate", "--ns", "6", "--nt", "5", "--seed", "3", "-o", (dir / "sim").string()}).code == 0);
    REQUIRE(run(fit_args(dir, "a")).code == 0);
    REQUIRE(run(fit_args(dir, "b")).code == 0);
    auto threaded = fit_args(dir, "c");
    threaded.insert(threaded.end(), {"--threads", "2"});
    REQUIRE(run(threaded).code == 0);
    REQUIRE(run(fit_args(dir, "d", "8")).code == 0);

    const auto a = read_file(dir / "a/draws.csv");
    CHECK(a == read_file(dir / "b/draws.csv"));
    CHECK(a == read_file(dir / "c/draws.csv"));
    CHECK(a != read_file(dir / "d/draws.csv"));
    CHECK(read_file(dir / "a/draws_meta.json") == read_file(dir / "b/draws_meta.json"));

    const auto manifest = load_json(dir / "a/manifest.json");
    const auto& outputs = manifest.at("stages").at("fit").at("outputs");
    REQUIRE(outputs.size() == 2);
    CHECK(outputs[0].at("path") == "draws.csv");
    CHECK(outputs[0].at("sha256") == cli::sha256_file((dir / "a/draws.csv").string()));
}

TEST_CASE("sha256 of a known string")
{
    TempDir dir("cli_sha");
    write_file(dir / "abc.txt", "abc");
    CHECK(cli::sha256_file((dir / "abc.txt").string()) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("exit codes")
{
    TempDir dir("cli_exit");
    const auto missing = (dir / "absent.csv").string();
    auto r = run({"fit", "--bias", missing, "--weights", missing, "-o", (dir / "o").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find(missing) != std::string::npos);

    CHECK(run({"fit", "--bias", "x", "--weights", "y", "--no-such-flag"}).code == 64);
    CHECK(run({"frobnicate"}).code == 64);
    CHECK(run({}).code == 64);
    CHECK(run({"simulate", "--graph", "torus"}).code == 64);
    CHECK(run({"--help"}).code == 0);

    // psi outside (0, 1]
    CHECK(run({"simulate", "--psi", "1.5", "-o", (dir / "s").string()}).code == 1);

    write_file(dir / "bad.json", R"({"no_such_key": 1})");
    CHECK(run({"--config", (dir / "bad.json").string(), "simulate", "-o", (dir / "s").string()}).code == 1);
}

TEST_CASE("summarize requires latent draws")
{
    TempDir dir("cli_latent");
    REQUIRE(run({"simulate", "--ns", "5", "--nt", "4", "-o", (dir / "sim").string()}).code == 0);
    REQUIRE(run(fit_args(dir, "fit")).code == 0);
    const auto r = run({"summarize", "--draws", (dir / "fit/draws.csv").string(), "-o", (dir / "sum").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("--save-latent") != std::string::npos);
}

TEST_CASE("ingest, excess and bias on a hand-computed panel")
{
    TempDir dir("cli_stages");
    const auto raw = dir / "raw";
    write_file(raw / "population.csv", "province_id,population\nP1,1000\nP2,2000\n");
    write_file(raw / "deaths_allcause_2019.csv",
               "province_id,year,iso_week,deaths\n"
               "P1,2019,10,10\nP1,2019,11,10\nP1,2019,12,10\nP2,2019,10,20\nP2,2019,11,20\nP2,2019,12,20\n");
    write_file(raw / "deaths_allcause_2020.csv",
               "province_id,year,iso_week,deaths\n"
               "P1,2020,10,10\nP1,2020,11,13\nP1,2020,12,16\nP2,2020,10,20\nP2,2020,11,20\nP2,2020,12,20\n");
    // P2 week 12 absent (zero-filled); week 9 lies outside the window
    write_file(raw / "deaths_official.csv",
               "province_id,year,iso_week,deaths\n"
               "P1,2020,9,5\nP1,2020,10,1\nP1,2020,11,1\nP1,2020,12,1\nP2,2020,10,0\nP2,2020,11,0\n");
    const auto out = (dir / "out").string();
    const auto log = (dir / "ingest.log").string();
    REQUIRE(run({"ingest", "--data", raw.string(), "--start", "2020-W10", "--end", "2020-W12", "-o", out, "--log", log})
                .code == 0);
    CHECK(read_file(log).find("missing_cell") != std::string::npos);
    REQUIRE(run({"excess", "-o", out}).code == 0);
    REQUIRE(run({"bias", "-o", out}).code == 0);

    const auto ex = read_weekly_table(dir / "out/excess.csv", "dhat");
    Eigen::MatrixXd expected(2, 3);
    expected << 1.5, 3.0, 4.5, 0.0, 0.0, 0.0;
    CHECK(ex.values == expected);

    const auto mul = read_bias_panel(dir / "out/bias_multiplicative.csv", BiasKind::Multiplicative);
    CHECK(mul.values(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(mul.values(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(mul.values(0, 2) == doctest::Approx(7.0 / 9.0).epsilon(1e-15));
    CHECK(std::isnan(mul.values(1, 0)));
    const auto add = read_bias_panel(dir / "out/bias_additive.csv", BiasKind::Additive);
    CHECK(add.values(0, 0) == 0.5);
    CHECK(add.values(0, 2) == 3.5);
    CHECK(add.values(1, 1) == 0.0);

    const auto clamp = load_json(dir / "out/clamp_log.json");
    CHECK(clamp.at("multiplicative").at("n_clamped").get<int>() == 3);

    const auto manifest = load_json(dir / "out/manifest.json");
    for (const char* stage : {"ingest", "excess", "bias"}) {
        CHECK(manifest.at("stages").contains(stage));
    }
}

TEST_CASE("build-graph reproduces the hand-computed five-province weights")
{
    TempDir dir("cli_graph");
    const auto stack = epibias::testing::five_province_flows();
    write_file(dir / "in/population.csv", "province_id,population\nA,1\nB,1\nC,1\nD,1\nE,1\n");
    for (std::size_t k = 0; k < stack.days.size(); ++k) {
        write_mobility_day(dir / "in/mobility" / (stack.days[k] + ".csv"), stack.provinces, stack.flows[k]);
    }
    REQUIRE(run({"build-graph", "--input", (dir / "in").string(), "-o", (dir / "g").string()}).code == 0);
    const SparseMatrix w = read_weights(dir / "g/weights.csv", stack.provinces);
    CHECK(Eigen::MatrixXd(w) == epibias::testing::five_province_expected_weights());
    const auto report = load_json(dir / "g/graph_report.json");
    CHECK(report.at("n_components").get<int>() == 2);
    CHECK(report.at("nnz").get<int>() == 6);
    CHECK(report.at("scaled").get<bool>());

    REQUIRE(run({"build-graph", "--input", (dir / "in").string(), "--no-scale", "-o", (dir / "u").string()}).code == 0);
    CHECK_FALSE(load_json(dir / "u/graph_report.json").at("scaled").get<bool>());
}

TEST_CASE("the installed binary reports usage errors with exit code 64")
{
    const std::string cmd = std::string("\"") + EPIBIAS_BINARY + "\" fit --definitely-unknown >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 64);
}
