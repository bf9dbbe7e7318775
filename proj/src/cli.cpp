#include "epibias/cli.hpp"

#include "epibias/bias.hpp"
#include "epibias/cluster.hpp"
#include "epibias/convergence.hpp"
#include "epibias/csv.hpp"
#include "epibias/draws_io.hpp"
#include "epibias/error.hpp"
#include "epibias/excess.hpp"
#include "epibias/ingest.hpp"
#include "epibias/posterior.hpp"
#include "epibias/sampler.hpp"
#include "epibias/simulate.hpp"
#include "epibias/structure.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <regex>
#include <sstream>

namespace epibias::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<const char*, 4> kHyperNames{"V", "phi", "psi", "sigma2_eps"};

struct Globals {
    std::string config;
    std::string out = ".";
    std::string log;
    std::uint64_t seed = 1;
    int threads = 1;
};

/// Effective settings: defaults overridden by --config, then by subcommand flags.
struct Settings {
    std::optional<std::string> response;
    std::optional<double> U;
    PriorConfig prior;
    double eps_clamp = 1e-4;
    int chains = 4;
    int warmup = 2000;
    int draws = 2000;
    int thin = 1;
    double quantile_keep = 0.2;
    int k_min = 2;
    int k_max = 8;
};

template <typename T>
void take(const json& obj, const char* key, T& target)
{
    if (obj.contains(key)) {
        target = obj.at(key).get<T>();
    }
}

Settings load_settings(const std::string& path)
{
    Settings s;
    if (path.empty()) {
        return s;
    }
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open config " + path);
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    if (!doc.is_object()) {
        throw ValidationError(path + ": config must be a JSON object");
    }
    static const std::vector<std::string> known{"response", "U",     "alpha",        "lambda_psi", "eps_shape",
                                                "eps_rate", "mu_sd", "eps_clamp",    "sampler",    "quantile_keep",
                                                "k_min",    "k_max"};
    for (const auto& [key, value] : doc.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ValidationError(path + ": unknown config key '" + key + "'");
        }
    }
    try {
        if (doc.contains("response")) {
            s.response = doc.at("response").get<std::string>();
            parse_bias_kind(*s.response);
        }
        if (doc.contains("U")) {
            s.U = doc.at("U").get<double>();
        }
        take(doc, "alpha", s.prior.alpha);
        take(doc, "lambda_psi", s.prior.lambda_psi);
        take(doc, "eps_shape", s.prior.eps_shape);
        take(doc, "eps_rate", s.prior.eps_rate);
        take(doc, "mu_sd", s.prior.mu_sd);
        take(doc, "eps_clamp", s.eps_clamp);
        take(doc, "quantile_keep", s.quantile_keep);
        take(doc, "k_min", s.k_min);
        take(doc, "k_max", s.k_max);
        if (doc.contains("sampler")) {
            const auto& sm = doc.at("sampler");
            take(sm, "chains", s.chains);
            take(sm, "warmup", s.warmup);
            take(sm, "draws", s.draws);
            take(sm, "thin", s.thin);
        }
    } catch (const json::exception& e) {
        throw ValidationError(path + ": " + e.what());
    }
    return s;
}

json prior_json(const PriorConfig& p)
{
    return {{"U", p.U},
            {"alpha", p.alpha},
            {"lambda_psi", p.lambda_psi},
            {"eps_shape", p.eps_shape},
            {"eps_rate", p.eps_rate},
            {"mu_sd", p.mu_sd}};
}

json hyper_json(const HyperParams& hp)
{
    return {{"V", hp.V}, {"phi", hp.phi}, {"psi", hp.psi}, {"sigma2_eps", hp.sigma2_eps}};
}

double hyper_value(const HyperParams& hp, std::size_t k)
{
    const std::array<double, 4> v{hp.V, hp.phi, hp.psi, hp.sigma2_eps};
    return v.at(k);
}

void write_json(const fs::path& path, const json& doc)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    out << doc.dump(2) << '\n';
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ValidationError("cannot open " + path.string());
    }
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::ofstream open_csv(const fs::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    return out;
}

/// Bookkeeping for one stage: recorded inputs and outputs end up in the output
/// directory's manifest.json, one entry per stage name.
class Stage {
public:
    Stage(std::string name, const Globals& g, ValidationLog& log)
        : name_(std::move(name)), globals_(g), out_dir_(g.out), log_(log)
    {
        fs::create_directories(out_dir_);
    }

    fs::path out(const std::string& file) const { return out_dir_ / file; }

    void input(const fs::path& p)
    {
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(p)) {
                if (e.is_regular_file()) {
                    files.push_back(e.path());
                }
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                input(f);
            }
            return;
        }
        if (!fs::exists(p)) {
            throw ValidationError("input not found: " + p.string());
        }
        inputs_.push_back({{"path", p.generic_string()}, {"sha256", sha256_file(p.string())}});
    }

    void output(const fs::path& p)
    {
        outputs_.push_back(
            {{"path", p.lexically_relative(out_dir_).generic_string()}, {"sha256", sha256_file(p.string())}});
    }

    void config(json c) { config_ = std::move(c); }

    void finish()
    {
        const fs::path path = out("manifest.json");
        json manifest{{"tool", "epibias"}, {"version", kVersion}, {"stages", json::object()}};
        if (fs::exists(path)) {
            try {
                json old = read_json(path);
                if (old.contains("stages") && old.at("stages").is_object()) {
                    manifest["stages"] = old.at("stages");
                }
            } catch (const ValidationError&) {
                log_.warn("manifest", path.string() + " was unreadable and has been replaced");
            }
        }
        manifest["stages"][name_] = {{"seed", globals_.seed},
                                     {"config", config_},
                                     {"inputs", inputs_},
                                     {"outputs", outputs_}};
        write_json(path, manifest);
    }

private:
    std::string name_;
    Globals globals_;
    fs::path out_dir_;
    ValidationLog& log_;
    json config_ = json::object();
    json inputs_ = json::array();
    json outputs_ = json::array();
};

fs::path or_default(const std::string& given, const fs::path& fallback)
{
    return given.empty() ? fallback : fs::path(given);
}

MortalityPanel as_panel(WeeklyTable t, int year)
{
    return MortalityPanel{std::move(t.provinces), std::move(t.weeks), std::move(t.values), year};
}

/// deaths_allcause_<year>.csv files of a directory, by year.
std::map<int, fs::path> allcause_files(const fs::path& dir)
{
    if (!fs::is_directory(dir)) {
        throw ValidationError("not a directory: " + dir.string());
    }
    static const std::regex pattern(R"(deaths_allcause_(\d{4})\.csv)");
    std::map<int, fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && std::regex_match(name, m, pattern)) {
            files.emplace(std::stoi(m[1].str()), e.path());
        }
    }
    return files;
}

json structure_report(const SpatialStructure& s, bool scale, const std::string& source,
                      std::optional<double> quantile_keep)
{
    std::vector<int> sizes(static_cast<std::size_t>(s.n_components), 0);
    for (int c : s.component) {
        ++sizes[static_cast<std::size_t>(c)];
    }
    const Eigen::VectorXd& d = s.degrees;
    json report{{"source", source},
                {"n_provinces", s.size()},
                {"n_components", s.n_components},
                {"component_sizes", sizes},
                {"nnz", s.weights.nonZeros()},
                {"n_edges", s.weights.nonZeros() / 2},
                {"degree", {{"min", d.minCoeff()}, {"mean", d.mean()}, {"max", d.maxCoeff()}}},
                {"quantile_keep", quantile_keep ? json(*quantile_keep) : json(nullptr)},
                {"scaled", scale}};
    report["scale_factor"] = scale ? scaled(s).scale_factor : 1.0;
    return report;
}

// ---------------------------------------------------------------- ingest

struct IngestOptions {
    std::string data;
    std::string start;
    std::string end;
    std::vector<int> baseline_years;
};

int run_ingest(const IngestOptions& o, const Globals& g, ValidationLog& log)
{
    Stage stage("ingest", g, log);
    const fs::path data(o.data);
    const IsoWeek first = parse_iso_week(o.start);
    const IsoWeek last = parse_iso_week(o.end);
    const WeekIndex window = WeekIndex::range(first, last);
    const int year = first.year;

    const fs::path pop_path = data / "population.csv";
    stage.input(pop_path);
    const ProvinceIndex provinces = read_province_index(pop_path);
    const PopulationTable pop = load_population(pop_path, provinces);

    const auto files = allcause_files(data);
    if (!files.count(year)) {
        throw ValidationError("missing " + (data / ("deaths_allcause_" + std::to_string(year) + ".csv")).string());
    }
    std::vector<int> baseline = o.baseline_years;
    if (baseline.empty()) {
        for (const auto& [y, p] : files) {
            if (y < year) {
                baseline.push_back(y);
            }
        }
    }
    if (baseline.empty()) {
        throw ValidationError("no baseline years: expected deaths_allcause_<year>.csv for years before " +
                              std::to_string(year) + " in " + data.string());
    }

    write_population(stage.out("population.csv"), pop);
    stage.output(stage.out("population.csv"));

    std::vector<int> years = baseline;
    years.push_back(year);
    for (int y : years) {
        const fs::path src = data / ("deaths_allcause_" + std::to_string(y) + ".csv");
        stage.input(src);
        const auto panel = load_weekly_deaths_panel(src, provinces, window.shifted(y - year), &log);
        const fs::path dst = stage.out("deaths_allcause_" + std::to_string(y) + ".csv");
        write_weekly_panel(dst, provinces, panel.weeks, panel.counts, "deaths");
        stage.output(dst);
    }

    const fs::path official = data / "deaths_official.csv";
    stage.input(official);
    const auto off = load_weekly_deaths_panel(official, provinces, window, &log);
    write_weekly_panel(stage.out("deaths_official.csv"), provinces, window, off.counts, "deaths");
    stage.output(stage.out("deaths_official.csv"));

    const fs::path mobility = data / "mobility";
    if (fs::is_directory(mobility)) {
        stage.input(mobility);
        const auto stack = load_mobility_stack(mobility, provinces, &log);
        for (std::size_t k = 0; k < stack.days.size(); ++k) {
            const fs::path dst = stage.out("mobility") / (stack.days[k] + ".csv");
            write_mobility_day(dst, provinces, stack.flows[k]);
            stage.output(dst);
        }
    } else {
        log.info("no_mobility", "no mobility directory under " + data.string());
    }

    stage.config({{"start", to_string(first)}, {"end", to_string(last)}, {"baseline_years", baseline}});
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- excess

struct ExcessOptions {
    std::string input;
    std::optional<int> year;
};

int run_excess(const ExcessOptions& o, const Globals& g, ValidationLog& log)
{
    Stage stage("excess", g, log);
    const fs::path dir = or_default(o.input, g.out);
    const auto files = allcause_files(dir);
    if (files.empty()) {
        throw ValidationError("no deaths_allcause_<year>.csv files in " + dir.string());
    }
    const int year = o.year.value_or(files.rbegin()->first);
    if (!files.count(year)) {
        throw ValidationError("missing " + (dir / ("deaths_allcause_" + std::to_string(year) + ".csv")).string());
    }
    stage.input(files.at(year));
    const auto current = as_panel(read_weekly_table(files.at(year), "deaths"), year);
    std::vector<MortalityPanel> baseline;
    std::vector<int> baseline_years;
    for (const auto& [y, p] : files) {
        if (y == year) {
            continue;
        }
        stage.input(p);
        baseline.push_back(as_panel(read_weekly_table(p, "deaths"), y));
        baseline_years.push_back(y);
    }
    if (baseline.empty()) {
        throw ValidationError("no baseline years besides " + std::to_string(year) + " in " + dir.string());
    }
    const auto ex = compute_excess(current, compute_baseline(baseline));
    const std::size_t negative = static_cast<std::size_t>((ex.dhat.array() < 0.0).count());
    if (negative > 0) {
        log.info("negative_excess", std::to_string(negative) + " cells have negative excess deaths");
    }
    write_weekly_panel(stage.out("excess.csv"), ex.provinces, ex.weeks, ex.dhat, "dhat");
    stage.output(stage.out("excess.csv"));
    stage.config({{"year", year}, {"baseline_years", baseline_years}, {"smoothing_window", kExcessSmoothingWindow}});
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- bias

struct BiasOptions {
    std::string input;
    std::string excess;
    std::string official;
    std::string population;
};

int run_bias(const BiasOptions& o, const Globals& g, const Settings& s, ValidationLog& log)
{
    Stage stage("bias", g, log);
    const fs::path dir = or_default(o.input, g.out);
    const fs::path excess_path = or_default(o.excess, dir / "excess.csv");
    const fs::path official_path = or_default(o.official, dir / "deaths_official.csv");
    const fs::path pop_path = or_default(o.population, dir / "population.csv");
    for (const auto& p : {excess_path, official_path, pop_path}) {
        stage.input(p);
    }
    auto t = read_weekly_table(excess_path, "dhat");
    const ExcessPanel ex{t.provinces, t.weeks, t.values};
    const auto official = as_panel(read_weekly_table(official_path, "deaths"), t.weeks.at(0).year);
    const auto pop = load_population(pop_path, ex.provinces);

    const BiasPanel add = additive_bias(ex, official, pop);
    const BiasPanel mul = multiplicative_bias(ex, official);
    write_bias_panel(stage.out("bias_additive.csv"), add);
    write_bias_panel(stage.out("bias_multiplicative.csv"), mul);

    std::vector<BiasPanel> prepared;
    for (const auto* panel : {&add, &mul}) {
        prepared.push_back(prepare_response(*panel, s.eps_clamp).panel);
        log.info("clamped", to_string(panel->kind) + ": " + std::to_string(prepared.back().clamped_cells.size()) +
                                " cells modified before the logit");
    }
    write_clamp_log(stage.out("clamp_log.json"), prepared, s.eps_clamp);
    for (const char* f : {"bias_additive.csv", "bias_multiplicative.csv", "clamp_log.json"}) {
        stage.output(stage.out(f));
    }
    stage.config({{"eps_clamp", s.eps_clamp}});
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- build-graph

struct GraphOptions {
    std::string input;
    std::string mobility;
    std::string population;
    std::string adjacency;
    std::optional<double> quantile_keep;
    bool no_scale = false;
};

int run_build_graph(const GraphOptions& o, const Globals& g, const Settings& s, ValidationLog& log)
{
    Stage stage("build-graph", g, log);
    const fs::path dir = or_default(o.input, g.out);
    const fs::path pop_path = or_default(o.population, dir / "population.csv");
    stage.input(pop_path);
    const ProvinceIndex provinces = read_province_index(pop_path);
    const double q = o.quantile_keep.value_or(s.quantile_keep);

    SpatialStructure graph;
    std::string source;
    if (!o.adjacency.empty()) {
        stage.input(o.adjacency);
        graph = spatial_structure_from_weights(read_weights(o.adjacency, provinces));
        source = "adjacency";
    } else {
        const fs::path mob = or_default(o.mobility, dir / "mobility");
        stage.input(mob);
        graph = build_mobility_weights(load_mobility_stack(mob, provinces, &log), q);
        source = "mobility";
    }
    if (graph.n_components > 1) {
        log.warn("disconnected_graph", "graph has " + std::to_string(graph.n_components) +
                                           " connected components; constraints are applied per component");
    }
    write_weights(stage.out("weights.csv"), provinces, graph.weights);
    const auto report =
        structure_report(graph, !o.no_scale, source, o.adjacency.empty() ? std::optional<double>(q) : std::nullopt);
    write_json(stage.out("graph_report.json"), report);
    stage.output(stage.out("weights.csv"));
    stage.output(stage.out("graph_report.json"));
    stage.config({{"source", source}, {"quantile_keep", q}, {"scaled", !o.no_scale}});
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- fit

struct FitOptions {
    std::string bias;
    std::string weights;
    std::string kind;
    std::string truth;
    std::optional<int> chains;
    std::optional<int> warmup;
    std::optional<int> draws;
    std::optional<int> thin;
    bool save_latent = false;
};

BiasKind resolve_kind(const FitOptions& o, const Settings& s)
{
    if (!o.kind.empty()) {
        return parse_bias_kind(o.kind);
    }
    if (s.response) {
        return parse_bias_kind(*s.response);
    }
    const std::string name = fs::path(o.bias).filename().string();
    return name.find("additive") != std::string::npos ? BiasKind::Additive : BiasKind::Multiplicative;
}

/// Reads "scaled" from graph_report.json next to the weights file (scaled when absent).
bool graph_is_scaled(const fs::path& weights)
{
    const fs::path report = weights.parent_path() / "graph_report.json";
    if (!fs::exists(report)) {
        return true;
    }
    const json doc = read_json(report);
    return doc.value("scaled", true);
}

json recovery_report(const PosteriorDraws& draws, const json& truth)
{
    const HyperParams hp{truth.at("hp").at("V").get<double>(), truth.at("hp").at("phi").get<double>(),
                         truth.at("hp").at("psi").get<double>(), truth.at("hp").at("sigma2_eps").get<double>()};
    json params = json::object();
    for (std::size_t k = 0; k < kHyperNames.size(); ++k) {
        std::vector<double> all;
        for (const auto& d : draws.draws) {
            all.push_back(hyper_value(d.hp, k));
        }
        const double t = hyper_value(hp, k);
        const double lo = quantile(all, 0.05);
        const double hi = quantile(all, 0.95);
        params[kHyperNames[k]] = {{"truth", t},
                                  {"mean", std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size())},
                                  {"q05", lo},
                                  {"q50", quantile(all, 0.5)},
                                  {"q95", hi},
                                  {"covered90", lo <= t && t <= hi}};
    }
    const auto shares = variance_shares(draws);
    const double tpsi = hp.psi;
    const double tphi = hp.phi;
    json share_doc{
        {"spatial", {{"truth", (1.0 - tpsi) * tphi}, {"mean", shares.spatial.mean}}},
        {"temporal", {{"truth", (1.0 - tpsi) * (1.0 - tphi)}, {"mean", shares.temporal.mean}}},
        {"interaction", {{"truth", tpsi}, {"mean", shares.interaction.mean}}},
    };
    return {{"parameters", params}, {"shares", share_doc}};
}

int run_fit(const FitOptions& o, const Globals& g, const Settings& s, ValidationLog& log)
{
    Stage stage("fit", g, log);
    stage.input(o.bias);
    stage.input(o.weights);
    const BiasKind kind = resolve_kind(o, s);
    PriorConfig prior = s.prior;
    prior.U = s.U.value_or(kind == BiasKind::Additive ? 0.1 : 1.0);
    prior.validate();

    ChainConfig cfg;
    cfg.n_chains = o.chains.value_or(s.chains);
    cfg.n_warmup = o.warmup.value_or(s.warmup);
    cfg.n_draws = o.draws.value_or(s.draws);
    cfg.thin = o.thin.value_or(s.thin);
    cfg.seed = g.seed;
    cfg.threads = g.threads;
    cfg.save_latent = o.save_latent;
    cfg.validate();
    if (cfg.n_draws < 20) {
        throw ValidationError("at least 20 draws per chain are needed for convergence diagnostics");
    }

    const BiasPanel panel = read_bias_panel(o.bias, kind);
    const PreparedResponse prepared = prepare_response(panel, s.eps_clamp);
    if (!prepared.panel.clamped_cells.empty()) {
        log.info("clamped", std::to_string(prepared.panel.clamped_cells.size()) + " cells modified before the logit");
    }
    const SparseMatrix weights = read_weights(o.weights, panel.provinces);
    SpatialStructure spatial = spatial_structure_from_weights(weights);
    if (spatial.n_components > 1) {
        log.warn("disconnected_graph", "graph has " + std::to_string(spatial.n_components) +
                                           " connected components; constraints are applied per component");
    }
    const bool scale = graph_is_scaled(o.weights);
    LatentModel model(scale ? scaled(std::move(spatial)) : std::move(spatial),
                      scaled(rw1_structure(static_cast<int>(panel.weeks.size()))));

    const FitResult fit = run_chains(prepared.response, model, cfg, prior);
    write_draws_csv(stage.out("draws.csv"), fit.draws, panel.provinces, panel.weeks);
    stage.output(stage.out("draws.csv"));

    const ConvergenceReport conv = convergence(fit.draws);
    json diag = json::array();
    for (const auto& p : conv.parameters) {
        diag.push_back({{"name", p.name},
                        {"rhat", p.degenerate ? json(nullptr) : json(p.rhat)},
                        {"ess_bulk", p.ess_bulk},
                        {"degenerate", p.degenerate},
                        {"flagged", p.flagged}});
        if (p.flagged) {
            log.warn("convergence", p.name + (p.degenerate ? " did not move" : " has R-hat above the threshold"));
        }
    }
    json chains = json::array();
    for (const auto& c : fit.chains) {
        json acc = json::object();
        for (std::size_t k = 0; k < kHyperNames.size(); ++k) {
            acc[kHyperNames[k]] = c.acceptance[k];
        }
        chains.push_back({{"acceptance", acc}, {"block_acceptance", c.block_acceptance}});
    }
    std::vector<std::string> weeks;
    for (const auto& w : panel.weeks.weeks()) {
        weeks.push_back(to_string(w));
    }
    const json config{{"response", to_string(kind)},
                      {"prior", prior_json(prior)},
                      {"eps_clamp", s.eps_clamp},
                      {"graph_scaled", scale},
                      {"sampler",
                       {{"chains", cfg.n_chains}, {"warmup", cfg.n_warmup}, {"draws", cfg.n_draws}, {"thin", cfg.thin}}},
                      {"save_latent", cfg.save_latent}};
    const json meta{{"seed", g.seed},
                    {"config", config},
                    {"provinces", panel.provinces.ids()},
                    {"weeks", weeks},
                    {"n_clamped", prepared.panel.clamped_cells.size()},
                    {"diagnostics",
                     {{"rhat_threshold", kRhatThreshold},
                      {"max_rhat", conv.max_rhat},
                      {"any_flagged", conv.any_flagged},
                      {"parameters", diag}}},
                    {"chains", chains}};
    write_json(stage.out("draws_meta.json"), meta);
    stage.output(stage.out("draws_meta.json"));

    if (!o.truth.empty()) {
        stage.input(o.truth);
        json rec = recovery_report(fit.draws, read_json(o.truth));
        rec["max_rhat"] = conv.max_rhat;
        write_json(stage.out("recovery.json"), rec);
        stage.output(stage.out("recovery.json"));
    }
    stage.config(config);
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- summarize

struct SummarizeOptions {
    std::string draws;
    std::string meta;
    std::string geometry;
};

ProvinceIndex provinces_from(const json& meta)
{
    return ProvinceIndex(meta.at("provinces").get<std::vector<std::string>>());
}

WeekIndex weeks_from(const json& meta)
{
    std::vector<IsoWeek> weeks;
    for (const auto& w : meta.at("weeks")) {
        weeks.push_back(parse_iso_week(w.get<std::string>()));
    }
    return WeekIndex(std::move(weeks));
}

void interval_columns(std::ostream& out, const IntervalSummary& s)
{
    out << csv::format_double(s.mean) << ',' << csv::format_double(s.lower) << ',' << csv::format_double(s.upper);
}

/// Copies the features of a province GeoJSON file, adding properties per province_id.
json join_geometry(const fs::path& path, const std::map<std::string, json>& properties, ValidationLog& log)
{
    json doc = read_json(path);
    if (!doc.contains("features") || !doc.at("features").is_array()) {
        throw ValidationError(path.string() + ": not a GeoJSON FeatureCollection");
    }
    std::size_t joined = 0;
    for (auto& feature : doc["features"]) {
        const json props = feature.value("properties", json::object());
        if (!props.contains("province_id")) {
            throw ValidationError(path.string() + ": feature without properties.province_id");
        }
        const std::string id =
            props.at("province_id").is_string() ? props.at("province_id").get<std::string>() : props.at("province_id").dump();
        const auto it = properties.find(id);
        if (it == properties.end()) {
            log.warn("geometry_unmatched", path.string() + ": province " + id + " has no results");
            continue;
        }
        for (const auto& [key, value] : it->second.items()) {
            feature["properties"][key] = value;
        }
        ++joined;
    }
    if (joined < properties.size()) {
        log.warn("geometry_missing",
                 std::to_string(properties.size() - joined) + " provinces have no feature in " + path.string());
    }
    return doc;
}

int run_summarize(const SummarizeOptions& o, const Globals& g, ValidationLog& log)
{
    Stage stage("summarize", g, log);
    const fs::path meta_path = or_default(o.meta, fs::path(o.draws).parent_path() / "draws_meta.json");
    stage.input(o.draws);
    stage.input(meta_path);
    const json meta = read_json(meta_path);
    const ProvinceIndex provinces = provinces_from(meta);
    const WeekIndex weeks = weeks_from(meta);
    const PosteriorDraws draws = read_draws_csv(o.draws, provinces, weeks);
    if (!draws.has_latent) {
        throw ValidationError(o.draws + " holds no latent states; rerun `epibias fit` with --save-latent");
    }

    const auto shares = variance_shares(draws);
    {
        auto out = open_csv(stage.out("variance_shares.csv"));
        out << "component,mean,lower,upper\n";
        for (const auto& [name, s] : std::vector<std::pair<std::string, IntervalSummary>>{
                 {"spatial", shares.spatial}, {"temporal", shares.temporal}, {"interaction", shares.interaction}}) {
            out << name << ',';
            interval_columns(out, s);
            out << '\n';
        }
    }
    const auto effects = summarize_effects(draws);
    {
        auto out = open_csv(stage.out("spatial_effect.csv"));
        out << "province_id,mean,lower,upper,unit_mean,unit_lower,unit_upper\n";
        for (std::size_t i = 0; i < provinces.size(); ++i) {
            out << csv::escape(provinces.id(i)) << ',';
            interval_columns(out, effects.spatial.contribution[i]);
            out << ',';
            interval_columns(out, effects.spatial.unit[i]);
            out << '\n';
        }
    }
    {
        auto out = open_csv(stage.out("temporal_effect.csv"));
        out << "year,iso_week,mean,lower,upper,unit_mean,unit_lower,unit_upper\n";
        for (std::size_t j = 0; j < weeks.size(); ++j) {
            out << weeks.at(j).year << ',' << weeks.at(j).week << ',';
            interval_columns(out, effects.temporal.contribution[j]);
            out << ',';
            interval_columns(out, effects.temporal.unit[j]);
            out << '\n';
        }
    }
    const auto fitted = fitted_values(draws);
    {
        auto out = open_csv(stage.out("fitted.csv"));
        out << "province_id,year,iso_week,mean,q025,q50,q975\n";
        for (std::size_t i = 0; i < provinces.size(); ++i) {
            for (std::size_t j = 0; j < weeks.size(); ++j) {
                const auto r = static_cast<Eigen::Index>(i);
                const auto c = static_cast<Eigen::Index>(j);
                out << csv::escape(provinces.id(i)) << ',' << weeks.at(j).year << ',' << weeks.at(j).week << ','
                    << csv::format_double(fitted.mean(r, c)) << ',' << csv::format_double(fitted.q025(r, c)) << ','
                    << csv::format_double(fitted.q50(r, c)) << ',' << csv::format_double(fitted.q975(r, c)) << '\n';
            }
        }
    }
    for (const char* f : {"variance_shares.csv", "spatial_effect.csv", "temporal_effect.csv", "fitted.csv"}) {
        stage.output(stage.out(f));
    }
    if (!o.geometry.empty()) {
        stage.input(o.geometry);
        std::map<std::string, json> props;
        for (std::size_t i = 0; i < provinces.size(); ++i) {
            const auto r = static_cast<Eigen::Index>(i);
            json p{{"spatial_effect", effects.spatial.contribution[i].mean},
                   {"fitted_mean", fitted.mean.row(r).mean()}};
            for (std::size_t j = 0; j < weeks.size(); ++j) {
                p["fitted_" + to_string(weeks.at(j))] = fitted.mean(r, static_cast<Eigen::Index>(j));
            }
            props.emplace(provinces.id(i), std::move(p));
        }
        write_json(stage.out("fitted.geojson"), join_geometry(o.geometry, props, log));
        stage.output(stage.out("fitted.geojson"));
    }
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- cluster

struct ClusterOptions {
    std::string fitted;
    std::string column = "mean";
    std::string geometry;
    bool zscore = false;
    std::optional<int> band;
    std::optional<int> k;
    std::optional<int> k_min;
    std::optional<int> k_max;
};

int run_cluster(const ClusterOptions& o, const Globals& g, const Settings& s, ValidationLog& log)
{
    Stage stage("cluster", g, log);
    stage.input(o.fitted);
    const WeeklyTable t = read_weekly_table(o.fitted, o.column);
    const TrajectorySet set{t.provinces, o.zscore ? zscore_rows(t.values) : t.values};
    const int k_min = o.k_min.value_or(s.k_min);
    int k_max = o.k_max.value_or(s.k_max);
    const int largest = static_cast<int>(set.provinces.size()) - 1;
    if (!o.k_max && k_max > largest) {
        log.info("k_range", "k_max lowered to " + std::to_string(largest) + " for " +
                                std::to_string(set.provinces.size()) + " provinces");
        k_max = largest;
    }

    Clustering c;
    json scores = json::array();
    if (o.k) {
        c = kmedoids_fit(set, *o.k, g.seed, o.band);
    } else {
        const KSelection sel = select_k(set, k_min, k_max, g.seed, o.band);
        if (sel.degenerate || !sel.best) {
            throw ValidationError(o.fitted + ": all trajectories are identical, no clustering is possible");
        }
        c = *sel.best;
        for (const auto& [k, score] : sel.scores) {
            scores.push_back({{"k", k}, {"mean_silhouette", score}});
        }
    }

    // Clusters are numbered from 1 in increasing order of their medoid's mean level.
    std::vector<int> order(static_cast<std::size_t>(c.k));
    std::iota(order.begin(), order.end(), 0);
    auto level = [&](int cl) { return t.values.row(static_cast<Eigen::Index>(c.medoids[static_cast<std::size_t>(cl)])).mean(); };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return level(a) < level(b); });
    std::vector<int> label(static_cast<std::size_t>(c.k));
    for (std::size_t r = 0; r < order.size(); ++r) {
        label[static_cast<std::size_t>(order[r])] = static_cast<int>(r) + 1;
    }

    {
        auto out = open_csv(stage.out("clusters.csv"));
        out << "province_id,cluster,silhouette\n";
        for (std::size_t i = 0; i < set.provinces.size(); ++i) {
            out << csv::escape(set.provinces.id(i)) << ',' << label[static_cast<std::size_t>(c.assignment[i])] << ','
                << csv::format_double(c.silhouette[i]) << '\n';
        }
    }
    {
        auto out = open_csv(stage.out("medoids.csv"));
        out << "cluster,province_id,size,mean_level\n";
        for (int cl : order) {
            const auto size = std::count(c.assignment.begin(), c.assignment.end(), cl);
            out << label[static_cast<std::size_t>(cl)] << ','
                << csv::escape(set.provinces.id(c.medoids[static_cast<std::size_t>(cl)])) << ',' << size << ','
                << csv::format_double(level(cl)) << '\n';
        }
    }
    const json report{{"k", c.k},
                      {"selected", !o.k.has_value()},
                      {"k_range", {k_min, k_max}},
                      {"scores", scores},
                      {"mean_silhouette", c.mean_silhouette},
                      {"total_cost", c.total_cost},
                      {"zscore", o.zscore},
                      {"band", o.band ? json(*o.band) : json(nullptr)}};
    write_json(stage.out("cluster_report.json"), report);
    for (const char* f : {"clusters.csv", "medoids.csv", "cluster_report.json"}) {
        stage.output(stage.out(f));
    }
    if (!o.geometry.empty()) {
        stage.input(o.geometry);
        std::map<std::string, json> props;
        for (std::size_t i = 0; i < set.provinces.size(); ++i) {
            props.emplace(set.provinces.id(i),
                          json{{"cluster", label[static_cast<std::size_t>(c.assignment[i])]},
                               {"silhouette", c.silhouette[i]}});
        }
        write_json(stage.out("clusters.geojson"), join_geometry(o.geometry, props, log));
        stage.output(stage.out("clusters.geojson"));
    }
    stage.config({{"column", o.column}, {"zscore", o.zscore}, {"k_min", k_min}, {"k_max", k_max}});
    stage.finish();
    return kExitOk;
}

// ---------------------------------------------------------------- simulate

struct SimulateOptions {
    int ns = 20;
    int nt = 11;
    std::string graph = "grid";
    std::string weights;
    std::string population;
    double V = 0.5;
    double phi = 0.6;
    double psi = 0.3;
    double sigma2 = 0.1;
    double mu = 0.0;
};

int run_simulate(const SimulateOptions& o, const Globals& g, ValidationLog& log)
{
    Stage stage("simulate", g, log);
    SimScenario sc;
    sc.ns = o.ns;
    sc.nt = o.nt;
    sc.hp = HyperParams{o.V, o.phi, o.psi, o.sigma2};
    sc.mu = o.mu;
    sc.graph = parse_graph_kind(o.graph);
    sc.seed = g.seed;
    std::optional<ProvinceIndex> ids;
    if (sc.graph == GraphKind::Mobility) {
        if (o.weights.empty() || o.population.empty()) {
            throw ValidationError("--graph mobility needs --weights and --population");
        }
        stage.input(o.population);
        stage.input(o.weights);
        ids = read_province_index(o.population);
        sc.weights = read_weights(o.weights, *ids);
        sc.ns = static_cast<int>(ids->size());
    }
    const SimulatedDataset ds = simulate_dataset(sc);
    for (const auto& w : ds.warnings) {
        log.warn("disconnected_graph", w);
    }
    const ProvinceIndex provinces = ids.value_or(ds.provinces);

    const auto ns = static_cast<Eigen::Index>(provinces.size());
    const auto nt = static_cast<Eigen::Index>(ds.weeks.size());
    BiasPanel panel{provinces, ds.weeks, Eigen::MatrixXd(ns, nt), BiasKind::Multiplicative, {}};
    for (Eigen::Index i = 0; i < ns; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
            panel.values(i, j) = inv_logit(ds.y.y(i * nt + j));
        }
    }
    write_bias_panel(stage.out("bias_simulated.csv"), panel);
    write_weights(stage.out("weights.csv"), provinces, ds.model.spatial().weights);
    write_json(stage.out("graph_report.json"), structure_report(ds.model.spatial(), true, "simulate:" + o.graph, std::nullopt));

    std::vector<std::string> weeks;
    for (const auto& w : ds.weeks.weeks()) {
        weeks.push_back(to_string(w));
    }
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    const json truth{{"seed", g.seed},
                     {"graph", o.graph},
                     {"hp", hyper_json(sc.hp)},
                     {"mu", sc.mu},
                     {"shares",
                      {{"spatial", (1.0 - sc.hp.psi) * sc.hp.phi},
                       {"temporal", (1.0 - sc.hp.psi) * (1.0 - sc.hp.phi)},
                       {"interaction", sc.hp.psi}}},
                     {"provinces", provinces.ids()},
                     {"weeks", weeks},
                     {"u", vec(ds.truth.u)},
                     {"v", vec(ds.truth.v)},
                     {"w", vec(ds.truth.w)},
                     {"eta", vec(ds.eta)}};
    write_json(stage.out("truth.json"), truth);
    for (const char* f : {"bias_simulated.csv", "weights.csv", "graph_report.json", "truth.json"}) {
        stage.output(stage.out(f));
    }
    stage.config({{"ns", sc.ns}, {"nt", sc.nt}, {"graph", o.graph}, {"hp", hyper_json(sc.hp)}, {"mu", sc.mu}});
    stage.finish();
    return kExitOk;
}

void flush_log(const ValidationLog& log, const std::string& path)
{
    if (path.empty()) {
        log.write_jsonl(std::cerr);
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        std::cerr << "epibias: cannot write log " << path << '\n';
        return;
    }
    log.write_jsonl(out);
}

}  // namespace

std::string sha256_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ValidationError("cannot open " + path);
    }
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
        throw NumericalError("SHA-256 initialization failed");
    }
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) {
            EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
        }
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    std::ostringstream hex;
    for (unsigned int k = 0; k < len; ++k) {
        hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[k]);
    }
    return hex.str();
}

int run_command(const std::vector<std::string>& args)
{
    CLI::App app{"Under-reporting bias in official epidemic mortality data", "epibias"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);
    app.fallthrough();

    Globals g;
    app.add_option("--config", g.config, "Model configuration JSON");
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("-o,--out", g.out, "Output directory");
    app.add_option("--log", g.log, "Write the validation log (JSON lines) here instead of stderr");
    app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);

    IngestOptions ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Validate and align raw CSV inputs");
    c_ingest->add_option("--data", ingest.data, "Directory with population.csv, deaths_*.csv and mobility/")->required();
    c_ingest->add_option("--start", ingest.start, "First ISO week, e.g. 2020-W09")->required();
    c_ingest->add_option("--end", ingest.end, "Last ISO week")->required();
    c_ingest->add_option("--baseline-years", ingest.baseline_years, "Baseline years (default: all earlier files)");

    ExcessOptions excess;
    auto* c_excess = app.add_subcommand("excess", "Excess deaths against the baseline mean");
    c_excess->add_option("--input", excess.input, "Directory with deaths_allcause_<year>.csv (default: --out)");
    c_excess->add_option("--year", excess.year, "Study year (default: latest file)");

    BiasOptions bias;
    auto* c_bias = app.add_subcommand("bias", "Additive and multiplicative bias panels");
    c_bias->add_option("--input", bias.input, "Directory with excess.csv, deaths_official.csv, population.csv");
    c_bias->add_option("--excess", bias.excess, "excess.csv");
    c_bias->add_option("--official", bias.official, "Official deaths panel");
    c_bias->add_option("--population", bias.population, "population.csv");

    GraphOptions graph;
    auto* c_graph = app.add_subcommand("build-graph", "Spatial weights from mobility flows or an adjacency file");
    c_graph->add_option("--input", graph.input, "Directory with population.csv and mobility/ (default: --out)");
    c_graph->add_option("--mobility", graph.mobility, "Directory of daily flow files");
    c_graph->add_option("--population", graph.population, "population.csv (province order)");
    c_graph->add_option("--adjacency", graph.adjacency, "Weights CSV to use instead of mobility");
    c_graph->add_option("--quantile-keep", graph.quantile_keep, "Share of strongest links kept")
        ->check(CLI::Range(0.0, 1.0));
    c_graph->add_flag("--no-scale", graph.no_scale, "Do not scale the spatial structure");

    FitOptions fit;
    auto* c_fit = app.add_subcommand("fit", "Sample the spatio-temporal model");
    c_fit->add_option("--bias", fit.bias, "Bias panel CSV")->required();
    c_fit->add_option("--weights", fit.weights, "weights.csv")->required();
    c_fit->add_option("--kind", fit.kind, "additive or multiplicative")
        ->check(CLI::IsMember({"additive", "multiplicative"}));
    c_fit->add_option("--chains", fit.chains)->check(CLI::PositiveNumber);
    c_fit->add_option("--warmup", fit.warmup)->check(CLI::NonNegativeNumber);
    c_fit->add_option("--draws", fit.draws)->check(CLI::PositiveNumber);
    c_fit->add_option("--thin", fit.thin)->check(CLI::PositiveNumber);
    c_fit->add_flag("--save-latent", fit.save_latent, "Store u, v, w in the draws");
    c_fit->add_option("--truth", fit.truth, "truth.json from simulate; writes recovery.json");

    SummarizeOptions summ;
    auto* c_summ = app.add_subcommand("summarize", "Posterior summaries from saved draws");
    c_summ->add_option("--draws", summ.draws, "draws.csv")->required();
    c_summ->add_option("--meta", summ.meta, "draws_meta.json (default: next to the draws)");
    c_summ->add_option("--geometry", summ.geometry, "Province GeoJSON with properties.province_id");

    ClusterOptions clus;
    auto* c_clus = app.add_subcommand("cluster", "Cluster fitted trajectories by DTW and k-medoids");
    c_clus->add_option("--fitted", clus.fitted, "fitted.csv")->required();
    c_clus->add_option("--column", clus.column, "Value column of the fitted table");
    c_clus->add_flag("--zscore", clus.zscore, "Standardize each trajectory first");
    c_clus->add_option("--band", clus.band, "Sakoe-Chiba band width")->check(CLI::NonNegativeNumber);
    c_clus->add_option("--k", clus.k, "Fixed number of clusters")->check(CLI::PositiveNumber);
    c_clus->add_option("--k-min", clus.k_min)->check(CLI::PositiveNumber);
    c_clus->add_option("--k-max", clus.k_max)->check(CLI::PositiveNumber);
    c_clus->add_option("--geometry", clus.geometry, "Province GeoJSON with properties.province_id");

    SimulateOptions sim;
    auto* c_sim = app.add_subcommand("simulate", "Synthetic bias panel with known truth");
    c_sim->add_option("--ns", sim.ns, "Provinces");
    c_sim->add_option("--nt", sim.nt, "Weeks");
    c_sim->add_option("--graph", sim.graph)->check(CLI::IsMember({"ring", "grid", "mobility"}));
    c_sim->add_option("--weights", sim.weights, "weights.csv for --graph mobility");
    c_sim->add_option("--population", sim.population, "population.csv giving the province order");
    c_sim->add_option("--V", sim.V);
    c_sim->add_option("--phi", sim.phi);
    c_sim->add_option("--psi", sim.psi);
    c_sim->add_option("--sigma2", sim.sigma2);
    c_sim->add_option("--mu", sim.mu);

    std::vector<std::string> argv_store{"epibias"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    ValidationLog log;
    int code = kExitOk;
    try {
        const Settings settings = load_settings(g.config);
        if (c_ingest->parsed()) {
            code = run_ingest(ingest, g, log);
        } else if (c_excess->parsed()) {
            code = run_excess(excess, g, log);
        } else if (c_bias->parsed()) {
            code = run_bias(bias, g, settings, log);
        } else if (c_graph->parsed()) {
            code = run_build_graph(graph, g, settings, log);
        } else if (c_fit->parsed()) {
            code = run_fit(fit, g, settings, log);
        } else if (c_summ->parsed()) {
            code = run_summarize(summ, g, log);
        } else if (c_clus->parsed()) {
            code = run_cluster(clus, g, settings, log);
        } else if (c_sim->parsed()) {
            code = run_simulate(sim, g, log);
        }
    } catch (const NumericalError& e) {
        std::cerr << "epibias: numerical failure: " << e.what() << '\n';
        code = kExitNumerical;
    } catch (const ValidationError& e) {
        std::cerr << "epibias: error: " << e.what() << '\n';
        code = kExitValidation;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "epibias: error: " << e.what() << '\n';
        code = kExitValidation;
    } catch (const json::exception& e) {
        std::cerr << "epibias: error: malformed JSON input: " << e.what() << '\n';
        code = kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "epibias: numerical failure: " << e.what() << '\n';
        code = kExitNumerical;
    }
    flush_log(log, g.log);
    return code;
}

}  // namespace epibias::cli
