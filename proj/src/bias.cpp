#include "epibias/bias.hpp"

#include "epibias/csv.hpp"
#include "epibias/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <map>

namespace epibias {

namespace {

void require_shared(const ExcessPanel& excess, const MortalityPanel& official)
{
    if (!(excess.provinces == official.provinces) || !(excess.weeks == official.weeks) ||
        excess.dhat.rows() != official.counts.rows() || excess.dhat.cols() != official.counts.cols()) {
        throw ValidationError("index mismatch between excess and official panels");
    }
}

}  // namespace

std::string to_string(BiasKind kind)
{
    return kind == BiasKind::Additive ? "additive" : "multiplicative";
}

BiasKind parse_bias_kind(const std::string& text)
{
    if (text == "additive") {
        return BiasKind::Additive;
    }
    if (text == "multiplicative") {
        return BiasKind::Multiplicative;
    }
    throw ValidationError("response must be 'additive' or 'multiplicative', got '" + text + "'");
}

double logit(double p)
{
    return std::log(p / (1.0 - p));
}

double inv_logit(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

BiasPanel additive_bias(const ExcessPanel& excess, const MortalityPanel& official, const PopulationTable& pop)
{
    require_shared(excess, official);
    if (!(pop.provinces == excess.provinces)) {
        throw ValidationError("index mismatch between excess panel and population table");
    }
    BiasPanel out{excess.provinces, excess.weeks, {}, BiasKind::Additive, {}};
    out.values = 1000.0 * ((excess.dhat - official.counts).array().colwise() / pop.pop.array()).matrix();
    return out;
}

BiasPanel multiplicative_bias(const ExcessPanel& excess, const MortalityPanel& official)
{
    require_shared(excess, official);
    BiasPanel out{excess.provinces, excess.weeks, {}, BiasKind::Multiplicative, {}};
    out.values.resize(excess.dhat.rows(), excess.dhat.cols());
    for (Eigen::Index i = 0; i < out.values.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.values.cols(); ++j) {
            const double d = excess.dhat(i, j);
            out.values(i, j) = d > 0.0 ? 1.0 - official.counts(i, j) / d : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

PreparedResponse prepare_response(const BiasPanel& panel, double eps)
{
    if (!(eps > 0.0 && eps < 0.5)) {
        throw ValidationError("clamp eps must lie in (0, 0.5)");
    }
    PreparedResponse out{panel, {}};
    auto& prepared = out.panel;
    prepared.clamped_cells.clear();
    const auto ns = static_cast<std::size_t>(panel.values.rows());
    const auto nt = static_cast<std::size_t>(panel.values.cols());
    out.response.n_provinces = ns;
    out.response.n_weeks = nt;
    out.response.y.resize(static_cast<Eigen::Index>(ns * nt));

    for (std::size_t i = 0; i < ns; ++i) {
        for (std::size_t j = 0; j < nt; ++j) {
            const auto ri = static_cast<Eigen::Index>(i);
            const auto rj = static_cast<Eigen::Index>(j);
            const double original = panel.values(ri, rj);
            double v = original;
            if (std::isnan(v)) {
                prepared.clamped_cells.push_back({i, j, original, "undefined"});
                v = 0.0;
            }
            else if (v < 0.0) {
                prepared.clamped_cells.push_back({i, j, original, "negative"});
                v = 0.0;
            }
            if (v < eps) {
                if (v == original) {
                    prepared.clamped_cells.push_back({i, j, original, "below_eps"});
                }
                v = eps;
            }
            else if (v > 1.0 - eps) {
                prepared.clamped_cells.push_back({i, j, original, "above_upper"});
                v = 1.0 - eps;
            }
            prepared.values(ri, rj) = v;
            out.response.y(static_cast<Eigen::Index>(out.response.position(i, j))) = logit(v);
        }
    }
    return out;
}

void write_bias_panel(const std::filesystem::path& path, const BiasPanel& panel)
{
    write_weekly_panel(path, panel.provinces, panel.weeks, panel.values, "bias");
}

BiasPanel read_bias_panel(const std::filesystem::path& path, BiasKind kind)
{
    auto t = read_weekly_table(path, "bias");
    return BiasPanel{std::move(t.provinces), std::move(t.weeks), std::move(t.values), kind, {}};
}

void write_clamp_log(const std::filesystem::path& path, const std::vector<BiasPanel>& prepared, double eps)
{
    nlohmann::json doc{{"eps", eps}};
    for (const auto& panel : prepared) {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& c : panel.clamped_cells) {
            cells.push_back({{"province_id", panel.provinces.id(c.province)},
                             {"year", panel.weeks.at(c.week).year},
                             {"iso_week", panel.weeks.at(c.week).week},
                             {"original", std::isnan(c.original) ? nlohmann::json(nullptr) : nlohmann::json(c.original)},
                             {"reason", c.reason}});
        }
        doc[to_string(panel.kind)] = {{"n_clamped", panel.clamped_cells.size()}, {"cells", cells}};
    }
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    out << doc.dump(2) << '\n';
}

}  // namespace epibias
