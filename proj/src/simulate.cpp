#include "epibias/simulate.hpp"

#include "epibias/error.hpp"

#include <cmath>
#include <cstdio>

namespace epibias {

std::string to_string(GraphKind kind)
{
    switch (kind) {
    case GraphKind::Ring: return "ring";
    case GraphKind::Grid: return "grid";
    case GraphKind::Mobility: return "mobility";
    }
    return "unknown";
}

GraphKind parse_graph_kind(const std::string& name)
{
    if (name == "ring") {
        return GraphKind::Ring;
    }
    if (name == "grid") {
        return GraphKind::Grid;
    }
    if (name == "mobility") {
        return GraphKind::Mobility;
    }
    throw ValidationError("unknown graph kind '" + name + "' (expected ring, grid or mobility)");
}

void SimScenario::validate() const
{
    const int n = graph == GraphKind::Mobility && weights ? static_cast<int>(weights->rows()) : ns;
    if (n < 4 || nt < 3) {
        throw ValidationError("simulation needs at least 4 provinces and 3 weeks");
    }
    if (graph == GraphKind::Mobility && !weights) {
        throw ValidationError("mobility scenario requires a weight matrix");
    }
    if (!(std::isfinite(hp.V) && hp.V > 0.0) || !(hp.phi >= 0.0 && hp.phi <= 1.0) ||
        !(hp.psi >= 0.0 && hp.psi <= 1.0) || !(std::isfinite(hp.sigma2_eps) && hp.sigma2_eps >= 0.0) ||
        !std::isfinite(mu)) {
        throw ValidationError("invalid simulation hyperparameters: need V > 0, phi and psi in [0, 1], sigma2_eps >= 0");
    }
}

SpatialStructure scenario_graph(const SimScenario& sc)
{
    switch (sc.graph) {
    case GraphKind::Ring:
        return ring_graph(sc.ns);
    case GraphKind::Grid: {
        int rows = 1;
        for (int r = 1; r * r <= sc.ns; ++r) {
            if (sc.ns % r == 0) {
                rows = r;
            }
        }
        return grid_graph(rows, sc.ns / rows);
    }
    case GraphKind::Mobility:
        return spatial_structure_from_weights(*sc.weights);
    }
    throw ValidationError("unknown graph kind");
}

LatentState draw_prior_latent(const LatentModel& model, double mu, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto ns = static_cast<Eigen::Index>(model.n_provinces());
    const auto nt = static_cast<Eigen::Index>(model.n_weeks());
    const int nc = model.spatial().n_components;
    const auto& bu = model.spatial_basis();
    const auto& bv = model.temporal_basis();
    const auto& lu = model.spatial_eigenvalues();
    const auto& lv = model.temporal_eigenvalues();

    LatentState s;
    s.mu = mu;
    Eigen::VectorXd zu = Eigen::VectorXd::Zero(ns);
    for (Eigen::Index a = nc; a < ns; ++a) {
        zu(a) = normal(rng) / std::sqrt(lu(a));
    }
    s.u = bu * zu;
    Eigen::VectorXd zv = Eigen::VectorXd::Zero(nt);
    for (Eigen::Index b = 1; b < nt; ++b) {
        zv(b) = normal(rng) / std::sqrt(lv(b));
    }
    s.v = bv * zv;
    Eigen::MatrixXd zw = Eigen::MatrixXd::Zero(ns, nt);
    for (Eigen::Index a = nc; a < ns; ++a) {
        for (Eigen::Index b = 1; b < nt; ++b) {
            zw(a, b) = normal(rng) / std::sqrt(lu(a) * lv(b));
        }
    }
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grid = bu * zw * bv.transpose();
    s.w = Eigen::Map<const Eigen::VectorXd>(grid.data(), ns * nt);
    return s;
}

Eigen::VectorXd observe(const Eigen::VectorXd& eta, double sigma2_eps, std::mt19937_64& rng)
{
    if (sigma2_eps == 0.0) {
        return eta;
    }
    std::normal_distribution<double> normal(0.0, std::sqrt(sigma2_eps));
    Eigen::VectorXd y = eta;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
        y(k) += normal(rng);
    }
    return y;
}

ProvinceIndex synthetic_provinces(int n)
{
    std::vector<std::string> ids;
    ids.reserve(static_cast<std::size_t>(n));
    const int width = n >= 100 ? 3 : 2;
    for (int i = 1; i <= n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "P%0*d", width, i);
        ids.emplace_back(buf);
    }
    return ProvinceIndex(std::move(ids));
}

WeekIndex synthetic_weeks(int n)
{
    std::vector<IsoWeek> weeks;
    IsoWeek w{2020, 9};
    for (int j = 0; j < n; ++j) {
        weeks.push_back(w);
        w = next_week(w);
    }
    return WeekIndex(std::move(weeks));
}

SimulatedDataset simulate_dataset(const SimScenario& sc)
{
    sc.validate();
    SpatialStructure graph = scenario_graph(sc);
    const int ns = static_cast<int>(graph.size());
    std::vector<std::string> warnings;
    if (graph.n_components > 1) {
        warnings.push_back("graph has " + std::to_string(graph.n_components) +
                           " connected components; sum-to-zero constraints applied per component");
    }
    LatentModel model(scaled(std::move(graph)), scaled(rw1_structure(sc.nt)));

    std::mt19937_64 rng(sc.seed);
    LatentState truth = draw_prior_latent(model, sc.mu, rng);
    if (sc.hp.psi == 0.0) {
        truth.w.setZero();
    }
    Eigen::VectorXd eta = linear_predictor(truth, sc.hp);
    Eigen::VectorXd y = observe(eta, sc.hp.sigma2_eps, rng);

    ResponseVector response{std::move(y), static_cast<std::size_t>(ns), static_cast<std::size_t>(sc.nt)};
    return SimulatedDataset{std::move(response), std::move(truth), sc.hp, std::move(eta), std::move(model),
                            synthetic_provinces(ns), synthetic_weeks(sc.nt), std::move(warnings)};
}

}  // namespace epibias
