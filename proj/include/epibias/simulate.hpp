#pragma once

#include "epibias/model.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace epibias {

enum class GraphKind { Ring, Grid, Mobility };

std::string to_string(GraphKind kind);
GraphKind parse_graph_kind(const std::string& name);

struct SimScenario {
    int ns = 20;
    int nt = 11;
    HyperParams hp{0.5, 0.6, 0.3, 0.1};
    double mu = 0.0;
    GraphKind graph = GraphKind::Grid;
    /// Symmetric weight matrix, required for GraphKind::Mobility (ns is then taken from it).
    std::optional<SparseMatrix> weights;
    std::uint64_t seed = 1;

    /// Unlike HyperParams::in_support, psi = 0 and sigma2_eps = 0 are allowed here.
    void validate() const;
};

struct SimulatedDataset {
    ResponseVector y;
    LatentState truth;
    HyperParams hp;
    Eigen::VectorXd eta;
    LatentModel model;
    ProvinceIndex provinces;
    WeekIndex weeks;
    std::vector<std::string> warnings;
};

/// Unscaled graph for a scenario; the grid uses rows = largest divisor of ns not above sqrt(ns).
SpatialStructure scenario_graph(const SimScenario& sc);

/// Constrained draws of u, v, w from their scaled structured priors (mu is fixed).
LatentState draw_prior_latent(const LatentModel& model, double mu, std::mt19937_64& rng);

/// eta plus N(0, sigma2_eps) noise; sigma2_eps = 0 returns eta.
Eigen::VectorXd observe(const Eigen::VectorXd& eta, double sigma2_eps, std::mt19937_64& rng);

SimulatedDataset simulate_dataset(const SimScenario& sc);

/// Synthetic identifiers P01, P02, ... and weeks starting at 2020-W09.
ProvinceIndex synthetic_provinces(int n);
WeekIndex synthetic_weeks(int n);

}  // namespace epibias
