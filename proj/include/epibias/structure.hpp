#pragma once

#include "epibias/ingest.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <filesystem>
#include <vector>

namespace epibias {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

/// Mobility (or adjacency) graph with its intrinsic CAR precision D - M.
struct SpatialStructure {
    SparseMatrix weights;        // M: symmetric, non-negative, zero diagonal
    Eigen::VectorXd degrees;     // row sums of M
    SparseMatrix precision;      // Q_u = scale_factor * (D - M)
    std::vector<int> component;  // connected-component label per province
    int n_components = 0;
    double scale_factor = 1.0;   // 1 until scaled

    std::size_t size() const { return static_cast<std::size_t>(weights.rows()); }
};

/// First-order random-walk structure.
struct TemporalStructure {
    SparseMatrix precision;
    double scale_factor = 1.0;

    std::size_t size() const { return static_cast<std::size_t>(precision.rows()); }
};

/// Space-time interaction with precision Q_u (x) Q_v, province-major.
struct InteractionStructure {
    SparseMatrix precision;
    /// Sum-to-zero constraints: per component and week (one redundant week per component
    /// dropped) and per province across weeks.
    Eigen::MatrixXd constraints;
};

/// average days -> zero diagonal -> row-normalize -> symmetrize -> keep the top
/// quantile_keep share of the positive upper-triangle weights (ties at the cut kept).
/// The returned structure is unscaled.
SpatialStructure build_mobility_weights(const MobilityStack& stack, double quantile_keep = 0.2);

/// ICAR structure for a given symmetric weight matrix (unscaled).
SpatialStructure spatial_structure_from_weights(const SparseMatrix& weights);

TemporalStructure rw1_structure(int n);

InteractionStructure interaction_structure(const SpatialStructure& s, const TemporalStructure& t);

/// One indicator row per connected component.
Eigen::MatrixXd spatial_constraints(const SpatialStructure& s);
/// Single row of ones.
Eigen::MatrixXd temporal_constraints(std::size_t n);

SparseMatrix kronecker(const SparseMatrix& a, const SparseMatrix& b);

struct ScaledStructure {
    SparseMatrix precision;
    double scale_factor = 1.0;
};

/// Multiplies Q by the geometric mean of the diagonal of its constrained generalized
/// inverse, so that the typical marginal variance under the constraints is 1.
/// `nullspace` columns span the null space of Q (need not be orthonormal).
/// Zero-variance coordinates (isolated nodes pinned by their constraint) are left out
/// of the mean.
ScaledStructure scale_structure(const SparseMatrix& Q, const Eigen::MatrixXd& nullspace);

SpatialStructure scaled(SpatialStructure s);
TemporalStructure scaled(TemporalStructure t);

/// Built-in test graphs: cycle on n nodes and a rows x cols lattice (rook moves), unit weights.
SpatialStructure ring_graph(int n);
SpatialStructure grid_graph(int rows, int cols);

void write_weights(const std::filesystem::path& path, const ProvinceIndex& provinces, const SparseMatrix& weights);
/// Reads origin_id,destination_id,weight; listed pairs are mirrored to keep M symmetric.
SparseMatrix read_weights(const std::filesystem::path& path, const ProvinceIndex& provinces);

}  // namespace epibias
