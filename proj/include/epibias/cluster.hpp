#pragma once

#include "epibias/ingest.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace epibias {

/// One trajectory (row) per province.
struct TrajectorySet {
    ProvinceIndex provinces;
    Eigen::MatrixXd series;
};

/// Dynamic time warping with |x - y| local cost and the symmetric step pattern
/// (match, insertion, deletion all weighted 1). `band` restricts |i - j| (Sakoe-Chiba).
double dtw(std::span<const double> a, std::span<const double> b, std::optional<int> band = std::nullopt);

/// Pairwise DTW distances between the rows of `series`.
Eigen::MatrixXd dtw_distance_matrix(const Eigen::MatrixXd& series, std::optional<int> band = std::nullopt);

struct Clustering {
    int k = 0;
    std::vector<int> assignment;       // cluster id per province
    std::vector<std::size_t> medoids;  // province position of each cluster's medoid
    std::vector<double> silhouette;
    double mean_silhouette = 0.0;
    double total_cost = 0.0;
    std::vector<double> cost_trace;    // total cost after BUILD and after every accepted swap
};

/// Partitioning around medoids (BUILD + SWAP) on a precomputed distance matrix.
/// The seed only fixes the order in which swap candidates are scanned, which decides ties.
Clustering kmedoids_fit(const Eigen::MatrixXd& distances, int k, std::uint64_t seed);
Clustering kmedoids_fit(const TrajectorySet& set, int k, std::uint64_t seed, std::optional<int> band = std::nullopt);

/// Per-point silhouette; singletons score 0.
std::vector<double> silhouette_scores(const Eigen::MatrixXd& distances, const std::vector<int>& assignment, int k);

struct KSelection {
    std::optional<int> k;  // empty when degenerate
    bool degenerate = false;
    std::vector<std::pair<int, double>> scores;  // (k, mean silhouette)
    std::optional<Clustering> best;
};

/// Fits every k in [k_min, k_max] and keeps the largest mean silhouette (ties -> smaller k).
KSelection select_k(const TrajectorySet& set, int k_min, int k_max, std::uint64_t seed,
                    std::optional<int> band = std::nullopt);

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// Standardizes each row to mean 0, sd 1 (constant rows become 0).
Eigen::MatrixXd zscore_rows(const Eigen::MatrixXd& series);

}  // namespace epibias
