#pragma once

#include "epibias/excess.hpp"
#include "epibias/ingest.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace epibias {

enum class BiasKind { Additive, Multiplicative };

std::string to_string(BiasKind kind);
BiasKind parse_bias_kind(const std::string& text);

struct ClampRecord {
    std::size_t province = 0;
    std::size_t week = 0;
    double original = 0.0;
    std::string reason;  // negative | undefined | below_eps | above_upper
};

/// Bias metric per province and week. Undefined cells hold NaN.
struct BiasPanel {
    ProvinceIndex provinces;
    WeekIndex weeks;
    Eigen::MatrixXd values;
    BiasKind kind = BiasKind::Additive;
    std::vector<ClampRecord> clamped_cells;
};

/// Logit-scale model response, province-major: entry (i, j) sits at i * n_weeks + j.
struct ResponseVector {
    Eigen::VectorXd y;
    std::size_t n_provinces = 0;
    std::size_t n_weeks = 0;

    std::size_t position(std::size_t i, std::size_t j) const { return i * n_weeks + j; }
};

struct PreparedResponse {
    BiasPanel panel;  // values after zeroing and clamping
    ResponseVector response;
};

/// 1000 * (dhat - Y) / POP, unclamped.
BiasPanel additive_bias(const ExcessPanel& excess, const MortalityPanel& official, const PopulationTable& pop);

/// 1 - Y / dhat; cells with dhat <= 0 are NaN (undefined).
BiasPanel multiplicative_bias(const ExcessPanel& excess, const MortalityPanel& official);

/// Negative and undefined cells become 0, then everything is clamped to [eps, 1 - eps]
/// and mapped through logit. Every modified cell is recorded.
PreparedResponse prepare_response(const BiasPanel& panel, double eps = 1e-4);

double logit(double p);
double inv_logit(double x);

void write_bias_panel(const std::filesystem::path& path, const BiasPanel& panel);
/// Reads province_id,year,iso_week,bias. Provinces keep first-appearance order; weeks
/// span the earliest to the latest week present, every cell must be present exactly once.
BiasPanel read_bias_panel(const std::filesystem::path& path, BiasKind kind);
/// One JSON document listing the modified cells of each prepared panel, keyed by kind.
void write_clamp_log(const std::filesystem::path& path, const std::vector<BiasPanel>& prepared, double eps);

}  // namespace epibias
