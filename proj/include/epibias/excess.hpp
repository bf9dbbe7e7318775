#pragma once

#include "epibias/ingest.hpp"

#include <vector>

namespace epibias {

/// Estimated epidemic deaths per province and week; may be negative.
struct ExcessPanel {
    ProvinceIndex provinces;
    WeekIndex weeks;
    Eigen::MatrixXd dhat;
};

/// Cell-wise mean across baseline years. Panels are aligned by ISO week number,
/// so each year keeps its own calendar; the result carries the first panel's weeks.
MortalityPanel compute_baseline(const std::vector<MortalityPanel>& panels);

/// Centered moving average along weeks with the window truncated at both ends.
MortalityPanel smooth_series(const MortalityPanel& panel, int window);

/// smooth_series(current, 3) minus baseline.
ExcessPanel compute_excess(const MortalityPanel& current, const MortalityPanel& baseline);

inline constexpr int kExcessSmoothingWindow = 3;

}  // namespace epibias
