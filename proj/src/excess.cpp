#include "epibias/excess.hpp"

#include "epibias/error.hpp"

#include <algorithm>

namespace epibias {

namespace {

void require_aligned(const MortalityPanel& a, const MortalityPanel& b)
{
    if (!(a.provinces == b.provinces) || a.weeks.size() != b.weeks.size() ||
        !a.weeks.same_iso_weeks(b.weeks)) {
        throw ValidationError("index mismatch between panels (years " + std::to_string(a.year_label) + " and " +
                              std::to_string(b.year_label) + ")");
    }
}

}  // namespace

MortalityPanel compute_baseline(const std::vector<MortalityPanel>& panels)
{
    if (panels.empty()) {
        throw ValidationError("baseline needs at least one panel");
    }
    MortalityPanel out = panels.front();
    for (std::size_t k = 1; k < panels.size(); ++k) {
        require_aligned(panels.front(), panels[k]);
        out.counts += panels[k].counts;
    }
    out.counts /= static_cast<double>(panels.size());
    return out;
}

MortalityPanel smooth_series(const MortalityPanel& panel, int window)
{
    if (window <= 0 || window % 2 == 0) {
        throw ValidationError("smoothing window must be odd and positive, got " + std::to_string(window));
    }
    const Eigen::Index nt = panel.counts.cols();
    if (window > nt) {
        throw ValidationError("smoothing window " + std::to_string(window) + " exceeds series length " +
                              std::to_string(nt));
    }
    const Eigen::Index half = window / 2;
    MortalityPanel out = panel;
    for (Eigen::Index j = 0; j < nt; ++j) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, j - half);
        const Eigen::Index hi = std::min<Eigen::Index>(nt - 1, j + half);
        out.counts.col(j) = panel.counts.middleCols(lo, hi - lo + 1).rowwise().mean();
    }
    return out;
}

ExcessPanel compute_excess(const MortalityPanel& current, const MortalityPanel& baseline)
{
    require_aligned(current, baseline);
    // series shorter than the window are left unsmoothed
    const int window = current.counts.cols() >= kExcessSmoothingWindow ? kExcessSmoothingWindow : 1;
    const auto smoothed = smooth_series(current, window);
    return {current.provinces, current.weeks, smoothed.counts - baseline.counts};
}

}  // namespace epibias
