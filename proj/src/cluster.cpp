#include "epibias/cluster.hpp"

#include "epibias/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace epibias {

double dtw(std::span<const double> a, std::span<const double> b, std::optional<int> band)
{
    if (a.empty() || b.empty()) {
        throw ValidationError("dtw of an empty series");
    }
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    std::size_t w = std::max(n, m);
    if (band) {
        if (*band < 0) {
            throw ValidationError("dtw band must be non-negative");
        }
        // the band must at least reach the opposite corner
        w = std::max<std::size_t>(static_cast<std::size_t>(*band), n > m ? n - m : m - n);
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(m + 1, inf), cur(m + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= n; ++i) {
        std::fill(cur.begin(), cur.end(), inf);
        const std::size_t lo = i > w ? i - w : 1;
        const std::size_t hi = std::min(m, i + w);
        for (std::size_t j = lo; j <= hi; ++j) {
            const double cost = std::abs(a[i - 1] - b[j - 1]);
            cur[j] = cost + std::min({prev[j - 1], prev[j], cur[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

Eigen::MatrixXd dtw_distance_matrix(const Eigen::MatrixXd& series, std::optional<int> band)
{
    const Eigen::Index n = series.rows();
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    std::vector<std::vector<double>> rows(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        rows[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(series.cols()));
        Eigen::VectorXd::Map(rows[static_cast<std::size_t>(i)].data(), series.cols()) = series.row(i).transpose();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            d(i, j) = d(j, i) = dtw(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(j)], band);
        }
    }
    return d;
}

namespace {

struct Assignment {
    std::vector<int> label;
    double cost = 0.0;
};

Assignment assign(const Eigen::MatrixXd& d, const std::vector<std::size_t>& medoids)
{
    const auto n = static_cast<std::size_t>(d.rows());
    Assignment out{std::vector<int>(n, -1), 0.0};
    for (std::size_t c = 0; c < medoids.size(); ++c) {
        out.label[medoids[c]] = static_cast<int>(c);
    }
    for (std::size_t p = 0; p < n; ++p) {
        if (out.label[p] >= 0) {
            continue;
        }
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < medoids.size(); ++c) {
            const double dist = d(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(medoids[c]));
            if (dist < best) {
                best = dist;
                out.label[p] = static_cast<int>(c);
            }
        }
        out.cost += best;
    }
    return out;
}

double total_cost(const Eigen::MatrixXd& d, const std::vector<std::size_t>& medoids)
{
    double cost = 0.0;
    for (Eigen::Index p = 0; p < d.rows(); ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (auto m : medoids) {
            best = std::min(best, d(p, static_cast<Eigen::Index>(m)));
        }
        cost += best;
    }
    return cost;
}

}  // namespace

std::vector<double> silhouette_scores(const Eigen::MatrixXd& d, const std::vector<int>& assignment, int k)
{
    const auto n = assignment.size();
    std::vector<double> out(n, 0.0);
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int a : assignment) {
        ++sizes.at(static_cast<std::size_t>(a));
    }
    for (std::size_t p = 0; p < n; ++p) {
        const int own = assignment[p];
        if (sizes[static_cast<std::size_t>(own)] <= 1) {
            continue;
        }
        std::vector<double> sum(static_cast<std::size_t>(k), 0.0);
        for (std::size_t q = 0; q < n; ++q) {
            if (q != p) {
                sum[static_cast<std::size_t>(assignment[q])] += d(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(q));
            }
        }
        const double a = sum[static_cast<std::size_t>(own)] / (sizes[static_cast<std::size_t>(own)] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c != own && sizes[static_cast<std::size_t>(c)] > 0) {
                b = std::min(b, sum[static_cast<std::size_t>(c)] / sizes[static_cast<std::size_t>(c)]);
            }
        }
        const double denom = std::max(a, b);
        out[p] = (denom > 0.0 && std::isfinite(b)) ? (b - a) / denom : 0.0;
    }
    return out;
}

Clustering kmedoids_fit(const Eigen::MatrixXd& d, int k, std::uint64_t seed)
{
    const auto n = static_cast<int>(d.rows());
    if (d.cols() != n) {
        throw ValidationError("distance matrix must be square");
    }
    if (k < 2 || k >= n) {
        throw ValidationError("k must satisfy 2 <= k < number of series (k=" + std::to_string(k) +
                              ", n=" + std::to_string(n) + ")");
    }
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    // BUILD
    std::vector<std::size_t> medoids;
    std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<char> is_medoid(static_cast<std::size_t>(n), 0);
    for (int step = 0; step < k; ++step) {
        std::size_t best = order.front();
        double best_cost = std::numeric_limits<double>::infinity();
        for (auto cand : order) {
            if (is_medoid[cand]) {
                continue;
            }
            double cost = 0.0;
            for (int p = 0; p < n; ++p) {
                cost += std::min(nearest[static_cast<std::size_t>(p)], d(p, static_cast<Eigen::Index>(cand)));
            }
            if (cost < best_cost) {
                best_cost = cost;
                best = cand;
            }
        }
        medoids.push_back(best);
        is_medoid[best] = 1;
        for (int p = 0; p < n; ++p) {
            nearest[static_cast<std::size_t>(p)] =
                std::min(nearest[static_cast<std::size_t>(p)], d(p, static_cast<Eigen::Index>(best)));
        }
    }

    Clustering out;
    out.k = k;
    double cost = total_cost(d, medoids);
    out.cost_trace.push_back(cost);

    // SWAP: apply the best improving exchange until none is left.
    for (int round = 0; round < 10000; ++round) {
        double best_cost = cost;
        std::size_t best_slot = 0;
        std::size_t best_cand = 0;
        for (std::size_t slot = 0; slot < medoids.size(); ++slot) {
            for (auto cand : order) {
                if (is_medoid[cand]) {
                    continue;
                }
                auto trial = medoids;
                trial[slot] = cand;
                const double c = total_cost(d, trial);
                if (c < best_cost - 1e-12 * std::max(1.0, std::abs(best_cost))) {
                    best_cost = c;
                    best_slot = slot;
                    best_cand = cand;
                }
            }
        }
        if (best_cost >= cost) {
            break;
        }
        is_medoid[medoids[best_slot]] = 0;
        medoids[best_slot] = best_cand;
        is_medoid[best_cand] = 1;
        cost = best_cost;
        out.cost_trace.push_back(cost);
    }

    const auto a = assign(d, medoids);
    out.assignment = a.label;
    out.medoids = medoids;
    out.total_cost = a.cost;
    out.silhouette = silhouette_scores(d, out.assignment, k);
    out.mean_silhouette =
        std::accumulate(out.silhouette.begin(), out.silhouette.end(), 0.0) / static_cast<double>(n);
    return out;
}

Clustering kmedoids_fit(const TrajectorySet& set, int k, std::uint64_t seed, std::optional<int> band)
{
    return kmedoids_fit(dtw_distance_matrix(set.series, band), k, seed);
}

KSelection select_k(const TrajectorySet& set, int k_min, int k_max, std::uint64_t seed, std::optional<int> band)
{
    const auto n = static_cast<int>(set.series.rows());
    if (k_min < 2 || k_max >= n || k_min > k_max) {
        throw ValidationError("k range must lie within [2, number of series - 1]");
    }
    const Eigen::MatrixXd d = dtw_distance_matrix(set.series, band);
    KSelection out;
    if (d.maxCoeff() == 0.0) {
        out.degenerate = true;
        return out;
    }
    double best = -std::numeric_limits<double>::infinity();
    for (int k = k_min; k <= k_max; ++k) {
        auto c = kmedoids_fit(d, k, seed);
        out.scores.emplace_back(k, c.mean_silhouette);
        if (c.mean_silhouette > best) {
            best = c.mean_silhouette;
            out.k = k;
            out.best = std::move(c);
        }
    }
    return out;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b)
{
    if (a.size() != b.size() || a.empty()) {
        throw ValidationError("adjusted_rand_index: label vectors must be non-empty and of equal length");
    }
    std::map<std::pair<int, int>, long> joint;
    std::map<int, long> ra, rb;
    for (std::size_t p = 0; p < a.size(); ++p) {
        ++joint[{a[p], b[p]}];
        ++ra[a[p]];
        ++rb[b[p]];
    }
    auto pairs = [](long x) { return 0.5 * static_cast<double>(x) * static_cast<double>(x - 1); };
    double index = 0.0, sa = 0.0, sb = 0.0;
    for (const auto& [key, c] : joint) {
        index += pairs(c);
    }
    for (const auto& [key, c] : ra) {
        sa += pairs(c);
    }
    for (const auto& [key, c] : rb) {
        sb += pairs(c);
    }
    const double expected = sa * sb / pairs(static_cast<long>(a.size()));
    const double max_index = 0.5 * (sa + sb);
    if (max_index == expected) {
        return 1.0;  // both partitions trivial and identical in structure
    }
    return (index - expected) / (max_index - expected);
}

Eigen::MatrixXd zscore_rows(const Eigen::MatrixXd& series)
{
    Eigen::MatrixXd out = series;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        const double mean = out.row(i).mean();
        out.row(i).array() -= mean;
        const double sd = out.cols() > 1 ? std::sqrt(out.row(i).squaredNorm() / static_cast<double>(out.cols() - 1)) : 0.0;
        if (sd > 0.0) {
            out.row(i) /= sd;
        }
    }
    return out;
}

}  // namespace epibias
