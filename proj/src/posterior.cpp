#include "epibias/posterior.hpp"

#include "epibias/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace epibias {

namespace {

void require_latent(const PosteriorDraws& draws)
{
    if (draws.draws.empty()) {
        throw ValidationError("no posterior draws");
    }
    if (!draws.has_latent) {
        throw ValidationError("draws were stored without latent states; rerun `fit` with --save-latent");
    }
}

}  // namespace

double quantile(std::vector<double> sample, double p)
{
    if (sample.empty()) {
        throw ValidationError("quantile of an empty sample");
    }
    std::sort(sample.begin(), sample.end());
    const double h = p * static_cast<double>(sample.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, sample.size() - 1);
    return sample[lo] + (h - static_cast<double>(lo)) * (sample[hi] - sample[lo]);
}

IntervalSummary summarize(std::span<const double> sample)
{
    std::vector<double> v(sample.begin(), sample.end());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return {mean, quantile(v, 0.025), quantile(v, 0.975)};
}

VarianceShareSummary variance_shares(const PosteriorDraws& draws)
{
    if (draws.draws.empty()) {
        throw ValidationError("no posterior draws");
    }
    VarianceShareSummary out;
    const auto n = static_cast<Eigen::Index>(draws.draws.size());
    out.per_draw.resize(n, 3);
    for (Eigen::Index k = 0; k < n; ++k) {
        const auto& hp = draws.draws[static_cast<std::size_t>(k)].hp;
        out.per_draw(k, 0) = (1.0 - hp.psi) * hp.phi;
        out.per_draw(k, 1) = (1.0 - hp.psi) * (1.0 - hp.phi);
        out.per_draw(k, 2) = hp.psi;
    }
    auto column = [&](Eigen::Index c) {
        const Eigen::VectorXd col = out.per_draw.col(c);
        return summarize(std::span<const double>(col.data(), static_cast<std::size_t>(col.size())));
    };
    out.spatial = column(0);
    out.temporal = column(1);
    out.interaction = column(2);
    return out;
}

EffectsSummary summarize_effects(const PosteriorDraws& draws)
{
    require_latent(draws);
    const std::size_t ns = draws.n_provinces;
    const std::size_t nt = draws.n_weeks;
    const std::size_t nd = draws.draws.size();
    std::vector<std::vector<double>> su(ns, std::vector<double>(nd)), uu = su;
    std::vector<std::vector<double>> sv(nt, std::vector<double>(nd)), vv = sv;
    for (std::size_t k = 0; k < nd; ++k) {
        const auto& d = draws.draws[k];
        const double cu = d.hp.c_u();
        const double cv = d.hp.c_v();
        for (std::size_t i = 0; i < ns; ++i) {
            uu[i][k] = d.latent.u(static_cast<Eigen::Index>(i));
            su[i][k] = cu * uu[i][k];
        }
        for (std::size_t j = 0; j < nt; ++j) {
            vv[j][k] = d.latent.v(static_cast<Eigen::Index>(j));
            sv[j][k] = cv * vv[j][k];
        }
    }
    EffectsSummary out;
    for (std::size_t i = 0; i < ns; ++i) {
        out.spatial.contribution.push_back(summarize(su[i]));
        out.spatial.unit.push_back(summarize(uu[i]));
    }
    for (std::size_t j = 0; j < nt; ++j) {
        out.temporal.contribution.push_back(summarize(sv[j]));
        out.temporal.unit.push_back(summarize(vv[j]));
    }
    return out;
}

FittedPanel fitted_values(const PosteriorDraws& draws)
{
    require_latent(draws);
    const auto ns = static_cast<Eigen::Index>(draws.n_provinces);
    const auto nt = static_cast<Eigen::Index>(draws.n_weeks);
    const std::size_t nd = draws.draws.size();
    std::vector<std::vector<double>> cells(static_cast<std::size_t>(ns * nt), std::vector<double>(nd));
    for (std::size_t k = 0; k < nd; ++k) {
        const auto& d = draws.draws[k];
        const Eigen::VectorXd eta = linear_predictor(d.latent, d.hp);
        for (Eigen::Index c = 0; c < eta.size(); ++c) {
            cells[static_cast<std::size_t>(c)][k] = inv_logit(eta(c));
        }
    }
    FittedPanel out;
    out.mean.resize(ns, nt);
    out.q025.resize(ns, nt);
    out.q50.resize(ns, nt);
    out.q975.resize(ns, nt);
    for (Eigen::Index i = 0; i < ns; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
            auto& c = cells[static_cast<std::size_t>(i * nt + j)];
            out.mean(i, j) = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(nd);
            out.q025(i, j) = quantile(c, 0.025);
            out.q50(i, j) = quantile(c, 0.5);
            out.q975(i, j) = quantile(c, 0.975);
        }
    }
    return out;
}

}  // namespace epibias
