#include "epibias/convergence.hpp"

#include "epibias/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace epibias {

namespace {

using Chains = std::vector<std::vector<double>>;

Chains split_chains(const Chains& chains)
{
    Chains out;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
        out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
    }
    return out;
}

// Pooled fractional ranks (ties averaged) mapped through the normal quantile function.
Chains rank_normalize(const Chains& chains)
{
    std::vector<std::pair<double, std::size_t>> pooled;
    for (std::size_t m = 0; m < chains.size(); ++m) {
        for (std::size_t t = 0; t < chains[m].size(); ++t) {
            pooled.emplace_back(chains[m][t], m * chains[m].size() + t);
        }
    }
    std::sort(pooled.begin(), pooled.end());
    const double s = static_cast<double>(pooled.size());
    std::vector<double> z(pooled.size());
    const boost::math::normal_distribution<double> std_normal;
    for (std::size_t a = 0; a < pooled.size();) {
        std::size_t b = a;
        while (b + 1 < pooled.size() && pooled[b + 1].first == pooled[a].first) {
            ++b;
        }
        const double rank = 0.5 * static_cast<double>(a + b) + 1.0;
        const double q = boost::math::quantile(std_normal, (rank - 0.375) / (s + 0.25));
        for (std::size_t k = a; k <= b; ++k) {
            z[pooled[k].second] = q;
        }
        a = b + 1;
    }
    Chains out = chains;
    for (std::size_t m = 0; m < chains.size(); ++m) {
        for (std::size_t t = 0; t < chains[m].size(); ++t) {
            out[m][t] = z[m * chains[m].size() + t];
        }
    }
    return out;
}

double mean_of(const std::vector<double>& x)
{
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

struct Moments {
    double within = 0.0;    // W
    double between = 0.0;   // B / N
    double var_plus = 0.0;  // (N-1)/N W + B/N
};

Moments moments(const Chains& chains)
{
    const double n = static_cast<double>(chains.front().size());
    const double m = static_cast<double>(chains.size());
    std::vector<double> means;
    double within = 0.0;
    for (const auto& c : chains) {
        const double mu = mean_of(c);
        means.push_back(mu);
        double ss = 0.0;
        for (double x : c) {
            ss += (x - mu) * (x - mu);
        }
        within += ss / (n - 1.0);
    }
    within /= m;
    const double grand = mean_of(means);
    double between = 0.0;
    for (double mu : means) {
        between += (mu - grand) * (mu - grand);
    }
    between /= (m - 1.0);  // = B / N
    return {within, between, (n - 1.0) / n * within + between};
}

double rhat_of(const Chains& chains)
{
    const auto mo = moments(chains);
    return std::sqrt(mo.var_plus / mo.within);
}

// Multi-chain ESS with Geyer's initial monotone sequence.
double ess_of(const Chains& chains)
{
    const auto mo = moments(chains);
    const std::size_t n = chains.front().size();
    const double m = static_cast<double>(chains.size());
    std::vector<std::vector<double>> centered;
    for (const auto& c : chains) {
        const double mu = mean_of(c);
        std::vector<double> d(c.size());
        std::transform(c.begin(), c.end(), d.begin(), [mu](double x) { return x - mu; });
        centered.push_back(std::move(d));
    }
    auto rho = [&](std::size_t lag) {
        double acov = 0.0;
        for (const auto& d : centered) {
            double s = 0.0;
            for (std::size_t t = 0; t + lag < n; ++t) {
                s += d[t] * d[t + lag];
            }
            acov += s / static_cast<double>(n);
        }
        acov /= m;
        return 1.0 - (mo.within - acov) / mo.var_plus;
    };

    double tau = -1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = rho(2 * k) + rho(2 * k + 1);
        if (pair <= 0.0) {
            break;
        }
        pair = std::min(pair, prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
    }
    const double total = m * static_cast<double>(n);
    tau = std::max(tau, 1.0 / std::log10(total));
    return total / tau;
}

}  // namespace

ParameterDiagnostics diagnose(const std::string& name, const std::vector<std::vector<double>>& chains)
{
    if (chains.size() < 2) {
        throw ValidationError("convergence diagnostics need at least 2 chains");
    }
    const std::size_t len = chains.front().size();
    for (const auto& c : chains) {
        if (c.size() != len) {
            throw ValidationError("chains of unequal length");
        }
    }
    if (len / 2 < 10) {
        throw ValidationError("too few draws for convergence diagnostics (need >= 10 per half-chain)");
    }
    ParameterDiagnostics out;
    out.name = name;
    const auto [lo, hi] = std::minmax_element(chains.front().begin(), chains.front().end());
    bool constant = *lo == *hi;
    for (const auto& c : chains) {
        constant = constant && std::all_of(c.begin(), c.end(), [&](double x) { return x == *lo; });
    }
    const Chains split = split_chains(chains);
    bool any_constant_half = false;
    for (const auto& c : split) {
        any_constant_half = any_constant_half || std::all_of(c.begin(), c.end(), [&](double x) { return x == c[0]; });
    }
    if (constant || any_constant_half) {
        out.degenerate = true;
        out.flagged = true;
        out.rhat = std::numeric_limits<double>::quiet_NaN();
        out.ess_bulk = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    const Chains z = rank_normalize(split);
    out.rhat = rhat_of(z);
    out.ess_bulk = ess_of(z);
    out.flagged = !(out.rhat <= kRhatThreshold);
    return out;
}

ConvergenceReport convergence(const PosteriorDraws& draws)
{
    ConvergenceReport report;
    for (const char* name : {"V", "phi", "psi", "sigma2_eps", "mu"}) {
        auto d = diagnose(name, draws.chains_of(name));
        if (!d.degenerate) {
            report.max_rhat = std::max(report.max_rhat, d.rhat);
        }
        report.any_flagged = report.any_flagged || d.flagged;
        report.parameters.push_back(std::move(d));
    }
    return report;
}

}  // namespace epibias
