#include "epibias/convergence.hpp"
#include "epibias/error.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace epibias;

namespace {

std::vector<std::vector<double>> normal_chains(int chains, int n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::vector<std::vector<double>> out(static_cast<std::size_t>(chains), std::vector<double>(static_cast<std::size_t>(n)));
    for (auto& c : out) {
        for (auto& x : c) x = nd(rng);
    }
    return out;
}

}  // namespace

TEST_CASE("independent normal chains")
{
    const auto chains = normal_chains(4, 1000, 1);
    const auto d = diagnose("x", chains);
    CHECK(d.rhat >= 0.99);
    CHECK(d.rhat <= 1.01);
    CHECK(d.ess_bulk == doctest::Approx(4000.0).epsilon(0.2));
    CHECK_FALSE(d.flagged);
    CHECK_FALSE(d.degenerate);
}

TEST_CASE("an offset chain is flagged")
{
    auto chains = normal_chains(4, 500, 2);
    for (auto& x : chains[2]) x += 10.0;
    const auto d = diagnose("x", chains);
    CHECK(d.rhat > 1.5);
    CHECK(d.flagged);
}

TEST_CASE("a trending chain is caught by splitting")
{
    auto chains = normal_chains(4, 500, 3);
    for (auto& c : chains) {
        for (std::size_t k = 0; k < c.size(); ++k) {
            c[k] += 6.0 * static_cast<double>(k) / static_cast<double>(c.size());
        }
    }
    CHECK(diagnose("x", chains).flagged);
}

TEST_CASE("constant chains are degenerate")
{
    const std::vector<std::vector<double>> chains(3, std::vector<double>(40, 1.5));
    const auto d = diagnose("x", chains);
    CHECK(d.degenerate);
    CHECK(d.flagged);
    CHECK(std::isnan(d.rhat));
}

TEST_CASE("autocorrelated chains have a reduced effective size")
{
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    std::vector<std::vector<double>> chains(4, std::vector<double>(2000));
    for (auto& c : chains) {
        double x = 0.0;
        for (auto& v : c) {
            x = 0.9 * x + std::sqrt(1 - 0.81) * nd(rng);
            v = x;
        }
    }
    // AR(1) with rho = 0.9: ESS ~ n (1 - rho) / (1 + rho)
    const auto d = diagnose("x", chains);
    CHECK(d.ess_bulk == doctest::Approx(8000.0 * 0.1 / 1.9).epsilon(0.25));
}

TEST_CASE("too few draws")
{
    CHECK_THROWS_AS(diagnose("x", normal_chains(4, 19, 5)), ValidationError);
    CHECK_NOTHROW(diagnose("x", normal_chains(4, 20, 5)));
}

TEST_CASE("report over posterior draws")
{
    PosteriorDraws pd;
    pd.n_chains = 2;
    pd.n_draws = 100;
    std::mt19937_64 rng(6);
    std::normal_distribution<double> nd;
    for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < 100; ++k) {
            Draw d;
            d.chain = c;
            d.iteration = k;
            d.hp = {std::exp(nd(rng)), 0.5 + 0.1 * nd(rng), 0.3 + 0.05 * nd(rng), std::exp(nd(rng))};
            d.latent.mu = nd(rng);
            pd.draws.push_back(d);
        }
    }
    const auto report = convergence(pd);
    CHECK(report.parameters.size() == 5);
    CHECK(report.max_rhat < 1.05);
    CHECK(report.parameters[0].name == "V");
}
