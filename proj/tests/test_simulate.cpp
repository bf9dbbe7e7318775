#include "epibias/error.hpp"
#include "epibias/simulate.hpp"

#include <doctest.h>

using namespace epibias;

TEST_CASE("noiseless simulation returns the linear predictor")
{
    SimScenario sc;
    sc.ns = 6;
    sc.nt = 5;
    sc.graph = GraphKind::Ring;
    sc.hp = {0.5, 0.6, 0.3, 0.0};
    const auto ds = simulate_dataset(sc);
    CHECK(ds.y.y == ds.eta);
    CHECK(ds.y.n_provinces == 6);
    CHECK(ds.provinces.id(0) == "P01");
    CHECK(to_string(ds.weeks.at(0)) == "2020-W09");
    CHECK(ds.model.constraint_residual(ds.truth) < 1e-8);
}

TEST_CASE("psi = 0 removes the interaction")
{
    SimScenario sc;
    sc.hp = {0.5, 0.6, 0.0, 0.1};
    const auto ds = simulate_dataset(sc);
    LatentState no_w = ds.truth;
    no_w.w.setConstant(123.0);
    CHECK(linear_predictor(no_w, sc.hp) == ds.eta);
}

TEST_CASE("same seed, same dataset")
{
    SimScenario sc;
    sc.seed = 77;
    CHECK(simulate_dataset(sc).y.y == simulate_dataset(sc).y.y);
    SimScenario other = sc;
    other.seed = 78;
    CHECK(simulate_dataset(other).y.y != simulate_dataset(sc).y.y);
}

TEST_CASE("grid layout uses the squarest factorization")
{
    SimScenario sc;
    sc.ns = 20;
    const auto g = scenario_graph(sc);
    // 4 x 5 lattice: 4*4 horizontal + 3*5 vertical edges
    CHECK(g.weights.nonZeros() == 2 * (4 * 4 + 3 * 5));
}

TEST_CASE("prior draws decompose the structured variance as intended")
{
    const LatentModel model(scaled(grid_graph(4, 5)), scaled(rw1_structure(11)));
    const HyperParams hp{1.0, 0.6, 0.3, 1.0};
    std::mt19937_64 rng(3);
    double vs = 0.0, vt = 0.0, vi = 0.0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        const auto s = draw_prior_latent(model, 0.0, rng);
        vs += hp.c_u() * hp.c_u() * s.u.squaredNorm() / 20.0;
        vt += hp.c_v() * hp.c_v() * s.v.squaredNorm() / 11.0;
        vi += hp.c_w() * hp.c_w() * s.w.squaredNorm() / 220.0;
    }
    // scaled structures give geometric-mean marginal variance 1, so the arithmetic shares are close
    const double total = vs + vt + vi;
    CHECK(vs / total == doctest::Approx(0.42).epsilon(0.02 / 0.42));
    CHECK(vt / total == doctest::Approx(0.28).epsilon(0.02 / 0.28));
    CHECK(vi / total == doctest::Approx(0.30).epsilon(0.02 / 0.30));
}

TEST_CASE("disconnected mobility graph warns and proceeds")
{
    SparseMatrix w(5, 5);
    w.insert(0, 1) = w.insert(1, 0) = 1.0;
    w.insert(1, 2) = w.insert(2, 1) = 1.0;
    w.insert(3, 4) = w.insert(4, 3) = 1.0;
    SimScenario sc;
    sc.graph = GraphKind::Mobility;
    sc.weights = w;
    sc.nt = 4;
    const auto ds = simulate_dataset(sc);
    CHECK(ds.warnings.size() == 1);
    CHECK(ds.model.constraint_residual(ds.truth) < 1e-8);
}

TEST_CASE("scenario validation")
{
    SimScenario sc;
    sc.ns = 3;
    CHECK_THROWS_AS(simulate_dataset(sc), ValidationError);
    sc = SimScenario{};
    sc.nt = 2;
    CHECK_THROWS_AS(simulate_dataset(sc), ValidationError);
    sc = SimScenario{};
    sc.hp.phi = 1.5;
    CHECK_THROWS_AS(simulate_dataset(sc), ValidationError);
    CHECK(parse_graph_kind("ring") == GraphKind::Ring);
    CHECK_THROWS_AS(parse_graph_kind("torus"), ValidationError);
}
