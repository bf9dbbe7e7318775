#include "epibias/error.hpp"
#include "epibias/model.hpp"

#include <boost/math/distributions/gamma.hpp>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace epibias;

namespace {

Eigen::MatrixXd dense_pinv(const Eigen::MatrixXd& q)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
    Eigen::VectorXd d = es.eigenvalues();
    for (Eigen::Index k = 0; k < d.size(); ++k) {
        d(k) = d(k) > 1e-9 ? 1.0 / d(k) : 0.0;
    }
    return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

double mvn_log_density(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov)
{
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    REQUIRE(llt.info() == Eigen::Success);
    const Eigen::VectorXd z = llt.matrixL().solve(x);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

/// Log density of a singular Gaussian with covariance `cov` on its range (pseudo-determinant).
double singular_log_density(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov)
{
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    double log_pdet = 0.0, quad = 0.0;
    int rank = 0;
    for (Eigen::Index k = 0; k < cov.rows(); ++k) {
        const double lam = es.eigenvalues()(k);
        if (lam > 1e-9) {
            ++rank;
            log_pdet += std::log(lam);
            const double z = es.eigenvectors().col(k).dot(x);
            quad += z * z / lam;
        }
    }
    return -0.5 * (rank * std::log(2.0 * std::numbers::pi) + log_pdet + quad);
}

LatentModel small_model(int ns, int nt)
{
    return LatentModel(scaled(ring_graph(ns)), scaled(rw1_structure(nt)));
}

/// Dense marginal covariance of y: intercept, expanded main effects, interaction, noise.
Eigen::MatrixXd dense_marginal_covariance(const LatentModel& m, const HyperParams& hp, const PriorConfig& cfg)
{
    const auto ns = static_cast<Eigen::Index>(m.n_provinces());
    const auto nt = static_cast<Eigen::Index>(m.n_weeks());
    const Eigen::MatrixXd su = dense_pinv(Eigen::MatrixXd(m.spatial().precision));
    const Eigen::MatrixXd sv = dense_pinv(Eigen::MatrixXd(m.temporal().precision));
    const Eigen::MatrixXd sw = dense_pinv(Eigen::MatrixXd(m.interaction().precision));
    Eigen::MatrixXd eu = Eigen::MatrixXd::Zero(ns * nt, ns);
    Eigen::MatrixXd ev = Eigen::MatrixXd::Zero(ns * nt, nt);
    for (Eigen::Index i = 0; i < ns; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
            eu(i * nt + j, i) = 1.0;
            ev(i * nt + j, j) = 1.0;
        }
    }
    const Eigen::Index n = ns * nt;
    Eigen::MatrixXd c = cfg.mu_sd * cfg.mu_sd * Eigen::MatrixXd::Ones(n, n);
    c += hp.c_u() * hp.c_u() * eu * su * eu.transpose();
    c += hp.c_v() * hp.c_v() * ev * sv * ev.transpose();
    c += hp.c_w() * hp.c_w() * sw;
    c.diagonal().array() += hp.sigma2_eps;
    return c;
}

}  // namespace

TEST_CASE("linear predictor expansion")
{
    LatentState s;
    s.mu = 0.0;
    s.u = Eigen::Vector2d(1, -1);
    s.v = Eigen::Vector2d(0.3, -0.3);
    s.w = Eigen::Vector4d(0.1, -0.1, -0.1, 0.1);
    Eigen::VectorXd eta = linear_predictor(s, {1.0, 1.0, 0.0, 1.0});
    CHECK(eta.isApprox(Eigen::Vector4d(1, 1, -1, -1)));

    s.mu = 2.5;
    eta = linear_predictor(s, {1e-300, 0.4, 0.5, 1.0});
    CHECK(eta.isApprox(Eigen::Vector4d::Constant(2.5)));

    eta = linear_predictor(s, {4.0, 0.4, 1.0, 1.0});
    CHECK(eta.isApprox(Eigen::VectorXd(2.5 + 2.0 * s.w.array())));

    // linearity in the latent field
    LatentState t = s;
    t.mu = 0.0;
    t.u *= 3.0;
    t.v *= 3.0;
    t.w *= 3.0;
    LatentState z = s;
    z.mu = 0.0;
    const HyperParams hp{0.7, 0.3, 0.2, 1.0};
    CHECK(linear_predictor(t, hp).isApprox(3.0 * linear_predictor(z, hp)));
}

TEST_CASE("pc rate")
{
    CHECK(pc_rate(0.1, 0.05) == doctest::Approx(29.957322735539908).epsilon(1e-14));
    CHECK(pc_rate(1.0, 0.05) == doctest::Approx(2.9957322735539909).epsilon(1e-14));
    CHECK(pc_rate(1.0, 1.0 - 1e-12) < 1e-11);
}

TEST_CASE("psi prior integrates to one")
{
    boost::math::quadrature::tanh_sinh<double> integrator;
    for (double lambda : {0.1, 1.0, 5.0}) {
        const double total = integrator.integrate(
            [lambda](double psi) { return std::exp(log_pc_psi_density(psi, lambda)); }, 0.0, 1.0);
        CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
    }
    CHECK(std::isinf(log_pc_psi_density(0.0, 1.0)));
    CHECK(std::isinf(log_pc_psi_density(1.0 + 1e-12, 1.0)));
}

TEST_CASE("hyperprior terms")
{
    PriorConfig cfg;
    // V density integrates to one on (0, inf)
    boost::math::quadrature::exp_sinh<double> half_line;
    HyperParams base{1.0, 0.5, 0.5, 1.0};
    const double ref = log_prior_hyper(base, cfg);
    const double total = half_line.integrate([&](double v) {
        HyperParams hp = base;
        hp.V = v;
        const double lam = pc_rate(cfg.U, cfg.alpha);
        return std::exp(log_prior_hyper(hp, cfg) - ref + (std::log(lam) - lam - std::log(2.0)));
    });
    CHECK(total == doctest::Approx(1.0).epsilon(1e-8));

    // phi contributes nothing inside (0, 1)
    HyperParams a = base, b = base;
    a.phi = 0.1;
    b.phi = 0.93;
    CHECK(log_prior_hyper(a, cfg) == doctest::Approx(log_prior_hyper(b, cfg)).epsilon(1e-15));

    // Gamma(1, 5e-5) on the precision plus the change of variables to sigma2
    const boost::math::gamma_distribution<double> g(cfg.eps_shape, 1.0 / cfg.eps_rate);
    HyperParams c = base;
    c.sigma2_eps = 0.25;
    const double expected_eps = std::log(boost::math::pdf(g, 4.0)) + 2.0 * std::log(4.0);
    const double expected_eps_base = std::log(boost::math::pdf(g, 1.0));
    CHECK(log_prior_hyper(c, cfg) - ref == doctest::Approx(expected_eps - expected_eps_base).epsilon(1e-12));

    HyperParams out = base;
    out.psi = 1.5;
    CHECK(std::isinf(log_prior_hyper(out, cfg)));
    out = base;
    out.V = -1.0;
    CHECK(std::isinf(log_prior_hyper(out, cfg)));
}

TEST_CASE("prior tail calibration by simulation")
{
    for (double U : {0.1, 1.0}) {
        PriorConfig cfg;
        cfg.U = U;
        std::mt19937_64 rng(20200224);
        int exceed = 0;
        const int n = 100000;
        for (int k = 0; k < n; ++k) {
            if (std::sqrt(sample_prior_hyper(cfg, rng).V) > U) {
                ++exceed;
            }
        }
        CHECK(static_cast<double>(exceed) / n == doctest::Approx(0.05).epsilon(0.1));
    }
}

TEST_CASE("log-likelihood identities")
{
    Eigen::VectorXd y = Eigen::VectorXd::Constant(1, 0.7);
    CHECK(log_likelihood(y, y, 0.3) == doctest::Approx(-0.5 * std::log(2 * std::numbers::pi * 0.3)));
    Eigen::VectorXd many = Eigen::VectorXd::LinSpaced(12, -1, 1);
    CHECK(log_likelihood(many, many, 2.0) - log_likelihood(many, many, 1.0) ==
          doctest::Approx(-0.5 * 12 * std::log(2.0)));
}

TEST_CASE("GMRF terms match dense constrained normal densities")
{
    const auto m = small_model(5, 4);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    const Eigen::MatrixXd su = dense_pinv(Eigen::MatrixXd(m.spatial().precision));
    Eigen::VectorXd u(5);
    for (auto& x : u) x = nd(rng);
    u.array() -= u.mean();
    CHECK(m.log_density_u(u) == doctest::Approx(singular_log_density(u, su)).epsilon(1e-10));

    const Eigen::MatrixXd sv = dense_pinv(Eigen::MatrixXd(m.temporal().precision));
    Eigen::VectorXd v(4);
    for (auto& x : v) x = nd(rng);
    v.array() -= v.mean();
    CHECK(m.log_density_v(v) == doctest::Approx(singular_log_density(v, sv)).epsilon(1e-10));

    const Eigen::MatrixXd sw = dense_pinv(Eigen::MatrixXd(m.interaction().precision));
    Eigen::VectorXd w(20);
    for (auto& x : w) x = nd(rng);
    w = sw * (Eigen::MatrixXd(m.interaction().precision) * w);  // project onto the constrained subspace
    CHECK(m.constraint_residual({0.0, u, v, w}) < 1e-10);
    CHECK(m.log_density_w(w) == doctest::Approx(singular_log_density(w, sw)).epsilon(1e-10));
}

TEST_CASE("eigenbases are orthonormal with null columns first")
{
    const auto m = LatentModel(scaled(grid_graph(2, 3)), scaled(rw1_structure(5)));
    const auto& bu = m.spatial_basis();
    CHECK((bu.transpose() * bu - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.spatial_eigenvalues()(0) == 0.0);
    CHECK(bu.col(0).isApprox(Eigen::VectorXd::Constant(6, 1.0 / std::sqrt(6.0))));
    const auto& bv = m.temporal_basis();
    CHECK((bv.transpose() * bv - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(m.rank_w() == 5 * 4);
}

TEST_CASE("joint density rejects constraint violations")
{
    const auto m = small_model(4, 3);
    LatentState s{0.0, Eigen::VectorXd::Ones(4), Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(12)};
    ResponseVector y{Eigen::VectorXd::Zero(12), 4, 3};
    CHECK_THROWS_AS(joint_log_density(y, s, {1, 0.5, 0.5, 1}, m, PriorConfig{}), ValidationError);
    s.u.setZero();
    CHECK(std::isfinite(joint_log_density(y, s, {1, 0.5, 0.5, 1}, m, PriorConfig{})));
}

TEST_CASE("spectral marginal likelihood matches the dense Gaussian marginal")
{
    PriorConfig cfg;
    cfg.mu_sd = 3.0;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> nd;
    for (const auto& model : {small_model(5, 4), LatentModel(scaled(grid_graph(2, 3)), scaled(rw1_structure(3)))}) {
        const auto n = static_cast<Eigen::Index>(model.n_cells());
        ResponseVector y{Eigen::VectorXd(n), model.n_provinces(), model.n_weeks()};
        for (auto& x : y.y) x = 1.0 + nd(rng);
        const SpectralResponse spectral(model, y);
        for (const HyperParams hp : {HyperParams{0.5, 0.6, 0.3, 0.1}, HyperParams{2.0, 0.1, 0.9, 1.5},
                                     HyperParams{0.01, 0.99, 0.01, 0.3}}) {
            const double dense = mvn_log_density(y.y, dense_marginal_covariance(model, hp, cfg));
            CHECK(spectral.log_marginal_likelihood(hp, cfg) == doctest::Approx(dense).epsilon(1e-9));
        }
    }
}

TEST_CASE("spectral marginal likelihood on a disconnected graph")
{
    SparseMatrix w(5, 5);
    w.insert(0, 1) = w.insert(1, 0) = 1.0;
    w.insert(1, 2) = w.insert(2, 1) = 0.5;
    w.insert(3, 4) = w.insert(4, 3) = 2.0;
    const LatentModel model(scaled(spatial_structure_from_weights(w)), scaled(rw1_structure(4)));
    PriorConfig cfg;
    cfg.mu_sd = 2.0;
    std::mt19937_64 rng(23);
    std::normal_distribution<double> nd;
    ResponseVector y{Eigen::VectorXd(20), 5, 4};
    for (auto& x : y.y) x = nd(rng);
    const SpectralResponse spectral(model, y);
    const HyperParams hp{0.8, 0.4, 0.35, 0.2};
    const double dense = mvn_log_density(y.y, dense_marginal_covariance(model, hp, cfg));
    CHECK(spectral.log_marginal_likelihood(hp, cfg) == doctest::Approx(dense).epsilon(1e-9));
}
