#include "epibias/model.hpp"

#include "epibias/error.hpp"

#include <limits>
#include <numbers>

namespace epibias {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double quad_form(const SparseMatrix& q, const Eigen::VectorXd& x)
{
    return x.dot(q * x);
}

// Gaussian log-density of z ~ N(0, s2 I + tau g g^T).
double rank_one_log_density(const Eigen::VectorXd& z, const Eigen::VectorXd& g, double s2, double tau)
{
    const double gg = g.squaredNorm();
    const double gz = g.dot(z);
    const double denom = s2 + tau * gg;
    const double log_det = static_cast<double>(z.size() - 1) * std::log(s2) + std::log(denom);
    const double quad = (z.squaredNorm() - tau * gz * gz / denom) / s2;
    return -0.5 * (static_cast<double>(z.size()) * kLog2Pi + log_det + quad);
}

}  // namespace

bool HyperParams::in_support() const
{
    return std::isfinite(V) && std::isfinite(phi) && std::isfinite(psi) && std::isfinite(sigma2_eps) && V > 0.0 &&
           phi >= 0.0 && phi <= 1.0 && psi > 0.0 && psi <= 1.0 && sigma2_eps > 0.0;
}

void PriorConfig::validate() const
{
    if (!(U > 0.0) || !(alpha > 0.0 && alpha < 1.0) || !(lambda_psi > 0.0) || !(eps_shape > 0.0) ||
        !(eps_rate > 0.0) || !(mu_sd > 0.0)) {
        throw ValidationError("invalid prior configuration: need U > 0, 0 < alpha < 1, lambda_psi > 0, "
                              "positive Gamma shape/rate and mu_sd > 0");
    }
}

double pc_rate(double U, double alpha)
{
    return -std::log(alpha) / U;
}

double log_pc_psi_density(double psi, double lambda)
{
    if (!(psi > 0.0 && psi <= 1.0)) {
        return kNegInf;
    }
    const double d = std::sqrt(psi);
    return std::log(lambda) - lambda * d - std::log(2.0 * d) - std::log1p(-std::exp(-lambda));
}

double log_prior_hyper(const HyperParams& hp, const PriorConfig& cfg)
{
    if (!hp.in_support()) {
        return kNegInf;
    }
    const double lambda_v = pc_rate(cfg.U, cfg.alpha);
    const double sd = std::sqrt(hp.V);
    // sqrt(V) ~ Exp(lambda_v), Jacobian d sqrt(V) / dV = 1 / (2 sqrt(V))
    const double lp_v = std::log(lambda_v) - lambda_v * sd - std::log(2.0 * sd);
    const double lp_phi = 0.0;
    const double lp_psi = log_pc_psi_density(hp.psi, cfg.lambda_psi);
    // precision tau ~ Gamma(shape, rate), Jacobian |d tau / d sigma2| = tau^2
    const double tau = 1.0 / hp.sigma2_eps;
    const double lp_eps = cfg.eps_shape * std::log(cfg.eps_rate) - std::lgamma(cfg.eps_shape) +
                          (cfg.eps_shape - 1.0) * std::log(tau) - cfg.eps_rate * tau + 2.0 * std::log(tau);
    return lp_v + lp_phi + lp_psi + lp_eps;
}

HyperParams sample_prior_hyper(const PriorConfig& cfg, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> expo(pc_rate(cfg.U, cfg.alpha));
    std::gamma_distribution<double> gamma(cfg.eps_shape, 1.0 / cfg.eps_rate);
    HyperParams hp;
    const double sd = expo(rng);
    hp.V = sd * sd;
    hp.phi = unif(rng);
    const double t = -std::log1p(-unif(rng) * -std::expm1(-cfg.lambda_psi)) / cfg.lambda_psi;
    hp.psi = t * t;
    hp.sigma2_eps = 1.0 / gamma(rng);
    return hp;
}

Eigen::VectorXd linear_predictor(const LatentState& state, const HyperParams& hp)
{
    const Eigen::Index ns = state.u.size();
    const Eigen::Index nt = state.v.size();
    const double cu = hp.c_u();
    const double cv = hp.c_v();
    const double cw = hp.c_w();
    Eigen::VectorXd eta(ns * nt);
    for (Eigen::Index i = 0; i < ns; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
            const Eigen::Index k = i * nt + j;
            eta(k) = state.mu + cu * state.u(i) + cv * state.v(j) + (cw != 0.0 ? cw * state.w(k) : 0.0);
        }
    }
    return eta;
}

double log_likelihood(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, double sigma2_eps)
{
    const double n = static_cast<double>(y.size());
    return -0.5 * n * (kLog2Pi + std::log(sigma2_eps)) - 0.5 * (y - eta).squaredNorm() / sigma2_eps;
}

LatentModel::LatentModel(SpatialStructure spatial, TemporalStructure temporal)
    : spatial_(std::move(spatial)), temporal_(std::move(temporal))
{
    const auto ns = static_cast<Eigen::Index>(spatial_.size());
    const auto nt = static_cast<Eigen::Index>(temporal_.size());
    interaction_ = interaction_structure(spatial_, temporal_);
    a_u_ = spatial_constraints(spatial_);
    a_v_ = temporal_constraints(temporal_.size());
    const int nc = spatial_.n_components;
    rank_u_ = static_cast<int>(ns) - nc;
    rank_v_ = static_cast<int>(nt) - 1;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_u(Eigen::MatrixXd(spatial_.precision));
    if (es_u.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the spatial structure failed");
    }
    basis_u_ = es_u.eigenvectors();
    eig_u_ = es_u.eigenvalues();
    const double tol_u = 1e-9 * std::max(1.0, eig_u_.cwiseAbs().maxCoeff());
    if (rank_u_ > 0 && eig_u_(nc) <= tol_u) {
        throw NumericalError("spatial structure has more null directions than connected components");
    }
    for (int c = 0; c < nc; ++c) {
        const Eigen::VectorXd indicator = a_u_.row(c).transpose();
        basis_u_.col(c) = indicator / indicator.norm();
        eig_u_(c) = 0.0;
    }
    log_gdet_u_ = eig_u_.tail(rank_u_).array().log().sum();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_v(Eigen::MatrixXd(temporal_.precision));
    if (es_v.info() != Eigen::Success) {
        throw NumericalError("eigendecomposition of the temporal structure failed");
    }
    basis_v_ = es_v.eigenvectors();
    eig_v_ = es_v.eigenvalues();
    basis_v_.col(0).setConstant(1.0 / std::sqrt(static_cast<double>(nt)));
    eig_v_(0) = 0.0;
    if (rank_v_ > 0 && eig_v_(1) <= 1e-9 * std::max(1.0, eig_v_.maxCoeff())) {
        throw NumericalError("temporal structure has a null space larger than the constant");
    }
    log_gdet_v_ = eig_v_.tail(rank_v_).array().log().sum();
}

double LatentModel::constraint_residual(const LatentState& state) const
{
    double r = 0.0;
    if (state.u.size() > 0) {
        r = std::max(r, (a_u_ * state.u).cwiseAbs().maxCoeff());
    }
    if (state.v.size() > 0) {
        r = std::max(r, (a_v_ * state.v).cwiseAbs().maxCoeff());
    }
    if (state.w.size() > 0) {
        r = std::max(r, (interaction_.constraints * state.w).cwiseAbs().maxCoeff());
    }
    return r;
}

double LatentModel::log_density_u(const Eigen::VectorXd& u) const
{
    return -0.5 * rank_u_ * kLog2Pi + 0.5 * log_gdet_u_ - 0.5 * quad_form(spatial_.precision, u);
}

double LatentModel::log_density_v(const Eigen::VectorXd& v) const
{
    return -0.5 * rank_v_ * kLog2Pi + 0.5 * log_gdet_v_ - 0.5 * quad_form(temporal_.precision, v);
}

double LatentModel::log_density_w(const Eigen::VectorXd& w) const
{
    return -0.5 * rank_w() * kLog2Pi + 0.5 * log_gdet_w() - 0.5 * quad_form(interaction_.precision, w);
}

double joint_log_density(const ResponseVector& y, const LatentState& state, const HyperParams& hp,
                         const LatentModel& model, const PriorConfig& cfg)
{
    if (static_cast<std::size_t>(state.u.size()) != model.n_provinces() ||
        static_cast<std::size_t>(state.v.size()) != model.n_weeks() ||
        static_cast<std::size_t>(state.w.size()) != model.n_cells() ||
        static_cast<std::size_t>(y.y.size()) != model.n_cells()) {
        throw ValidationError("joint_log_density: dimension mismatch");
    }
    const double residual = model.constraint_residual(state);
    if (residual > 1e-6) {
        throw ValidationError("latent state violates sum-to-zero constraints (residual " +
                              std::to_string(residual) + ")");
    }
    const double lp_hyper = log_prior_hyper(hp, cfg);
    if (!std::isfinite(lp_hyper)) {
        return lp_hyper;
    }
    const double lp_mu = -0.5 * (kLog2Pi + 2.0 * std::log(cfg.mu_sd)) - 0.5 * state.mu * state.mu / (cfg.mu_sd * cfg.mu_sd);
    return log_likelihood(y.y, linear_predictor(state, hp), hp.sigma2_eps) + lp_mu + model.log_density_u(state.u) +
           model.log_density_v(state.v) + model.log_density_w(state.w) + lp_hyper;
}

SpectralResponse::SpectralResponse(const LatentModel& model, const ResponseVector& y) : model_(&model)
{
    const auto ns = static_cast<Eigen::Index>(model.n_provinces());
    const auto nt = static_cast<Eigen::Index>(model.n_weeks());
    if (y.y.size() != ns * nt) {
        throw ValidationError("response length does not match the model dimensions");
    }
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> grid(
        y.y.data(), ns, nt);
    rotated_ = model.spatial_basis().transpose() * grid * model.temporal_basis();
}

double SpectralResponse::log_marginal_likelihood(const HyperParams& hp, const PriorConfig& cfg) const
{
    const auto& m = *model_;
    const Eigen::Index ns = rotated_.rows();
    const Eigen::Index nt = rotated_.cols();
    const int nc = m.spatial().n_components;
    const double s2 = hp.sigma2_eps;
    const double cu2 = hp.c_u() * hp.c_u();
    const double cv2 = hp.c_v() * hp.c_v();
    const double cw2 = hp.c_w() * hp.c_w();
    const auto& lu = m.spatial_eigenvalues();
    const auto& lv = m.temporal_eigenvalues();

    double ll = 0.0;
    auto add = [&ll](double z, double var) { ll -= 0.5 * (kLog2Pi + std::log(var) + z * z / var); };
    for (Eigen::Index a = nc; a < ns; ++a) {
        add(rotated_(a, 0), cu2 * static_cast<double>(nt) / lu(a) + s2);
        for (Eigen::Index b = 1; b < nt; ++b) {
            add(rotated_(a, b), cw2 / (lu(a) * lv(b)) + s2);
        }
    }
    // Null spatial modes: the temporal effect and the intercept load on every component
    // in proportion to sqrt(component size).
    Eigen::VectorXd g = m.constraints_u().rowwise().sum().cwiseSqrt();
    for (Eigen::Index b = 0; b < nt; ++b) {
        const Eigen::VectorXd z = rotated_.col(b).head(nc);
        const double tau = b == 0 ? cfg.mu_sd * cfg.mu_sd * static_cast<double>(nt) : cv2 / lv(b);
        ll += rank_one_log_density(z, g, s2, tau);
    }
    return ll;
}

}  // namespace epibias
