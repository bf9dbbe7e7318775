#pragma once

#include "epibias/bias.hpp"
#include "epibias/structure.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace epibias {

/// Variance decomposition of the structured effects.
/// V: total structured variance; phi: spatial share of the main effects;
/// psi: interaction share of V; sigma2_eps: observation variance.
struct HyperParams {
    double V = 1.0;
    double phi = 0.5;
    double psi = 0.5;
    double sigma2_eps = 1.0;

    bool in_support() const;
    /// Effect multipliers: eta = mu + c_u*u + c_v*v + c_w*w (expanded).
    double c_u() const { return std::sqrt(V * (1.0 - psi) * phi); }
    double c_v() const { return std::sqrt(V * (1.0 - psi) * (1.0 - phi)); }
    double c_w() const { return std::sqrt(V * psi); }
};

struct LatentState {
    double mu = 0.0;
    Eigen::VectorXd u;  // provinces
    Eigen::VectorXd v;  // weeks
    Eigen::VectorXd w;  // provinces x weeks, province-major
};

struct PriorConfig {
    double U = 1.0;          // PC prior: P(sqrt(V) > U) = alpha
    double alpha = 0.05;
    double lambda_psi = 1.0;
    double eps_shape = 1.0;  // Gamma(shape, rate) on the observation precision
    double eps_rate = 5e-5;
    double mu_sd = 31.622776601683793;  // sqrt(1000)

    void validate() const;
};

/// Rate of the exponential prior on sqrt(V) with P(sqrt(V) > U) = alpha.
double pc_rate(double U, double alpha);

/// Density of psi in (0, 1] under an exponential prior on sqrt(psi), truncated and renormalized.
double log_pc_psi_density(double psi, double lambda);

/// Joint log prior density of (V, phi, psi, sigma2_eps); -inf outside the support.
double log_prior_hyper(const HyperParams& hp, const PriorConfig& cfg);

HyperParams sample_prior_hyper(const PriorConfig& cfg, std::mt19937_64& rng);

/// mu + sqrt(V) * { sqrt(1-psi) [ sqrt(phi) u_i + sqrt(1-phi) v_j ] + sqrt(psi) w_ij }, province-major.
Eigen::VectorXd linear_predictor(const LatentState& state, const HyperParams& hp);

double log_likelihood(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, double sigma2_eps);

/// Scaled spatial and temporal structures plus everything derived from them that the
/// density evaluations and samplers need: constraints, ranks, generalized determinants
/// and the eigenbases of both structure matrices.
class LatentModel {
public:
    LatentModel(SpatialStructure spatial, TemporalStructure temporal);

    std::size_t n_provinces() const { return spatial_.size(); }
    std::size_t n_weeks() const { return temporal_.size(); }
    std::size_t n_cells() const { return n_provinces() * n_weeks(); }

    const SpatialStructure& spatial() const { return spatial_; }
    const TemporalStructure& temporal() const { return temporal_; }
    const InteractionStructure& interaction() const { return interaction_; }

    const Eigen::MatrixXd& constraints_u() const { return a_u_; }
    const Eigen::MatrixXd& constraints_v() const { return a_v_; }
    const Eigen::MatrixXd& constraints_w() const { return interaction_.constraints; }

    int rank_u() const { return rank_u_; }
    int rank_v() const { return rank_v_; }
    int rank_w() const { return rank_u_ * rank_v_; }
    /// log of the product of the non-zero eigenvalues.
    double log_gdet_u() const { return log_gdet_u_; }
    double log_gdet_v() const { return log_gdet_v_; }
    double log_gdet_w() const { return rank_v_ * log_gdet_u_ + rank_u_ * log_gdet_v_; }

    /// Orthonormal eigenvectors (columns) and eigenvalues. Leading columns span the null
    /// space: one normalized indicator per spatial component, and the constant for time.
    const Eigen::MatrixXd& spatial_basis() const { return basis_u_; }
    const Eigen::VectorXd& spatial_eigenvalues() const { return eig_u_; }
    const Eigen::MatrixXd& temporal_basis() const { return basis_v_; }
    const Eigen::VectorXd& temporal_eigenvalues() const { return eig_v_; }

    /// Largest |A x| over the u, v and w constraints.
    double constraint_residual(const LatentState& state) const;

    double log_density_u(const Eigen::VectorXd& u) const;
    double log_density_v(const Eigen::VectorXd& v) const;
    double log_density_w(const Eigen::VectorXd& w) const;

private:
    SpatialStructure spatial_;
    TemporalStructure temporal_;
    InteractionStructure interaction_;
    Eigen::MatrixXd a_u_;
    Eigen::MatrixXd a_v_;
    int rank_u_ = 0;
    int rank_v_ = 0;
    double log_gdet_u_ = 0.0;
    double log_gdet_v_ = 0.0;
    Eigen::MatrixXd basis_u_;
    Eigen::VectorXd eig_u_;
    Eigen::MatrixXd basis_v_;
    Eigen::VectorXd eig_v_;
};

/// Gaussian log-likelihood + intercept prior + constrained GMRF densities of u, v, w
/// + hyperprior. Throws ValidationError when a constraint is violated by more than 1e-6.
double joint_log_density(const ResponseVector& y, const LatentState& state, const HyperParams& hp,
                         const LatentModel& model, const PriorConfig& cfg);

/// Response rotated into the eigenbasis of the space-time structure; the marginal
/// likelihood of the hyperparameters factorizes over its entries.
class SpectralResponse {
public:
    SpectralResponse(const LatentModel& model, const ResponseVector& y);

    /// log p(y | hp) with (mu, u, v, w) integrated out under their constrained priors.
    double log_marginal_likelihood(const HyperParams& hp, const PriorConfig& cfg) const;

private:
    const LatentModel* model_;
    Eigen::MatrixXd rotated_;  // U^T Y W
};

}  // namespace epibias
