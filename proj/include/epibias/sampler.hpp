#pragma once

#include "epibias/model.hpp"

#include <Eigen/SparseCholesky>

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace epibias {

struct ChainConfig {
    int n_chains = 4;
    int n_warmup = 2000;
    int n_draws = 2000;
    int thin = 1;
    std::uint64_t seed = 1;
    double adapt_target = 0.44;
    double step_init = 0.5;
    bool save_latent = true;
    int threads = 1;
    /// Optional common starting point; coordinates marked in `frozen` (V, phi, psi,
    /// sigma2_eps) then stay at their initial values for the whole run.
    std::optional<HyperParams> init;
    std::array<bool, 4> frozen{};

    void validate() const;
};

struct Draw {
    int chain = 0;
    int iteration = 0;  // post-warmup iteration index
    HyperParams hp;
    LatentState latent;  // empty vectors when latent states were not kept
    double log_density = 0.0;
};

struct PosteriorDraws {
    std::size_t n_provinces = 0;
    std::size_t n_weeks = 0;
    int n_chains = 0;
    int n_draws = 0;
    bool has_latent = false;
    std::vector<Draw> draws;  // chain-major

    /// One vector per chain of the named scalar (V, phi, psi, sigma2_eps, mu, log_density).
    std::vector<std::vector<double>> chains_of(const std::string& parameter) const;
};

/// Seed of chain k derived from the run seed (splitmix64).
std::uint64_t chain_seed(std::uint64_t seed, int chain);

/// Gaussian full conditional of x = (mu, u, v, w) given y and the hyperparameters.
///
/// The sparse precision prior + B^T B / sigma2 is augmented with A^T A on the blocks whose
/// prior is improper and unsupported by the data (always u and v; w when c_w^2 / sigma2 is negligible).
/// A^T A vanishes on the constraint subspace, so the constrained law is unchanged.
/// Unconstrained draws and the mean are corrected by conditioning by kriging.
/// The fill-reducing ordering is computed once per sparsity pattern.
class LatentConditional {
public:
    LatentConditional(const LatentModel& model, const ResponseVector& y, const PriorConfig& cfg);
    ~LatentConditional();
    LatentConditional(const LatentConditional&) = delete;
    LatentConditional& operator=(const LatentConditional&) = delete;

    /// Assembles and factorizes for `hp`; throws NumericalError on failure.
    void update(const HyperParams& hp);

    /// Constrained conditional mean.
    LatentState mean() const;
    /// Exact draw from the constrained conditional.
    LatentState draw(std::mt19937_64& rng) const;

    /// log p(y | hp) by the identity p(y|x) p(x) / p(x|y) evaluated at the conditional mean.
    double log_marginal_likelihood() const;

    std::size_t dimension() const;
    std::size_t n_constraints() const;

    /// Constrained covariance, dense (for verification on small problems).
    Eigen::MatrixXd covariance() const;

    LatentState unpack(const Eigen::VectorXd& x) const;
    Eigen::VectorXd pack(const LatentState& s) const;

private:
    struct Pattern;
    Pattern& pattern_for(bool ridge_w);
    /// Conditioning by kriging: x - Q^{-1} A^T (A Q^{-1} A^T)^{-1} A x.
    Eigen::VectorXd project(const Eigen::VectorXd& x) const;

    const LatentModel* model_;
    const ResponseVector* y_;
    PriorConfig cfg_;
    Eigen::MatrixXd constraints_;  // orthonormal rows, block diagonal over (mu, u, v, w)
    std::map<bool, std::unique_ptr<Pattern>> patterns_;
    Pattern* active_ = nullptr;
    HyperParams hp_;
    Eigen::VectorXd rhs_;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd kriging_;               // Q^{-1} A^T
    Eigen::LLT<Eigen::MatrixXd> schur_;     // A Q^{-1} A^T
    double log_det_ = 0.0;
};

/// Exact draw of the latent field given hyperparameters.
LatentState sample_latent(const ResponseVector& y, const HyperParams& hp, const LatentModel& model,
                          const PriorConfig& cfg, std::mt19937_64& rng);

/// Unconstrained coordinates (log V, logit phi, logit psi, log precision).
std::array<double, 4> to_unconstrained(const HyperParams& hp);
HyperParams from_unconstrained(const std::array<double, 4>& theta);
/// log |d hp / d theta|.
double log_jacobian(const HyperParams& hp);

/// Metropolis rule for a symmetric proposal. Non-finite proposals are rejected; equal
/// log-densities are always accepted.
bool metropolis_accept(double log_current, double log_proposed, std::mt19937_64& rng);

/// Adaptive random-walk Metropolis on the unconstrained coordinates, one coordinate at a
/// time, targeting the hyperparameter posterior with the latent field integrated out.
class HyperUpdater {
public:
    HyperUpdater(const SpectralResponse& spectral, const PriorConfig& cfg, double step_init, double adapt_target);

    /// Log posterior density of theta (up to a constant), including the Jacobian.
    double log_target(const HyperParams& hp) const;

    struct Result {
        HyperParams hp;
        double log_target = 0.0;
        std::array<bool, 4> accepted{};
    };

    /// One sweep over the four coordinates, then a joint move once enough warmup history
    /// exists. The joint proposal is Gaussian with the empirical warmup covariance of the
    /// unconstrained coordinates. While `adapt` is set the proposal scales move toward their
    /// target acceptance rates (Robbins-Monro) and the covariance is re-estimated;
    /// afterwards everything stays frozen.
    Result update(const HyperParams& current, double current_log_target, std::mt19937_64& rng, bool adapt);

    /// Coordinates that are never proposed.
    void freeze(const std::array<bool, 4>& frozen) { frozen_ = frozen; }

    const std::array<double, 4>& log_steps() const { return log_steps_; }
    std::array<double, 4> acceptance_rates() const;
    double block_acceptance_rate() const;
    void reset_counts();

    static constexpr long kBlockStart = 200;   // warmup sweeps before joint moves begin
    static constexpr double kBlockTarget = 0.234;

private:
    void record_history(const std::array<double, 4>& theta);
    void block_move(Result& res, std::array<double, 4>& theta, const HyperParams& current, std::mt19937_64& rng,
                    bool adapt);

    void keep_frozen(HyperParams& hp, const HyperParams& current) const;

    const SpectralResponse* spectral_;
    PriorConfig cfg_;
    double adapt_target_;
    std::array<double, 4> log_steps_{};
    std::array<long, 4> accepted_{};
    std::array<long, 4> proposed_{};
    std::array<bool, 4> frozen_{};
    long adapt_iter_ = 0;
    Eigen::Vector4d hist_mean_ = Eigen::Vector4d::Zero();
    Eigen::Matrix4d hist_m2_ = Eigen::Matrix4d::Zero();
    long hist_n_ = 0;
    Eigen::Matrix4d block_chol_ = Eigen::Matrix4d::Zero();
    bool block_ready_ = false;
    double log_block_scale_ = std::log(2.38 / 2.0);
    long block_accepted_ = 0;
    long block_proposed_ = 0;
};

struct ChainSummary {
    std::array<double, 4> acceptance{};
    std::array<double, 4> step{};
    double block_acceptance = 0.0;
};

struct FitResult {
    PosteriorDraws draws;
    std::vector<ChainSummary> chains;
};

/// Runs independent chains from over-dispersed starts. Deterministic given cfg.seed.
FitResult run_chains(const ResponseVector& y, const LatentModel& model, const ChainConfig& cfg,
                     const PriorConfig& prior);

}  // namespace epibias
