#include "epibias/sampler.hpp"

#include "epibias/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

namespace epibias {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;
constexpr int kTermCount = 10;
constexpr double kWeakInteraction = 1e-4;

using Triplets = std::vector<Eigen::Triplet<double>>;

void add_symmetric(Triplets& t, int r, int c, double v)
{
    t.emplace_back(r, c, v);
    if (r != c) {
        t.emplace_back(c, r, v);
    }
}

void add_block(Triplets& t, int offset, const SparseMatrix& m)
{
    for (int k = 0; k < m.outerSize(); ++k) {
        for (SparseMatrix::InnerIterator it(m, k); it; ++it) {
            t.emplace_back(offset + static_cast<int>(it.row()), offset + static_cast<int>(it.col()), it.value());
        }
    }
}

void add_block(Triplets& t, int offset, const Eigen::MatrixXd& m)
{
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            if (m(r, c) != 0.0) {
                t.emplace_back(offset + static_cast<int>(r), offset + static_cast<int>(c), m(r, c));
            }
        }
    }
}

SparseMatrix from_triplets(int n, const Triplets& t)
{
    SparseMatrix m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
}

// Values of `term` laid out on the (super-)pattern of the compressed matrix `target`.
std::vector<double> aligned_values(const SparseMatrix& term, const SparseMatrix& target)
{
    std::vector<double> out(static_cast<std::size_t>(target.nonZeros()), 0.0);
    const int* outer = target.outerIndexPtr();
    const int* inner = target.innerIndexPtr();
    for (int c = 0; c < term.outerSize(); ++c) {
        for (SparseMatrix::InnerIterator it(term, c); it; ++it) {
            const int* pos = std::lower_bound(inner + outer[c], inner + outer[c + 1], static_cast<int>(it.row()));
            out[static_cast<std::size_t>(pos - inner)] = it.value();
        }
    }
    return out;
}

Eigen::MatrixXd orthonormal_rows(const Eigen::MatrixXd& a)
{
    if (a.rows() == 0) {
        return a;
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a.transpose());
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.cols(), a.rows());
    return q.transpose();
}

std::uint64_t splitmix64(std::uint64_t& state)
{
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

nlohmann::json dump_hp(const HyperParams& hp)
{
    return {{"V", hp.V}, {"phi", hp.phi}, {"psi", hp.psi}, {"sigma2_eps", hp.sigma2_eps}};
}

}  // namespace

void ChainConfig::validate() const
{
    if (n_chains < 1 || n_warmup < 0 || n_draws < 1 || thin < 1 || threads < 1) {
        throw ValidationError("chain configuration needs n_chains >= 1, n_warmup >= 0, n_draws >= 1, thin >= 1");
    }
    if (!(adapt_target > 0.0 && adapt_target < 1.0) || !(step_init > 0.0)) {
        throw ValidationError("adapt_target must lie in (0, 1) and step_init must be positive");
    }
    if (!init && std::find(frozen.begin(), frozen.end(), true) != frozen.end()) {
        throw ValidationError("frozen hyperparameters need an initial value");
    }
}

std::vector<std::vector<double>> PosteriorDraws::chains_of(const std::string& parameter) const
{
    std::vector<std::vector<double>> out(static_cast<std::size_t>(n_chains));
    for (const auto& d : draws) {
        double value = 0.0;
        if (parameter == "V") {
            value = d.hp.V;
        }
        else if (parameter == "phi") {
            value = d.hp.phi;
        }
        else if (parameter == "psi") {
            value = d.hp.psi;
        }
        else if (parameter == "sigma2_eps") {
            value = d.hp.sigma2_eps;
        }
        else if (parameter == "mu") {
            value = d.latent.mu;
        }
        else if (parameter == "log_density") {
            value = d.log_density;
        }
        else {
            throw ValidationError("unknown parameter '" + parameter + "'");
        }
        out.at(static_cast<std::size_t>(d.chain)).push_back(value);
    }
    return out;
}

std::uint64_t chain_seed(std::uint64_t seed, int chain)
{
    std::uint64_t state = seed;
    std::uint64_t out = 0;
    for (int k = 0; k <= chain; ++k) {
        out = splitmix64(state);
    }
    return out;
}

// ---------------------------------------------------------------------------
// LatentConditional

struct LatentConditional::Pattern {
    SparseMatrix matrix;
    std::vector<double> prior_values;
    std::array<std::vector<double>, kTermCount> term_values;
    Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
};

LatentConditional::LatentConditional(const LatentModel& model, const ResponseVector& y, const PriorConfig& cfg)
    : model_(&model), y_(&y), cfg_(cfg)
{
    if (static_cast<std::size_t>(y.y.size()) != model.n_cells()) {
        throw ValidationError("response length does not match the model dimensions");
    }
    const auto ns = static_cast<Eigen::Index>(model.n_provinces());
    const auto nt = static_cast<Eigen::Index>(model.n_weeks());
    const Eigen::MatrixXd au = orthonormal_rows(model.constraints_u());
    const Eigen::MatrixXd av = orthonormal_rows(model.constraints_v());
    const Eigen::MatrixXd aw = orthonormal_rows(model.constraints_w());
    constraints_ = Eigen::MatrixXd::Zero(au.rows() + av.rows() + aw.rows(), 1 + ns + nt + ns * nt);
    constraints_.block(0, 1, au.rows(), ns) = au;
    constraints_.block(au.rows(), 1 + ns, av.rows(), nt) = av;
    constraints_.block(au.rows() + av.rows(), 1 + ns + nt, aw.rows(), ns * nt) = aw;
}

LatentConditional::~LatentConditional() = default;

std::size_t LatentConditional::dimension() const
{
    return static_cast<std::size_t>(constraints_.cols());
}

std::size_t LatentConditional::n_constraints() const
{
    return static_cast<std::size_t>(constraints_.rows());
}

LatentConditional::Pattern& LatentConditional::pattern_for(bool ridge_w)
{
    auto& slot = patterns_[ridge_w];
    if (slot) {
        return *slot;
    }
    const auto& m = *model_;
    const int ns = static_cast<int>(m.n_provinces());
    const int nt = static_cast<int>(m.n_weeks());
    const int ou = 1;
    const int ov = 1 + ns;
    const int ow = 1 + ns + nt;
    const int d = ow + ns * nt;

    Triplets prior;
    prior.emplace_back(0, 0, 1.0 / (cfg_.mu_sd * cfg_.mu_sd));
    add_block(prior, ou, m.spatial().precision);
    add_block(prior, ou, Eigen::MatrixXd(m.constraints_u().transpose() * m.constraints_u()));
    add_block(prior, ov, m.temporal().precision);
    add_block(prior, ov, Eigen::MatrixXd(m.constraints_v().transpose() * m.constraints_v()));
    add_block(prior, ow, m.interaction().precision);
    if (ridge_w) {
        const SparseMatrix aw = m.constraints_w().sparseView();
        add_block(prior, ow, SparseMatrix(aw.transpose() * aw));
    }

    std::array<Triplets, kTermCount> terms;
    terms[0].emplace_back(0, 0, static_cast<double>(ns * nt));
    for (int i = 0; i < ns; ++i) {
        add_symmetric(terms[1], 0, ou + i, nt);
        terms[4].emplace_back(ou + i, ou + i, nt);
        for (int j = 0; j < nt; ++j) {
            add_symmetric(terms[5], ou + i, ov + j, 1.0);
            add_symmetric(terms[6], ou + i, ow + i * nt + j, 1.0);
        }
    }
    for (int j = 0; j < nt; ++j) {
        add_symmetric(terms[2], 0, ov + j, ns);
        terms[7].emplace_back(ov + j, ov + j, ns);
        for (int i = 0; i < ns; ++i) {
            add_symmetric(terms[8], ov + j, ow + i * nt + j, 1.0);
        }
    }
    for (int k = 0; k < ns * nt; ++k) {
        add_symmetric(terms[3], 0, ow + k, 1.0);
        terms[9].emplace_back(ow + k, ow + k, 1.0);
    }

    // Union pattern with strictly positive placeholder values.
    Triplets all;
    for (const auto& t : prior) {
        all.emplace_back(t.row(), t.col(), 1.0);
    }
    for (const auto& term : terms) {
        for (const auto& t : term) {
            all.emplace_back(t.row(), t.col(), 1.0);
        }
    }
    auto pattern = std::make_unique<Pattern>();
    pattern->matrix = from_triplets(d, all);
    pattern->prior_values = aligned_values(from_triplets(d, prior), pattern->matrix);
    for (int k = 0; k < kTermCount; ++k) {
        pattern->term_values[static_cast<std::size_t>(k)] =
            aligned_values(from_triplets(d, terms[static_cast<std::size_t>(k)]), pattern->matrix);
    }
    pattern->llt.analyzePattern(pattern->matrix);
    slot = std::move(pattern);
    return *slot;
}

void LatentConditional::update(const HyperParams& hp)
{
    if (!(hp.V >= 0.0 && hp.phi >= 0.0 && hp.phi <= 1.0 && hp.psi >= 0.0 && hp.psi <= 1.0 && hp.sigma2_eps > 0.0)) {
        throw ValidationError("hyperparameters outside their bounds");
    }
    const double cu = hp.c_u();
    const double cv = hp.c_v();
    const double cw = hp.c_w();
    // The data add only cw^2 / sigma2 to the interaction block; when that is negligible the
    // null directions of Q_w need the constraint ridge to stay numerically positive definite.
    auto& p = pattern_for(cw * cw / hp.sigma2_eps < kWeakInteraction);
    active_ = &p;
    hp_ = hp;

    const double s = 1.0 / hp.sigma2_eps;
    const std::array<double, kTermCount> coef{1.0, cu, cv, cw, cu * cu, cu * cv, cu * cw, cv * cv, cv * cw, cw * cw};
    double* values = p.matrix.valuePtr();
    const auto nnz = static_cast<std::size_t>(p.matrix.nonZeros());
    for (std::size_t e = 0; e < nnz; ++e) {
        double v = p.prior_values[e];
        for (std::size_t k = 0; k < coef.size(); ++k) {
            v += s * coef[k] * p.term_values[k][e];
        }
        values[e] = v;
    }
    p.llt.factorize(p.matrix);
    if (p.llt.info() != Eigen::Success) {
        throw NumericalError("sparse Cholesky factorization of the latent precision failed at " +
                             dump_hp(hp).dump());
    }

    const auto ns = static_cast<Eigen::Index>(model_->n_provinces());
    const auto nt = static_cast<Eigen::Index>(model_->n_weeks());
    const auto& y = y_->y;
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> grid(y.data(),
                                                                                                        ns, nt);
    rhs_.resize(1 + ns + nt + ns * nt);
    rhs_(0) = s * y.sum();
    rhs_.segment(1, ns) = s * cu * grid.rowwise().sum();
    rhs_.segment(1 + ns, nt) = s * cv * grid.colwise().sum().transpose();
    rhs_.tail(ns * nt) = s * cw * y;

    const Eigen::VectorXd unconstrained = p.llt.solve(rhs_);
    kriging_ = p.llt.solve(Eigen::MatrixXd(constraints_.transpose()));
    schur_.compute(constraints_ * kriging_);
    if (schur_.info() != Eigen::Success) {
        throw NumericalError("constraint Schur complement is not positive definite at " + dump_hp(hp).dump());
    }
    mean_ = project(unconstrained);

    const auto& factor = p.llt.matrixL().nestedExpression();
    log_det_ = 0.0;
    for (int c = 0; c < factor.outerSize(); ++c) {
        log_det_ += 2.0 * std::log(factor.coeff(c, c));
    }
}

Eigen::VectorXd LatentConditional::project(const Eigen::VectorXd& x) const
{
    // one refinement pass removes the roundoff left by ill-conditioned null directions
    Eigen::VectorXd out = x - kriging_ * schur_.solve(constraints_ * x);
    out -= kriging_ * schur_.solve(constraints_ * out);
    return out;
}

LatentState LatentConditional::unpack(const Eigen::VectorXd& x) const
{
    const auto ns = static_cast<Eigen::Index>(model_->n_provinces());
    const auto nt = static_cast<Eigen::Index>(model_->n_weeks());
    return {x(0), x.segment(1, ns), x.segment(1 + ns, nt), x.tail(ns * nt)};
}

Eigen::VectorXd LatentConditional::pack(const LatentState& s) const
{
    Eigen::VectorXd x(static_cast<Eigen::Index>(dimension()));
    x << s.mu, s.u, s.v, s.w;
    return x;
}

LatentState LatentConditional::mean() const
{
    if (!active_) {
        throw ValidationError("LatentConditional used before update()");
    }
    return unpack(mean_);
}

LatentState LatentConditional::draw(std::mt19937_64& rng) const
{
    if (!active_) {
        throw ValidationError("LatentConditional used before update()");
    }
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(static_cast<Eigen::Index>(dimension()));
    for (Eigen::Index k = 0; k < z.size(); ++k) {
        z(k) = normal(rng);
    }
    const Eigen::VectorXd delta = active_->llt.permutationPinv() * active_->llt.matrixU().solve(z);
    return unpack(mean_ + project(delta));
}

Eigen::MatrixXd LatentConditional::covariance() const
{
    if (!active_) {
        throw ValidationError("LatentConditional used before update()");
    }
    const auto d = static_cast<Eigen::Index>(dimension());
    const Eigen::MatrixXd inv = active_->llt.solve(Eigen::MatrixXd::Identity(d, d));
    return inv - kriging_ * schur_.solve(kriging_.transpose());
}

double LatentConditional::log_marginal_likelihood() const
{
    const LatentState x = mean();
    const auto& m = *model_;
    const double lp_mu =
        -0.5 * (kLog2Pi + 2.0 * std::log(cfg_.mu_sd)) - 0.5 * x.mu * x.mu / (cfg_.mu_sd * cfg_.mu_sd);
    const double log_joint = log_likelihood(y_->y, linear_predictor(x, hp_), hp_.sigma2_eps) + lp_mu +
                             m.log_density_u(x.u) + m.log_density_v(x.v) + m.log_density_w(x.w);
    double log_det_schur = 0.0;
    const Eigen::MatrixXd l = schur_.matrixL();
    for (Eigen::Index k = 0; k < l.rows(); ++k) {
        log_det_schur += 2.0 * std::log(l(k, k));
    }
    const auto free_dim = static_cast<double>(dimension() - n_constraints());
    const double log_conditional_at_mean = -0.5 * free_dim * kLog2Pi + 0.5 * (log_det_ + log_det_schur);
    return log_joint - log_conditional_at_mean;
}

LatentState sample_latent(const ResponseVector& y, const HyperParams& hp, const LatentModel& model,
                          const PriorConfig& cfg, std::mt19937_64& rng)
{
    LatentConditional cond(model, y, cfg);
    cond.update(hp);
    return cond.draw(rng);
}

// ---------------------------------------------------------------------------
// Hyperparameters

std::array<double, 4> to_unconstrained(const HyperParams& hp)
{
    return {std::log(hp.V), logit(hp.phi), logit(hp.psi), -std::log(hp.sigma2_eps)};
}

HyperParams from_unconstrained(const std::array<double, 4>& theta)
{
    return {std::exp(theta[0]), inv_logit(theta[1]), inv_logit(theta[2]), std::exp(-theta[3])};
}

double log_jacobian(const HyperParams& hp)
{
    return std::log(hp.V) + std::log(hp.phi) + std::log1p(-hp.phi) + std::log(hp.psi) + std::log1p(-hp.psi) +
           std::log(hp.sigma2_eps);
}

bool metropolis_accept(double log_current, double log_proposed, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double u = unif(rng);
    if (std::isnan(log_proposed) || log_proposed == -std::numeric_limits<double>::infinity()) {
        return false;
    }
    return std::log(u) < log_proposed - log_current || log_proposed == log_current;
}

HyperUpdater::HyperUpdater(const SpectralResponse& spectral, const PriorConfig& cfg, double step_init,
                           double adapt_target)
    : spectral_(&spectral), cfg_(cfg), adapt_target_(adapt_target)
{
    log_steps_.fill(std::log(step_init));
}

double HyperUpdater::log_target(const HyperParams& hp) const
{
    if (!hp.in_support() || hp.phi <= 0.0 || hp.phi >= 1.0 || hp.psi >= 1.0) {
        return -std::numeric_limits<double>::infinity();
    }
    return spectral_->log_marginal_likelihood(hp, cfg_) + log_prior_hyper(hp, cfg_) + log_jacobian(hp);
}

void HyperUpdater::keep_frozen(HyperParams& hp, const HyperParams& current) const
{
    if (frozen_[0]) hp.V = current.V;
    if (frozen_[1]) hp.phi = current.phi;
    if (frozen_[2]) hp.psi = current.psi;
    if (frozen_[3]) hp.sigma2_eps = current.sigma2_eps;
}

HyperUpdater::Result HyperUpdater::update(const HyperParams& current, double current_log_target,
                                          std::mt19937_64& rng, bool adapt)
{
    std::normal_distribution<double> normal;
    Result res{current, current_log_target, {}};
    auto theta = to_unconstrained(current);
    const double gain = adapt ? std::pow(static_cast<double>(adapt_iter_ + 1), -0.6) : 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        if (frozen_[k]) {
            continue;
        }
        auto proposal = theta;
        proposal[k] += std::exp(log_steps_[k]) * normal(rng);
        HyperParams hp = from_unconstrained(proposal);
        keep_frozen(hp, current);
        const double lt = log_target(hp);
        const bool accepted = metropolis_accept(res.log_target, lt, rng);
        ++proposed_[k];
        if (accepted) {
            ++accepted_[k];
            theta = proposal;
            res.hp = hp;
            res.log_target = lt;
        }
        res.accepted[k] = accepted;
        if (adapt) {
            log_steps_[k] = std::clamp(log_steps_[k] + gain * ((accepted ? 1.0 : 0.0) - adapt_target_), -12.0, 3.0);
        }
    }
    if (adapt) {
        record_history(theta);
    }
    block_move(res, theta, current, rng, adapt);
    if (adapt) {
        ++adapt_iter_;
    }
    return res;
}

void HyperUpdater::record_history(const std::array<double, 4>& theta)
{
    const Eigen::Vector4d x(theta[0], theta[1], theta[2], theta[3]);
    ++hist_n_;
    const Eigen::Vector4d delta = x - hist_mean_;
    hist_mean_ += delta / static_cast<double>(hist_n_);
    hist_m2_ += delta * (x - hist_mean_).transpose();
    if (hist_n_ < kBlockStart || hist_n_ % 50 != 0) {
        return;
    }
    Eigen::Matrix4d cov = hist_m2_ / static_cast<double>(hist_n_ - 1);
    for (int k = 0; k < 4; ++k) {
        if (frozen_[static_cast<std::size_t>(k)]) {
            cov.row(k).setZero();
            cov.col(k).setZero();
            cov(k, k) = 1.0;
        }
    }
    cov.diagonal().array() += 1e-10;
    Eigen::LLT<Eigen::Matrix4d> llt(cov);
    if (llt.info() == Eigen::Success) {
        block_chol_ = llt.matrixL();
        block_ready_ = true;
    }
}

void HyperUpdater::block_move(Result& res, std::array<double, 4>& theta, const HyperParams& current,
                              std::mt19937_64& rng, bool adapt)
{
    if (!block_ready_) {
        return;
    }
    std::normal_distribution<double> normal;
    Eigen::Vector4d z;
    for (int k = 0; k < 4; ++k) {
        z(k) = normal(rng);
    }
    const Eigen::Vector4d step = std::exp(log_block_scale_) * (block_chol_ * z);
    auto proposal = theta;
    for (std::size_t k = 0; k < 4; ++k) {
        if (!frozen_[k]) {
            proposal[k] += step(static_cast<Eigen::Index>(k));
        }
    }
    HyperParams hp = from_unconstrained(proposal);
    keep_frozen(hp, current);
    const double lt = log_target(hp);
    const bool accepted = metropolis_accept(res.log_target, lt, rng);
    ++block_proposed_;
    if (accepted) {
        ++block_accepted_;
        theta = proposal;
        res.hp = hp;
        res.log_target = lt;
    }
    if (adapt) {
        const double gain = std::pow(static_cast<double>(block_proposed_), -0.6);
        log_block_scale_ =
            std::clamp(log_block_scale_ + gain * ((accepted ? 1.0 : 0.0) - kBlockTarget), -12.0, 3.0);
    }
}

double HyperUpdater::block_acceptance_rate() const
{
    return block_proposed_ > 0 ? static_cast<double>(block_accepted_) / static_cast<double>(block_proposed_) : 0.0;
}

std::array<double, 4> HyperUpdater::acceptance_rates() const
{
    std::array<double, 4> out{};
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = proposed_[k] > 0 ? static_cast<double>(accepted_[k]) / static_cast<double>(proposed_[k]) : 0.0;
    }
    return out;
}

void HyperUpdater::reset_counts()
{
    accepted_.fill(0);
    proposed_.fill(0);
    block_accepted_ = 0;
    block_proposed_ = 0;
}

// ---------------------------------------------------------------------------
// Chains

namespace {

struct ChainOutput {
    std::vector<Draw> draws;
    ChainSummary summary;
};

ChainOutput run_one_chain(int chain, const ResponseVector& y, const LatentModel& model,
                          const SpectralResponse& spectral, const ChainConfig& cfg, const PriorConfig& prior)
{
    std::mt19937_64 rng(chain_seed(cfg.seed, chain));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    HyperUpdater updater(spectral, prior, cfg.step_init, cfg.adapt_target);
    LatentConditional conditional(model, y, prior);

    const double mean_y = y.y.mean();
    const double var_y = std::max((y.y.array() - mean_y).square().mean(), 1e-4);
    updater.freeze(cfg.frozen);
    HyperParams hp;
    double lt = -std::numeric_limits<double>::infinity();
    if (cfg.init) {
        hp = *cfg.init;
        lt = updater.log_target(hp);
        if (!std::isfinite(lt)) {
            throw ValidationError("initial hyperparameters have zero posterior density");
        }
    }
    for (int attempt = 0; attempt < 100 && !std::isfinite(lt); ++attempt) {
        hp = from_unconstrained({std::log(0.5 * var_y) + normal(rng), unif(rng), unif(rng),
                                 -std::log(0.5 * var_y) + normal(rng)});
        lt = updater.log_target(hp);
    }
    if (!std::isfinite(lt)) {
        throw NumericalError("chain " + std::to_string(chain) + ": no finite starting point found");
    }

    for (int t = 0; t < cfg.n_warmup; ++t) {
        auto res = updater.update(hp, lt, rng, true);
        hp = res.hp;
        lt = res.log_target;
    }
    updater.reset_counts();

    ChainOutput out;
    out.draws.reserve(static_cast<std::size_t>(cfg.n_draws));
    const long total = static_cast<long>(cfg.n_draws) * cfg.thin;
    for (long it = 0; it < total; ++it) {
        auto res = updater.update(hp, lt, rng, false);
        hp = res.hp;
        lt = res.log_target;
        if ((it + 1) % cfg.thin != 0) {
            continue;
        }
        conditional.update(hp);
        Draw d;
        d.chain = chain;
        d.iteration = static_cast<int>(it / cfg.thin);
        d.hp = hp;
        d.latent = conditional.draw(rng);
        d.log_density = joint_log_density(y, d.latent, hp, model, prior);
        if (!std::isfinite(d.log_density) || !std::isfinite(lt)) {
            nlohmann::json dump{{"chain", chain}, {"iteration", d.iteration}, {"hyper", dump_hp(hp)},
                                {"mu", d.latent.mu}, {"log_density", d.log_density}, {"log_target", lt}};
            throw NumericalError("chain diverged (non-finite log-density): " + dump.dump());
        }
        if (!cfg.save_latent) {
            d.latent.u.resize(0);
            d.latent.v.resize(0);
            d.latent.w.resize(0);
        }
        out.draws.push_back(std::move(d));
    }
    out.summary.acceptance = updater.acceptance_rates();
    out.summary.block_acceptance = updater.block_acceptance_rate();
    for (std::size_t k = 0; k < 4; ++k) {
        out.summary.step[k] = std::exp(updater.log_steps()[k]);
    }
    return out;
}

}  // namespace

FitResult run_chains(const ResponseVector& y, const LatentModel& model, const ChainConfig& cfg,
                     const PriorConfig& prior)
{
    cfg.validate();
    prior.validate();
    const SpectralResponse spectral(model, y);

    std::vector<ChainOutput> outputs(static_cast<std::size_t>(cfg.n_chains));
    std::vector<std::exception_ptr> errors(outputs.size());
    auto work = [&](int c) {
        try {
            outputs[static_cast<std::size_t>(c)] = run_one_chain(c, y, model, spectral, cfg, prior);
        }
        catch (...) {
            errors[static_cast<std::size_t>(c)] = std::current_exception();
        }
    };
    const int workers = std::min(cfg.threads, cfg.n_chains);
    if (workers <= 1) {
        for (int c = 0; c < cfg.n_chains; ++c) {
            work(c);
        }
    }
    else {
        std::vector<std::jthread> pool;
        std::mutex next_mutex;
        int next = 0;
        for (int t = 0; t < workers; ++t) {
            pool.emplace_back([&] {
                for (;;) {
                    int c = 0;
                    {
                        std::lock_guard lock(next_mutex);
                        if (next >= cfg.n_chains) {
                            return;
                        }
                        c = next++;
                    }
                    work(c);
                }
            });
        }
    }
    for (const auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }

    FitResult result;
    auto& pd = result.draws;
    pd.n_provinces = model.n_provinces();
    pd.n_weeks = model.n_weeks();
    pd.n_chains = cfg.n_chains;
    pd.n_draws = cfg.n_draws;
    pd.has_latent = cfg.save_latent;
    for (auto& o : outputs) {
        for (auto& d : o.draws) {
            pd.draws.push_back(std::move(d));
        }
        result.chains.push_back(o.summary);
    }
    return result;
}

}  // namespace epibias
