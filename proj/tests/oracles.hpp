#pragma once

#include "epibias/model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace epibias::testing {

/// Orthonormal basis of the null space of `a`.
inline Eigen::MatrixXd null_basis(const Eigen::MatrixXd& a)
{
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto rank = (svd.singularValues().array() > 1e-10).count();
    return svd.matrixV().rightCols(a.cols() - rank);
}

struct DenseConditional {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Constrained Gaussian conditional by explicit reduction to the constraint subspace.
inline DenseConditional dense_conditional(const LatentModel& m, const ResponseVector& y, const HyperParams& hp,
                                   const PriorConfig& cfg)
{
    const auto ns = static_cast<Eigen::Index>(m.n_provinces());
    const auto nt = static_cast<Eigen::Index>(m.n_weeks());
    const Eigen::Index d = 1 + ns + nt + ns * nt;
    Eigen::MatrixXd prior = Eigen::MatrixXd::Zero(d, d);
    prior(0, 0) = 1.0 / (cfg.mu_sd * cfg.mu_sd);
    prior.block(1, 1, ns, ns) = Eigen::MatrixXd(m.spatial().precision);
    prior.block(1 + ns, 1 + ns, nt, nt) = Eigen::MatrixXd(m.temporal().precision);
    prior.block(1 + ns + nt, 1 + ns + nt, ns * nt, ns * nt) = Eigen::MatrixXd(m.interaction().precision);
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(ns * nt, d);
    for (Eigen::Index i = 0; i < ns; ++i) {
        for (Eigen::Index j = 0; j < nt; ++j) {
            const Eigen::Index k = i * nt + j;
            b(k, 0) = 1.0;
            b(k, 1 + i) = hp.c_u();
            b(k, 1 + ns + j) = hp.c_v();
            b(k, 1 + ns + nt + k) = hp.c_w();
        }
    }
    const Eigen::MatrixXd precision = prior + b.transpose() * b / hp.sigma2_eps;
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(m.constraints_u().rows() + 1 + m.constraints_w().rows(), d);
    a.block(0, 1, m.constraints_u().rows(), ns) = m.constraints_u();
    a.block(m.constraints_u().rows(), 1 + ns, 1, nt) = m.constraints_v();
    a.block(m.constraints_u().rows() + 1, 1 + ns + nt, m.constraints_w().rows(), ns * nt) = m.constraints_w();
    const Eigen::MatrixXd z = null_basis(a);
    const Eigen::MatrixXd reduced = (z.transpose() * precision * z).inverse();
    DenseConditional out;
    out.cov = z * reduced * z.transpose();
    out.mean = out.cov * b.transpose() * y.y / hp.sigma2_eps;
    return out;
}

/// Minimum-cost warping path by explicit enumeration of all monotone paths.
inline double dtw_by_enumeration(const std::vector<double>& a, const std::vector<double>& b)
{
    double best = std::numeric_limits<double>::infinity();
    std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j, double acc) {
        acc += std::abs(a[i] - b[j]);
        if (i + 1 == a.size() && j + 1 == b.size()) {
            best = std::min(best, acc);
            return;
        }
        if (i + 1 < a.size()) walk(i + 1, j, acc);
        if (j + 1 < b.size()) walk(i, j + 1, acc);
        if (i + 1 < a.size() && j + 1 < b.size()) walk(i + 1, j + 1, acc);
    };
    walk(0, 0, 0.0);
    return best;
}

}  // namespace epibias::testing
