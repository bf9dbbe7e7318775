#pragma once

#include "epibias/sampler.hpp"

#include <Eigen/Dense>

#include <span>
#include <vector>

namespace epibias {

struct IntervalSummary {
    double mean = 0.0;
    double lower = 0.0;  // 2.5%
    double upper = 0.0;  // 97.5%
};

/// Linear-interpolation quantile (type 7) of an unsorted sample.
double quantile(std::vector<double> sample, double p);
IntervalSummary summarize(std::span<const double> sample);

struct VarianceShareSummary {
    Eigen::MatrixXd per_draw;  // draws x (spatial, temporal, interaction)
    IntervalSummary spatial;
    IntervalSummary temporal;
    IntervalSummary interaction;
};

VarianceShareSummary variance_shares(const PosteriorDraws& draws);

struct EffectSummary {
    /// Contribution to eta: sqrt(V (1-psi) phi) u_i, resp. sqrt(V (1-psi) (1-phi)) v_j.
    std::vector<IntervalSummary> contribution;
    /// Unit-scale effect (u_i or v_j itself).
    std::vector<IntervalSummary> unit;
};

struct EffectsSummary {
    EffectSummary spatial;   // one entry per province
    EffectSummary temporal;  // one entry per week
};

/// Throws ValidationError if the draws were stored without latent states.
EffectsSummary summarize_effects(const PosteriorDraws& draws);

/// Posterior of inv_logit(eta) per cell, averaged after transforming each draw.
struct FittedPanel {
    Eigen::MatrixXd mean;
    Eigen::MatrixXd q025;
    Eigen::MatrixXd q50;
    Eigen::MatrixXd q975;
};

FittedPanel fitted_values(const PosteriorDraws& draws);

}  // namespace epibias
