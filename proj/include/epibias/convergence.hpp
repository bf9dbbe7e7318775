#pragma once

#include "epibias/sampler.hpp"

#include <string>
#include <vector>

namespace epibias {

struct ParameterDiagnostics {
    std::string name;
    double rhat = 1.0;      // rank-normalized split R-hat (NaN when degenerate)
    double ess_bulk = 0.0;  // bulk effective sample size
    bool degenerate = false;  // no variation at all across draws
    bool flagged = false;     // rhat > threshold or degenerate
};

struct ConvergenceReport {
    std::vector<ParameterDiagnostics> parameters;
    double max_rhat = 0.0;  // over non-degenerate parameters
    bool any_flagged = false;
};

inline constexpr double kRhatThreshold = 1.01;

/// Diagnostics for one scalar given one vector of draws per chain (equal lengths, >= 2 chains).
/// Throws ValidationError when a half-chain holds fewer than 10 draws.
ParameterDiagnostics diagnose(const std::string& name, const std::vector<std::vector<double>>& chains);

/// Diagnostics for V, phi, psi, sigma2_eps and mu.
ConvergenceReport convergence(const PosteriorDraws& draws);

}  // namespace epibias
