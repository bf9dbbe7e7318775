#pragma once

#include "epibias/ingest.hpp"
#include "epibias/sampler.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace epibias {

/// Column names of the draws table: chain, iter, V, phi, psi, sigma2_eps, mu, then
/// u[<province>], v[<week>] and w[<province>:<week>] when latent states are kept.
std::vector<std::string> draws_header(const ProvinceIndex& provinces, const WeekIndex& weeks, bool with_latent);

void write_draws_csv(const std::filesystem::path& path, const PosteriorDraws& draws, const ProvinceIndex& provinces,
                     const WeekIndex& weeks);

/// Reads a table written by write_draws_csv for the given indices. Latent columns are
/// detected from the header.
PosteriorDraws read_draws_csv(const std::filesystem::path& path, const ProvinceIndex& provinces,
                              const WeekIndex& weeks);

}  // namespace epibias
