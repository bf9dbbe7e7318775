#include "epibias/draws_io.hpp"

#include "epibias/csv.hpp"
#include "epibias/error.hpp"

#include <fstream>
#include <set>

namespace epibias {

namespace {

const std::vector<std::string> kScalarColumns{"chain", "iter", "V", "phi", "psi", "sigma2_eps", "mu"};

}  // namespace

std::vector<std::string> draws_header(const ProvinceIndex& provinces, const WeekIndex& weeks, bool with_latent)
{
    std::vector<std::string> h = kScalarColumns;
    if (!with_latent) {
        return h;
    }
    for (const auto& id : provinces.ids()) {
        h.push_back("u[" + id + "]");
    }
    for (const auto& w : weeks.weeks()) {
        h.push_back("v[" + to_string(w) + "]");
    }
    for (const auto& id : provinces.ids()) {
        for (const auto& w : weeks.weeks()) {
            h.push_back("w[" + id + ":" + to_string(w) + "]");
        }
    }
    return h;
}

void write_draws_csv(const std::filesystem::path& path, const PosteriorDraws& draws, const ProvinceIndex& provinces,
                     const WeekIndex& weeks)
{
    if (provinces.size() != draws.n_provinces || weeks.size() != draws.n_weeks) {
        throw ValidationError("draws do not match the province and week indices");
    }
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    const auto header = draws_header(provinces, weeks, draws.has_latent);
    for (std::size_t k = 0; k < header.size(); ++k) {
        out << (k ? "," : "") << csv::escape(header[k]);
    }
    out << '\n';
    std::string line;
    for (const auto& d : draws.draws) {
        line.clear();
        line += std::to_string(d.chain);
        line += ',';
        line += std::to_string(d.iteration);
        for (double v : {d.hp.V, d.hp.phi, d.hp.psi, d.hp.sigma2_eps, d.latent.mu}) {
            line += ',';
            line += csv::format_double(v);
        }
        if (draws.has_latent) {
            for (const Eigen::VectorXd* block : {&d.latent.u, &d.latent.v, &d.latent.w}) {
                for (double v : *block) {
                    line += ',';
                    line += csv::format_double(v);
                }
            }
        }
        out << line << '\n';
    }
}

PosteriorDraws read_draws_csv(const std::filesystem::path& path, const ProvinceIndex& provinces,
                              const WeekIndex& weeks)
{
    const auto table = csv::read(path);
    const bool with_latent = table.header.size() > kScalarColumns.size();
    const auto expected = draws_header(provinces, weeks, with_latent);
    if (table.header != expected) {
        throw ValidationError(path.string() + ": header does not match the provinces and weeks of the fit");
    }
    const auto ns = static_cast<Eigen::Index>(provinces.size());
    const auto nt = static_cast<Eigen::Index>(weeks.size());

    PosteriorDraws pd;
    pd.n_provinces = provinces.size();
    pd.n_weeks = weeks.size();
    pd.has_latent = with_latent;
    std::set<int> chains;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        Draw d;
        d.chain = static_cast<int>(csv::to_long(row[0], table, r));
        d.iteration = static_cast<int>(csv::to_long(row[1], table, r));
        d.hp = {csv::to_double(row[2], table, r), csv::to_double(row[3], table, r),
                csv::to_double(row[4], table, r), csv::to_double(row[5], table, r)};
        d.latent.mu = csv::to_double(row[6], table, r);
        if (with_latent) {
            std::size_t c = kScalarColumns.size();
            d.latent.u.resize(ns);
            d.latent.v.resize(nt);
            d.latent.w.resize(ns * nt);
            for (Eigen::Index i = 0; i < ns; ++i) {
                d.latent.u(i) = csv::to_double(row[c++], table, r);
            }
            for (Eigen::Index j = 0; j < nt; ++j) {
                d.latent.v(j) = csv::to_double(row[c++], table, r);
            }
            for (Eigen::Index k = 0; k < ns * nt; ++k) {
                d.latent.w(k) = csv::to_double(row[c++], table, r);
            }
        }
        if (d.chain < 0) {
            throw ValidationError(path.string() + ": negative chain index on row " + std::to_string(r + 1));
        }
        chains.insert(d.chain);
        pd.draws.push_back(std::move(d));
    }
    if (pd.draws.empty()) {
        throw ValidationError(path.string() + ": no draws");
    }
    pd.n_chains = static_cast<int>(chains.size());
    if (*chains.rbegin() != pd.n_chains - 1) {
        throw ValidationError(path.string() + ": chain indices are not contiguous from 0");
    }
    std::vector<int> per_chain(static_cast<std::size_t>(pd.n_chains), 0);
    for (const auto& d : pd.draws) {
        ++per_chain[static_cast<std::size_t>(d.chain)];
    }
    pd.n_draws = per_chain.front();
    for (int n : per_chain) {
        if (n != pd.n_draws) {
            throw ValidationError(path.string() + ": chains hold different numbers of draws");
        }
    }
    return pd;
}

}  // namespace epibias
