#include "epibias/structure.hpp"

#include "epibias/csv.hpp"
#include "epibias/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>

namespace epibias {

namespace {

std::vector<int> connected_components(const SparseMatrix& weights, int& n_components)
{
    const auto n = static_cast<int>(weights.rows());
    std::vector<int> label(static_cast<std::size_t>(n), -1);
    n_components = 0;
    for (int start = 0; start < n; ++start) {
        if (label[static_cast<std::size_t>(start)] >= 0) {
            continue;
        }
        std::queue<int> frontier;
        frontier.push(start);
        label[static_cast<std::size_t>(start)] = n_components;
        while (!frontier.empty()) {
            const int p = frontier.front();
            frontier.pop();
            for (SparseMatrix::InnerIterator it(weights, p); it; ++it) {
                const int q = static_cast<int>(it.row());
                if (it.value() > 0.0 && label[static_cast<std::size_t>(q)] < 0) {
                    label[static_cast<std::size_t>(q)] = n_components;
                    frontier.push(q);
                }
            }
        }
        ++n_components;
    }
    return label;
}

SparseMatrix to_sparse(const Eigen::MatrixXd& dense)
{
    return dense.sparseView(0.0, 0.0);
}

}  // namespace

SpatialStructure spatial_structure_from_weights(const SparseMatrix& weights)
{
    if (weights.rows() != weights.cols() || weights.rows() == 0) {
        throw ValidationError("weight matrix must be square and non-empty");
    }
    const Eigen::MatrixXd m = Eigen::MatrixXd(weights);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw ValidationError("weight matrix is not symmetric");
    }
    if (m.minCoeff() < 0.0 || m.diagonal().cwiseAbs().maxCoeff() != 0.0) {
        throw ValidationError("weight matrix must be non-negative with zero diagonal");
    }
    SpatialStructure s;
    s.weights = to_sparse(m);
    s.degrees = m.rowwise().sum();
    Eigen::MatrixXd q = -m;
    q.diagonal() = s.degrees;
    s.precision = to_sparse(q);
    s.component = connected_components(s.weights, s.n_components);
    return s;
}

SpatialStructure build_mobility_weights(const MobilityStack& stack, double quantile_keep)
{
    if (stack.flows.empty()) {
        throw ValidationError("mobility stack has no days");
    }
    if (!(quantile_keep > 0.0 && quantile_keep < 1.0)) {
        throw ValidationError("quantile_keep must lie in (0, 1)");
    }
    const Eigen::Index n = stack.flows.front().rows();
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, n);
    for (const auto& day : stack.flows) {
        if (day.rows() != n || day.cols() != n) {
            throw ValidationError("mobility matrices differ in dimension");
        }
        mean += day;
    }
    mean /= static_cast<double>(stack.flows.size());

    mean.diagonal().setZero();
    if (mean.maxCoeff() <= 0.0) {
        throw ValidationError("empty mobility graph");
    }
    for (Eigen::Index p = 0; p < n; ++p) {
        const double row_sum = mean.row(p).sum();
        if (row_sum > 0.0) {
            mean.row(p) /= row_sum;
        }
    }
    Eigen::MatrixXd sym = 0.5 * (mean + mean.transpose());

    std::vector<double> positive;
    for (Eigen::Index q = 1; q < n; ++q) {
        for (Eigen::Index p = 0; p < q; ++p) {
            if (sym(p, q) > 0.0) {
                positive.push_back(sym(p, q));
            }
        }
    }
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(quantile_keep * static_cast<double>(positive.size()) - 1e-9)));
    std::nth_element(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(keep - 1), positive.end(),
                     std::greater<>());
    const double cut = positive[keep - 1];
    sym = (sym.array() >= cut).select(sym, 0.0);
    return spatial_structure_from_weights(to_sparse(sym));
}

TemporalStructure rw1_structure(int n)
{
    if (n < 2) {
        throw ValidationError("RW1 needs at least 2 time points");
    }
    std::vector<Eigen::Triplet<double>> t;
    for (int k = 0; k < n; ++k) {
        t.emplace_back(k, k, (k == 0 || k == n - 1) ? 1.0 : 2.0);
        if (k + 1 < n) {
            t.emplace_back(k, k + 1, -1.0);
            t.emplace_back(k + 1, k, -1.0);
        }
    }
    TemporalStructure out;
    out.precision.resize(n, n);
    out.precision.setFromTriplets(t.begin(), t.end());
    return out;
}

SparseMatrix kronecker(const SparseMatrix& a, const SparseMatrix& b)
{
    std::vector<Eigen::Triplet<double>> t;
    t.reserve(static_cast<std::size_t>(a.nonZeros() * b.nonZeros()));
    for (int ca = 0; ca < a.outerSize(); ++ca) {
        for (SparseMatrix::InnerIterator ia(a, ca); ia; ++ia) {
            for (int cb = 0; cb < b.outerSize(); ++cb) {
                for (SparseMatrix::InnerIterator ib(b, cb); ib; ++ib) {
                    t.emplace_back(static_cast<int>(ia.row() * b.rows() + ib.row()),
                                   static_cast<int>(ia.col() * b.cols() + ib.col()), ia.value() * ib.value());
                }
            }
        }
    }
    SparseMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
    out.setFromTriplets(t.begin(), t.end());
    return out;
}

Eigen::MatrixXd spatial_constraints(const SpatialStructure& s)
{
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(s.n_components, static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
        a(s.component[i], static_cast<Eigen::Index>(i)) = 1.0;
    }
    return a;
}

Eigen::MatrixXd temporal_constraints(std::size_t n)
{
    return Eigen::MatrixXd::Ones(1, static_cast<Eigen::Index>(n));
}

InteractionStructure interaction_structure(const SpatialStructure& s, const TemporalStructure& t)
{
    const auto ns = static_cast<Eigen::Index>(s.size());
    const auto nt = static_cast<Eigen::Index>(t.size());
    if (s.precision.rows() != ns || t.precision.rows() != nt || nt < 2) {
        throw ValidationError("inconsistent structure dimensions");
    }
    InteractionStructure out;
    out.precision = kronecker(s.precision, t.precision);

    const Eigen::Index rows = s.n_components * (nt - 1) + ns;
    out.constraints = Eigen::MatrixXd::Zero(rows, ns * nt);
    Eigen::Index r = 0;
    for (int c = 0; c < s.n_components; ++c) {
        for (Eigen::Index j = 0; j + 1 < nt; ++j, ++r) {
            for (Eigen::Index i = 0; i < ns; ++i) {
                if (s.component[static_cast<std::size_t>(i)] == c) {
                    out.constraints(r, i * nt + j) = 1.0;
                }
            }
        }
    }
    for (Eigen::Index i = 0; i < ns; ++i, ++r) {
        out.constraints.block(r, i * nt, 1, nt).setOnes();
    }
    return out;
}

ScaledStructure scale_structure(const SparseMatrix& Q, const Eigen::MatrixXd& nullspace)
{
    const Eigen::Index n = Q.rows();
    if (Q.cols() != n || nullspace.rows() != n) {
        throw ValidationError("scale_structure: dimension mismatch");
    }
    Eigen::MatrixXd basis(n, 0);
    if (nullspace.cols() > 0) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(nullspace);
        basis = qr.householderQ() * Eigen::MatrixXd::Identity(n, nullspace.cols());
    }
    const Eigen::MatrixXd projector = basis * basis.transpose();
    const Eigen::MatrixXd augmented = Eigen::MatrixXd(Q) + projector;
    Eigen::LLT<Eigen::MatrixXd> llt(augmented);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-12) {
        throw NumericalError("structure matrix is singular beyond its declared null space");
    }
    const Eigen::MatrixXd ginv = llt.solve(Eigen::MatrixXd::Identity(n, n)) - projector;

    double log_sum = 0.0;
    int count = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (ginv(i, i) > 1e-12) {
            log_sum += std::log(ginv(i, i));
            ++count;
        }
    }
    if (count == 0) {
        throw NumericalError("structure matrix has no free coordinates under its constraints");
    }
    const double factor = std::exp(log_sum / count);
    return {factor * Q, factor};
}

SpatialStructure scaled(SpatialStructure s)
{
    auto r = scale_structure(s.precision, spatial_constraints(s).transpose());
    s.precision = std::move(r.precision);
    s.scale_factor *= r.scale_factor;
    return s;
}

TemporalStructure scaled(TemporalStructure t)
{
    auto r = scale_structure(t.precision, temporal_constraints(t.size()).transpose());
    t.precision = std::move(r.precision);
    t.scale_factor *= r.scale_factor;
    return t;
}

SpatialStructure ring_graph(int n)
{
    if (n < 3) {
        throw ValidationError("ring graph needs at least 3 nodes");
    }
    std::vector<Eigen::Triplet<double>> t;
    for (int k = 0; k < n; ++k) {
        const int next = (k + 1) % n;
        t.emplace_back(k, next, 1.0);
        t.emplace_back(next, k, 1.0);
    }
    SparseMatrix m(n, n);
    m.setFromTriplets(t.begin(), t.end());
    return spatial_structure_from_weights(m);
}

SpatialStructure grid_graph(int rows, int cols)
{
    if (rows < 1 || cols < 1 || rows * cols < 2) {
        throw ValidationError("grid graph needs at least 2 cells");
    }
    std::vector<Eigen::Triplet<double>> t;
    auto at = [cols](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c + 1 < cols) {
                t.emplace_back(at(r, c), at(r, c + 1), 1.0);
                t.emplace_back(at(r, c + 1), at(r, c), 1.0);
            }
            if (r + 1 < rows) {
                t.emplace_back(at(r, c), at(r + 1, c), 1.0);
                t.emplace_back(at(r + 1, c), at(r, c), 1.0);
            }
        }
    }
    SparseMatrix m(rows * cols, rows * cols);
    m.setFromTriplets(t.begin(), t.end());
    return spatial_structure_from_weights(m);
}

void write_weights(const std::filesystem::path& path, const ProvinceIndex& provinces, const SparseMatrix& weights)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw ValidationError("cannot write " + path.string());
    }
    out << "origin_id,destination_id,weight\n";
    const Eigen::MatrixXd m(weights);
    for (Eigen::Index p = 0; p < m.rows(); ++p) {
        for (Eigen::Index q = 0; q < m.cols(); ++q) {
            if (m(p, q) != 0.0) {
                out << csv::escape(provinces.id(static_cast<std::size_t>(p))) << ','
                    << csv::escape(provinces.id(static_cast<std::size_t>(q))) << ',' << csv::format_double(m(p, q))
                    << '\n';
            }
        }
    }
}

SparseMatrix read_weights(const std::filesystem::path& path, const ProvinceIndex& provinces)
{
    const auto table = csv::read(path);
    const auto c_o = table.column("origin_id");
    const auto c_d = table.column("destination_id");
    const auto c_w = table.column("weight");
    const auto n = static_cast<Eigen::Index>(provinces.size());
    std::map<std::pair<Eigen::Index, Eigen::Index>, double> listed;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const auto o = provinces.find(row[c_o]);
        const auto d = provinces.find(row[c_d]);
        if (!o || !d) {
            throw ValidationError(path.string() + ": row " + std::to_string(r + 1) + ": unknown province id");
        }
        const double w = csv::to_double(row[c_w], table, r);
        if (!(w >= 0.0) || *o == *d) {
            throw ValidationError(path.string() + ": row " + std::to_string(r + 1) +
                                  ": weights must be non-negative and off-diagonal");
        }
        listed[{static_cast<Eigen::Index>(*o), static_cast<Eigen::Index>(*d)}] = w;
    }
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    for (const auto& [key, w] : listed) {
        const auto mirror = listed.find({key.second, key.first});
        if (mirror != listed.end() && std::abs(mirror->second - w) > 1e-12) {
            throw ValidationError(path.string() + ": asymmetric weights between '" +
                                  provinces.id(static_cast<std::size_t>(key.first)) + "' and '" +
                                  provinces.id(static_cast<std::size_t>(key.second)) + "'");
        }
        m(key.first, key.second) = w;
        m(key.second, key.first) = w;
    }
    return to_sparse(m);
}

}  // namespace epibias
