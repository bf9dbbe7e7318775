#include "epibias/bias.hpp"
#include "epibias/cli.hpp"
#include "epibias/cluster.hpp"
#include "epibias/convergence.hpp"
#include "epibias/error.hpp"
#include "epibias/posterior.hpp"
#include "epibias/sampler.hpp"
#include "epibias/simulate.hpp"
#include "epibias/structure.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace epibias;

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

ResponseVector response_from(const RowMatrix& y)
{
    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
    return ResponseVector{flat, static_cast<std::size_t>(y.rows()), static_cast<std::size_t>(y.cols())};
}

RowMatrix as_panel(const Eigen::VectorXd& flat, Eigen::Index ns, Eigen::Index nt)
{
    return Eigen::Map<const RowMatrix>(flat.data(), ns, nt);
}

py::dict simulate(int ns, int nt, double V, double phi, double psi, double sigma2, double mu, const std::string& graph,
                  std::uint64_t seed)
{
    SimScenario sc;
    sc.ns = ns;
    sc.nt = nt;
    sc.hp = HyperParams{V, phi, psi, sigma2};
    sc.mu = mu;
    sc.graph = parse_graph_kind(graph);
    sc.seed = seed;
    const auto ds = simulate_dataset(sc);
    const auto rows = static_cast<Eigen::Index>(ds.y.n_provinces);
    const auto cols = static_cast<Eigen::Index>(ds.y.n_weeks);
    py::dict out;
    out["y"] = as_panel(ds.y.y, rows, cols);
    out["eta"] = as_panel(ds.eta, rows, cols);
    out["u"] = ds.truth.u;
    out["v"] = ds.truth.v;
    out["w"] = as_panel(ds.truth.w, rows, cols);
    out["weights"] = Eigen::MatrixXd(ds.model.spatial().weights);
    out["provinces"] = ds.provinces.ids();
    out["warnings"] = ds.warnings;
    return out;
}

py::dict fit(const RowMatrix& y, const Eigen::MatrixXd& weights, int chains, int warmup, int draws, int thin,
             std::uint64_t seed, double U, bool save_latent, int threads, bool scale)
{
    if (weights.rows() != y.rows() || weights.cols() != y.rows()) {
        throw ValidationError("weights must be a square matrix with one row per row of y");
    }
    SpatialStructure spatial = spatial_structure_from_weights(weights.sparseView());
    LatentModel model(scale ? scaled(std::move(spatial)) : std::move(spatial),
                      scaled(rw1_structure(static_cast<int>(y.cols()))));
    ChainConfig cfg;
    cfg.n_chains = chains;
    cfg.n_warmup = warmup;
    cfg.n_draws = draws;
    cfg.thin = thin;
    cfg.seed = seed;
    cfg.save_latent = save_latent;
    cfg.threads = threads;
    PriorConfig prior;
    prior.U = U;
    FitResult result;
    {
        py::gil_scoped_release release;
        result = run_chains(response_from(y), model, cfg, prior);
    }
    const auto& pd = result.draws;
    py::dict out;
    for (const char* name : {"V", "phi", "psi", "sigma2_eps", "mu", "log_density"}) {
        const auto per_chain = pd.chains_of(name);
        Eigen::MatrixXd m(static_cast<Eigen::Index>(per_chain.size()), pd.n_draws);
        for (std::size_t c = 0; c < per_chain.size(); ++c) {
            for (int k = 0; k < pd.n_draws; ++k) {
                m(static_cast<Eigen::Index>(c), k) = per_chain[c][static_cast<std::size_t>(k)];
            }
        }
        out[name] = m;
    }
    const auto shares = variance_shares(pd);
    out["shares"] = shares.per_draw;
    if (pd.n_draws >= 20) {
        const auto conv = convergence(pd);
        py::dict rhat;
        for (const auto& p : conv.parameters) {
            rhat[p.name.c_str()] = p.rhat;
        }
        out["rhat"] = rhat;
        out["max_rhat"] = conv.max_rhat;
    }
    if (save_latent) {
        const auto f = fitted_values(pd);
        out["fitted_mean"] = f.mean;
    }
    return out;
}

py::dict clustering_dict(const Clustering& c)
{
    py::dict out;
    out["k"] = c.k;
    out["assignment"] = c.assignment;
    out["medoids"] = c.medoids;
    out["silhouette"] = c.silhouette;
    out["mean_silhouette"] = c.mean_silhouette;
    out["total_cost"] = c.total_cost;
    return out;
}

TrajectorySet trajectories(const Eigen::MatrixXd& series)
{
    return TrajectorySet{synthetic_provinces(static_cast<int>(series.rows())), series};
}

}  // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Native core of epibias";
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("run_command", &cli::run_command, py::arg("args"),
          "Run a command-line stage in-process and return its exit code.");
    m.def("version", [] { return std::string(cli::kVersion); });

    m.def("logit", &logit);
    m.def("inv_logit", &inv_logit);
    m.def("pc_rate", &pc_rate, py::arg("U"), py::arg("alpha") = 0.05);
    m.def("log_pc_psi_density", &log_pc_psi_density, py::arg("psi"), py::arg("lambda_"));

    m.def(
        "multiplicative_bias",
        [](const Eigen::MatrixXd& dhat, const Eigen::MatrixXd& official) {
            const auto p = synthetic_provinces(static_cast<int>(dhat.rows()));
            const auto w = synthetic_weeks(static_cast<int>(dhat.cols()));
            return multiplicative_bias(ExcessPanel{p, w, dhat}, MortalityPanel{p, w, official, 0}).values;
        },
        py::arg("dhat"), py::arg("official"));
    m.def(
        "additive_bias",
        [](const Eigen::MatrixXd& dhat, const Eigen::MatrixXd& official, const Eigen::VectorXd& population) {
            const auto p = synthetic_provinces(static_cast<int>(dhat.rows()));
            const auto w = synthetic_weeks(static_cast<int>(dhat.cols()));
            return additive_bias(ExcessPanel{p, w, dhat}, MortalityPanel{p, w, official, 0},
                                 PopulationTable{p, population})
                .values;
        },
        py::arg("dhat"), py::arg("official"), py::arg("population"));

    m.def("simulate", &simulate, py::arg("ns") = 20, py::arg("nt") = 11, py::arg("V") = 0.5, py::arg("phi") = 0.6,
          py::arg("psi") = 0.3, py::arg("sigma2") = 0.1, py::arg("mu") = 0.0, py::arg("graph") = "grid",
          py::arg("seed") = 1);
    m.def("fit", &fit, py::arg("y"), py::arg("weights"), py::arg("chains") = 4, py::arg("warmup") = 2000,
          py::arg("draws") = 2000, py::arg("thin") = 1, py::arg("seed") = 1, py::arg("U") = 1.0,
          py::arg("save_latent") = false, py::arg("threads") = 1, py::arg("scale") = true);

    m.def(
        "dtw",
        [](const std::vector<double>& a, const std::vector<double>& b, std::optional<int> band) {
            return dtw(a, b, band);
        },
        py::arg("a"), py::arg("b"), py::arg("band") = py::none());
    m.def("dtw_distance_matrix", &dtw_distance_matrix, py::arg("series"), py::arg("band") = py::none());
    m.def(
        "kmedoids",
        [](const Eigen::MatrixXd& distances, int k, std::uint64_t seed) {
            return clustering_dict(kmedoids_fit(distances, k, seed));
        },
        py::arg("distances"), py::arg("k"), py::arg("seed") = 1);
    m.def(
        "select_k",
        [](const Eigen::MatrixXd& series, int k_min, int k_max, std::uint64_t seed, std::optional<int> band) {
            const auto sel = select_k(trajectories(series), k_min, k_max, seed, band);
            py::dict out;
            out["k"] = sel.k;
            out["degenerate"] = sel.degenerate;
            out["scores"] = sel.scores;
            out["best"] = sel.best ? py::object(clustering_dict(*sel.best)) : py::object(py::none());
            return out;
        },
        py::arg("series"), py::arg("k_min") = 2, py::arg("k_max") = 8, py::arg("seed") = 1,
        py::arg("band") = py::none());
    m.def("adjusted_rand_index", &adjusted_rand_index);
}
