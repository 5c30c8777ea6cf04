// Python bindings for the main operations: building models, the structured
// inverse and Cholesky, EM fitting, and the synthetic generator.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>

#include "mlfm/em_fit.hpp"
#include "mlfm/expanded_cholesky.hpp"
#include "mlfm/mlr_product.hpp"
#include "mlfm/smw_inverse.hpp"
#include "mlfm/synth_eval.hpp"

namespace py = pybind11;
using namespace mlfm;

namespace {

Dataset make_dataset(const Matrix& y, const std::optional<Matrix>& x) {
    Dataset data{y, x};
    data.validate();
    return data;
}

EmOptions options_from_kwargs(int max_iters, double rel_tol, const std::string& init,
                              std::uint64_t seed, const PsdMlr* warm) {
    EmOptions opts;
    opts.max_iters = max_iters;
    opts.rel_tol = rel_tol;
    opts.seed = seed;
    if (init == "frob") {
        opts.init = InitKind::FrobeniusSweep;
    } else if (init == "random") {
        opts.init = InitKind::Random;
    } else if (init == "warm") {
        opts.init = InitKind::Warm;
        if (!warm) throw StructuralError("init='warm' requires the warm model argument");
        opts.warm = std::make_shared<PsdMlr>(*warm);
    } else {
        throw StructuralError("unknown init '" + init + "'");
    }
    return opts;
}

}  // namespace

PYBIND11_MODULE(_mlfm, m) {
    m.doc() = "Multilevel factor models: PSD MLR covariances, linear-time "
              "structured inverse/Cholesky, and EM fitting";

    py::register_exception<Error>(m, "MlfmError");

    py::class_<HierarchicalPartition>(m, "HierarchicalPartition")
        .def(py::init<int, std::vector<std::vector<int>>, std::vector<int>>(),
             py::arg("n"), py::arg("level_sizes"), py::arg("perm") = std::vector<int>{})
        .def_property_readonly("n", &HierarchicalPartition::n)
        .def_property_readonly("levels", &HierarchicalPartition::levels)
        .def("num_groups", &HierarchicalPartition::num_groups)
        .def("group_sizes", &HierarchicalPartition::group_sizes)
        .def("perm", &HierarchicalPartition::perm)
        .def("blocks", &HierarchicalPartition::blocks);

    m.def("build_partition", &build_partition, py::arg("n"), py::arg("assignments"),
          "Contiguize per-level label assignments into a hierarchical partition");
    m.def("refines", &refines, py::arg("a"), py::arg("b"));

    py::class_<RankAllocation>(m, "RankAllocation")
        .def(py::init<std::vector<int>>(), py::arg("ranks"))
        .def_property_readonly("mlr_rank", &RankAllocation::mlr_rank)
        .def("factor_cols", &RankAllocation::factor_cols)
        .def("ranks", &RankAllocation::ranks);

    py::class_<PsdMlr>(m, "PsdMlr")
        .def(py::init([](const HierarchicalPartition& part, const RankAllocation& ranks,
                         const Matrix& fbar, const Vector& d) {
                 return PsdMlr::unpack_compressed(part, ranks, CompressedForm{fbar, d});
             }),
             py::arg("partition"), py::arg("ranks"), py::arg("fbar"), py::arg("d"),
             "Build from the compressed factor form (n x (r-1)) and diagonal")
        .def_property_readonly("n", &PsdMlr::n)
        .def_property_readonly("partition", &PsdMlr::partition)
        .def_property_readonly("ranks", &PsdMlr::ranks)
        .def("matvec", &PsdMlr::matvec, py::arg("x"))
        .def("matmat", &PsdMlr::matmat, py::arg("x"))
        .def("diagonal", &PsdMlr::diagonal)
        .def("to_dense", &PsdMlr::to_dense, py::arg("cap") = kDenseCap)
        .def("frobenius_error", &PsdMlr::frobenius_error, py::arg("s"), py::arg("cap") = kDenseCap)
        .def("fbar", [](const PsdMlr& m) { return m.pack_compressed().fbar; })
        .def("d", [](const PsdMlr& m) { return m.d(); });

    py::class_<InverseMlr>(m, "InverseMlr")
        .def_property_readonly("logdet", &InverseMlr::logdet)
        .def_property_readonly("dinv", &InverseMlr::dinv)
        .def("apply", py::overload_cast<const Matrix&>(&InverseMlr::apply, py::const_),
             py::arg("x"))
        .def("diagonal", &InverseMlr::diagonal)
        .def("to_dense", &InverseMlr::to_dense, py::arg("cap") = kDenseCap);

    m.def("invert", [](const PsdMlr& m) { return invert(m); }, py::arg("model"),
          "Recursive SMW inverse of a PSD MLR matrix (linear time)");

    py::class_<ExpandedCholesky>(m, "ExpandedCholesky")
        .def_property_readonly("n", &ExpandedCholesky::n)
        .def_property_readonly("s", &ExpandedCholesky::s)
        .def_property_readonly("logdet", &ExpandedCholesky::logdet)
        .def("dsigned", &ExpandedCholesky::dsigned)
        .def("dense_l", &ExpandedCholesky::dense_l, py::arg("cap") = kDenseCap);

    m.def("factorize", &factorize, py::arg("model"),
          "LDL^T factorization of the expanded arrow matrix");
    m.def("build_expanded_dense", &build_expanded_dense, py::arg("model"),
          py::arg("cap") = kDenseCap);
    m.def("identity_residual", &identity_residual, py::arg("model"), py::arg("inverse"),
          py::arg("cap") = kDenseCap);

    m.def("log_likelihood",
          [](const PsdMlr& model, const Matrix& y) {
              return log_likelihood(model, make_dataset(y, std::nullopt));
          },
          py::arg("model"), py::arg("y"));

    py::class_<FitTrace>(m, "FitTrace")
        .def_property_readonly("converged",
                               [](const FitTrace& t) { return t.status == FitTrace::Status::Converged; })
        .def_property_readonly("d_floor_hit", [](const FitTrace& t) { return t.d_floor_hit; })
        .def_property_readonly("logliks",
                               [](const FitTrace& t) {
                                   std::vector<double> out;
                                   for (const auto& r : t.rows) out.push_back(r.loglik);
                                   return out;
                               });

    m.def("fit",
          [](const Matrix& y, const HierarchicalPartition& part, const RankAllocation& ranks,
             int max_iters, double rel_tol, const std::string& init, std::uint64_t seed,
             const PsdMlr* warm) {
              auto opts = options_from_kwargs(max_iters, rel_tol, init, seed, warm);
              return fit(make_dataset(y, std::nullopt), part, ranks, opts);
          },
          py::arg("y"), py::arg("partition"), py::arg("ranks"), py::arg("max_iters") = 300,
          py::arg("rel_tol") = 1e-8, py::arg("init") = "frob", py::arg("seed") = 0,
          py::arg("warm") = nullptr, "Structured EM fit; returns (model, trace)");

    m.def("fit_with_covariates",
          [](const Matrix& y, const Matrix& x, const HierarchicalPartition& part,
             const RankAllocation& ranks, int max_iters, double rel_tol, const std::string& init,
             std::uint64_t seed) {
              auto opts = options_from_kwargs(max_iters, rel_tol, init, seed, nullptr);
              auto res = fit_with_covariates(make_dataset(y, x), part, ranks, opts);
              return py::make_tuple(res.model, res.b, res.trace);
          },
          py::arg("y"), py::arg("x"), py::arg("partition"), py::arg("ranks"),
          py::arg("max_iters") = 300, py::arg("rel_tol") = 1e-8, py::arg("init") = "frob",
          py::arg("seed") = 0);

    m.def("init_frobenius_sweep",
          [](const Matrix& y, const HierarchicalPartition& part, const RankAllocation& ranks) {
              return init_frobenius_sweep(make_dataset(y, std::nullopt), part, ranks);
          },
          py::arg("y"), py::arg("partition"), py::arg("ranks"));

    py::class_<SynthModel>(m, "SynthModel")
        .def_property_readonly("truth", &SynthModel::truth)
        .def("sample",
             [](const SynthModel& s, int count, std::uint64_t seed) { return s.sample(count, seed).y; },
             py::arg("count"), py::arg("sample_seed") = 0);

    m.def("generate",
          [](const HierarchicalPartition& part, const RankAllocation& ranks, double snr,
             int n_samples, std::uint64_t seed) {
              return generate(SynthConfig{part, ranks, snr, n_samples, seed});
          },
          py::arg("partition"), py::arg("ranks"), py::arg("snr") = 4.0, py::arg("n_samples") = 80,
          py::arg("seed") = 0);

    m.def("expected_ll", &expected_ll, py::arg("fit"), py::arg("truth"),
          py::arg("cap") = kDenseCap);
    m.def("quadratic_ll_approx", &quadratic_ll_approx, py::arg("sample_cov"), py::arg("model"),
          py::arg("cap") = kDenseCap);
    m.def("ll_mean_std_under_model", &ll_mean_std_under_model, py::arg("model"),
          py::arg("n_samples"));
}
