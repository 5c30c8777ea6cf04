// mlfm command line: fit multilevel factor models, generate synthetic data,
// evaluate likelihoods, and check a model's structured inverse/factorization.

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include "mlfm/em_fit.hpp"
#include "mlfm/expanded_cholesky.hpp"
#include "mlfm/mlr_product.hpp"
#include "mlfm/model_io.hpp"
#include "mlfm/smw_inverse.hpp"
#include "mlfm/synth_eval.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using nlohmann::json;

void emit_error(const std::string& code, const std::string& message) {
    json err;
    err["error"]["code"] = code;
    err["error"]["message"] = message;
    std::cerr << err.dump() << std::endl;
}

void apply_threads(int threads) {
    if (threads <= 0) return;
    Eigen::setNbThreads(threads);
#ifdef _OPENMP
    omp_set_num_threads(threads);
#endif
}

struct FitArgs {
    std::string data, hierarchy, covariates, init = "frob", out, trace;
    double tol = 1e-8;
    int max_iters = 300;
    std::uint64_t seed = 0;
};

int run_fit(const FitArgs& args) {
    mlfm::LoadedDataset loaded = mlfm::read_dataset(args.data, args.hierarchy);
    if (!args.covariates.empty()) {
        mlfm::Matrix x = mlfm::read_matrix_csv(args.covariates);
        if (x.rows() != loaded.data.y.rows())
            throw mlfm::IoError("covariate row count does not match data");
        loaded.data.x = std::move(x);
    }

    mlfm::EmOptions opts;
    opts.rel_tol = args.tol;
    opts.max_iters = args.max_iters;
    opts.seed = args.seed;
    if (args.init == "frob") {
        opts.init = mlfm::InitKind::FrobeniusSweep;
    } else if (args.init == "random") {
        opts.init = mlfm::InitKind::Random;
    } else if (args.init.rfind("warm:", 0) == 0) {
        opts.init = mlfm::InitKind::Warm;
        opts.warm = std::make_shared<mlfm::PsdMlr>(
            mlfm::model_from_file(mlfm::read_model(args.init.substr(5))));
    } else {
        throw mlfm::IoError("unknown init '" + args.init + "' (use frob, random, or warm:PATH)");
    }

    mlfm::PsdMlr model = mlfm::PsdMlr::diagonal_model(
        loaded.hierarchy.partition, loaded.hierarchy.ranks,
        mlfm::Vector::Ones(loaded.hierarchy.partition.n()));
    mlfm::FitTrace trace;
    std::optional<mlfm::Matrix> bmat;
    if (loaded.data.x) {
        auto res = mlfm::fit_with_covariates(loaded.data, loaded.hierarchy.partition,
                                             loaded.hierarchy.ranks, opts);
        model = std::move(res.model);
        bmat = std::move(res.b);
        trace = std::move(res.trace);
    } else {
        auto res = mlfm::fit(loaded.data, loaded.hierarchy.partition, loaded.hierarchy.ranks, opts);
        model = std::move(res.first);
        trace = std::move(res.second);
    }

    const bool converged = trace.status == mlfm::FitTrace::Status::Converged;
    json meta;
    meta["seed"] = args.seed;
    meta["init"] = args.init;
    meta["rel_tol"] = args.tol;
    meta["max_iters"] = args.max_iters;
    meta["final_loglik"] = trace.rows.back().loglik;
    meta["status"] = converged ? "converged" : "max_iters";
    meta["iterations"] = trace.rows.size();
    meta["d_floor_hit"] = trace.d_floor_hit;
    if (trace.init_fell_back) meta["init_fallback"] = "random";

    mlfm::ModelFile file = mlfm::file_from_model(model, loaded.hierarchy.features, meta);
    file.b = bmat;
    mlfm::write_model(args.out, file);

    if (!args.trace.empty()) {
        std::ofstream os(args.trace);
        if (!os) throw mlfm::IoError("cannot open '" + args.trace + "' for writing");
        trace.write_csv(os);
    }
    std::cout << meta.dump(2) << std::endl;
    return converged ? 0 : 2;
}

struct GenerateArgs {
    std::string config, out_model, out_data;
    int n_samples = -1;
    std::int64_t seed = -1;
};

int run_generate(const GenerateArgs& args) {
    mlfm::SynthConfig cfg = mlfm::read_synth_config(args.config);
    if (args.n_samples > 0) cfg.n_samples = args.n_samples;
    if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);

    mlfm::SynthModel model = mlfm::generate(cfg);
    json meta;
    meta["seed"] = cfg.seed;
    meta["snr"] = cfg.snr;
    meta["n_samples"] = cfg.n_samples;
    meta["kind"] = "synthetic-truth";
    mlfm::write_model(args.out_model, mlfm::file_from_model(model.truth(), {}, meta));

    if (!args.out_data.empty()) {
        mlfm::Dataset data = model.sample(cfg.n_samples, cfg.seed);
        std::vector<std::string> labels(cfg.partition.n());
        for (int i = 0; i < cfg.partition.n(); ++i) labels[i] = "f" + std::to_string(i);
        mlfm::write_matrix_csv(args.out_data, data.y, labels);
    }
    std::cout << meta.dump(2) << std::endl;
    return 0;
}

struct EvalArgs {
    std::string model, data, hierarchy, truth;
};

int run_eval(const EvalArgs& args) {
    mlfm::ModelFile file = mlfm::read_model(args.model);
    mlfm::PsdMlr model = mlfm::model_from_file(file);

    json out;
    if (!args.data.empty()) {
        mlfm::Matrix raw = mlfm::read_matrix_csv(args.data);
        if (raw.cols() != model.n())
            throw mlfm::IoError("dataset column count does not match the model");
        // Model files carry the feature permutation, so raw-ordered data is
        // accepted directly.
        mlfm::Matrix y(raw.rows(), raw.cols());
        for (int c = 0; c < raw.cols(); ++c) y.col(model.partition().perm()[c]) = raw.col(c);
        mlfm::Dataset data{std::move(y), std::nullopt};
        out["avg_loglik"] = mlfm::log_likelihood(model, data) / data.samples();
        out["n_samples"] = data.samples();

        if (!args.truth.empty()) {
            mlfm::PsdMlr truth = mlfm::model_from_file(mlfm::read_model(args.truth));
            out["expected_loglik"] = mlfm::expected_ll(model, truth);
            auto [mean, sd] = mlfm::ll_mean_std_under_model(truth, data.samples());
            out["avg_loglik_mean_under_truth"] = mean;
            out["avg_loglik_std_under_truth"] = sd;
        }
    } else if (!args.truth.empty()) {
        mlfm::PsdMlr truth = mlfm::model_from_file(mlfm::read_model(args.truth));
        out["expected_loglik"] = mlfm::expected_ll(model, truth);
    } else {
        throw mlfm::IoError("eval requires --data and/or --truth");
    }
    std::cout << out.dump(2) << std::endl;
    return 0;
}

struct CheckArgs {
    std::string model;
    int dense_cap = mlfm::kDenseCap;
};

int run_check(const CheckArgs& args) {
    mlfm::PsdMlr model = mlfm::model_from_file(mlfm::read_model(args.model));
    const int n = model.n();
    auto [inv, chol] = mlfm::invert_and_factorize(model);

    const double ident = mlfm::identity_residual(model, inv, args.dense_cap);
    mlfm::Matrix e = mlfm::build_expanded_dense(model, args.dense_cap);
    mlfm::Matrix l = chol.dense_l(args.dense_cap);
    const double recon =
        (l * chol.dsigned().asDiagonal() * l.transpose() - e).norm() / e.norm();
    const double schur = mlfm::schur_complement_check(model, args.dense_cap);
    const double logdet_gap = std::abs(inv.logdet() - chol.logdet());

    const bool ok = ident < 1e-8 * std::sqrt(static_cast<double>(n)) && recon < 1e-10 &&
                    schur < 1e-10 && logdet_gap < 1e-9;
    json out;
    out["identity_residual"] = ident;
    out["cholesky_reconstruction_residual"] = recon;
    out["schur_complement_residual"] = schur;
    out["logdet_smw"] = inv.logdet();
    out["logdet_cholesky"] = chol.logdet();
    out["logdet_gap"] = logdet_gap;
    out["ok"] = ok;
    std::cout << out.dump(2) << std::endl;
    return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multilevel factor model fitting via structured EM"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Cap worker threads (0 = library default)");

    FitArgs fit_args;
    CLI::App* fit = app.add_subcommand("fit", "Fit a model to CSV data by maximum likelihood");
    fit->add_option("--data", fit_args.data, "CSV with a header of feature labels")->required();
    fit->add_option("--hierarchy", fit_args.hierarchy, "Hierarchy JSON")->required();
    fit->add_option("--covariates", fit_args.covariates, "Optional covariate CSV");
    fit->add_option("--init", fit_args.init, "frob | random | warm:PATH");
    fit->add_option("--tol", fit_args.tol, "Relative log-likelihood stopping tolerance");
    fit->add_option("--max-iters", fit_args.max_iters, "Iteration cap");
    fit->add_option("--seed", fit_args.seed, "Seed for random init");
    fit->add_option("--out", fit_args.out, "Output model JSON")->required();
    fit->add_option("--trace", fit_args.trace, "Per-iteration trace CSV");

    GenerateArgs gen_args;
    CLI::App* gen = app.add_subcommand("generate", "Sample a synthetic model and dataset");
    gen->add_option("--config", gen_args.config, "Synth config JSON")->required();
    gen->add_option("--out-model", gen_args.out_model, "Output truth model JSON")->required();
    gen->add_option("--out-data", gen_args.out_data, "Output data CSV");
    gen->add_option("--n-samples", gen_args.n_samples, "Override sample count");
    gen->add_option("--seed", gen_args.seed, "Override seed");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Evaluate likelihoods of a fitted model");
    eval->add_option("--model", eval_args.model, "Model JSON")->required();
    eval->add_option("--data", eval_args.data, "Data CSV (raw feature order)");
    eval->add_option("--truth", eval_args.truth, "Ground-truth model JSON");

    CheckArgs check_args;
    CLI::App* check = app.add_subcommand("check", "Verify inverse and Cholesky residuals");
    check->add_option("--model", check_args.model, "Model JSON")->required();
    check->add_option("--dense-cap", check_args.dense_cap, "Dense oracle size cap");

    CLI11_PARSE(app, argc, argv);
    apply_threads(threads);

    try {
        if (fit->parsed()) return run_fit(fit_args);
        if (gen->parsed()) return run_generate(gen_args);
        if (eval->parsed()) return run_eval(eval_args);
        if (check->parsed()) return run_check(check_args);
    } catch (const mlfm::Error& e) {
        emit_error(e.code(), e.what());
        return 1;
    } catch (const std::exception& e) {
        emit_error("internal", e.what());
        return 1;
    }
    return 0;
}
