#include "mlfm/synth_eval.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>

#include "mlfm/rng.hpp"
#include "mlfm/smw_inverse.hpp"

namespace mlfm {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

void SynthConfig::validate() const {
    if (!(snr > 0.0)) throw StructuralError("snr must be positive");
    if (n_samples < 1) throw StructuralError("n_samples must be >= 1");
    if (!ranks.compatible(partition))
        throw StructuralError("rank allocation level count does not match partition");
}

SynthModel generate(const SynthConfig& cfg) {
    cfg.validate();
    const HierarchicalPartition& part = cfg.partition;
    CounterRng rng(cfg.seed, CounterRng::kModelStream);

    std::vector<std::vector<Matrix>> factors(part.levels() - 1);
    double diag_sum = 0.0;  // 1^T diag(FF^T)
    for (int l = 0; l + 1 < part.levels(); ++l) {
        factors[l].resize(part.num_groups(l));
        for (int k = 0; k < part.num_groups(l); ++k) {
            Matrix f(part.group_size(l, k), cfg.ranks.level_rank(l));
            for (int i = 0; i < f.rows(); ++i)
                for (int j = 0; j < f.cols(); ++j) f(i, j) = rng.normal();
            diag_sum += f.squaredNorm();
            factors[l][k] = std::move(f);
        }
    }
    const double hi = 2.0 * (diag_sum / part.n()) / cfg.snr;
    Vector d(part.n());
    for (int i = 0; i < part.n(); ++i) {
        double v = hi * rng.uniform();
        while (v == 0.0) v = hi * rng.uniform();  // the model requires d > 0
        d[i] = v;
    }
    return SynthModel(PsdMlr(part, cfg.ranks, std::move(factors), std::move(d)), cfg.seed);
}

Dataset SynthModel::sample(int count, std::uint64_t sample_seed) const {
    if (count < 1) throw StructuralError("sample count must be >= 1");
    const HierarchicalPartition& part = truth_.partition();
    CounterRng rng(seed_, CounterRng::kSampleStream ^ sample_seed);
    Matrix y(count, part.n());
    Vector z, noise(part.n());
    for (int i = 0; i < count; ++i) {
        Vector row = Vector::Zero(part.n());
        for (int l = 0; l + 1 < part.levels(); ++l) {
            const int rl = truth_.ranks().level_rank(l);
            if (rl == 0) continue;
            z.resize(rl);
            for (int k = 0; k < part.num_groups(l); ++k) {
                for (int j = 0; j < rl; ++j) z[j] = rng.normal();
                row.segment(part.group_offset(l, k), part.group_size(l, k)).noalias() +=
                    truth_.factor(l, k) * z;
            }
        }
        for (int j = 0; j < part.n(); ++j)
            row[j] += std::sqrt(truth_.d()[j]) * rng.normal();
        y.row(i) = row.transpose();
    }
    return Dataset{std::move(y), std::nullopt};
}

double expected_ll(const PsdMlr& fit, const PsdMlr& truth, int cap) {
    if (fit.n() != truth.n()) throw StructuralError("expected_ll: feature counts differ");
    const double n = fit.n();
    InverseMlr inv = invert(fit);

    double trace;
    if (fit.partition().same_shape(truth.partition())) {
        // Tr(Sigma_fit^{-1} Sigma_true) = sum_j dinv-part + factor part,
        // assembled blockwise in O(n r^2).
        trace = inv.diagonal().dot(truth.d());
        for (int l = 0; l + 1 < truth.partition().levels(); ++l) {
            if (truth.ranks().level_rank(l) == 0) continue;
            for (int k = 0; k < truth.partition().num_groups(l); ++k) {
                const Matrix& f = truth.factor(l, k);
                const int off = truth.partition().group_offset(l, k);
                Matrix embedded = Matrix::Zero(fit.n(), f.cols());
                embedded.middleRows(off, f.rows()) = f;
                trace += f.cwiseProduct(inv.apply(embedded).middleRows(off, f.rows())).sum();
            }
        }
    } else {
        trace = (inv.to_dense(cap) * truth.to_dense(cap)).trace();
    }
    return -0.5 * (n * kLog2Pi + inv.logdet() + trace);
}

double quadratic_ll_approx(const Matrix& sample_cov, const PsdMlr& m, int cap) {
    const int n = m.n();
    if (sample_cov.rows() != n || sample_cov.cols() != n)
        throw StructuralError("quadratic_ll_approx: sample covariance shape does not match model");
    check_dense_cap(n, cap, "quadratic_ll_approx");
    Eigen::LDLT<Matrix> ldlt(sample_cov);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 0.0)
        throw DomainError("sample covariance is singular; consider shrinkage before calling");
    const double logdet_s = ldlt.vectorD().array().log().sum();
    // l(S;Y)/N at the sample covariance itself: the trace term is exactly n.
    const double ll_s = -0.5 * (n * kLog2Pi + logdet_s + n);
    // Quadratic correction 1/4 Tr((S^{-1}(S - Sigma))^2), i.e. the squared
    // Frobenius norm of S^{-1/2}(S - Sigma)S^{-1/2}; this is the form the
    // second-order expansion of log det and the trace term actually produces,
    // and it keeps the remainder third order in the perturbation.
    Matrix m1 = Matrix::Identity(n, n) - ldlt.solve(m.to_dense(cap));
    const double correction = 0.25 * m1.cwiseProduct(m1.transpose()).sum();
    return ll_s - correction;
}

std::pair<double, double> ll_mean_std_under_model(const PsdMlr& m, int n_samples) {
    if (n_samples < 1) throw StructuralError("n_samples must be >= 1");
    const double n = m.n();
    const double mean = -0.5 * n * kLog2Pi - 0.5 * invert(m).logdet() - 0.5 * n;
    const double sd = std::sqrt(n / (2.0 * n_samples));
    return {mean, sd};
}

void CompareReport::write_csv(std::ostream& os) const {
    os << "trial,ell_mle,ell_frob,diff\n";
    char buf[160];
    for (const auto& t : trials) {
        std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g\n", t.trial, t.ell_mle, t.ell_frob,
                      t.diff);
        os << buf;
    }
}

CompareReport compare_methods(const SynthConfig& cfg, int trials, std::uint64_t seed,
                              const EmOptions& opts) {
    cfg.validate();
    if (trials < 0) throw StructuralError("trial count must be >= 0");
    CompareReport report;
    if (trials == 0) return report;

    SynthModel model = generate(cfg);
    for (int t = 0; t < trials; ++t) {
        Dataset data = model.sample(cfg.n_samples, seed + static_cast<std::uint64_t>(t));
        PsdMlr frob = init_frobenius_sweep(data, cfg.partition, cfg.ranks, opts.d_floor_scale,
                                           opts.dense_cap);
        EmOptions mle_opts = opts;
        mle_opts.init = InitKind::Warm;
        mle_opts.warm = std::make_shared<PsdMlr>(frob);
        auto [mle, trace] = fit(data, cfg.partition, cfg.ranks, mle_opts);

        CompareReport::Trial row;
        row.trial = t;
        row.ell_mle = expected_ll(mle, model.truth());
        row.ell_frob = expected_ll(frob, model.truth());
        row.diff = row.ell_mle - row.ell_frob;
        report.trials.push_back(row);
    }

    double sum = 0.0, sumsq = 0.0;
    int positive = 0;
    for (const auto& t : report.trials) {
        sum += t.diff;
        sumsq += t.diff * t.diff;
        if (t.diff > 0.0) ++positive;
    }
    const double k = static_cast<double>(trials);
    report.mean_diff = sum / k;
    report.std_diff = trials > 1 ? std::sqrt((sumsq - sum * sum / k) / (k - 1.0)) : 0.0;
    report.fraction_positive = static_cast<double>(positive) / k;
    return report;
}

}  // namespace mlfm
