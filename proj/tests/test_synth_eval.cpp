#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>

#include "mlfm/em_fit.hpp"
#include "mlfm/rng.hpp"
#include "mlfm/smw_inverse.hpp"
#include "mlfm/synth_eval.hpp"
#include "support.hpp"

using namespace mlfm;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Split every parent group into `mult` near-even children.
std::vector<int> split_level(const std::vector<int>& parents, int mult) {
    std::vector<int> out;
    for (int parent : parents) {
        int base = parent / mult, rem = parent % mult;
        for (int j = 0; j < mult; ++j) out.push_back(base + (j < rem ? 1 : 0));
    }
    return out;
}

// The synthetic-study shape: group counts (1, 4, 8, 16, 32, n).
HierarchicalPartition study_partition(int n) {
    std::vector<std::vector<int>> sizes{{n}};
    for (int mult : {4, 2, 2, 2}) sizes.push_back(split_level(sizes.back(), mult));
    sizes.push_back(std::vector<int>(n, 1));
    return HierarchicalPartition(n, sizes);
}

}  // namespace

TEST_CASE("study-scale configuration yields s = 174 factor columns") {
    auto part = study_partition(10000);
    RankAllocation ranks({10, 5, 4, 3, 2, 1});
    CHECK(ranks.factor_cols(part) == 174);
    SynthModel sm = generate(SynthConfig{part, ranks, 4.0, 80, 1});
    CHECK(sm.truth().pack_compressed().fbar.cols() == ranks.mlr_rank() - 1);
    CHECK((sm.truth().d().array() > 0.0).all());
}

TEST_CASE("snr controls the noise interval") {
    auto part = study_partition(200);
    RankAllocation ranks({10, 5, 4, 3, 2, 1});
    SynthModel lo = generate(SynthConfig{part, ranks, 4.0, 10, 7});
    SynthModel hi = generate(SynthConfig{part, ranks, 1e9, 10, 7});
    // d_i ~ U[0, 2 mean(diag FF^T)/snr]: at enormous snr the interval collapses
    double signal = (lo.truth().diagonal() - lo.truth().d()).mean();
    CHECK(hi.truth().d().maxCoeff() <= 2.0 * signal / 1e9 + 1e-12);
    CHECK(lo.truth().d().maxCoeff() <= 2.0 * signal / 4.0 * (1.0 + 1e-9));
    CHECK(lo.truth().d().maxCoeff() > 0.1 * signal / 4.0);  // not degenerate
}

TEST_CASE("sampler moments match the model at Monte Carlo accuracy") {
    auto part = study_partition(500);
    RankAllocation ranks({10, 5, 4, 3, 2, 1});
    SynthModel sm = generate(SynthConfig{part, ranks, 4.0, 80, 11});
    const int nsamp = 2000;
    Dataset data = sm.sample(nsamp, 5);
    Vector want = sm.truth().diagonal();  // diag(FF^T) + d
    Vector got = data.y.colwise().squaredNorm().transpose() / nsamp;
    // sample variance of a squared normal: se = var * sqrt(2/N)
    int violations = 0;
    for (int j = 0; j < 500; ++j) {
        double se = want[j] * std::sqrt(2.0 / nsamp);
        if (std::abs(got[j] - want[j]) > 3.0 * se) ++violations;
    }
    // 3-sigma: expect ~0.3% violations; allow a small multiple
    CHECK(violations <= 8);
}

TEST_CASE("generation and sampling are bit-reproducible") {
    auto part = study_partition(120);
    RankAllocation ranks({4, 3, 2, 2, 1, 1});
    SynthConfig cfg{part, ranks, 4.0, 16, 99};
    SynthModel a = generate(cfg);
    SynthModel b = generate(cfg);
    CHECK(a.truth().pack_compressed().fbar == b.truth().pack_compressed().fbar);
    CHECK(a.truth().d() == b.truth().d());
    CHECK(a.sample(16, 3).y == b.sample(16, 3).y);
    // different sample seeds give different data, same truth
    CHECK(a.sample(16, 3).y != a.sample(16, 4).y);
}

TEST_CASE("expected log-likelihood closed forms and dense oracle") {
    CounterRng rng(401, 1);
    auto part = test::random_partition(rng, 40, 3);
    auto ranks = test::random_ranks(rng, 3, 3);
    auto truth = test::random_model(rng, part, ranks);

    // self-evaluation identity: trace term equals n
    double self_ll = expected_ll(truth, truth);
    double want = -0.5 * (40.0 * kLog2Pi + invert(truth).logdet() + 40.0);
    CHECK(self_ll == doctest::Approx(want).epsilon(1e-12));

    // identity model vs identity truth
    HierarchicalPartition pid(4, {{4}, {1, 1, 1, 1}});
    PsdMlr ident = PsdMlr::diagonal_model(pid, RankAllocation({0, 1}), Vector::Ones(4));
    CHECK(expected_ll(ident, ident) == doctest::Approx(-0.5 * 4 * (kLog2Pi + 1.0)));

    // random pair against the dense formula
    auto fit = test::random_model(rng, part, test::random_ranks(rng, 3, 2));
    Matrix sf = fit.to_dense(), st = truth.to_dense();
    Eigen::LLT<Matrix> llt(sf);
    double logdet = 2.0 * Matrix(llt.matrixL()).diagonal().array().log().sum();
    double dense = -0.5 * (40.0 * kLog2Pi + logdet + llt.solve(st).trace());
    CHECK(expected_ll(fit, truth) == doctest::Approx(dense).epsilon(1e-9));

    // mismatched partitions fall back to the dense path
    auto part2 = test::random_partition(rng, 40, 4);
    auto fit2 = test::random_model(rng, part2, test::random_ranks(rng, 4, 2));
    Matrix sf2 = fit2.to_dense();
    Eigen::LLT<Matrix> llt2(sf2);
    double dense2 = -0.5 * (40.0 * kLog2Pi +
                            2.0 * Matrix(llt2.matrixL()).diagonal().array().log().sum() +
                            llt2.solve(st).trace());
    CHECK(expected_ll(fit2, truth) == doctest::Approx(dense2).epsilon(1e-9));

    CHECK_THROWS_AS(expected_ll(ident, truth), StructuralError);
}

TEST_CASE("gibbs inequality: the truth maximizes expected log-likelihood") {
    CounterRng rng(409, 2);
    auto part = test::random_partition(rng, 30, 3);
    auto ranks = test::random_ranks(rng, 3, 2);
    auto truth = test::random_model(rng, part, ranks);
    double best = expected_ll(truth, truth);
    for (int rep = 0; rep < 10; ++rep) {
        auto other = test::random_model(rng, part, ranks);
        CHECK(expected_ll(other, truth) <= best + 1e-8);
    }
}

TEST_CASE("quadratic approximation: exactness and hand arithmetic") {
    CounterRng rng(419, 3);
    auto part = test::random_partition(rng, 12, 3);
    auto ranks = test::random_ranks(rng, 3, 2);
    auto m = test::random_model(rng, part, ranks);
    Matrix s = m.to_dense();
    const int n = 12;
    Eigen::LDLT<Matrix> ldlt(s);
    double ll_s = -0.5 * (n * kLog2Pi + ldlt.vectorD().array().log().sum() + n);
    // Sigma = S: zero correction
    CHECK(quadratic_ll_approx(s, m) == doctest::Approx(ll_s).epsilon(1e-12));

    // Sigma = 2S with S = I at n = 2: correction n/4 = 0.5
    HierarchicalPartition p2(2, {{2}, {1, 1}});
    PsdMlr two = PsdMlr::diagonal_model(p2, RankAllocation({0, 1}), 2.0 * Vector::Ones(2));
    double base = -0.5 * 2.0 * kLog2Pi - 1.0;  // l(I;Y)/N at n=2
    CHECK(quadratic_ll_approx(Matrix::Identity(2, 2), two) ==
          doctest::Approx(base - 0.5).epsilon(1e-12));

    // singular S is rejected with advice
    Matrix sing = Matrix::Zero(12, 12);
    CHECK_THROWS_WITH_AS(quadratic_ll_approx(sing, m), doctest::Contains("shrinkage"),
                         DomainError);
}

TEST_CASE("quadratic approximation remainder decays cubically") {
    CounterRng rng(421, 4);
    auto part = test::random_partition(rng, 30, 3);
    RankAllocation ranks({2, 1, 1});
    for (int rep = 0; rep < 3; ++rep) {
        auto m0 = test::random_model(rng, part, ranks);
        Matrix s = m0.to_dense();
        CompressedForm base = m0.pack_compressed();
        Matrix gdir(base.fbar.rows(), base.fbar.cols());
        for (int i = 0; i < gdir.size(); ++i)
            gdir(i % gdir.rows(), i / gdir.rows()) = rng.normal();
        Vector edir(base.d.size());
        for (int i = 0; i < edir.size(); ++i) edir[i] = rng.normal();

        double prev = -1.0;
        for (double t : {1e-1, 5e-2, 2.5e-2}) {
            CompressedForm c = base;
            c.fbar += t * gdir;
            c.d = (base.d + t * edir.cwiseAbs().cwiseProduct(base.d)).cwiseMax(1e-6);
            PsdMlr m = PsdMlr::unpack_compressed(part, ranks, c);
            Matrix sig = m.to_dense();
            Eigen::LDLT<Matrix> ldlt(sig);
            double exact = -0.5 * (30.0 * kLog2Pi + ldlt.vectorD().array().log().sum() +
                                   ldlt.solve(s).trace());
            double rem = std::abs(exact - quadratic_ll_approx(s, m));
            if (prev > 0.0) {
                double ratio = prev / rem;
                CHECK(ratio >= 4.0);
                CHECK(ratio <= 16.0);
            }
            prev = rem;
        }
    }
}

TEST_CASE("average log-likelihood mean and std under the model") {
    // pure formula at the asset-study scale
    HierarchicalPartition p(5000, {{5000}, std::vector<int>(5000, 1)});
    PsdMlr m = PsdMlr::diagonal_model(p, RankAllocation({0, 1}), Vector::Ones(5000));
    auto [mean, sd] = ll_mean_std_under_model(m, 300);
    CHECK(std::abs(sd - 2.887) <= 0.001);
    CHECK(mean == doctest::Approx(-0.5 * 5000 * (kLog2Pi + 1.0)));

    // n = 2N makes the std exactly 1
    HierarchicalPartition p2(20, {{20}, std::vector<int>(20, 1)});
    PsdMlr m2 = PsdMlr::diagonal_model(p2, RankAllocation({0, 1}), Vector::Ones(20));
    CHECK(ll_mean_std_under_model(m2, 10).second == doctest::Approx(1.0));
}

TEST_CASE("monte carlo check of the likelihood variance heuristic") {
    CounterRng rng(431, 5);
    auto part = test::random_partition(rng, 200, 3);
    auto ranks = test::random_ranks(rng, 3, 2);
    auto truth = test::random_model(rng, part, ranks);
    SynthModel sm(truth, 17);
    const int nsamp = 50, resamples = 2000;
    InverseMlr inv = invert(truth);
    auto [mean, sd] = ll_mean_std_under_model(truth, nsamp);

    double acc = 0.0, acc2 = 0.0;
    for (int rep = 0; rep < resamples; ++rep) {
        Dataset data = sm.sample(nsamp, 1000 + rep);
        double avg_ll = log_likelihood(inv, data) / nsamp;
        acc += avg_ll;
        acc2 += avg_ll * avg_ll;
    }
    double mc_mean = acc / resamples;
    double mc_sd = std::sqrt((acc2 - acc * acc / resamples) / (resamples - 1));
    CHECK(std::abs(mc_sd - sd) <= 0.10 * sd);
    CHECK(std::abs(mc_mean - mean) <= 3.0 * mc_sd / std::sqrt(double(resamples)));
}

TEST_CASE("compare_methods bookkeeping") {
    auto part = study_partition(96);
    RankAllocation ranks({3, 2, 2, 1, 1, 1});
    SynthConfig cfg{part, ranks, 4.0, 40, 5};

    CHECK(compare_methods(cfg, 0, 1).trials.empty());

    EmOptions opts;
    opts.max_iters = 60;
    CompareReport rep = compare_methods(cfg, 3, 1, opts);
    REQUIRE(rep.trials.size() == 3);
    int positive = 0;
    double sum = 0.0;
    for (const auto& t : rep.trials) {
        CHECK(t.diff == doctest::Approx(t.ell_mle - t.ell_frob));
        if (t.diff > 0) ++positive;
        sum += t.diff;
    }
    CHECK(rep.fraction_positive == doctest::Approx(positive / 3.0));
    CHECK(rep.mean_diff == doctest::Approx(sum / 3.0));
}

TEST_CASE("EM warm-started from the frobenius baseline cannot lose observed likelihood") {
    auto part = study_partition(96);
    RankAllocation ranks({3, 2, 2, 1, 1, 1});
    SynthConfig cfg{part, ranks, 4.0, 40, 5};
    SynthModel sm = generate(cfg);
    Dataset data = sm.sample(cfg.n_samples, 77);
    PsdMlr frob = init_frobenius_sweep(data, part, ranks);
    EmOptions opts;
    opts.init = InitKind::Warm;
    opts.warm = std::make_shared<PsdMlr>(frob);
    auto [mle, trace] = fit(data, part, ranks, opts);
    CHECK(log_likelihood(mle, data) >=
          log_likelihood(frob, data) - 1e-7 * std::abs(log_likelihood(frob, data)));
}
