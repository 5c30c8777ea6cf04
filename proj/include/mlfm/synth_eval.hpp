#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "mlfm/em_fit.hpp"
#include "mlfm/mlr_matrix.hpp"

namespace mlfm {

/// Synthetic multilevel model configuration: factor entries are standard
/// normal and the noise variances are uniform on
/// [0, 2 (mean diag FF^T) / snr], matching a fixed signal-to-noise ratio.
struct SynthConfig {
    HierarchicalPartition partition;
    RankAllocation ranks;
    double snr = 4.0;
    int n_samples = 80;
    std::uint64_t seed = 0;

    void validate() const;
};

/// A generated ground-truth model plus its sampler. The model stream and the
/// sample stream are split from the seed independently, so redrawing data
/// never disturbs the truth.
class SynthModel {
public:
    SynthModel(PsdMlr truth, std::uint64_t seed) : truth_(std::move(truth)), seed_(seed) {}

    const PsdMlr& truth() const { return truth_; }

    /// Draw `count` samples y = F z + e from the truth. Distinct
    /// `sample_seed` values give independent datasets; the same value
    /// reproduces the dataset bit for bit.
    Dataset sample(int count, std::uint64_t sample_seed = 0) const;

private:
    PsdMlr truth_;
    std::uint64_t seed_;
};

SynthModel generate(const SynthConfig& cfg);

/// Expected log-likelihood of one sample from `truth` under `fit`:
///   -(n/2) log 2pi - 1/2 log det Sigma_fit - 1/2 Tr(Sigma_fit^{-1} Sigma_truth).
/// Structured O(n r^2) when the partitions share a shape, dense (cap-guarded)
/// otherwise.
double expected_ll(const PsdMlr& fit, const PsdMlr& truth, int cap = kDenseCap);

/// Second-order bridge between the average log-likelihood and the Frobenius
/// loss: l(S;Y)/N - 1/4 ||I - S^{-1} Sigma||_F^2 for a PD sample covariance S.
double quadratic_ll_approx(const Matrix& sample_cov, const PsdMlr& m, int cap = kDenseCap);

/// Analytic mean and standard deviation of the average log-likelihood of
/// n_samples draws from the model itself: mean = -(n/2) log 2pi
/// - 1/2 log det Sigma - n/2, std = sqrt(n / (2 N)).
std::pair<double, double> ll_mean_std_under_model(const PsdMlr& m, int n_samples);

/// One fitting-method comparison in the style of the synthetic study: per
/// trial, draw a dataset from the truth, fit with the single Frobenius sweep
/// (baseline) and with full EM started from it (MLE), and compare expected
/// log-likelihoods under the truth.
struct CompareReport {
    struct Trial {
        int trial;
        double ell_mle;
        double ell_frob;
        double diff;
    };
    std::vector<Trial> trials;
    double mean_diff = 0.0;
    double std_diff = 0.0;
    double fraction_positive = 0.0;

    /// CSV rows `trial,ell_mle,ell_frob,diff` with a header.
    void write_csv(std::ostream& os) const;
};

CompareReport compare_methods(const SynthConfig& cfg, int trials, std::uint64_t seed,
                              const EmOptions& opts = {});

}  // namespace mlfm
