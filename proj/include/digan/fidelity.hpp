#pragma once

#include <Eigen/Dense>

#include <vector>

namespace digan {

// Real-vs-synthetic comparison: per-feature moment deltas (real - synthetic),
// sorted-sample 1-D Wasserstein distances, differential Pearson correlation,
// and a shared 2-component PCA projection of the pooled samples.
struct FidelityReport {
    Eigen::VectorXd delta_mean;
    Eigen::VectorXd delta_std;
    Eigen::VectorXd delta_skewness;
    Eigen::VectorXd delta_kurtosis;
    Eigen::VectorXd wasserstein;

    Eigen::MatrixXd corr_real;
    Eigen::MatrixXd corr_synth;
    Eigen::MatrixXd corr_diff; // real - synthetic; symmetric, zero diagonal

    Eigen::MatrixXd pca_components;  // p x 2, sign fixed (largest-|entry| positive)
    Eigen::VectorXd pca_eigenvalues; // descending
    Eigen::MatrixXd projection;      // pooled samples x 2, real rows first
    std::vector<int> projection_source; // 0 = real, 1 = synthetic
};

FidelityReport fidelity_report(const Eigen::MatrixXd& real_samples,
                               const Eigen::MatrixXd& synth_samples);

// Empirical 1-D Wasserstein-1 between two samples via quantile functions on a
// common grid; exact mean |x_(i) - y_(i)| for equal sizes.
double wasserstein_1d(Eigen::VectorXd a, Eigen::VectorXd b);

Eigen::MatrixXd pearson_correlation(const Eigen::MatrixXd& samples);

} // namespace digan
