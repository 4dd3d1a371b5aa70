#include "digan/fidelity.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "digan/errors.hpp"

namespace digan {

namespace {

constexpr double kTinyStd = 1e-300;

struct Moments {
    double mean, std, skewness, kurtosis;
};

Moments column_moments(const Eigen::VectorXd& col) {
    const double n = static_cast<double>(col.size());
    Moments m{};
    m.mean = col.mean();
    const Eigen::ArrayXd centered = col.array() - m.mean;
    const double var = centered.square().sum() / n;
    m.std = std::sqrt(var);
    const double denom = std::max(m.std, kTinyStd);
    m.skewness = (centered / denom).cube().sum() / n;
    m.kurtosis = (centered / denom).pow(4).sum() / n;
    return m;
}

} // namespace

double wasserstein_1d(Eigen::VectorXd a, Eigen::VectorXd b) {
    if (a.size() == 0 || b.size() == 0) throw ContractError("wasserstein_1d: empty sample");
    std::sort(a.data(), a.data() + a.size());
    std::sort(b.data(), b.data() + b.size());
    const Eigen::Index k = a.size() + b.size();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        const double q = (static_cast<double>(i) + 0.5) / static_cast<double>(k);
        const auto ia = std::min<Eigen::Index>(
            static_cast<Eigen::Index>(q * static_cast<double>(a.size())), a.size() - 1);
        const auto ib = std::min<Eigen::Index>(
            static_cast<Eigen::Index>(q * static_cast<double>(b.size())), b.size() - 1);
        acc += std::abs(a[ia] - b[ib]);
    }
    return acc / static_cast<double>(k);
}

Eigen::MatrixXd pearson_correlation(const Eigen::MatrixXd& samples) {
    const Eigen::Index p = samples.cols();
    const double n = static_cast<double>(samples.rows());
    Eigen::RowVectorXd mean = samples.colwise().mean();
    Eigen::MatrixXd centered = samples.rowwise() - mean;
    Eigen::VectorXd std = (centered.array().square().colwise().sum() / n).sqrt();
    Eigen::MatrixXd corr(p, p);
    for (Eigen::Index i = 0; i < p; ++i) {
        corr(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double denom = std::max(std[i] * std[j], kTinyStd);
            const double cov = centered.col(i).dot(centered.col(j)) / n;
            corr(i, j) = corr(j, i) = cov / denom;
        }
    }
    return corr;
}

FidelityReport fidelity_report(const Eigen::MatrixXd& real_samples,
                               const Eigen::MatrixXd& synth_samples) {
    if (real_samples.rows() == 0 || synth_samples.rows() == 0) {
        throw ContractError("fidelity_report: empty sample set");
    }
    if (real_samples.cols() != synth_samples.cols()) {
        throw DimensionError("fidelity_report: feature counts differ, " +
                             std::to_string(real_samples.cols()) + " vs " +
                             std::to_string(synth_samples.cols()));
    }
    const Eigen::Index p = real_samples.cols();

    FidelityReport report;
    report.delta_mean.resize(p);
    report.delta_std.resize(p);
    report.delta_skewness.resize(p);
    report.delta_kurtosis.resize(p);
    report.wasserstein.resize(p);
    for (Eigen::Index k = 0; k < p; ++k) {
        const Moments mr = column_moments(real_samples.col(k));
        const Moments ms = column_moments(synth_samples.col(k));
        report.delta_mean[k] = mr.mean - ms.mean;
        report.delta_std[k] = mr.std - ms.std;
        report.delta_skewness[k] = mr.skewness - ms.skewness;
        report.delta_kurtosis[k] = mr.kurtosis - ms.kurtosis;
        report.wasserstein[k] = wasserstein_1d(real_samples.col(k), synth_samples.col(k));
    }

    report.corr_real = pearson_correlation(real_samples);
    report.corr_synth = pearson_correlation(synth_samples);
    report.corr_diff = report.corr_real - report.corr_synth;

    // PCA of the pooled samples so both sets share one projection basis.
    const Eigen::Index n_real = real_samples.rows();
    const Eigen::Index n_synth = synth_samples.rows();
    Eigen::MatrixXd pooled(n_real + n_synth, p);
    pooled.topRows(n_real) = real_samples;
    pooled.bottomRows(n_synth) = synth_samples;
    Eigen::RowVectorXd mean = pooled.colwise().mean();
    Eigen::MatrixXd centered = pooled.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(pooled.rows());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const Eigen::Index n_comp = std::min<Eigen::Index>(2, p);
    report.pca_components.resize(p, n_comp);
    report.pca_eigenvalues.resize(n_comp);
    for (Eigen::Index c = 0; c < n_comp; ++c) {
        Eigen::VectorXd v = es.eigenvectors().col(p - 1 - c); // eigenvalues ascend
        Eigen::Index argmax = 0;
        v.cwiseAbs().maxCoeff(&argmax);
        if (v[argmax] < 0.0) v = -v;
        report.pca_components.col(c) = v;
        report.pca_eigenvalues[c] = es.eigenvalues()[p - 1 - c];
    }
    report.projection = centered * report.pca_components;
    report.projection_source.assign(static_cast<std::size_t>(n_real), 0);
    report.projection_source.insert(report.projection_source.end(),
                                    static_cast<std::size_t>(n_synth), 1);
    return report;
}

} // namespace digan
