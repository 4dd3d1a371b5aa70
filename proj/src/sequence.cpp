#include "digan/sequence.hpp"

#include "digan/errors.hpp"
#include "digan/log.hpp"

namespace digan {

std::vector<Window> extract_subsequences(const Profile& profile, int window_length) {
    if (window_length < 1) throw ContractError("window length must be >= 1");
    const int n = profile.n_visits();
    if (n < window_length) {
        throw ContractError("subject " + profile.subject_id + " has " + std::to_string(n) +
                            " visits, fewer than window length " +
                            std::to_string(window_length));
    }
    const Eigen::Index p = profile.feature_dim();
    std::vector<Window> windows;
    windows.reserve(static_cast<std::size_t>(n - window_length + 1));
    for (int start = 0; start + window_length <= n; ++start) {
        Window w;
        w.subject_id = profile.subject_id;
        w.label = profile.label;
        w.sex = profile.sex;
        w.n_visits_in_profile = n;
        w.window_start = start + 1;
        w.features.resize(window_length, p);
        for (int r = 0; r < window_length; ++r) {
            w.features.row(r) = profile.visits[static_cast<std::size_t>(start + r)].features;
        }
        windows.push_back(std::move(w));
    }
    return windows;
}

std::vector<Window> extract_cohort_windows(const Cohort& cohort, int window_length,
                                           std::size_t* skipped) {
    std::vector<Window> windows;
    std::size_t short_profiles = 0;
    for (const Profile& profile : cohort.profiles) {
        if (profile.n_visits() < window_length) {
            ++short_profiles;
            continue;
        }
        auto w = extract_subsequences(profile, window_length);
        windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                       std::make_move_iterator(w.end()));
    }
    if (skipped != nullptr) *skipped = short_profiles;
    if (short_profiles > 0) {
        logging::debug(std::to_string(short_profiles) + " profiles shorter than window length " +
                       std::to_string(window_length) + " skipped");
    }
    return windows;
}

Normalizer Normalizer::fit(const std::vector<Window>& training_windows) {
    if (training_windows.empty()) throw ContractError("cannot fit normalizer on no windows");
    Eigen::Index rows = 0;
    for (const Window& w : training_windows) rows += w.features.rows();
    Eigen::MatrixXd all(rows, training_windows.front().features.cols());
    Eigen::Index at = 0;
    for (const Window& w : training_windows) {
        all.middleRows(at, w.features.rows()) = w.features;
        at += w.features.rows();
    }
    return fit_rows(all);
}

Normalizer Normalizer::fit_rows(const Eigen::MatrixXd& rows) {
    if (rows.rows() == 0) throw ContractError("cannot fit normalizer on no rows");
    Normalizer n;
    n.mean_ = rows.colwise().mean();
    Eigen::MatrixXd centered = rows.rowwise() - n.mean_.transpose();
    n.std_ = (centered.array().square().colwise().sum() /
              static_cast<double>(rows.rows()))
                 .sqrt();
    for (Eigen::Index k = 0; k < n.std_.size(); ++k) {
        if (n.std_[k] < kStdFloor) {
            logging::warn("feature " + std::to_string(k) + " is constant; std floored");
            n.std_[k] = kStdFloor;
        }
    }
    return n;
}

Normalizer Normalizer::from_moments(Eigen::VectorXd mean, Eigen::VectorXd std) {
    if (mean.size() != std.size()) throw ContractError("normalizer mean/std lengths differ");
    if ((std.array() <= 0.0).any()) throw ContractError("normalizer std must be positive");
    Normalizer n;
    n.mean_ = std::move(mean);
    n.std_ = std::move(std);
    return n;
}

Eigen::MatrixXd Normalizer::apply(const Eigen::MatrixXd& rows) const {
    return (rows.rowwise() - mean_.transpose()).array().rowwise() /
           std_.transpose().array();
}

std::vector<Window> Normalizer::apply(const std::vector<Window>& windows) const {
    std::vector<Window> out = windows;
    for (Window& w : out) w.features = apply(w.features);
    return out;
}

Eigen::VectorXd Normalizer::apply_row(const Eigen::VectorXd& row) const {
    return ((row - mean_).array() / std_.array()).matrix();
}

Eigen::VectorXd Normalizer::invert_row(const Eigen::VectorXd& row) const {
    return ((row.array() * std_.array()) + mean_.array()).matrix();
}

} // namespace digan
