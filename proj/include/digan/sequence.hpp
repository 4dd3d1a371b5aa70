#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "digan/cohort.hpp"

namespace digan {

// L consecutive visits of one subject, one visit per row.
struct Window {
    std::string subject_id;
    Label label = Label::NO;
    Sex sex = Sex::unknown;
    int n_visits_in_profile = 0;
    int window_start = 1; // visit position of the first row, 1-based
    Eigen::MatrixXd features; // L x p
};

// Sliding windows with stride 1; a profile with n visits yields n - L + 1
// windows. Throws ContractError when the profile is shorter than L.
std::vector<Window> extract_subsequences(const Profile& profile, int window_length);

// All windows of every profile that has at least L visits; profiles shorter
// than L are skipped and counted.
std::vector<Window> extract_cohort_windows(const Cohort& cohort, int window_length,
                                           std::size_t* skipped = nullptr);

// Per-feature z-score statistics fitted on training data only.
class Normalizer {
public:
    Normalizer() = default;

    static Normalizer fit(const std::vector<Window>& training_windows);
    // Fits on raw per-visit rows (used for the diffusion stage).
    static Normalizer fit_rows(const Eigen::MatrixXd& rows);
    // Rebuilds from stored statistics (checkpoint reload).
    static Normalizer from_moments(Eigen::VectorXd mean, Eigen::VectorXd std);

    Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
    std::vector<Window> apply(const std::vector<Window>& windows) const;
    Eigen::VectorXd apply_row(const Eigen::VectorXd& row) const;
    Eigen::VectorXd invert_row(const Eigen::VectorXd& row) const;

    const Eigen::VectorXd& mean() const { return mean_; }
    const Eigen::VectorXd& std() const { return std_; }
    Eigen::Index p() const { return mean_.size(); }

    static constexpr double kStdFloor = 1e-8;

private:
    Eigen::VectorXd mean_;
    Eigen::VectorXd std_;
};

} // namespace digan
