#include <doctest.h>

#include "digan/rng.hpp"
#include "digan/sequence.hpp"

using namespace digan;

namespace {

Profile make_profile(int n_visits, Eigen::Index p, Rng& rng) {
    Profile profile;
    profile.subject_id = "s";
    profile.label = Label::MCI;
    for (int t = 1; t <= n_visits; ++t) {
        Visit visit;
        visit.visit_index = t;
        visit.age_offset_months = 12.0 * (t - 1);
        visit.features.resize(p);
        for (Eigen::Index k = 0; k < p; ++k) visit.features[k] = rng.normal();
        profile.visits.push_back(visit);
    }
    return profile;
}

} // namespace

TEST_CASE("extract_subsequences slides with stride one") {
    Rng rng(1);
    Profile profile = make_profile(4, 3, rng);
    auto windows = extract_subsequences(profile, 2);
    REQUIRE(windows.size() == 3);
    CHECK(windows[0].window_start == 1);
    CHECK(windows[1].window_start == 2);
    CHECK(windows[2].window_start == 3);
    for (const Window& w : windows) {
        CHECK(w.features.rows() == 2);
        CHECK(w.label == Label::MCI);
    }
    CHECK(windows[1].features.row(0) == profile.visits[1].features.transpose());
    CHECK(windows[1].features.row(1) == profile.visits[2].features.transpose());
}

TEST_CASE("window count and completeness") {
    Rng rng(2);
    Profile two = make_profile(2, 3, rng);
    auto whole = extract_subsequences(two, 2);
    REQUIRE(whole.size() == 1);
    CHECK(whole[0].features.row(0) == two.visits[0].features.transpose());
    CHECK(whole[0].features.row(1) == two.visits[1].features.transpose());

    // every visit of a longer profile appears in at least one window
    Profile four = make_profile(4, 2, rng);
    auto windows = extract_subsequences(four, 3);
    std::vector<bool> covered(4, false);
    for (const Window& w : windows) {
        for (int r = 0; r < 3; ++r) {
            covered[static_cast<std::size_t>(w.window_start - 1 + r)] = true;
        }
    }
    for (bool c : covered) CHECK(c);
}

TEST_CASE("profiles shorter than the window are an error") {
    Rng rng(3);
    Profile profile = make_profile(1, 3, rng);
    CHECK_THROWS_AS(extract_subsequences(profile, 2), ContractError);
}

TEST_CASE("normalizer gives zero mean unit variance on its fit data") {
    Rng rng(4);
    std::vector<Window> windows;
    for (int i = 0; i < 20; ++i) {
        Profile profile = make_profile(3, 5, rng);
        auto w = extract_subsequences(profile, 2);
        windows.insert(windows.end(), w.begin(), w.end());
    }
    Normalizer normalizer = Normalizer::fit(windows);
    auto normalized = normalizer.apply(windows);

    Eigen::Index rows = 0;
    for (const Window& w : normalized) rows += w.features.rows();
    Eigen::MatrixXd all(rows, 5);
    Eigen::Index at = 0;
    for (const Window& w : normalized) {
        all.middleRows(at, w.features.rows()) = w.features;
        at += w.features.rows();
    }
    for (Eigen::Index k = 0; k < 5; ++k) {
        const double mean = all.col(k).mean();
        const double var = (all.col(k).array() - mean).square().sum() / static_cast<double>(rows);
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);
    }
}

TEST_CASE("applying to held-out data does not mutate the normalizer") {
    Rng rng(5);
    std::vector<Window> train_windows = extract_subsequences(make_profile(4, 3, rng), 2);
    Normalizer normalizer = Normalizer::fit(train_windows);
    const Eigen::VectorXd mean_before = normalizer.mean();
    const Eigen::VectorXd std_before = normalizer.std();

    std::vector<Window> held_out = extract_subsequences(make_profile(4, 3, rng), 2);
    auto out = normalizer.apply(held_out);
    for (const Window& w : out) CHECK(w.features.allFinite());
    CHECK(normalizer.mean() == mean_before);
    CHECK(normalizer.std() == std_before);
}

TEST_CASE("constant features are floored, output zeros") {
    Window w;
    w.features = Eigen::MatrixXd::Constant(2, 3, 4.2);
    Normalizer normalizer = Normalizer::fit({w});
    CHECK((normalizer.std().array() == Normalizer::kStdFloor).all());
    auto out = normalizer.apply({w});
    CHECK(out[0].features.isZero());
}

TEST_CASE("apply is the documented affine map") {
    Rng rng(6);
    std::vector<Window> windows = extract_subsequences(make_profile(4, 4, rng), 2);
    Normalizer normalizer = Normalizer::fit(windows);

    const double a = 2.5, b = -1.75;
    Eigen::MatrixXd x = windows[0].features;
    Eigen::MatrixXd lhs = normalizer.apply(a * x + Eigen::MatrixXd::Constant(2, 4, b));
    // apply(a*x + b) = a/sigma * x + (b - mu)/sigma
    Eigen::MatrixXd rhs = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            rhs(r, c) = a / normalizer.std()[c] * x(r, c) +
                        (b - normalizer.mean()[c]) / normalizer.std()[c];
        }
    }
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

    // inverse round trip
    Eigen::VectorXd row = x.row(0);
    CHECK((normalizer.invert_row(normalizer.apply_row(row)) - row).cwiseAbs().maxCoeff() < 1e-12);
}
