#include <doctest.h>

#include <cmath>

#include "digan/fidelity.hpp"
#include "digan/metrics.hpp"
#include "digan/pipeline.hpp"
#include "test_util.hpp"

using namespace digan;

TEST_CASE("classification loss equals ln 2 for coin-flip probabilities") {
    Tensor probs = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 0.5, 0.5).finished());
    auto result = classification_loss(probs, {1, 0}, 0.0);
    CHECK(result.loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_FALSE(result.regularizer_skipped);
}

TEST_CASE("classification loss vanishes for confident correct predictions") {
    const double eps = 1e-9;
    Tensor probs = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 1.0 - eps, eps).finished());
    auto result = classification_loss(probs, {1, 0}, 0.0);
    // bounded below by the clamp at 1e-7
    CHECK(result.loss.item() < 1e-6);
}

TEST_CASE("rate regularizer adds the probability ratio") {
    Tensor probs = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 0.8, 0.4).finished());
    auto with = classification_loss(probs, {1, 0}, 0.1);
    // direct formula oracle for the BCE part
    const double bce = -0.5 * (std::log(0.8) + std::log(1.0 - 0.4));
    CHECK(with.loss.item() == doctest::Approx(bce + 0.1 * (0.8 / 0.4)).epsilon(1e-12));
}

TEST_CASE("regularizer is skipped when the batch has no negatives") {
    Tensor probs = Tensor::from_flat({2}, (Eigen::VectorXd(2) << 0.8, 0.7).finished());
    auto result = classification_loss(probs, {1, 1}, 0.5);
    CHECK(result.regularizer_skipped);
    const double bce = -0.5 * (std::log(0.8) + std::log(0.7));
    CHECK(result.loss.item() == doctest::Approx(bce).epsilon(1e-12));
}

TEST_CASE("classification loss with lambda zero equals the textbook BCE") {
    Rng rng(3);
    for (int it = 0; it < 50; ++it) {
        const auto n = static_cast<Eigen::Index>(rng.uniform_int(1, 16));
        Eigen::VectorXd p(n);
        std::vector<int> labels(static_cast<std::size_t>(n));
        bool has_pos = false;
        for (Eigen::Index i = 0; i < n; ++i) {
            p[i] = std::min(1.0 - 1e-7, std::max(1e-7, rng.uniform()));
            labels[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 0 : 1;
            has_pos |= labels[static_cast<std::size_t>(i)] == 1;
        }
        double direct = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            direct -= labels[static_cast<std::size_t>(i)] == 1 ? std::log(p[i])
                                                               : std::log(1.0 - p[i]);
        }
        direct /= static_cast<double>(n);
        auto result = classification_loss(Tensor::from_flat({n}, p), labels, 0.0);
        CHECK(std::abs(result.loss.item() - direct) < 1e-12);
    }
}

TEST_CASE("classification loss is differentiable through probabilities") {
    Rng rng(5);
    Tensor probs = Tensor::from_flat(
        {6}, (Eigen::VectorXd(6) << 0.2, 0.7, 0.4, 0.9, 0.15, 0.55).finished(), true);
    std::vector<int> labels{1, 0, 1, 1, 0, 0};
    auto build = [&] { return classification_loss(probs, labels, 0.2).loss; };
    CHECK(testutil::max_fd_rel_error(build, {probs}) < 1e-4);
}

TEST_CASE("combined loss is the weighted sum") {
    CHECK(combined_loss(1.0, 2.0, 0.0) == 1.0);
    CHECK(combined_loss(0.0, 3.25, 1.0) == 3.25);
    CHECK(combined_loss(0.3, 0.7, 2.0) == doctest::Approx(1.7).epsilon(1e-15));
}

TEST_CASE("confusion metrics on exact counts") {
    MetricSet perfect = metrics_from_counts({5, 0, 7, 0});
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.sensitivity == 1.0);
    CHECK(perfect.specificity == 1.0);
    CHECK(perfect.precision == 1.0);
    CHECK(perfect.f1 == 1.0);

    MetricSet half = metrics_from_counts({1, 1, 1, 1});
    CHECK(half.accuracy == 0.5);
    CHECK(half.sensitivity == 0.5);
    CHECK(half.specificity == 0.5);
    CHECK(half.precision == 0.5);
    CHECK(half.f1 == 0.5);

    MetricSet degenerate = metrics_from_counts({0, 0, 3, 2});
    CHECK(degenerate.precision == 0.0);
    CHECK(degenerate.degenerate_precision);
}

TEST_CASE("f1 identity holds on random confusion matrices") {
    Rng rng(7);
    for (int it = 0; it < 200; ++it) {
        ConfusionCounts c{rng.uniform_int(0, 30), rng.uniform_int(0, 30), rng.uniform_int(0, 30),
                          rng.uniform_int(0, 30)};
        if (c.total() == 0) continue;
        MetricSet m = metrics_from_counts(c);
        if (m.precision + m.sensitivity > 0.0) {
            CHECK(m.f1 == doctest::Approx(2.0 * m.precision * m.sensitivity /
                                          (m.precision + m.sensitivity))
                              .epsilon(1e-12));
        } else {
            CHECK(m.f1 == 0.0);
        }
    }
}

TEST_CASE("confusion alignment rejects unknown subjects") {
    std::vector<SubjectDecision> decisions{decide_subject("ghost", {0.9}, 0.5)};
    std::map<std::string, bool> truth{{"real", true}};
    CHECK_THROWS_AS(confusion_from_decisions(decisions, truth), ContractError);
}

TEST_CASE("roc_auc on the worked example and edge cases") {
    RocResult perfect = roc_auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
    CHECK(perfect.auc == doctest::Approx(1.0).epsilon(1e-12));

    RocResult mixed = roc_auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    CHECK(mixed.auc == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(testutil::auc_pair_count({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == 0.75);

    CHECK(mixed.points.front() == std::pair<double, double>(0.0, 0.0));
    CHECK(mixed.points.back() == std::pair<double, double>(1.0, 1.0));

    CHECK_THROWS_AS(roc_auc({0.3, 0.4}, {1, 1}), ContractError);
}

TEST_CASE("shuffled labels give a null AUC near one half") {
    Rng rng(11);
    const int n = 10000;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
        scores[static_cast<std::size_t>(i)] = rng.uniform();
        labels[static_cast<std::size_t>(i)] = rng.uniform() < 0.5 ? 1 : 0;
    }
    CHECK(std::abs(roc_auc(scores, labels).auc - 0.5) < 0.02);
}

TEST_CASE("trapezoid AUC equals brute-force pair counting with ties") {
    Rng rng(13);
    for (int it = 0; it < 100; ++it) {
        const auto n = static_cast<std::size_t>(rng.uniform_int(2, 200));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        bool pos = false, neg = false;
        for (std::size_t i = 0; i < n; ++i) {
            // quantized scores so ties actually occur
            scores[i] = std::round(rng.uniform() * 8.0) / 8.0;
            labels[i] = rng.uniform() < 0.4 ? 1 : 0;
            (labels[i] == 1 ? pos : neg) = true;
        }
        if (!pos) labels[0] = 1;
        if (!neg) labels[n - 1] = 0;
        const double trapezoid = roc_auc(scores, labels).auc;
        const double pairs = testutil::auc_pair_count(scores, labels);
        CHECK(std::abs(trapezoid - pairs) < 1e-9);
    }
}

TEST_CASE("roc is invariant under positive monotone transforms of the scores") {
    Rng rng(17);
    std::vector<double> scores(60);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.normal();
        labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    std::vector<double> transformed(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        transformed[i] = std::exp(2.0 * scores[i] + 1.0);
    }
    RocResult a = roc_auc(scores, labels);
    RocResult b = roc_auc(transformed, labels);
    CHECK(a.auc == doctest::Approx(b.auc).epsilon(1e-12));
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i] == b.points[i]);
    }
    auto pr_a = pr_curve(scores, labels);
    auto pr_b = pr_curve(transformed, labels);
    CHECK(pr_a == pr_b);
}

TEST_CASE("pr curve sweeps recall to one") {
    auto points = pr_curve({0.9, 0.8, 0.2, 0.1}, {1, 0, 1, 0});
    CHECK(points.front() == std::pair<double, double>(0.0, 1.0));
    CHECK(points.back().first == 1.0);
    for (std::size_t i = 1; i < points.size(); ++i) {
        CHECK(points[i].first >= points[i - 1].first);
    }
}

TEST_CASE("fidelity of a distribution against itself is exactly zero") {
    Rng rng(19);
    Eigen::MatrixXd x(40, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    FidelityReport report = fidelity_report(x, x);
    CHECK((report.delta_mean.array() == 0.0).all());
    CHECK((report.delta_std.array() == 0.0).all());
    CHECK((report.delta_skewness.array() == 0.0).all());
    CHECK((report.delta_kurtosis.array() == 0.0).all());
    CHECK((report.wasserstein.array() == 0.0).all());
    CHECK((report.corr_diff.array() == 0.0).all());
}

TEST_CASE("constant shift shows up in the mean delta only") {
    Rng rng(23);
    Eigen::MatrixXd real(200, 3);
    for (Eigen::Index i = 0; i < real.size(); ++i) real.data()[i] = rng.normal();
    Eigen::VectorXd shift(3);
    shift << 0.5, -1.0, 2.0;
    Eigen::MatrixXd synth = real.rowwise() + shift.transpose();
    FidelityReport report = fidelity_report(real, synth);
    for (Eigen::Index k = 0; k < 3; ++k) {
        CHECK(report.delta_mean[k] == doctest::Approx(-shift[k]).epsilon(1e-12));
        CHECK(std::abs(report.delta_std[k]) < 1e-12);
        CHECK(report.wasserstein[k] == doctest::Approx(std::abs(shift[k])).epsilon(1e-9));
        CHECK(std::abs(report.corr_diff(k, k)) == 0.0);
    }
    // differential correlation vanishes under a pure shift
    CHECK(report.corr_diff.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pca recovers the dominant direction of colinear data") {
    Rng rng(29);
    Eigen::MatrixXd data(100, 2);
    for (Eigen::Index i = 0; i < 100; ++i) {
        const double x = rng.normal();
        data(i, 0) = x;
        data(i, 1) = 2.0 * x;
    }
    FidelityReport report = fidelity_report(data, data);
    Eigen::Vector2d pc1 = report.pca_components.col(0);
    CHECK(pc1[0] == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-9));
    CHECK(pc1[1] == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-9));
    CHECK(report.pca_eigenvalues[1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(report.projection_source.size() == 200);
}

TEST_CASE("fidelity rejects mismatched feature counts") {
    Eigen::MatrixXd a(4, 3), b(4, 2);
    a.setZero();
    b.setZero();
    CHECK_THROWS_AS(fidelity_report(a, b), DimensionError);
}

TEST_CASE("wasserstein handles unequal sample counts") {
    Eigen::VectorXd a(4), b(2);
    a << 0.0, 1.0, 2.0, 3.0;
    b << 0.0, 1.0;
    const double d = wasserstein_1d(a, b);
    CHECK(d > 0.0);
    CHECK(std::isfinite(d));
    CHECK(wasserstein_1d(b, b) == 0.0);
}

namespace {

PipelineConfig tiny_pipeline_config(std::uint64_t seed) {
    PipelineConfig config;
    config.positive_label = Label::AD;
    config.window_length = 2;
    config.schedule_T = 10;
    config.denoiser_hidden = {16};
    config.diffusion_epochs = 4;
    config.diffusion_batch_size = 16;
    config.channels = {2, 3};
    config.attn_dim = 4;
    config.loss.epochs = 6;
    config.loss.batch_size = 16;
    config.loss.seed = seed;
    return config;
}

Cohort tiny_cohort(long per_class) {
    CohortSpec spec = table1_cohort_spec();
    spec.classes[Label::NO].count_male = per_class;
    spec.classes[Label::NO].count_female = 0;
    spec.classes[Label::AD].count_male = per_class;
    spec.classes[Label::AD].count_female = 0;
    spec.classes.erase(Label::MCI);
    return generate_synthetic_cohort(spec);
}

} // namespace

TEST_CASE("train_pipeline requires both task classes") {
    Cohort cohort = tiny_cohort(6);
    Cohort only_no = filter_cohort(cohort, Label::NO, Label::SCD, {});
    CHECK_THROWS_AS(train_pipeline(only_no, tiny_pipeline_config(1)), ContractError);
}

TEST_CASE("train_pipeline without augmentation still succeeds") {
    Cohort cohort = tiny_cohort(6);
    PipelineConfig config = tiny_pipeline_config(2);
    config.loss.augmentation_ratio = 0.0;
    TrainedPipeline pipeline = train_pipeline(cohort, config);
    CHECK(pipeline.log.synthetic_windows == 0);
    CHECK(pipeline.log.real_windows > 0);
    CHECK(pipeline.log.classifier_epoch_loss.size() == 6);
    CHECK(pipeline.log.combined_epoch_loss.size() == 6);
    // combined objective reweights the classifier term
    const double l_diff = pipeline.log.diffusion_epoch_loss.back();
    const double l_cls = pipeline.log.classifier_epoch_loss.back();
    CHECK(pipeline.log.combined_epoch_loss.back() ==
          doctest::Approx(combined_loss(l_diff, l_cls, config.loss.beta_mix)).epsilon(1e-12));
}

TEST_CASE("classifier loss trends down on the separable cohort") {
    Cohort cohort = tiny_cohort(12);
    PipelineConfig config = tiny_pipeline_config(3);
    config.loss.epochs = 5;
    TrainedPipeline pipeline = train_pipeline(cohort, config);
    const auto& loss = pipeline.log.classifier_epoch_loss;
    REQUIRE(loss.size() == 5);
    CHECK(loss.back() < loss.front());
    for (std::size_t i = 1; i < loss.size(); ++i) {
        CHECK(loss[i] <= loss[i - 1] + 0.05); // monotone within noise
    }
}

TEST_CASE("train_pipeline is bitwise deterministic under a fixed seed") {
    Cohort cohort = tiny_cohort(5);
    PipelineConfig config = tiny_pipeline_config(4);
    config.loss.augmentation_ratio = 0.5;
    TrainedPipeline a = train_pipeline(cohort, config);
    TrainedPipeline b = train_pipeline(cohort, config);
    CHECK(a.log.diffusion_epoch_loss == b.log.diffusion_epoch_loss);
    CHECK(a.log.classifier_epoch_loss == b.log.classifier_epoch_loss);
    auto pa = a.classifier.parameters();
    auto pb = b.classifier.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].data() == pb[i].data());
    CHECK(a.log.synthetic_windows == b.log.synthetic_windows);
    CHECK(a.log.synthetic_windows > 0);
}

TEST_CASE("run_experiment evaluates held-out subjects and fills groups") {
    Cohort cohort = tiny_cohort(10);
    PipelineConfig config = tiny_pipeline_config(5);
    ExperimentResult result = run_experiment(cohort, config, {}, 0.8);
    CHECK(result.report.counts.total() == 4); // 2 per class held out
    CHECK(result.report.by_sex.count("M") == 1);
    CHECK_FALSE(result.report.roc_points.empty());
    CHECK_FALSE(result.report.pr_points.empty());
    CHECK(result.report.task == "NO-vs-AD");

    CHECK_THROWS_AS(run_experiment(cohort, config, {9}, 0.8), ContractError);
}

TEST_CASE("run config parsing enforces the seed and task names") {
    CHECK_THROWS_AS(run_config_from_json("{"), SpecError);
    CHECK_THROWS_AS(run_config_from_json(R"({"task":"no-vs-ad","cohort_path":"x.csv"})"),
                    SpecError);
    CHECK_THROWS_AS(
        run_config_from_json(R"({"seed":1,"task":"bogus","cohort_path":"x.csv"})"), SpecError);
    CHECK_THROWS_AS(run_config_from_json(R"({"seed":1,"task":"no-vs-ad"})"), SpecError);

    RunConfig config = run_config_from_json(R"({
        "seed": 9, "task": "no-vs-mci", "cohort_path": "c.csv",
        "window_length": 2, "epochs": 3, "lambda": 0.25,
        "visit_filter": [3], "channels": [4, 8], "attn_dim": 6
    })");
    CHECK(config.seed == 9);
    CHECK(config.pipeline.positive_label == Label::MCI);
    CHECK(config.pipeline.loss.lambda == 0.25);
    CHECK(config.visit_filter == std::set<int>{3});
    CHECK(config.pipeline.channels == std::vector<Eigen::Index>{4, 8});
}
