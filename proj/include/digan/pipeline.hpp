#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "digan/cohort.hpp"
#include "digan/diffusion.hpp"
#include "digan/fidelity.hpp"
#include "digan/metrics.hpp"
#include "digan/sacnet.hpp"
#include "digan/sequence.hpp"

namespace digan {

struct LossConfig {
    double lambda = 0.0;   // positive/negative predicted-probability ratio weight
    double beta_mix = 1.0; // classifier weight in the combined objective
    int batch_size = 32;
    int epochs = 40;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    double augmentation_ratio = 0.0; // synthetic-to-real window ratio
};

struct ClassificationLossResult {
    Tensor loss;
    // Set when lambda > 0 but the batch held no negative samples, so the
    // ratio term was dropped for this batch.
    bool regularizer_skipped = false;
};

// Mean binary cross-entropy (probabilities clamped to [1e-7, 1-1e-7]) plus
// lambda times the ratio of summed positive-class to negative-class
// predicted probabilities.
ClassificationLossResult classification_loss(const Tensor& probs, const std::vector<int>& labels,
                                             double lambda);

double combined_loss(double l_diff, double l_cls, double beta_mix);

struct TrainingLog {
    std::vector<double> diffusion_epoch_loss;
    std::vector<double> classifier_epoch_loss; // L_cls per epoch
    std::vector<double> combined_epoch_loss;   // L_diff(final) + beta * L_cls
    long regularizer_skips = 0;
    std::size_t real_windows = 0;
    std::size_t synthetic_windows = 0;
};

struct PipelineConfig {
    Label negative_label = Label::NO;
    Label positive_label = Label::AD;
    int window_length = 2;

    // At desk-scale T the ramp must reach far enough that alpha_bar_T is
    // near zero, otherwise sampling starts from the wrong prior.
    int schedule_T = 100;
    double beta_start = 1e-4;
    double beta_end = 0.2;
    std::vector<Eigen::Index> denoiser_hidden = {64, 64};
    int diffusion_epochs = 300;
    int diffusion_batch_size = 64;
    double diffusion_lr = 1e-3;

    std::vector<Eigen::Index> channels = {8, 16, 32, 64};
    Eigen::Index attn_dim = 16;

    LossConfig loss;
    double f_thres = 0.5;
};

struct TrainedPipeline {
    Denoiser denoiser;
    Normalizer diffusion_normalizer;
    SacNetwork classifier;
    Normalizer classifier_normalizer;
    TrainingLog log;
};

// Stage 1 trains the denoiser on normalized visit rows; stage 2 synthesizes
// augmentation profiles at loss.augmentation_ratio, fits the classifier
// normalizer on real+synthetic windows jointly and trains the SAC network.
TrainedPipeline train_pipeline(const Cohort& train_cohort, const PipelineConfig& config);

struct DiffusionStage {
    Denoiser denoiser;
    Normalizer normalizer;
};

struct ClassifierStage {
    SacNetwork classifier;
    Normalizer normalizer;
    TrainingLog log;
};

// The two stages behind train_pipeline, exposed for the granular CLI paths.
DiffusionStage train_diffusion_stage(const Cohort& train_cohort, const PipelineConfig& config);
ClassifierStage train_classifier_stage(const Cohort& train_cohort, const PipelineConfig& config,
                                       const Denoiser& denoiser,
                                       const Normalizer& diffusion_normalizer);

// Synthetic profiles mirroring the (label, visit-count) mix of the reference
// cohort until at least target_windows windows are available.
Cohort synthesize_profiles(const Denoiser& denoiser, const NoiseSchedule& schedule,
                           const Normalizer& normalizer, const Cohort& reference,
                           std::size_t target_windows, int window_length, Rng& rng);

// Exactly n_profiles synthetic profiles mirroring the reference mix.
Cohort synthesize_n_profiles(const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const Normalizer& normalizer, const Cohort& reference,
                             std::size_t n_profiles, Rng& rng);

struct GroupMetrics {
    ConfusionCounts counts;
    MetricSet metrics;
};

struct EvalReport {
    std::string task;
    ConfusionCounts counts;
    MetricSet metrics;
    double auc = 0.0;
    std::vector<std::pair<double, double>> roc_points;
    std::vector<std::pair<double, double>> pr_points;
    std::map<std::string, GroupMetrics> by_sex;
    std::map<int, GroupMetrics> by_visit_count;
    std::size_t skipped_short_profiles = 0;
};

std::vector<SubjectDecision> evaluate_subjects(SacNetwork& network, const Normalizer& normalizer,
                                               const Cohort& cohort, int window_length,
                                               double f_thres);

EvalReport evaluate_pipeline(SacNetwork& network, const Normalizer& normalizer,
                             const Cohort& test_cohort, const PipelineConfig& config);

// Keeps only the task's two classes, optionally restricted to given visit
// counts.
Cohort filter_cohort(const Cohort& cohort, Label negative_label, Label positive_label,
                     const std::set<int>& visit_counts);

struct ExperimentResult {
    EvalReport report;
    TrainedPipeline pipeline;
    Cohort train_cohort;
    Cohort test_cohort;
};

// Filter -> split -> train -> evaluate, all deterministic under config.loss.seed.
ExperimentResult run_experiment(const Cohort& cohort, const PipelineConfig& config,
                                const std::set<int>& visit_counts, double train_frac);

// ---- run configuration (CLI) ------------------------------------------------

struct RunConfig {
    std::string task = "no-vs-ad"; // no-vs-mci | no-vs-ad
    std::string cohort_path;       // existing cohort file, or
    std::string cohort_spec_path;  // generator spec to build one on the fly
    std::string cohort_format = "csv";
    std::set<int> visit_filter;    // allowed n_i, empty = all
    double train_frac = 0.8;

    PipelineConfig pipeline;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
};

// Parses and validates; the seed is mandatory.
RunConfig run_config_from_json(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// ---- artifact writers ---------------------------------------------------------

void write_eval_report(const std::filesystem::path& path, const EvalReport& report);
void write_roc_csv(const std::filesystem::path& path, const EvalReport& report);
void write_pr_csv(const std::filesystem::path& path, const EvalReport& report);
void write_training_log(const std::filesystem::path& path, const TrainingLog& log);
void write_fidelity_json(const std::filesystem::path& path, const FidelityReport& report,
                         const std::vector<std::string>& feature_names);
void write_corr_diff_csv(const std::filesystem::path& path, const FidelityReport& report,
                         const std::vector<std::string>& feature_names);
void write_pca_csv(const std::filesystem::path& path, const FidelityReport& report);
// Per-unit mean-absolute-activation maps for every window of the cohort:
// unit,window_id,time_idx,feature_idx,activation
void write_embedding_maps(const std::filesystem::path& path, SacNetwork& network,
                          const Normalizer& normalizer, const Cohort& cohort, int window_length);
void write_split(const std::filesystem::path& path, const Cohort& train, const Cohort& test);
std::pair<std::vector<std::string>, std::vector<std::string>> read_split(
    const std::filesystem::path& path);

} // namespace digan
