#include "digan/pipeline.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "digan/io_util.hpp"
#include "digan/log.hpp"

namespace digan {

namespace {

using json = nlohmann::json;

constexpr double kProbClamp = 1e-7;

Cohort normalized_copy(const Cohort& cohort, const Normalizer& normalizer) {
    Cohort out = cohort;
    for (Profile& profile : out.profiles) {
        for (Visit& visit : profile.visits) {
            visit.features = normalizer.apply_row(visit.features);
        }
    }
    return out;
}

std::vector<int> binary_labels(const std::vector<Window>& windows, Label positive) {
    std::vector<int> labels;
    labels.reserve(windows.size());
    for (const Window& w : windows) labels.push_back(w.label == positive ? 1 : 0);
    return labels;
}

} // namespace

ClassificationLossResult classification_loss(const Tensor& probs, const std::vector<int>& labels,
                                             double lambda) {
    const Eigen::Index B = probs.size();
    if (B == 0) throw ContractError("classification_loss: empty batch");
    if (static_cast<Eigen::Index>(labels.size()) != B) {
        throw DimensionError("classification_loss: " + std::to_string(labels.size()) +
                             " labels for " + std::to_string(B) + " probabilities");
    }

    Eigen::VectorXd pos_mask(B), neg_mask(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        const bool positive = labels[static_cast<std::size_t>(i)] != 0;
        pos_mask[i] = positive ? 1.0 : 0.0;
        neg_mask[i] = positive ? 0.0 : 1.0;
    }
    Tensor flat = reshape(probs, {B});
    Tensor clamped = clamp(flat, kProbClamp, 1.0 - kProbClamp);
    Tensor pos = Tensor::from_flat({B}, pos_mask);
    Tensor neg = Tensor::from_flat({B}, neg_mask);

    // mean BCE
    Tensor log_p = log(clamped);
    Tensor log_1mp = log(affine(clamped, -1.0, 1.0));
    Tensor per_item = add(mul(pos, log_p), mul(neg, log_1mp));
    Tensor bce = scalar_mul(sum(per_item), -1.0 / static_cast<double>(B));

    ClassificationLossResult result{bce, false};
    if (lambda > 0.0) {
        if (neg_mask.sum() == 0.0) {
            result.regularizer_skipped = true;
        } else {
            Tensor ratio = div(sum(mul(flat, pos)), sum(mul(flat, neg)));
            result.loss = add(bce, scalar_mul(ratio, lambda));
        }
    }
    return result;
}

double combined_loss(double l_diff, double l_cls, double beta_mix) {
    if (!std::isfinite(l_diff) || !std::isfinite(l_cls)) {
        throw NumericError("combined_loss: non-finite inputs");
    }
    return l_diff + beta_mix * l_cls;
}

// ---- synthesis ------------------------------------------------------------------

namespace {

// Stage seed streams derived from the run seed, shared by the staged CLI
// paths and the one-shot pipeline so both produce identical artifacts.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return Rng(seed).split(stream).next_u64();
}

constexpr std::uint64_t kDiffusionStream = 1;
constexpr std::uint64_t kSynthesisStream = 2;
constexpr std::uint64_t kClassifierStream = 3;

Profile synthesize_one(const Denoiser& denoiser, const NoiseSchedule& schedule,
                       const Normalizer& normalizer, const Profile& ref, std::size_t counter,
                       Rng& rng) {
    std::vector<Condition> conditions;
    conditions.reserve(static_cast<std::size_t>(ref.n_visits()));
    for (int t = 1; t <= ref.n_visits(); ++t) conditions.push_back({ref.label, t});
    Profile profile = sample_profile(denoiser, schedule, conditions, rng,
                                     "synthetic-" + std::to_string(counter));
    profile.sex = ref.sex;
    for (Visit& visit : profile.visits) {
        visit.features = normalizer.invert_row(visit.features);
    }
    return profile;
}

} // namespace

Cohort synthesize_profiles(const Denoiser& denoiser, const NoiseSchedule& schedule,
                           const Normalizer& normalizer, const Cohort& reference,
                           std::size_t target_windows, int window_length, Rng& rng) {
    Cohort synth;
    synth.feature_names = reference.feature_names;
    synth.provenance = Provenance::synthetic;
    if (target_windows == 0 || reference.profiles.empty()) return synth;

    bool any_long_enough = false;
    for (const Profile& profile : reference.profiles) {
        any_long_enough |= profile.n_visits() >= window_length;
    }
    if (!any_long_enough) {
        throw ContractError("synthesize_profiles: no reference profile reaches window length");
    }

    std::size_t produced = 0;
    std::size_t cursor = 0;
    std::size_t counter = 0;
    while (produced < target_windows) {
        const Profile& ref = reference.profiles[cursor];
        cursor = (cursor + 1) % reference.profiles.size();
        const int n = ref.n_visits();
        if (n < window_length) continue;
        synth.profiles.push_back(
            synthesize_one(denoiser, schedule, normalizer, ref, ++counter, rng));
        produced += static_cast<std::size_t>(n - window_length + 1);
    }
    return synth;
}

Cohort synthesize_n_profiles(const Denoiser& denoiser, const NoiseSchedule& schedule,
                             const Normalizer& normalizer, const Cohort& reference,
                             std::size_t n_profiles, Rng& rng) {
    Cohort synth;
    synth.feature_names = reference.feature_names;
    synth.provenance = Provenance::synthetic;
    if (reference.profiles.empty() && n_profiles > 0) {
        throw ContractError("synthesize_n_profiles: empty reference cohort");
    }
    for (std::size_t i = 0; i < n_profiles; ++i) {
        const Profile& ref = reference.profiles[i % reference.profiles.size()];
        synth.profiles.push_back(synthesize_one(denoiser, schedule, normalizer, ref, i + 1, rng));
    }
    return synth;
}

// ---- training -------------------------------------------------------------------

DiffusionStage train_diffusion_stage(const Cohort& train_cohort, const PipelineConfig& config) {
    if (train_cohort.profiles.empty()) {
        throw ContractError("train_diffusion_stage: empty cohort");
    }
    DiffusionStage out;
    Eigen::Index n = 0;
    for (const Profile& profile : train_cohort.profiles) n += profile.n_visits();
    Eigen::MatrixXd rows(n, train_cohort.p());
    Eigen::Index at = 0;
    for (const Profile& profile : train_cohort.profiles) {
        for (const Visit& visit : profile.visits) rows.row(at++) = visit.features;
    }
    out.normalizer = Normalizer::fit_rows(rows);
    Cohort normalized_train = normalized_copy(train_cohort, out.normalizer);

    NoiseSchedule schedule = make_schedule(config.schedule_T, config.beta_start, config.beta_end);
    DiffusionTrainConfig diff_config;
    diff_config.epochs = config.diffusion_epochs;
    diff_config.batch_size = config.diffusion_batch_size;
    diff_config.lr = config.diffusion_lr;
    diff_config.seed = derive_seed(config.loss.seed, kDiffusionStream);
    diff_config.arch.p = train_cohort.p();
    diff_config.arch.hidden = config.denoiser_hidden;
    out.denoiser = train_denoiser(normalized_train, schedule, diff_config);
    return out;
}

ClassifierStage train_classifier_stage(const Cohort& train_cohort, const PipelineConfig& config,
                                       const Denoiser& denoiser,
                                       const Normalizer& diffusion_normalizer) {
    bool has_pos = false, has_neg = false;
    for (const Profile& profile : train_cohort.profiles) {
        has_pos |= profile.label == config.positive_label;
        has_neg |= profile.label == config.negative_label;
    }
    if (!has_pos || !has_neg) {
        throw ContractError("classifier training cohort lacks one of the task classes " +
                            to_string(config.negative_label) + "/" +
                            to_string(config.positive_label));
    }

    ClassifierStage out;
    out.log.diffusion_epoch_loss = denoiser.loss_trace;
    const double final_diffusion_loss =
        denoiser.loss_trace.empty() ? 0.0 : denoiser.loss_trace.back();

    std::vector<Window> windows = extract_cohort_windows(train_cohort, config.window_length);
    if (windows.empty()) {
        throw ContractError("no training windows of length " +
                            std::to_string(config.window_length));
    }
    out.log.real_windows = windows.size();

    if (config.loss.augmentation_ratio > 0.0) {
        NoiseSchedule schedule =
            make_schedule(config.schedule_T, config.beta_start, config.beta_end);
        const auto target = static_cast<std::size_t>(std::llround(
            config.loss.augmentation_ratio * static_cast<double>(windows.size())));
        Rng synth_rng(derive_seed(config.loss.seed, kSynthesisStream));
        Cohort synth = synthesize_profiles(denoiser, schedule, diffusion_normalizer, train_cohort,
                                           target, config.window_length, synth_rng);
        std::vector<Window> synth_windows = extract_cohort_windows(synth, config.window_length);
        out.log.synthetic_windows = synth_windows.size();
        windows.insert(windows.end(), std::make_move_iterator(synth_windows.begin()),
                       std::make_move_iterator(synth_windows.end()));
    }

    out.normalizer = Normalizer::fit(windows);
    std::vector<Window> normalized = out.normalizer.apply(windows);
    std::vector<int> labels = binary_labels(normalized, config.positive_label);

    SacNetworkConfig net_config;
    net_config.window_length = config.window_length;
    net_config.p = train_cohort.p();
    net_config.channels = config.channels;
    net_config.attn_dim = config.attn_dim;
    Rng cls_root(derive_seed(config.loss.seed, kClassifierStream));
    out.classifier = SacNetwork(net_config, cls_root.split(0));
    Rng train_rng = cls_root.split(1);

    std::vector<Tensor> params = out.classifier.parameters();
    AdamState adam = AdamState::make(params, config.loss.lr);

    const auto n = static_cast<Eigen::Index>(normalized.size());
    std::vector<std::size_t> order(normalized.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < config.loss.epochs; ++epoch) {
        for (std::size_t i = order.size() - 1; i > 0; --i) {
            const auto j =
                static_cast<std::size_t>(train_rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < n; start += config.loss.batch_size) {
            const Eigen::Index size = std::min<Eigen::Index>(config.loss.batch_size, n - start);
            std::vector<Eigen::MatrixXd> batch;
            std::vector<int> batch_labels;
            batch.reserve(static_cast<std::size_t>(size));
            for (Eigen::Index b = 0; b < size; ++b) {
                const std::size_t src = order[static_cast<std::size_t>(start + b)];
                batch.push_back(normalized[src].features);
                batch_labels.push_back(labels[src]);
            }
            zero_grads(params);
            Tensor probs = out.classifier.forward_batch(batch, Mode::train);
            ClassificationLossResult loss =
                classification_loss(probs, batch_labels, config.loss.lambda);
            if (loss.regularizer_skipped) ++out.log.regularizer_skips;
            backward(loss.loss);
            adam_step(params, adam);
            epoch_loss += loss.loss.item() * static_cast<double>(size);
        }
        const double l_cls = epoch_loss / static_cast<double>(n);
        out.log.classifier_epoch_loss.push_back(l_cls);
        out.log.combined_epoch_loss.push_back(
            combined_loss(final_diffusion_loss, l_cls, config.loss.beta_mix));
    }
    if (out.log.regularizer_skips > 0) {
        logging::warn("rate regularizer skipped for " +
                      std::to_string(out.log.regularizer_skips) + " batches with no negatives");
    }
    return out;
}

TrainedPipeline train_pipeline(const Cohort& train_cohort, const PipelineConfig& config) {
    bool has_pos = false, has_neg = false;
    for (const Profile& profile : train_cohort.profiles) {
        has_pos |= profile.label == config.positive_label;
        has_neg |= profile.label == config.negative_label;
    }
    if (!has_pos || !has_neg) {
        throw ContractError("train_pipeline: cohort lacks one of the task classes " +
                            to_string(config.negative_label) + "/" +
                            to_string(config.positive_label));
    }

    TrainedPipeline out;
    DiffusionStage stage1 = train_diffusion_stage(train_cohort, config);
    out.denoiser = std::move(stage1.denoiser);
    out.diffusion_normalizer = std::move(stage1.normalizer);

    ClassifierStage stage2 =
        train_classifier_stage(train_cohort, config, out.denoiser, out.diffusion_normalizer);
    out.classifier = std::move(stage2.classifier);
    out.classifier_normalizer = std::move(stage2.normalizer);
    out.log = std::move(stage2.log);
    return out;
}

// ---- evaluation -------------------------------------------------------------------

std::vector<SubjectDecision> evaluate_subjects(SacNetwork& network, const Normalizer& normalizer,
                                               const Cohort& cohort, int window_length,
                                               double f_thres) {
    std::vector<SubjectDecision> decisions;
    for (const Profile& profile : cohort.profiles) {
        if (profile.n_visits() < window_length) continue;
        std::vector<Eigen::MatrixXd> windows;
        for (const Window& w : extract_subsequences(profile, window_length)) {
            windows.push_back(normalizer.apply(w.features));
        }
        Eigen::VectorXd probs = network.forward_batch(windows, Mode::infer).data();
        std::vector<double> window_probs(probs.data(), probs.data() + probs.size());
        decisions.push_back(decide_subject(profile.subject_id, window_probs, f_thres));
    }
    return decisions;
}

EvalReport evaluate_pipeline(SacNetwork& network, const Normalizer& normalizer,
                             const Cohort& test_cohort, const PipelineConfig& config) {
    EvalReport report;
    report.task = to_string(config.negative_label) + "-vs-" + to_string(config.positive_label);

    std::map<std::string, const Profile*> profile_by_id;
    std::map<std::string, bool> truth;
    for (const Profile& profile : test_cohort.profiles) {
        profile_by_id[profile.subject_id] = &profile;
        truth[profile.subject_id] = profile.label == config.positive_label;
        if (profile.n_visits() < config.window_length) ++report.skipped_short_profiles;
    }

    std::vector<SubjectDecision> decisions =
        evaluate_subjects(network, normalizer, test_cohort, config.window_length, config.f_thres);
    if (decisions.empty()) throw ContractError("evaluate_pipeline: no evaluable subjects");

    report.counts = confusion_from_decisions(decisions, truth);
    report.metrics = metrics_from_counts(report.counts);

    std::vector<double> scores;
    std::vector<int> labels;
    for (const SubjectDecision& d : decisions) {
        scores.push_back(d.subject_prob);
        labels.push_back(truth.at(d.subject_id) ? 1 : 0);
    }
    RocResult roc = roc_auc(scores, labels);
    report.auc = roc.auc;
    report.roc_points = std::move(roc.points);
    report.pr_points = pr_curve(scores, labels);

    auto add_group = [&](auto& group_map, const auto& key, const SubjectDecision& d, bool actual) {
        ConfusionCounts& counts = group_map[key].counts;
        if (d.predicted_positive) {
            actual ? ++counts.tp : ++counts.fp;
        } else {
            actual ? ++counts.fn : ++counts.tn;
        }
    };
    for (const SubjectDecision& d : decisions) {
        const Profile* profile = profile_by_id.at(d.subject_id);
        const bool actual = truth.at(d.subject_id);
        add_group(report.by_sex, to_string(profile->sex), d, actual);
        add_group(report.by_visit_count, profile->n_visits(), d, actual);
    }
    for (auto& [key, group] : report.by_sex) group.metrics = metrics_from_counts(group.counts);
    for (auto& [key, group] : report.by_visit_count) {
        group.metrics = metrics_from_counts(group.counts);
    }
    return report;
}

Cohort filter_cohort(const Cohort& cohort, Label negative_label, Label positive_label,
                     const std::set<int>& visit_counts) {
    Cohort out;
    out.feature_names = cohort.feature_names;
    out.provenance = cohort.provenance;
    for (const Profile& profile : cohort.profiles) {
        if (profile.label != negative_label && profile.label != positive_label) continue;
        if (!visit_counts.empty() && visit_counts.count(profile.n_visits()) == 0) continue;
        out.profiles.push_back(profile);
    }
    return out;
}

ExperimentResult run_experiment(const Cohort& cohort, const PipelineConfig& config,
                                const std::set<int>& visit_counts, double train_frac) {
    Cohort filtered =
        filter_cohort(cohort, config.negative_label, config.positive_label, visit_counts);
    bool has_pos = false, has_neg = false;
    for (const Profile& profile : filtered.profiles) {
        has_pos |= profile.label == config.positive_label;
        has_neg |= profile.label == config.negative_label;
    }
    if (!has_pos || !has_neg) {
        throw ContractError("run_experiment: filtered cohort lacks a task class");
    }

    ExperimentResult result;
    auto [train, test] = split_stratified(filtered, train_frac, config.loss.seed);
    result.train_cohort = std::move(train);
    result.test_cohort = std::move(test);
    result.pipeline = train_pipeline(result.train_cohort, config);
    result.report = evaluate_pipeline(result.pipeline.classifier,
                                      result.pipeline.classifier_normalizer, result.test_cohort,
                                      config);
    return result;
}

// ---- run config ---------------------------------------------------------------------

RunConfig run_config_from_json(const std::string& json_text) {
    json obj;
    try {
        obj = json::parse(json_text);
    } catch (const json::exception& e) {
        throw SpecError(std::string("run config is not valid JSON: ") + e.what());
    }
    RunConfig config;
    try {
        if (!obj.contains("seed")) throw SpecError("run config must set a seed");
        config.seed = obj.at("seed").get<std::uint64_t>();
        config.pipeline.loss.seed = config.seed;

        config.task = obj.value("task", config.task);
        if (config.task == "no-vs-ad") {
            config.pipeline.positive_label = Label::AD;
        } else if (config.task == "no-vs-mci") {
            config.pipeline.positive_label = Label::MCI;
        } else {
            throw SpecError("unknown task '" + config.task + "'");
        }

        config.cohort_path = obj.value("cohort_path", "");
        config.cohort_spec_path = obj.value("cohort_spec_path", "");
        config.cohort_format = obj.value("cohort_format", "csv");
        if (config.cohort_format != "csv" && config.cohort_format != "jsonl") {
            throw SpecError("cohort_format must be csv or jsonl");
        }
        if (config.cohort_path.empty() == config.cohort_spec_path.empty()) {
            throw SpecError("run config needs exactly one of cohort_path or cohort_spec_path");
        }
        if (obj.contains("visit_filter")) {
            for (int v : obj.at("visit_filter").get<std::vector<int>>()) {
                config.visit_filter.insert(v);
            }
        }
        config.train_frac = obj.value("train_frac", config.train_frac);
        config.out_dir = obj.value("out_dir", config.out_dir);

        PipelineConfig& pipe = config.pipeline;
        pipe.window_length = obj.value("window_length", pipe.window_length);
        pipe.f_thres = obj.value("f_thres", pipe.f_thres);
        if (obj.contains("channels")) {
            const auto channels = obj.at("channels").get<std::vector<long>>();
            pipe.channels.assign(channels.begin(), channels.end());
        }
        pipe.attn_dim = obj.value("attn_dim", static_cast<long>(pipe.attn_dim));
        if (obj.contains("schedule")) {
            const json& s = obj.at("schedule");
            pipe.schedule_T = s.value("T", pipe.schedule_T);
            pipe.beta_start = s.value("beta_start", pipe.beta_start);
            pipe.beta_end = s.value("beta_end", pipe.beta_end);
        }
        if (obj.contains("denoiser_hidden")) {
            const auto hidden = obj.at("denoiser_hidden").get<std::vector<long>>();
            pipe.denoiser_hidden.assign(hidden.begin(), hidden.end());
        }
        pipe.diffusion_epochs = obj.value("diffusion_epochs", pipe.diffusion_epochs);
        pipe.diffusion_batch_size = obj.value("diffusion_batch_size", pipe.diffusion_batch_size);
        pipe.diffusion_lr = obj.value("diffusion_lr", pipe.diffusion_lr);

        LossConfig& loss = pipe.loss;
        loss.lambda = obj.value("lambda", loss.lambda);
        loss.beta_mix = obj.value("beta_mix", loss.beta_mix);
        loss.batch_size = obj.value("batch_size", loss.batch_size);
        loss.epochs = obj.value("epochs", loss.epochs);
        loss.lr = obj.value("lr", loss.lr);
        loss.augmentation_ratio = obj.value("augmentation_ratio", loss.augmentation_ratio);
        if (loss.lambda < 0.0 || loss.beta_mix < 0.0 || loss.augmentation_ratio < 0.0) {
            throw SpecError("lambda, beta_mix and augmentation_ratio must be >= 0");
        }
    } catch (const json::exception& e) {
        throw SpecError(std::string("bad run config: ") + e.what());
    }
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    return run_config_from_json(read_file(path));
}

// ---- artifact writers ------------------------------------------------------------------

namespace {

json metrics_json(const ConfusionCounts& counts, const MetricSet& metrics) {
    json obj;
    obj["counts"] = {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}};
    obj["accuracy"] = metrics.accuracy;
    obj["sensitivity"] = metrics.sensitivity;
    obj["specificity"] = metrics.specificity;
    obj["precision"] = metrics.precision;
    obj["f1"] = metrics.f1;
    obj["degenerate_precision"] = metrics.degenerate_precision;
    return obj;
}

json vector_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

} // namespace

void write_eval_report(const std::filesystem::path& path, const EvalReport& report) {
    json obj = metrics_json(report.counts, report.metrics);
    obj["task"] = report.task;
    obj["auc"] = report.auc;
    obj["skipped_short_profiles"] = report.skipped_short_profiles;
    for (const auto& [sex, group] : report.by_sex) {
        obj["by_sex"][sex] = metrics_json(group.counts, group.metrics);
    }
    for (const auto& [visits, group] : report.by_visit_count) {
        obj["by_visit_count"][std::to_string(visits)] = metrics_json(group.counts, group.metrics);
    }
    write_file_atomic(path, obj.dump(2) + "\n");
}

void write_roc_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ostringstream os;
    os << "fpr,tpr\n";
    for (const auto& [fpr, tpr] : report.roc_points) {
        os << format_double(fpr) << ',' << format_double(tpr) << '\n';
    }
    write_file_atomic(path, os.str());
}

void write_pr_csv(const std::filesystem::path& path, const EvalReport& report) {
    std::ostringstream os;
    os << "recall,precision\n";
    for (const auto& [recall, precision] : report.pr_points) {
        os << format_double(recall) << ',' << format_double(precision) << '\n';
    }
    write_file_atomic(path, os.str());
}

void write_training_log(const std::filesystem::path& path, const TrainingLog& log) {
    json obj;
    obj["diffusion_epoch_loss"] = log.diffusion_epoch_loss;
    obj["classifier_epoch_loss"] = log.classifier_epoch_loss;
    obj["combined_epoch_loss"] = log.combined_epoch_loss;
    obj["regularizer_skips"] = log.regularizer_skips;
    obj["real_windows"] = log.real_windows;
    obj["synthetic_windows"] = log.synthetic_windows;
    write_file_atomic(path, obj.dump(2) + "\n");
}

void write_fidelity_json(const std::filesystem::path& path, const FidelityReport& report,
                         const std::vector<std::string>& feature_names) {
    json obj;
    obj["feature_names"] = feature_names;
    obj["delta_mean"] = vector_json(report.delta_mean);
    obj["delta_std"] = vector_json(report.delta_std);
    obj["delta_skewness"] = vector_json(report.delta_skewness);
    obj["delta_kurtosis"] = vector_json(report.delta_kurtosis);
    obj["wasserstein"] = vector_json(report.wasserstein);
    obj["corr_diff"] = matrix_json(report.corr_diff);
    obj["pca_eigenvalues"] = vector_json(report.pca_eigenvalues);
    write_file_atomic(path, obj.dump(2) + "\n");
}

void write_corr_diff_csv(const std::filesystem::path& path, const FidelityReport& report,
                         const std::vector<std::string>& feature_names) {
    std::ostringstream os;
    os << "feature";
    for (const std::string& name : feature_names) os << ',' << name;
    os << '\n';
    for (Eigen::Index i = 0; i < report.corr_diff.rows(); ++i) {
        os << feature_names[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < report.corr_diff.cols(); ++j) {
            os << ',' << format_double(report.corr_diff(i, j));
        }
        os << '\n';
    }
    write_file_atomic(path, os.str());
}

void write_pca_csv(const std::filesystem::path& path, const FidelityReport& report) {
    std::ostringstream os;
    os << "pc1,pc2,source\n";
    for (Eigen::Index i = 0; i < report.projection.rows(); ++i) {
        const double pc2 = report.projection.cols() > 1 ? report.projection(i, 1) : 0.0;
        os << format_double(report.projection(i, 0)) << ',' << format_double(pc2) << ','
           << (report.projection_source[static_cast<std::size_t>(i)] == 0 ? "real" : "synthetic")
           << '\n';
    }
    write_file_atomic(path, os.str());
}

void write_embedding_maps(const std::filesystem::path& path, SacNetwork& network,
                          const Normalizer& normalizer, const Cohort& cohort, int window_length) {
    std::ostringstream os;
    os << "unit,window_id,time_idx,feature_idx,activation\n";
    for (const Profile& profile : cohort.profiles) {
        if (profile.n_visits() < window_length) continue;
        for (const Window& w : extract_subsequences(profile, window_length)) {
            const std::string window_id =
                w.subject_id + "#" + std::to_string(w.window_start);
            const auto maps = network.activation_maps(normalizer.apply(w.features));
            for (std::size_t unit = 0; unit < maps.size(); ++unit) {
                const Eigen::MatrixXd& map = maps[unit];
                for (Eigen::Index t = 0; t < map.rows(); ++t) {
                    for (Eigen::Index f = 0; f < map.cols(); ++f) {
                        os << (unit + 1) << ',' << window_id << ',' << t << ',' << f << ','
                           << format_double(map(t, f)) << '\n';
                    }
                }
            }
        }
    }
    write_file_atomic(path, os.str());
}

void write_split(const std::filesystem::path& path, const Cohort& train, const Cohort& test) {
    json obj;
    std::vector<std::string> train_ids, test_ids;
    for (const Profile& profile : train.profiles) train_ids.push_back(profile.subject_id);
    for (const Profile& profile : test.profiles) test_ids.push_back(profile.subject_id);
    obj["train"] = std::move(train_ids);
    obj["test"] = std::move(test_ids);
    write_file_atomic(path, obj.dump(2) + "\n");
}

std::pair<std::vector<std::string>, std::vector<std::string>> read_split(
    const std::filesystem::path& path) {
    try {
        json obj = json::parse(read_file(path));
        return {obj.at("train").get<std::vector<std::string>>(),
                obj.at("test").get<std::vector<std::string>>()};
    } catch (const json::exception& e) {
        throw IntegrityError("bad split file " + path.string() + ": " + e.what());
    }
}

} // namespace digan
