#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "digan/checkpoint.hpp"
#include "digan/cohort.hpp"
#include "digan/io_util.hpp"
#include "digan/log.hpp"
#include "digan/pipeline.hpp"

namespace fs = std::filesystem;
using namespace digan;

namespace {

FileFormat parse_format(const std::string& format) {
    if (format == "csv") return FileFormat::csv;
    if (format == "jsonl") return FileFormat::jsonl;
    throw SpecError("unknown cohort format '" + format + "' (csv|jsonl)");
}

struct Overrides {
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string task;
};

RunConfig resolve_config(const std::string& config_path, const Overrides& overrides) {
    RunConfig config = load_run_config(config_path);
    if (!overrides.out_dir.empty()) config.out_dir = overrides.out_dir;
    if (overrides.seed.has_value()) {
        config.seed = *overrides.seed;
        config.pipeline.loss.seed = *overrides.seed;
    }
    if (!overrides.task.empty()) {
        config.task = overrides.task;
        if (overrides.task == "no-vs-ad") {
            config.pipeline.positive_label = Label::AD;
        } else if (overrides.task == "no-vs-mci") {
            config.pipeline.positive_label = Label::MCI;
        } else {
            throw SpecError("unknown task '" + overrides.task + "'");
        }
    }
    return config;
}

Cohort load_config_cohort(const RunConfig& config) {
    if (!config.cohort_path.empty()) {
        return load_cohort(config.cohort_path, parse_format(config.cohort_format));
    }
    CohortSpec spec = cohort_spec_from_json(read_file(config.cohort_spec_path));
    return generate_synthetic_cohort(spec);
}

struct PreparedData {
    Cohort train;
    Cohort test;
};

PreparedData prepare_split(const RunConfig& config) {
    Cohort cohort = load_config_cohort(config);
    Cohort filtered = filter_cohort(cohort, config.pipeline.negative_label,
                                    config.pipeline.positive_label, config.visit_filter);
    if (filtered.profiles.empty()) {
        throw ContractError("no subjects left after task/visit filtering");
    }
    auto [train, test] = split_stratified(filtered, config.train_frac, config.seed);
    return {std::move(train), std::move(test)};
}

Cohort cohort_from_ids(const Cohort& cohort, const std::vector<std::string>& ids) {
    std::map<std::string, const Profile*> by_id;
    for (const Profile& profile : cohort.profiles) by_id[profile.subject_id] = &profile;
    Cohort out;
    out.feature_names = cohort.feature_names;
    out.provenance = cohort.provenance;
    for (const std::string& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) {
            throw SpecError("split references subject '" + id +
                            "' that the configured cohort does not contain");
        }
        out.profiles.push_back(*it->second);
    }
    return out;
}

void check_classifier_compat(const RunConfig& config, const SacNetwork& network,
                             Eigen::Index cohort_p) {
    const SacNetworkConfig& net = network.config();
    const PipelineConfig& pipe = config.pipeline;
    if (net.window_length != pipe.window_length || net.p != cohort_p ||
        net.channels != pipe.channels || net.attn_dim != pipe.attn_dim) {
        throw SpecError("checkpoint hyperparameters do not match the run config");
    }
}

void print_counts(const Cohort& cohort) {
    std::map<Label, long> subjects;
    std::map<Label, long> visits;
    for (const Profile& profile : cohort.profiles) {
        subjects[profile.label] += 1;
        visits[profile.label] += profile.n_visits();
    }
    for (const auto& [label, count] : subjects) {
        std::printf("%s: %ld subjects, %ld visits\n", to_string(label).c_str(), count,
                    visits[label]);
    }
    std::printf("total: %zu subjects\n", cohort.profiles.size());
}

// ---- subcommands -----------------------------------------------------------

int cmd_generate(const std::string& spec_path, const std::string& out_path,
                 const std::string& format) {
    CohortSpec spec = cohort_spec_from_json(read_file(spec_path));
    Cohort cohort = generate_synthetic_cohort(spec);
    write_cohort(cohort, out_path, parse_format(format));
    if (cohort.profiles.empty()) {
        logging::warn("cohort spec produced zero subjects");
    }
    print_counts(cohort);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int cmd_train(const std::string& config_path, const Overrides& overrides, bool diffusion_only,
              bool classifier_only, const std::string& checkpoint_dir) {
    RunConfig config = resolve_config(config_path, overrides);
    PreparedData data = prepare_split(config);
    const fs::path out_dir = config.out_dir;
    fs::create_directories(out_dir);

    write_split(out_dir / "split.json", data.train, data.test);

    if (classifier_only) {
        Denoiser denoiser;
        Normalizer diffusion_normalizer;
        const fs::path ckpt = checkpoint_dir.empty() ? out_dir : fs::path(checkpoint_dir);
        if (fs::exists(ckpt / "denoiser.json")) {
            DenoiserCheckpoint loaded = load_denoiser(ckpt);
            denoiser = std::move(loaded.denoiser);
            diffusion_normalizer = load_normalizer(ckpt / "normalizer_diffusion.json");
        } else if (config.pipeline.loss.augmentation_ratio > 0.0) {
            throw SpecError("augmentation requires a denoiser checkpoint in " + ckpt.string());
        }
        ClassifierStage stage =
            train_classifier_stage(data.train, config.pipeline, denoiser, diffusion_normalizer);
        save_sacnet(out_dir, stage.classifier, stage.log.classifier_epoch_loss, config.seed);
        save_normalizer(out_dir / "normalizer_classifier.json", stage.normalizer);
        write_training_log(out_dir / "training_log.json", stage.log);
        std::printf("classifier trained on %zu real + %zu synthetic windows\n",
                    stage.log.real_windows, stage.log.synthetic_windows);
        return 0;
    }

    if (diffusion_only) {
        DiffusionStage stage = train_diffusion_stage(data.train, config.pipeline);
        save_denoiser(out_dir, stage.denoiser, config.pipeline.schedule_T,
                      config.pipeline.beta_start, config.pipeline.beta_end, config.seed);
        save_normalizer(out_dir / "normalizer_diffusion.json", stage.normalizer);
        TrainingLog log;
        log.diffusion_epoch_loss = stage.denoiser.loss_trace;
        write_training_log(out_dir / "training_log.json", log);
        std::printf("diffusion loss %.6f after %zu epochs\n",
                    stage.denoiser.loss_trace.empty() ? 0.0 : stage.denoiser.loss_trace.back(),
                    stage.denoiser.loss_trace.size());
        return 0;
    }

    TrainedPipeline pipeline = train_pipeline(data.train, config.pipeline);
    save_denoiser(out_dir, pipeline.denoiser, config.pipeline.schedule_T,
                  config.pipeline.beta_start, config.pipeline.beta_end, config.seed);
    save_normalizer(out_dir / "normalizer_diffusion.json", pipeline.diffusion_normalizer);
    save_sacnet(out_dir, pipeline.classifier, pipeline.log.classifier_epoch_loss, config.seed);
    save_normalizer(out_dir / "normalizer_classifier.json", pipeline.classifier_normalizer);
    write_training_log(out_dir / "training_log.json", pipeline.log);
    std::printf("trained %s: diffusion loss %.6f, classifier loss %.6f\n", config.task.c_str(),
                pipeline.log.diffusion_epoch_loss.empty()
                    ? 0.0
                    : pipeline.log.diffusion_epoch_loss.back(),
                pipeline.log.classifier_epoch_loss.empty()
                    ? 0.0
                    : pipeline.log.classifier_epoch_loss.back());
    return 0;
}

int cmd_synthesize(const std::string& config_path, const Overrides& overrides,
                   const std::string& checkpoint_dir, const std::string& out_path,
                   std::size_t n_profiles, const std::string& format) {
    RunConfig config = resolve_config(config_path, overrides);
    PreparedData data = prepare_split(config);
    const fs::path ckpt =
        checkpoint_dir.empty() ? fs::path(config.out_dir) : fs::path(checkpoint_dir);
    DenoiserCheckpoint denoiser = load_denoiser(ckpt);
    Normalizer normalizer = load_normalizer(ckpt / "normalizer_diffusion.json");

    Rng rng(Rng(config.seed).split(2).next_u64()); // the training augmentation stream
    Cohort synth = synthesize_n_profiles(denoiser.denoiser, denoiser.schedule, normalizer,
                                         data.train, n_profiles, rng);
    write_cohort(synth, out_path, parse_format(format));
    print_counts(synth);
    std::printf("wrote %s\n", out_path.c_str());
    return 0;
}

int cmd_evaluate(const std::string& config_path, const Overrides& overrides,
                 const std::string& checkpoint_dir, const std::string& out_override) {
    RunConfig config = resolve_config(config_path, overrides);
    const fs::path ckpt =
        checkpoint_dir.empty() ? fs::path(config.out_dir) : fs::path(checkpoint_dir);
    const fs::path out_dir = out_override.empty() ? ckpt : fs::path(out_override);
    fs::create_directories(out_dir);

    Cohort cohort = load_config_cohort(config);
    Cohort filtered = filter_cohort(cohort, config.pipeline.negative_label,
                                    config.pipeline.positive_label, config.visit_filter);
    auto [train_ids, test_ids] = read_split(ckpt / "split.json");
    Cohort train = cohort_from_ids(filtered, train_ids);
    Cohort test = cohort_from_ids(filtered, test_ids);

    SacNetCheckpoint classifier = load_sacnet(ckpt);
    check_classifier_compat(config, classifier.network, filtered.p());
    Normalizer cls_normalizer = load_normalizer(ckpt / "normalizer_classifier.json");

    EvalReport report =
        evaluate_pipeline(classifier.network, cls_normalizer, test, config.pipeline);
    write_eval_report(out_dir / "eval_report.json", report);
    write_roc_csv(out_dir / "roc.csv", report);
    write_pr_csv(out_dir / "pr.csv", report);
    write_embedding_maps(out_dir / "embeddings.csv", classifier.network, cls_normalizer, test,
                         config.pipeline.window_length);

    // Synthesizer fidelity against the real training rows, in normalized units.
    if (fs::exists(ckpt / "denoiser.json")) {
        DenoiserCheckpoint denoiser = load_denoiser(ckpt);
        Normalizer diff_normalizer = load_normalizer(ckpt / "normalizer_diffusion.json");
        Eigen::Index n = 0;
        for (const Profile& profile : train.profiles) n += profile.n_visits();
        Eigen::MatrixXd real_rows(n, train.p());
        std::vector<Condition> conditions;
        Eigen::Index at = 0;
        for (const Profile& profile : train.profiles) {
            for (const Visit& visit : profile.visits) {
                real_rows.row(at++) = diff_normalizer.apply_row(visit.features);
                conditions.push_back(
                    {profile.label,
                     std::min<int>(visit.visit_index,
                                   static_cast<int>(denoiser.denoiser.config().max_visits))});
            }
        }
        Rng rng(Rng(config.seed).split(5).next_u64());
        Eigen::MatrixXd synth_rows =
            sample_batch(denoiser.denoiser, denoiser.schedule, conditions, rng);
        FidelityReport fidelity = fidelity_report(real_rows, synth_rows);
        write_fidelity_json(out_dir / "fidelity.json", fidelity, train.feature_names);
        write_corr_diff_csv(out_dir / "corr_diff.csv", fidelity, train.feature_names);
        write_pca_csv(out_dir / "pca.csv", fidelity);
    }

    std::printf("%s: accuracy %.3f sensitivity %.3f specificity %.3f precision %.3f f1 %.3f "
                "auc %.3f\n",
                report.task.c_str(), report.metrics.accuracy, report.metrics.sensitivity,
                report.metrics.specificity, report.metrics.precision, report.metrics.f1,
                report.auc);
    return 0;
}

int cmd_report(const std::string& dir) {
    const fs::path base = dir;
    if (!fs::exists(base / "eval_report.json")) {
        throw SpecError("no eval_report.json under " + dir);
    }
    auto report = nlohmann::json::parse(read_file(base / "eval_report.json"));
    std::printf("task: %s\n", report.value("task", "?").c_str());
    const auto& counts = report.at("counts");
    std::printf("confusion: tp=%ld fp=%ld tn=%ld fn=%ld\n", counts.at("tp").get<long>(),
                counts.at("fp").get<long>(), counts.at("tn").get<long>(),
                counts.at("fn").get<long>());
    for (const char* metric :
         {"accuracy", "sensitivity", "specificity", "precision", "f1", "auc"}) {
        std::printf("%-12s %.4f\n", metric, report.at(metric).get<double>());
    }
    if (fs::exists(base / "fidelity.json")) {
        auto fidelity = nlohmann::json::parse(read_file(base / "fidelity.json"));
        const auto dmu = fidelity.at("delta_mean").get<std::vector<double>>();
        const auto dsd = fidelity.at("delta_std").get<std::vector<double>>();
        double max_dmu = 0.0, max_dsd = 0.0;
        for (double v : dmu) max_dmu = std::max(max_dmu, std::abs(v));
        for (double v : dsd) max_dsd = std::max(max_dsd, std::abs(v));
        std::printf("fidelity: max |delta_mean| %.4f, max |delta_std| %.4f\n", max_dmu, max_dsd);
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DiGAN: diffusion-augmented attention-convolutional classification of "
                 "longitudinal biomarker profiles"};
    app.require_subcommand(1);

    // generate
    std::string gen_spec, gen_out, gen_format = "csv";
    CLI::App* generate = app.add_subcommand("generate", "generate a synthetic cohort file");
    generate->add_option("--spec", gen_spec, "cohort spec JSON")->required();
    generate->add_option("--out", gen_out, "output cohort path")->required();
    generate->add_option("--format", gen_format, "csv|jsonl");

    auto add_common = [](CLI::App* cmd, std::string& config_path, Overrides& overrides) {
        cmd->add_option("--config", config_path, "run config JSON")->required();
        cmd->add_option("--out", overrides.out_dir, "output directory (overrides config)");
        cmd->add_option("--seed", overrides.seed, "seed (overrides config)");
        cmd->add_option("--task", overrides.task, "no-vs-mci|no-vs-ad (overrides config)");
    };

    std::string train_config, train_ckpt;
    Overrides train_overrides;
    CLI::App* train = app.add_subcommand("train", "staged pipeline: diffusion then classifier");
    add_common(train, train_config, train_overrides);

    std::string traind_config;
    Overrides traind_overrides;
    CLI::App* train_diffusion =
        app.add_subcommand("train-diffusion", "stage 1 only: train the denoiser");
    add_common(train_diffusion, traind_config, traind_overrides);

    std::string trainc_config, trainc_ckpt;
    Overrides trainc_overrides;
    CLI::App* train_classifier =
        app.add_subcommand("train-classifier", "stage 2 only: train the SAC classifier");
    add_common(train_classifier, trainc_config, trainc_overrides);
    train_classifier->add_option("--checkpoints", trainc_ckpt,
                                 "directory holding the denoiser checkpoint");

    std::string synth_config, synth_ckpt, synth_out, synth_format = "csv";
    std::size_t synth_profiles = 100;
    Overrides synth_overrides;
    CLI::App* synthesize = app.add_subcommand("synthesize", "sample synthetic profiles");
    add_common(synthesize, synth_config, synth_overrides);
    synthesize->add_option("--checkpoints", synth_ckpt, "checkpoint directory");
    synthesize->add_option("--out-file", synth_out, "output cohort path")->required();
    synthesize->add_option("--profiles", synth_profiles, "number of profiles");
    synthesize->add_option("--format", synth_format, "csv|jsonl");

    std::string eval_config, eval_ckpt, eval_out;
    Overrides eval_overrides;
    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate checkpoints on the held-out split");
    add_common(evaluate, eval_config, eval_overrides);
    evaluate->add_option("--checkpoints", eval_ckpt, "checkpoint directory");
    evaluate->add_option("--report-dir", eval_out, "artifact directory (default: checkpoints)");

    std::string report_dir;
    CLI::App* report = app.add_subcommand("report", "print a summary of emitted artifacts");
    report->add_option("--dir", report_dir, "artifact directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (generate->parsed()) return cmd_generate(gen_spec, gen_out, gen_format);
        if (train->parsed()) {
            return cmd_train(train_config, train_overrides, false, false, train_ckpt);
        }
        if (train_diffusion->parsed()) {
            return cmd_train(traind_config, traind_overrides, true, false, "");
        }
        if (train_classifier->parsed()) {
            return cmd_train(trainc_config, trainc_overrides, false, true, trainc_ckpt);
        }
        if (synthesize->parsed()) {
            return cmd_synthesize(synth_config, synth_overrides, synth_ckpt, synth_out,
                                  synth_profiles, synth_format);
        }
        if (evaluate->parsed()) {
            return cmd_evaluate(eval_config, eval_overrides, eval_ckpt, eval_out);
        }
        if (report->parsed()) return cmd_report(report_dir);
    } catch (const IntegrityError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
    return 0;
}
