#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "digan/cohort.hpp"
#include "digan/io_util.hpp"

using namespace digan;
namespace fs = std::filesystem;

namespace {

struct CliResult {
    int exit_code;
    std::string output;
};

// Runs the binary from the repository root so relative config paths resolve.
CliResult run_cli(const std::string& args) {
    const fs::path log = fs::temp_directory_path() / "digan_cli_test_output.txt";
    const std::string command = "cd " DIGAN_SOURCE_DIR " && " DIGAN_BIN_PATH " " + args + " > " +
                                log.string() + " 2>&1";
    const int status = std::system(command.c_str());
    CliResult result;
    result.exit_code = status < 0 ? status : WEXITSTATUS(status);
    result.output = read_file(log);
    return result;
}

fs::path work_dir() {
    const fs::path dir = fs::temp_directory_path() / "digan_cli_tests";
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("generate emits the preset cohort and prints class counts") {
    const fs::path out = work_dir() / "table1.csv";
    CliResult result = run_cli("generate --spec configs/table1_cohort.json --out " + out.string());
    CHECK(result.exit_code == 0);
    CHECK(result.output.find("NO: 255 subjects") != std::string::npos);
    CHECK(result.output.find("MCI: 96 subjects") != std::string::npos);
    CHECK(result.output.find("AD: 336 subjects") != std::string::npos);

    Cohort cohort = load_cohort(out, FileFormat::csv);
    CHECK(cohort.profiles.size() == 687);
    CHECK(cohort.p() == 12);
}

TEST_CASE("generate with zero counts warns and still succeeds") {
    CohortSpec spec = table1_cohort_spec();
    for (auto& [label, cls] : spec.classes) {
        cls.count_male = 0;
        cls.count_female = 0;
    }
    const fs::path spec_path = work_dir() / "zero_spec.json";
    write_file_atomic(spec_path, cohort_spec_to_json(spec));
    const fs::path out = work_dir() / "zero.csv";
    CliResult result = run_cli("generate --spec " + spec_path.string() + " --out " + out.string());
    CHECK(result.exit_code == 0);
    CHECK(fs::exists(out));
}

TEST_CASE("generate rejects malformed spec JSON with exit 2") {
    const fs::path bad = work_dir() / "bad_spec.json";
    write_file_atomic(bad, "{ this is not json");
    CliResult result =
        run_cli("generate --spec " + bad.string() + " --out " + (work_dir() / "x.csv").string());
    CHECK(result.exit_code == 2);
}

TEST_CASE("train fails with exit 2 when the cohort path is missing") {
    const fs::path config = work_dir() / "missing_cohort.json";
    write_file_atomic(config, R"({"seed": 1, "task": "no-vs-ad",
                                  "cohort_path": "/nonexistent/cohort.csv"})");
    CliResult result = run_cli("train --config " + config.string() + " --out " +
                               (work_dir() / "never").string());
    CHECK(result.exit_code == 2);
}

TEST_CASE("full train, staged train, synthesize, evaluate, report flow") {
    const fs::path run = work_dir() / "flow";
    fs::remove_all(run);

    // one-shot pipeline
    CliResult train = run_cli("train --config configs/smoke.json --out " + run.string());
    CHECK(train.exit_code == 0);
    for (const char* artifact :
         {"denoiser.json", "denoiser.bin", "classifier.json", "classifier.bin",
          "normalizer_diffusion.json", "normalizer_classifier.json", "training_log.json",
          "split.json"}) {
        CHECK(fs::exists(run / artifact));
    }

    // staged path reproduces the one-shot artifacts bitwise
    const fs::path staged = work_dir() / "staged";
    fs::remove_all(staged);
    CHECK(run_cli("train-diffusion --config configs/smoke.json --out " + staged.string())
              .exit_code == 0);
    CHECK(run_cli("train-classifier --config configs/smoke.json --out " + staged.string())
              .exit_code == 0);
    CHECK(read_file(run / "denoiser.bin") == read_file(staged / "denoiser.bin"));
    CHECK(read_file(run / "classifier.bin") == read_file(staged / "classifier.bin"));

    // synthesize emits a loadable cohort with the requested profile count
    const fs::path synth = work_dir() / "synthetic.csv";
    CliResult synthesize = run_cli("synthesize --config configs/smoke.json --checkpoints " +
                                   run.string() + " --out-file " + synth.string() +
                                   " --profiles 8");
    CHECK(synthesize.exit_code == 0);
    Cohort synth_cohort = load_cohort(synth, FileFormat::csv);
    CHECK(synth_cohort.profiles.size() == 8);
    CHECK(synth_cohort.p() == 12);

    // evaluate writes the report artifacts
    CliResult evaluate =
        run_cli("evaluate --config configs/smoke.json --checkpoints " + run.string());
    CHECK(evaluate.exit_code == 0);
    for (const char* artifact : {"eval_report.json", "roc.csv", "pr.csv", "embeddings.csv",
                                 "fidelity.json", "corr_diff.csv", "pca.csv"}) {
        CHECK(fs::exists(run / artifact));
    }

    // report prints the headline metrics
    CliResult report = run_cli("report --dir " + run.string());
    CHECK(report.exit_code == 0);
    CHECK(report.output.find("accuracy") != std::string::npos);
    CHECK(report.output.find("confusion") != std::string::npos);

    // truncated parameter blob is a checksum failure with exit 3
    const fs::path corrupt = work_dir() / "corrupt";
    fs::remove_all(corrupt);
    fs::create_directories(corrupt);
    fs::copy(run, corrupt, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    fs::resize_file(corrupt / "classifier.bin",
                    fs::file_size(corrupt / "classifier.bin") - 16);
    CliResult corrupted =
        run_cli("evaluate --config configs/smoke.json --checkpoints " + corrupt.string());
    CHECK(corrupted.exit_code == 3);

    // config/checkpoint hyperparameter mismatch is a compatibility error
    const fs::path mismatched = work_dir() / "mismatched.json";
    std::string config_text = read_file(fs::path(DIGAN_SOURCE_DIR) / "configs/smoke.json");
    const auto at = config_text.find("\"attn_dim\": 8");
    REQUIRE(at != std::string::npos);
    config_text.replace(at, 13, "\"attn_dim\": 6");
    write_file_atomic(mismatched, config_text);
    CliResult incompatible =
        run_cli("evaluate --config " + mismatched.string() + " --checkpoints " + run.string());
    CHECK(incompatible.exit_code == 2);
}

TEST_CASE("seed override changes artifacts, fixed seed reproduces them") {
    const fs::path a = work_dir() / "seed_a";
    const fs::path b = work_dir() / "seed_b";
    const fs::path c = work_dir() / "seed_c";
    for (const fs::path& dir : {a, b, c}) fs::remove_all(dir);
    CHECK(run_cli("train --config configs/smoke.json --seed 1 --out " + a.string()).exit_code ==
          0);
    CHECK(run_cli("train --config configs/smoke.json --seed 1 --out " + b.string()).exit_code ==
          0);
    CHECK(run_cli("train --config configs/smoke.json --seed 2 --out " + c.string()).exit_code ==
          0);
    CHECK(read_file(a / "classifier.bin") == read_file(b / "classifier.bin"));
    CHECK(read_file(a / "classifier.bin") != read_file(c / "classifier.bin"));
}
