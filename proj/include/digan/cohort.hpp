#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "digan/errors.hpp"

namespace digan {

enum class Label { NO, SCD, MCI, AD };
enum class Sex { M, F, unknown };

std::string to_string(Label label);
std::string to_string(Sex sex);
Label label_from_string(const std::string& s);
Sex sex_from_string(const std::string& s);

struct Visit {
    int visit_index = 0;
    double age_offset_months = 0.0;
    Eigen::VectorXd features;
};

// One subject's ordered visit sequence.
struct Profile {
    std::string subject_id;
    Label label = Label::NO;
    Sex sex = Sex::unknown;
    std::vector<Visit> visits; // sorted by visit_index, strictly increasing

    int n_visits() const { return static_cast<int>(visits.size()); }
    Eigen::Index feature_dim() const { return visits.empty() ? 0 : visits.front().features.size(); }
};

enum class Provenance { ingested, synthetic };

struct Cohort {
    std::vector<Profile> profiles;
    std::vector<std::string> feature_names;
    Provenance provenance = Provenance::ingested;

    Eigen::Index p() const { return static_cast<Eigen::Index>(feature_names.size()); }
};

// Throws SchemaError when cohort invariants are violated (shared p, unique
// subject ids, nonempty strictly increasing visits).
void validate_cohort(const Cohort& cohort);

struct ClassSpec {
    long count_male = 0;
    long count_female = 0;
    Eigen::VectorXd mean;  // per feature
    Eigen::VectorXd std;   // per feature, > 0
    Eigen::VectorXd drift; // per-visit progression added on top of baseline
};

// Generator spec for the synthetic cohort: class-conditional correlated
// Gaussian baselines plus per-visit drift and noise.
struct CohortSpec {
    std::uint64_t seed = 0;
    std::vector<std::string> feature_names;
    std::map<int, double> visit_count_probs; // over {2,3,4}
    double visit_noise_std = 0.05;           // in units of the per-feature std
    std::map<Label, ClassSpec> classes;
    Eigen::MatrixXd correlation; // symmetric PSD, unit diagonal

    Eigen::Index p() const { return static_cast<Eigen::Index>(feature_names.size()); }
};

void validate_spec(const CohortSpec& spec);

CohortSpec cohort_spec_from_json(const std::string& json_text);
std::string cohort_spec_to_json(const CohortSpec& spec);

// Default desk-scale spec: subject counts 97/158 NO, 36/60 MCI, 186/150 AD
// (male/female), 12 volumetric/lesion features, strong NO-vs-AD separation
// and subtle NO-vs-MCI separation.
CohortSpec table1_cohort_spec();

enum class FileFormat { csv, jsonl };

// CSV schema: subject_id,label,sex,visit_index,age_offset_months,<features...>
// one row per visit. JSONL: one profile object per line.
Cohort load_cohort(const std::filesystem::path& path, FileFormat format);
void write_cohort(const Cohort& cohort, const std::filesystem::path& path, FileFormat format);

// Deterministic under spec.seed; baseline ~ class-conditional correlated
// Gaussian, visit t = baseline + (t-1)*drift + noise.
Cohort generate_synthetic_cohort(const CohortSpec& spec);

// Subject-level stratified split; class proportions preserved within one
// subject per class. A class with a single subject goes to train with a
// warning.
std::pair<Cohort, Cohort> split_stratified(const Cohort& cohort, double train_frac,
                                           std::uint64_t seed);

} // namespace digan
