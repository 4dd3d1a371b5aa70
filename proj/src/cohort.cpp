#include "digan/cohort.hpp"

#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "digan/io_util.hpp"
#include "digan/log.hpp"
#include "digan/rng.hpp"

namespace digan {

namespace {

using json = nlohmann::json;

const std::vector<Label> kAllLabels{Label::NO, Label::SCD, Label::MCI, Label::AD};

double parse_double(const std::string& token, std::size_t row) {
    double value = 0.0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        throw SchemaError("row " + std::to_string(row) + ": not a number: '" + token + "'");
    }
    return value;
}

long parse_long(const std::string& token, std::size_t row) {
    long value = 0;
    const char* begin = token.data();
    const char* end = begin + token.size();
    auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end) {
        throw SchemaError("row " + std::to_string(row) + ": not an integer: '" + token + "'");
    }
    return value;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

void sort_and_check_visits(Profile& profile) {
    std::sort(profile.visits.begin(), profile.visits.end(),
              [](const Visit& a, const Visit& b) { return a.visit_index < b.visit_index; });
    for (std::size_t i = 1; i < profile.visits.size(); ++i) {
        if (profile.visits[i].visit_index == profile.visits[i - 1].visit_index) {
            throw SchemaError("duplicate visit " + std::to_string(profile.visits[i].visit_index) +
                              " for subject " + profile.subject_id);
        }
    }
}

} // namespace

std::string to_string(Label label) {
    switch (label) {
        case Label::NO: return "NO";
        case Label::SCD: return "SCD";
        case Label::MCI: return "MCI";
        case Label::AD: return "AD";
    }
    return "NO";
}

std::string to_string(Sex sex) {
    switch (sex) {
        case Sex::M: return "M";
        case Sex::F: return "F";
        case Sex::unknown: return "unknown";
    }
    return "unknown";
}

Label label_from_string(const std::string& s) {
    for (Label l : kAllLabels) {
        if (to_string(l) == s) return l;
    }
    throw SchemaError("unknown label: '" + s + "'");
}

Sex sex_from_string(const std::string& s) {
    if (s == "M") return Sex::M;
    if (s == "F") return Sex::F;
    if (s == "unknown") return Sex::unknown;
    throw SchemaError("unknown sex: '" + s + "'");
}

void validate_cohort(const Cohort& cohort) {
    std::set<std::string> ids;
    for (const Profile& profile : cohort.profiles) {
        if (!ids.insert(profile.subject_id).second) {
            throw SchemaError("duplicate subject id: " + profile.subject_id);
        }
        if (profile.visits.empty()) {
            throw SchemaError("subject " + profile.subject_id + " has no visits");
        }
        for (std::size_t i = 0; i < profile.visits.size(); ++i) {
            if (profile.visits[i].features.size() != cohort.p()) {
                throw SchemaError("subject " + profile.subject_id + " visit " +
                                  std::to_string(profile.visits[i].visit_index) + " has " +
                                  std::to_string(profile.visits[i].features.size()) +
                                  " features, cohort has " + std::to_string(cohort.p()));
            }
            if (i > 0 && profile.visits[i].visit_index <= profile.visits[i - 1].visit_index) {
                throw SchemaError("subject " + profile.subject_id +
                                  ": visit indices not strictly increasing");
            }
        }
    }
}

// ---- CSV ----------------------------------------------------------------

Cohort load_cohort(const std::filesystem::path& path, FileFormat format) {
    const std::string text = read_file(path);
    Cohort cohort;

    std::vector<std::string> lines;
    {
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!line.empty()) lines.push_back(line);
        }
    }
    if (lines.empty()) throw SchemaError("empty cohort file: " + path.string());

    // profiles keyed by subject id but kept in first-appearance order
    std::vector<Profile> profiles;
    std::map<std::string, std::size_t> index_of;

    if (format == FileFormat::csv) {
        const auto header = split_csv_line(lines[0]);
        if (header.size() < 6 || header[0] != "subject_id" || header[1] != "label" ||
            header[2] != "sex" || header[3] != "visit_index" ||
            header[4] != "age_offset_months") {
            throw SchemaError("bad CSV header in " + path.string());
        }
        cohort.feature_names.assign(header.begin() + 5, header.end());
        const std::size_t p = cohort.feature_names.size();

        for (std::size_t r = 1; r < lines.size(); ++r) {
            const auto fields = split_csv_line(lines[r]);
            if (fields.size() != 5 + p) {
                throw SchemaError("row " + std::to_string(r + 1) + ": expected " +
                                  std::to_string(5 + p) + " fields, got " +
                                  std::to_string(fields.size()));
            }
            Visit visit;
            visit.visit_index = static_cast<int>(parse_long(fields[3], r + 1));
            visit.age_offset_months = parse_double(fields[4], r + 1);
            visit.features.resize(static_cast<Eigen::Index>(p));
            for (std::size_t k = 0; k < p; ++k) {
                visit.features[static_cast<Eigen::Index>(k)] = parse_double(fields[5 + k], r + 1);
            }

            auto it = index_of.find(fields[0]);
            if (it == index_of.end()) {
                Profile profile;
                profile.subject_id = fields[0];
                profile.label = label_from_string(fields[1]);
                profile.sex = sex_from_string(fields[2]);
                index_of.emplace(fields[0], profiles.size());
                profiles.push_back(std::move(profile));
                it = index_of.find(fields[0]);
            }
            profiles[it->second].visits.push_back(std::move(visit));
        }
    } else {
        for (std::size_t r = 0; r < lines.size(); ++r) {
            json obj;
            try {
                obj = json::parse(lines[r]);
            } catch (const json::exception& e) {
                throw SchemaError("line " + std::to_string(r + 1) + ": " + e.what());
            }
            Profile profile;
            try {
                profile.subject_id = obj.at("subject_id").get<std::string>();
                profile.label = label_from_string(obj.at("label").get<std::string>());
                profile.sex = sex_from_string(obj.at("sex").get<std::string>());
                for (const auto& v : obj.at("visits")) {
                    Visit visit;
                    visit.visit_index = v.at("visit_index").get<int>();
                    visit.age_offset_months = v.at("age_offset_months").get<double>();
                    const auto feats = v.at("features").get<std::vector<double>>();
                    visit.features =
                        Eigen::Map<const Eigen::VectorXd>(feats.data(),
                                                          static_cast<Eigen::Index>(feats.size()));
                    profile.visits.push_back(std::move(visit));
                }
            } catch (const json::exception& e) {
                throw SchemaError("line " + std::to_string(r + 1) + ": " + e.what());
            }
            if (index_of.count(profile.subject_id) > 0) {
                throw SchemaError("duplicate subject id: " + profile.subject_id);
            }
            index_of.emplace(profile.subject_id, profiles.size());
            profiles.push_back(std::move(profile));
        }
        if (!profiles.empty()) {
            const Eigen::Index p = profiles.front().feature_dim();
            cohort.feature_names.reserve(static_cast<std::size_t>(p));
            for (Eigen::Index k = 0; k < p; ++k) {
                cohort.feature_names.push_back("f" + std::to_string(k + 1));
            }
        }
    }

    for (Profile& profile : profiles) sort_and_check_visits(profile);
    cohort.profiles = std::move(profiles);
    cohort.provenance = Provenance::ingested;
    validate_cohort(cohort);
    return cohort;
}

void write_cohort(const Cohort& cohort, const std::filesystem::path& path, FileFormat format) {
    std::ostringstream os;
    if (format == FileFormat::csv) {
        os << "subject_id,label,sex,visit_index,age_offset_months";
        for (const std::string& name : cohort.feature_names) os << ',' << name;
        os << '\n';
        for (const Profile& profile : cohort.profiles) {
            for (const Visit& visit : profile.visits) {
                os << profile.subject_id << ',' << to_string(profile.label) << ','
                   << to_string(profile.sex) << ',' << visit.visit_index << ','
                   << format_double(visit.age_offset_months);
                for (Eigen::Index k = 0; k < visit.features.size(); ++k) {
                    os << ',' << format_double(visit.features[k]);
                }
                os << '\n';
            }
        }
    } else {
        for (const Profile& profile : cohort.profiles) {
            json obj;
            obj["subject_id"] = profile.subject_id;
            obj["label"] = to_string(profile.label);
            obj["sex"] = to_string(profile.sex);
            json visits = json::array();
            for (const Visit& visit : profile.visits) {
                json v;
                v["visit_index"] = visit.visit_index;
                v["age_offset_months"] = visit.age_offset_months;
                v["features"] = std::vector<double>(visit.features.data(),
                                                    visit.features.data() + visit.features.size());
                visits.push_back(std::move(v));
            }
            obj["visits"] = std::move(visits);
            os << obj.dump() << '\n';
        }
    }
    write_file_atomic(path, os.str());
}

// ---- spec ----------------------------------------------------------------

void validate_spec(const CohortSpec& spec) {
    const Eigen::Index p = spec.p();
    if (p == 0) throw SpecError("cohort spec has no features");
    if (spec.visit_count_probs.empty()) throw SpecError("cohort spec has no visit counts");
    double prob_sum = 0.0;
    for (const auto& [count, prob] : spec.visit_count_probs) {
        if (count < 1) throw SpecError("visit count must be >= 1");
        if (prob < 0.0) throw SpecError("visit count probability must be >= 0");
        prob_sum += prob;
    }
    if (prob_sum <= 0.0) throw SpecError("visit count probabilities sum to zero");
    if (spec.visit_noise_std < 0.0) throw SpecError("visit noise std must be >= 0");
    for (const auto& [label, cls] : spec.classes) {
        if (cls.count_male < 0 || cls.count_female < 0) {
            throw SpecError("negative subject count for class " + to_string(label));
        }
        if (cls.mean.size() != p || cls.std.size() != p || cls.drift.size() != p) {
            throw SpecError("class " + to_string(label) + " statistics do not match p=" +
                            std::to_string(p));
        }
        if ((cls.std.array() <= 0.0).any()) {
            throw SpecError("class " + to_string(label) + " has non-positive std");
        }
    }
    if (spec.correlation.rows() != p || spec.correlation.cols() != p) {
        throw SpecError("correlation matrix must be p x p");
    }
    for (Eigen::Index i = 0; i < p; ++i) {
        if (std::abs(spec.correlation(i, i) - 1.0) > 1e-9) {
            throw SpecError("correlation matrix diagonal must be 1");
        }
        for (Eigen::Index j = 0; j < i; ++j) {
            if (std::abs(spec.correlation(i, j) - spec.correlation(j, i)) > 1e-9) {
                throw SpecError("correlation matrix must be symmetric");
            }
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.correlation);
    if (es.eigenvalues().minCoeff() < -1e-8) {
        throw SpecError("correlation matrix is not positive semidefinite");
    }
}

CohortSpec cohort_spec_from_json(const std::string& json_text) {
    json obj;
    try {
        obj = json::parse(json_text);
    } catch (const json::exception& e) {
        throw SpecError(std::string("cohort spec is not valid JSON: ") + e.what());
    }
    CohortSpec spec;
    try {
        spec.seed = obj.at("seed").get<std::uint64_t>();
        spec.feature_names = obj.at("feature_names").get<std::vector<std::string>>();
        for (const auto& [key, value] : obj.at("visit_count_probs").items()) {
            spec.visit_count_probs[std::stoi(key)] = value.get<double>();
        }
        if (obj.contains("visit_noise_std")) {
            spec.visit_noise_std = obj.at("visit_noise_std").get<double>();
        }
        const Eigen::Index p = spec.p();
        for (const auto& [name, cls_json] : obj.at("classes").items()) {
            ClassSpec cls;
            cls.count_male = cls_json.at("count_male").get<long>();
            cls.count_female = cls_json.at("count_female").get<long>();
            auto vec = [p](const json& a) {
                const auto values = a.get<std::vector<double>>();
                if (static_cast<Eigen::Index>(values.size()) != p) {
                    throw SpecError("class statistic length does not match feature count");
                }
                return Eigen::Map<const Eigen::VectorXd>(values.data(), p).eval();
            };
            cls.mean = vec(cls_json.at("mean"));
            cls.std = vec(cls_json.at("std"));
            cls.drift = vec(cls_json.at("drift"));
            spec.classes[label_from_string(name)] = std::move(cls);
        }
        const auto corr = obj.at("correlation").get<std::vector<std::vector<double>>>();
        spec.correlation.resize(p, p);
        if (static_cast<Eigen::Index>(corr.size()) != p) {
            throw SpecError("correlation matrix must be p x p");
        }
        for (Eigen::Index i = 0; i < p; ++i) {
            if (static_cast<Eigen::Index>(corr[static_cast<std::size_t>(i)].size()) != p) {
                throw SpecError("correlation matrix must be p x p");
            }
            for (Eigen::Index j = 0; j < p; ++j) {
                spec.correlation(i, j) =
                    corr[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            }
        }
    } catch (const json::exception& e) {
        throw SpecError(std::string("bad cohort spec: ") + e.what());
    }
    validate_spec(spec);
    return spec;
}

std::string cohort_spec_to_json(const CohortSpec& spec) {
    json obj;
    obj["seed"] = spec.seed;
    obj["feature_names"] = spec.feature_names;
    json probs;
    for (const auto& [count, prob] : spec.visit_count_probs) {
        probs[std::to_string(count)] = prob;
    }
    obj["visit_count_probs"] = std::move(probs);
    obj["visit_noise_std"] = spec.visit_noise_std;
    json classes;
    for (const auto& [label, cls] : spec.classes) {
        json c;
        c["count_male"] = cls.count_male;
        c["count_female"] = cls.count_female;
        c["mean"] = std::vector<double>(cls.mean.data(), cls.mean.data() + cls.mean.size());
        c["std"] = std::vector<double>(cls.std.data(), cls.std.data() + cls.std.size());
        c["drift"] = std::vector<double>(cls.drift.data(), cls.drift.data() + cls.drift.size());
        classes[to_string(label)] = std::move(c);
    }
    obj["classes"] = std::move(classes);
    std::vector<std::vector<double>> corr;
    for (Eigen::Index i = 0; i < spec.correlation.rows(); ++i) {
        std::vector<double> row;
        for (Eigen::Index j = 0; j < spec.correlation.cols(); ++j) {
            row.push_back(spec.correlation(i, j));
        }
        corr.push_back(std::move(row));
    }
    obj["correlation"] = std::move(corr);
    return obj.dump(2) + "\n";
}

CohortSpec table1_cohort_spec() {
    CohortSpec spec;
    spec.seed = 7;
    spec.feature_names = {"entorhinal_volume",
                          "parahippocampal_volume",
                          "precuneus_volume",
                          "posterior_cingulate_volume",
                          "temporal_lobe_volume",
                          "frontal_wmh",
                          "parietal_wmh",
                          "basal_ganglia_pvs",
                          "centrum_semiovale_pvs",
                          "hippocampal_volume",
                          "lateral_ventricle_volume",
                          "total_gray_matter_volume"};
    spec.visit_count_probs = {{2, 0.40}, {3, 0.35}, {4, 0.25}};
    spec.visit_noise_std = 0.05;

    const Eigen::Index p = 12;
    Eigen::VectorXd mean(p), sd(p), dir(p);
    mean << 3.6, 4.2, 9.8, 6.1, 45.0, 2.2, 1.8, 1.1, 1.4, 7.4, 28.0, 620.0;
    sd << 0.45, 0.50, 1.10, 0.70, 4.5, 0.9, 0.8, 0.5, 0.6, 0.8, 7.0, 55.0;
    // atrophy features shrink with disease, lesion/PVS/ventricle load grows
    dir << -1, -1, -1, -1, -1, 1, 1, 1, 1, -1, 1, -1;

    auto make_class = [&](long males, long females, double shift_sd, double drift_sd) {
        ClassSpec cls;
        cls.count_male = males;
        cls.count_female = females;
        cls.mean = mean + shift_sd * (dir.array() * sd.array()).matrix();
        cls.std = sd;
        cls.drift = drift_sd * (dir.array() * sd.array()).matrix();
        return cls;
    };
    spec.classes[Label::NO] = make_class(97, 158, 0.0, 0.01);
    spec.classes[Label::MCI] = make_class(36, 60, 0.55, 0.15);
    spec.classes[Label::AD] = make_class(186, 150, 2.2, 0.35);

    // rank-one structure keeps the matrix exactly PSD
    spec.correlation = 0.7 * Eigen::MatrixXd::Identity(p, p) + 0.3 * dir * dir.transpose();
    return spec;
}

// ---- generation -------------------------------------------------------------

Cohort generate_synthetic_cohort(const CohortSpec& spec) {
    validate_spec(spec);
    const Eigen::Index p = spec.p();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(spec.correlation);
    Eigen::MatrixXd sqrt_corr =
        es.eigenvectors() *
        es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
        es.eigenvectors().transpose();

    std::vector<std::pair<int, double>> visit_dist(spec.visit_count_probs.begin(),
                                                   spec.visit_count_probs.end());
    double prob_sum = 0.0;
    for (const auto& [count, prob] : visit_dist) prob_sum += prob;

    Cohort cohort;
    cohort.feature_names = spec.feature_names;
    cohort.provenance = Provenance::synthetic;

    Rng root(spec.seed);
    std::uint64_t subject_counter = 0;

    for (Label label : kAllLabels) {
        auto it = spec.classes.find(label);
        if (it == spec.classes.end()) continue;
        const ClassSpec& cls = it->second;
        for (Sex sex : {Sex::M, Sex::F}) {
            const long count = sex == Sex::M ? cls.count_male : cls.count_female;
            for (long s = 0; s < count; ++s) {
                Rng rng = root.split(subject_counter);

                Profile profile;
                {
                    char id[32];
                    std::snprintf(id, sizeof(id), "%s-%s-%04llu", to_string(label).c_str(),
                                  sex == Sex::M ? "m" : "f",
                                  static_cast<unsigned long long>(s + 1));
                    profile.subject_id = id;
                }
                profile.label = label;
                profile.sex = sex;

                int n_visits = visit_dist.back().first;
                {
                    double u = rng.uniform() * prob_sum;
                    for (const auto& [count_k, prob_k] : visit_dist) {
                        if (u < prob_k) {
                            n_visits = count_k;
                            break;
                        }
                        u -= prob_k;
                    }
                }

                Eigen::VectorXd z(p);
                for (Eigen::Index k = 0; k < p; ++k) z[k] = rng.normal();
                Eigen::VectorXd baseline =
                    cls.mean + (cls.std.array() * (sqrt_corr * z).array()).matrix();

                for (int t = 1; t <= n_visits; ++t) {
                    Visit visit;
                    visit.visit_index = t;
                    visit.age_offset_months =
                        t == 1 ? 0.0 : 12.0 * (t - 1) + rng.uniform(-3.0, 3.0);
                    Eigen::VectorXd noise(p);
                    for (Eigen::Index k = 0; k < p; ++k) noise[k] = rng.normal();
                    visit.features = baseline + static_cast<double>(t - 1) * cls.drift +
                                     spec.visit_noise_std * (cls.std.array() * noise.array())
                                         .matrix();
                    profile.visits.push_back(std::move(visit));
                }
                cohort.profiles.push_back(std::move(profile));
                ++subject_counter;
            }
        }
    }
    validate_cohort(cohort);
    return cohort;
}

// ---- split --------------------------------------------------------------------

std::pair<Cohort, Cohort> split_stratified(const Cohort& cohort, double train_frac,
                                           std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0)) {
        throw ContractError("train_frac must lie in (0, 1)");
    }
    std::map<Label, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < cohort.profiles.size(); ++i) {
        by_class[cohort.profiles[i].label].push_back(i);
    }

    Rng root(seed);
    std::vector<bool> in_train(cohort.profiles.size(), false);
    std::uint64_t class_counter = 0;
    for (auto& [label, indices] : by_class) {
        Rng rng = root.split(class_counter++);
        if (indices.size() < 2) {
            logging::warn("class " + to_string(label) +
                          " has fewer than 2 subjects; assigning all to train");
            for (std::size_t i : indices) in_train[i] = true;
            continue;
        }
        // Fisher-Yates with the split stream
        for (std::size_t i = indices.size() - 1; i > 0; --i) {
            const auto j = static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(i)));
            std::swap(indices[i], indices[j]);
        }
        auto n_train = static_cast<std::size_t>(
            std::llround(train_frac * static_cast<double>(indices.size())));
        n_train = std::clamp<std::size_t>(n_train, 1, indices.size() - 1);
        for (std::size_t k = 0; k < n_train; ++k) in_train[indices[k]] = true;
    }

    Cohort train, test;
    train.feature_names = test.feature_names = cohort.feature_names;
    train.provenance = test.provenance = cohort.provenance;
    for (std::size_t i = 0; i < cohort.profiles.size(); ++i) {
        (in_train[i] ? train : test).profiles.push_back(cohort.profiles[i]);
    }
    return {std::move(train), std::move(test)};
}

} // namespace digan
