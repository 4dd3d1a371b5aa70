#include "digan/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "digan/errors.hpp"

namespace digan {

MetricSet metrics_from_counts(const ConfusionCounts& c) {
    MetricSet m;
    const long total = c.total();
    m.accuracy = total > 0 ? static_cast<double>(c.tp + c.tn) / static_cast<double>(total) : 0.0;
    m.sensitivity =
        c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    m.specificity =
        c.tn + c.fp > 0 ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : 0.0;
    if (c.tp + c.fp > 0) {
        m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    } else {
        m.precision = 0.0;
        m.degenerate_precision = true;
    }
    m.f1 = m.precision + m.sensitivity > 0.0
               ? 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity)
               : 0.0;
    return m;
}

ConfusionCounts confusion_from_decisions(const std::vector<SubjectDecision>& decisions,
                                         const std::map<std::string, bool>& truth) {
    ConfusionCounts counts;
    for (const SubjectDecision& d : decisions) {
        auto it = truth.find(d.subject_id);
        if (it == truth.end()) {
            throw ContractError("no ground truth for subject " + d.subject_id);
        }
        const bool actual = it->second;
        if (d.predicted_positive) {
            actual ? ++counts.tp : ++counts.fp;
        } else {
            actual ? ++counts.fn : ++counts.tn;
        }
    }
    return counts;
}

namespace {

struct Sweep {
    std::vector<std::size_t> order; // by descending score
    long n_pos = 0;
    long n_neg = 0;
};

Sweep make_sweep(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) {
        throw ContractError("scores and labels differ in length");
    }
    Sweep s;
    s.order.resize(scores.size());
    std::iota(s.order.begin(), s.order.end(), 0);
    std::stable_sort(s.order.begin(), s.order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (int label : labels) (label != 0 ? s.n_pos : s.n_neg)++;
    if (s.n_pos == 0 || s.n_neg == 0) {
        throw ContractError("AUC undefined: labels contain a single class");
    }
    return s;
}

} // namespace

RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const Sweep sweep = make_sweep(scores, labels);

    RocResult result;
    result.points.emplace_back(0.0, 0.0);
    long tp = 0, fp = 0;
    double prev_fpr = 0.0, prev_tpr = 0.0;
    std::size_t i = 0;
    while (i < sweep.order.size()) {
        // process one tie group at a time so ties form diagonal segments
        const double threshold = scores[sweep.order[i]];
        while (i < sweep.order.size() && scores[sweep.order[i]] == threshold) {
            (labels[sweep.order[i]] != 0 ? tp : fp)++;
            ++i;
        }
        const double fpr = static_cast<double>(fp) / static_cast<double>(sweep.n_neg);
        const double tpr = static_cast<double>(tp) / static_cast<double>(sweep.n_pos);
        result.auc += 0.5 * (fpr - prev_fpr) * (tpr + prev_tpr);
        result.points.emplace_back(fpr, tpr);
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    return result;
}

std::vector<std::pair<double, double>> pr_curve(const std::vector<double>& scores,
                                                const std::vector<int>& labels) {
    const Sweep sweep = make_sweep(scores, labels);

    std::vector<std::pair<double, double>> points;
    points.emplace_back(0.0, 1.0);
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < sweep.order.size()) {
        const double threshold = scores[sweep.order[i]];
        while (i < sweep.order.size() && scores[sweep.order[i]] == threshold) {
            (labels[sweep.order[i]] != 0 ? tp : fp)++;
            ++i;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(sweep.n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        points.emplace_back(recall, precision);
    }
    return points;
}

} // namespace digan
