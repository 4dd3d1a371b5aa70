#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "digan/sacnet.hpp"

namespace digan {

struct ConfusionCounts {
    long tp = 0;
    long fp = 0;
    long tn = 0;
    long fn = 0;

    long total() const { return tp + fp + tn + fn; }
};

struct MetricSet {
    double accuracy = 0.0;
    double sensitivity = 0.0;
    double specificity = 0.0;
    double precision = 0.0;
    double f1 = 0.0;
    // Set when precision is reported as 0 because nothing was predicted
    // positive.
    bool degenerate_precision = false;
};

MetricSet metrics_from_counts(const ConfusionCounts& counts);

// Aligns decisions with ground truth by subject id; unknown ids raise
// ContractError.
ConfusionCounts confusion_from_decisions(const std::vector<SubjectDecision>& decisions,
                                         const std::map<std::string, bool>& truth);

struct RocResult {
    double auc = 0.0;
    std::vector<std::pair<double, double>> points; // (fpr, tpr), swept over thresholds
};

// Threshold sweep over all distinct scores, AUC by trapezoid; requires both
// classes. Ties contribute half credit (diagonal segments).
RocResult roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

// (recall, precision) points over the same descending-score sweep.
std::vector<std::pair<double, double>> pr_curve(const std::vector<double>& scores,
                                                const std::vector<int>& labels);

} // namespace digan
