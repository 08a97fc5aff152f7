#pragma once

// Classification metrics, ROC AUC, cross-fold summaries and localization
// scoring against phantom lesion masks.

#include "wsl/localization.hpp"
#include "wsl/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace wsl {

struct ClassCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// Empty optional marks an undefined rate (zero denominator).
struct ClassRates {
    std::optional<double> accuracy, precision, sensitivity, specificity;
};

struct ConfusionReport {
    std::size_t num_classes = 0;
    std::size_t total = 0;
    std::vector<ClassCounts> counts; // one-vs-rest
    std::vector<ClassRates> rates;
    ClassRates macro;             // mean over defined per-class rates
    double overall_accuracy = 0.0; // sum(TP) / N
};

ConfusionReport confusion_metrics(const std::vector<int>& labels, const std::vector<int>& predictions, std::size_t k);
ClassRates rates_from(const ClassCounts& c);

// Mann-Whitney: (correctly ordered pairs + ties / 2) / (P * N), counted exactly.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct Interval {
    double mean = 0.0, sd = 0.0, lo = 0.0, hi = 0.0;
};

// mean +- 1.96 sd / sqrt(k) with the sample sd; bounds clipped to [0, 1]
// when clip is set.
Interval confidence_interval(const std::vector<double>& values, bool clip = true);

// Per-fold inputs: labels, predicted classes and class probabilities.
struct FoldOutcome {
    std::vector<int> labels;
    std::vector<int> predictions;
    std::vector<std::vector<double>> probabilities;
};

struct MetricRow {
    std::string name;
    // Accuracy, Precision, Sensitivity, Specificity, AUC (fixed column order).
    std::vector<std::vector<double>> per_fold; // [metric][fold], defined values only
    std::vector<std::optional<Interval>> summary;
};

struct MetricReport {
    std::size_t folds = 0;
    std::vector<std::string> class_names;
    MetricRow overall;
    std::vector<MetricRow> classes;
};

inline constexpr const char* kMetricColumns[5] = {"Accuracy", "Precision", "Sensitivity", "Specificity", "AUC"};

MetricReport crossval_report(const std::vector<FoldOutcome>& folds, const std::vector<std::string>& class_names);
std::string format_report(const MetricReport& report);

struct LocalizationScore {
    std::size_t lesions = 0;
    std::size_t hits = 0;
    double hit_rate = 0.0;
    double mean_iou = 0.0;
    std::size_t matched = 0;
};

double box_iou(const BoundingBox& a, const BoundingBox& b);

// A lesion is hit when some box has IoU >= 0.3 with its tight box or
// contains its centroid. Mean IoU is over a greedy one-to-one matching in
// descending IoU order (pairs with IoU > 0).
LocalizationScore localization_score(const std::vector<std::vector<BoundingBox>>& boxes,
                                     const std::vector<Tensor>& masks);

} // namespace wsl
