#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace gtp::metrics {

inline constexpr std::size_t kNumClasses = 3;

struct ConfusionMetrics {
    /// matrix[true][predicted]
    std::array<std::array<std::size_t, kNumClasses>, kNumClasses> matrix{};
    std::array<double, kNumClasses> precision{}, recall{}, specificity{};
    /// Set when a class was never predicted; its precision is reported as 0.
    std::array<bool, kNumClasses> precision_undefined{};
    double accuracy = 0.0;
    std::size_t total = 0;
};

ConfusionMetrics confusion_metrics(const std::vector<int>& labels, const std::vector<int>& predictions);

struct RocCurve {
    std::vector<double> fpr, tpr;
    std::vector<double> thresholds; // first entry +inf
    double auc = 0.0;
};

/// One point per distinct score, ties averaged; AUC is the Mann-Whitney statistic
/// (equal to the trapezoid area of the curve).
RocCurve roc_auc(const std::vector<double>& scores, const std::vector<int>& binary_labels);

struct PrCurve {
    std::vector<double> recall, precision, thresholds;
    double average_precision = 0.0;
};

/// AP = Σ (R_n − R_{n−1}) P_n over distinct thresholds, highest first.
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& binary_labels);

struct DelongResult {
    double auc_a = 0.0, auc_b = 0.0, z = 0.0, log10_p = 0.0;
};

/// Paired DeLong test with the structural-components covariance, two-sided.
/// Zero variance: log10_p = 0 if the AUCs agree, −inf otherwise.
DelongResult delong_test(const std::vector<double>& scores_a, const std::vector<double>& scores_b,
                         const std::vector<int>& binary_labels);

/// log10 of the two-sided normal tail P(|Z| ≥ |z|), finite far into the tail.
double log10_two_sided_p(double z);

struct MetricsReport {
    ConfusionMetrics confusion;
    std::vector<RocCurve> roc; // one-vs-rest per class
    std::vector<PrCurve> pr;
    std::vector<std::string> comparisons_names;
    std::vector<DelongResult> comparisons;
};

/// Predictions are argmax of each probability row (lowest index on ties).
MetricsReport evaluate(const std::vector<int>& labels, const std::vector<std::array<double, kNumClasses>>& probabilities);

int argmax(const std::array<double, kNumClasses>& p);

nlohmann::json to_json(const ConfusionMetrics& c);
nlohmann::json to_json(const MetricsReport& r);
/// columns: class,curve,x,y,threshold
std::string curves_csv(const MetricsReport& r);

struct MeanStd {
    double mean = 0.0, std = 0.0;
};

/// Sample standard deviation (n−1); 0 for a single value.
MeanStd mean_std(const std::vector<double>& values);

/// mean±std across folds of accuracy and per-class precision, recall, specificity, AUC, AP.
nlohmann::json aggregate_folds(const std::vector<MetricsReport>& folds);

} // namespace gtp::metrics
