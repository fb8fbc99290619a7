#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "claire/tensor.hpp"

namespace claire {

/// N x N pixel-count matrix; m[g][p] counts ground-truth g predicted as p.
/// Mergeable by elementwise addition.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes)
        : n_(num_classes), m_(num_classes * num_classes, 0) {
        if (num_classes < 2) throw config_error("ConfusionMatrix: need at least 2 classes");
    }

    static ConfusionMatrix from_labels(const LabelMap& gt, const LabelMap& pred,
                                       std::size_t num_classes);

    void accumulate(const LabelMap& gt, const LabelMap& pred);
    ConfusionMatrix& operator+=(const ConfusionMatrix& o);

    std::size_t num_classes() const { return n_; }
    long long at(std::size_t g, std::size_t p) const { return m_[g * n_ + p]; }
    long long& at(std::size_t g, std::size_t p) { return m_[g * n_ + p]; }
    long long total() const;
    long long row_sum(std::size_t g) const;  // ground-truth pixels of class g
    long long col_sum(std::size_t p) const;  // predicted pixels of class p
    long long trace() const;

private:
    std::size_t n_;
    std::vector<long long> m_;
};

/// Per-class values use NaN for classes with an undefined ratio (e.g. absent
/// from both prediction and ground truth); such classes are excluded from the
/// means and serialized as null.
struct MetricsReport {
    std::vector<double> per_class_iou;
    std::vector<double> per_class_dice;
    double miou = 0.0;
    double mean_dice = 0.0;
    double oa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class_coverage_pred;  // percent, sums to 100
    std::vector<double> per_class_coverage_gt;    // percent, sums to 100
    std::vector<double> per_class_signed_error;   // pred - gt coverage, percentage points
    std::vector<double> detection_rate;           // recall per class
    std::vector<double> prediction_precision;     // per-class TP/(TP+FP)
    double systematic_bias = 0.0;                 // max_c |pred - gt coverage|

    // fusion-aware fields, present only when gating masks were collected
    std::optional<double> rgb_dominance;
    std::optional<double> sar_dominance;
    std::optional<double> complementarity;
    std::optional<double> fusion_quality;  // fused OA - max(optical-only, SAR-only)
    std::optional<double> cloud_fraction;  // metadata carried from the data spec

    nlohmann::json to_json() const;
    static MetricsReport from_json(const nlohmann::json& j);
};

struct IouDice {
    std::vector<double> per_class_iou, per_class_dice;
    double miou, mean_dice;
};

IouDice iou_dice(const ConfusionMatrix& cm);
double overall_accuracy(const ConfusionMatrix& cm);
double kappa(const ConfusionMatrix& cm);

/// Pixel-wise gate statistics, accumulable over samples.
struct GateSummary {
    double sum_g1 = 0.0;
    double sum_g2 = 0.0;
    double sum_min_over_max = 0.0;
    long long pixels = 0;

    void accumulate(const Tensor& g1, const Tensor& g2);
    GateSummary& operator+=(const GateSummary& o);
};

/// Full confusion-matrix report (no fusion fields).
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// Attach the gate-derived indicators; fusion_quality only when both
/// single-modality accuracies are supplied.
void attach_fusion_indicators(MetricsReport& report, const GateSummary& gates,
                              std::optional<std::pair<double, double>> per_modality_oa);

}  // namespace claire
