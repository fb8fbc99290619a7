#include "claire/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace claire {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_defined(const std::vector<double>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

nlohmann::json vec_to_json(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) {
        if (std::isnan(x))
            a.push_back(nullptr);
        else
            a.push_back(x);
    }
    return a;
}

std::vector<double> vec_from_json(const nlohmann::json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(x.is_null() ? kNaN : x.get<double>());
    return v;
}

}  // namespace

ConfusionMatrix ConfusionMatrix::from_labels(const LabelMap& gt, const LabelMap& pred,
                                             std::size_t num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.accumulate(gt, pred);
    return cm;
}

void ConfusionMatrix::accumulate(const LabelMap& gt, const LabelMap& pred) {
    if (gt.height() != pred.height() || gt.width() != pred.width())
        throw invalid_input_error("confusion_matrix: gt/pred shape mismatch");
    for (std::size_t i = 0; i < gt.numel(); ++i) {
        const int g = gt.vec()[i], p = pred.vec()[i];
        if (g < 0 || p < 0 || g >= static_cast<int>(n_) || p >= static_cast<int>(n_))
            throw invalid_input_error("confusion_matrix: label out of range at pixel " +
                                      std::to_string(i));
        ++m_[static_cast<std::size_t>(g) * n_ + static_cast<std::size_t>(p)];
    }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    if (o.n_ != n_) throw invalid_input_error("confusion_matrix: class count mismatch in merge");
    for (std::size_t i = 0; i < m_.size(); ++i) m_[i] += o.m_[i];
    return *this;
}

long long ConfusionMatrix::total() const {
    long long t = 0;
    for (long long v : m_) t += v;
    return t;
}

long long ConfusionMatrix::row_sum(std::size_t g) const {
    long long t = 0;
    for (std::size_t p = 0; p < n_; ++p) t += at(g, p);
    return t;
}

long long ConfusionMatrix::col_sum(std::size_t p) const {
    long long t = 0;
    for (std::size_t g = 0; g < n_; ++g) t += at(g, p);
    return t;
}

long long ConfusionMatrix::trace() const {
    long long t = 0;
    for (std::size_t c = 0; c < n_; ++c) t += at(c, c);
    return t;
}

IouDice iou_dice(const ConfusionMatrix& cm) {
    const std::size_t n = cm.num_classes();
    IouDice r;
    r.per_class_iou.assign(n, kNaN);
    r.per_class_dice.assign(n, kNaN);
    for (std::size_t c = 0; c < n; ++c) {
        const long long tp = cm.at(c, c);
        const long long fp = cm.col_sum(c) - tp;
        const long long fn = cm.row_sum(c) - tp;
        if (tp + fp + fn == 0) continue;  // absent from both sides: excluded from means
        r.per_class_iou[c] =
            static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
        r.per_class_dice[c] =
            static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    }
    r.miou = mean_defined(r.per_class_iou);
    r.mean_dice = mean_defined(r.per_class_dice);
    return r;
}

double overall_accuracy(const ConfusionMatrix& cm) {
    const long long total = cm.total();
    if (total == 0) throw invalid_input_error("overall_accuracy: empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double kappa(const ConfusionMatrix& cm) {
    const long long total = cm.total();
    if (total == 0) throw invalid_input_error("kappa: empty confusion matrix");
    const double t = static_cast<double>(total);
    const double po = static_cast<double>(cm.trace()) / t;
    double pe = 0.0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c)
        pe += static_cast<double>(cm.row_sum(c)) * static_cast<double>(cm.col_sum(c)) / (t * t);
    if (pe >= 1.0) return 0.0;  // single-class degenerate case
    return (po - pe) / (1.0 - pe);
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const std::size_t n = cm.num_classes();
    const long long total = cm.total();
    if (total == 0) throw invalid_input_error("compute_metrics: empty confusion matrix");
    MetricsReport r;
    IouDice id = iou_dice(cm);
    r.per_class_iou = std::move(id.per_class_iou);
    r.per_class_dice = std::move(id.per_class_dice);
    r.miou = id.miou;
    r.mean_dice = id.mean_dice;
    r.oa = overall_accuracy(cm);
    r.kappa = kappa(cm);
    r.per_class_coverage_pred.resize(n);
    r.per_class_coverage_gt.resize(n);
    r.per_class_signed_error.resize(n);
    r.detection_rate.assign(n, kNaN);
    r.prediction_precision.assign(n, kNaN);
    const double t = static_cast<double>(total);
    r.systematic_bias = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const long long tp = cm.at(c, c);
        const long long gtc = cm.row_sum(c);
        const long long prc = cm.col_sum(c);
        r.per_class_coverage_gt[c] = 100.0 * static_cast<double>(gtc) / t;
        r.per_class_coverage_pred[c] = 100.0 * static_cast<double>(prc) / t;
        r.per_class_signed_error[c] = r.per_class_coverage_pred[c] - r.per_class_coverage_gt[c];
        if (gtc > 0) r.detection_rate[c] = static_cast<double>(tp) / static_cast<double>(gtc);
        if (prc > 0)
            r.prediction_precision[c] = static_cast<double>(tp) / static_cast<double>(prc);
        r.systematic_bias = std::max(r.systematic_bias, std::abs(r.per_class_signed_error[c]));
    }
    return r;
}

void GateSummary::accumulate(const Tensor& g1, const Tensor& g2) {
    if (!g1.same_shape(g2)) throw invalid_input_error("gate summary: g1/g2 shape mismatch");
    for (std::size_t i = 0; i < g1.numel(); ++i) {
        const double a = g1[i], b = g2[i];
        sum_g1 += a;
        sum_g2 += b;
        const double mx = std::max(a, b);
        sum_min_over_max += (mx <= 0.0) ? 1.0 : std::min(a, b) / mx;
    }
    pixels += static_cast<long long>(g1.numel());
}

GateSummary& GateSummary::operator+=(const GateSummary& o) {
    sum_g1 += o.sum_g1;
    sum_g2 += o.sum_g2;
    sum_min_over_max += o.sum_min_over_max;
    pixels += o.pixels;
    return *this;
}

void attach_fusion_indicators(MetricsReport& report, const GateSummary& gates,
                              std::optional<std::pair<double, double>> per_modality_oa) {
    if (gates.pixels <= 0) return;  // gates missing: fields stay absent
    const double m1 = gates.sum_g1 / static_cast<double>(gates.pixels);
    const double m2 = gates.sum_g2 / static_cast<double>(gates.pixels);
    const double denom = m1 + m2;
    report.rgb_dominance = denom > 0.0 ? m1 / denom : 0.5;
    report.sar_dominance = 1.0 - *report.rgb_dominance;
    report.complementarity = gates.sum_min_over_max / static_cast<double>(gates.pixels);
    if (per_modality_oa)
        report.fusion_quality =
            report.oa - std::max(per_modality_oa->first, per_modality_oa->second);
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["per_class_iou"] = vec_to_json(per_class_iou);
    j["per_class_dice"] = vec_to_json(per_class_dice);
    j["miou"] = miou;
    j["mean_dice"] = mean_dice;
    j["oa"] = oa;
    j["kappa"] = kappa;
    j["per_class_coverage_pred"] = vec_to_json(per_class_coverage_pred);
    j["per_class_coverage_gt"] = vec_to_json(per_class_coverage_gt);
    j["per_class_signed_error"] = vec_to_json(per_class_signed_error);
    j["detection_rate"] = vec_to_json(detection_rate);
    j["prediction_precision"] = vec_to_json(prediction_precision);
    j["systematic_bias"] = systematic_bias;
    if (rgb_dominance) j["rgb_dominance"] = *rgb_dominance;
    if (sar_dominance) j["sar_dominance"] = *sar_dominance;
    if (complementarity) j["complementarity"] = *complementarity;
    if (fusion_quality) j["fusion_quality"] = *fusion_quality;
    if (cloud_fraction) j["cloud_fraction"] = *cloud_fraction;
    return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.per_class_iou = vec_from_json(j.at("per_class_iou"));
    r.per_class_dice = vec_from_json(j.at("per_class_dice"));
    r.miou = j.at("miou").get<double>();
    r.mean_dice = j.at("mean_dice").get<double>();
    r.oa = j.at("oa").get<double>();
    r.kappa = j.at("kappa").get<double>();
    r.per_class_coverage_pred = vec_from_json(j.at("per_class_coverage_pred"));
    r.per_class_coverage_gt = vec_from_json(j.at("per_class_coverage_gt"));
    r.per_class_signed_error = vec_from_json(j.at("per_class_signed_error"));
    r.detection_rate = vec_from_json(j.at("detection_rate"));
    r.prediction_precision = vec_from_json(j.at("prediction_precision"));
    r.systematic_bias = j.at("systematic_bias").get<double>();
    if (j.contains("rgb_dominance")) r.rgb_dominance = j["rgb_dominance"].get<double>();
    if (j.contains("sar_dominance")) r.sar_dominance = j["sar_dominance"].get<double>();
    if (j.contains("complementarity")) r.complementarity = j["complementarity"].get<double>();
    if (j.contains("fusion_quality")) r.fusion_quality = j["fusion_quality"].get<double>();
    if (j.contains("cloud_fraction")) r.cloud_fraction = j["cloud_fraction"].get<double>();
    return r;
}

}  // namespace claire
