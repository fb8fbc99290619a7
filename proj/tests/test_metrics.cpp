#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "claire/metrics.hpp"

using namespace claire;

namespace {

ConfusionMatrix cm2(long long a, long long b, long long c, long long d) {
    ConfusionMatrix cm(2);
    cm.at(0, 0) = a;
    cm.at(0, 1) = b;
    cm.at(1, 0) = c;
    cm.at(1, 1) = d;
    return cm;
}

ConfusionMatrix random_cm(std::size_t n, std::mt19937_64& rng) {
    ConfusionMatrix cm(n);
    std::uniform_int_distribution<long long> d(0, 50);
    long long total = 0;
    for (std::size_t g = 0; g < n; ++g)
        for (std::size_t p = 0; p < n; ++p) total += (cm.at(g, p) = d(rng));
    if (total == 0) cm.at(0, 0) = 1;
    return cm;
}

}  // namespace

TEST_CASE("confusion matrix accumulation and sums") {
    LabelMap gt(2, 2), pred(2, 2);
    gt.at(0, 0) = 0; gt.at(0, 1) = 0; gt.at(1, 0) = 1; gt.at(1, 1) = 1;
    pred.at(0, 0) = 0; pred.at(0, 1) = 1; pred.at(1, 0) = 1; pred.at(1, 1) = 1;
    auto cm = ConfusionMatrix::from_labels(gt, pred, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.total() == 4);
    CHECK(cm.trace() == 3);
    CHECK(cm.row_sum(0) == 2);
    CHECK(cm.col_sum(1) == 3);

    cm += cm;
    CHECK(cm.at(1, 1) == 4);

    pred.at(0, 0) = 2;
    CHECK_THROWS_AS(ConfusionMatrix::from_labels(gt, pred, 2), invalid_input_error);
}

TEST_CASE("worked example: [[1,1],[0,2]]") {
    auto cm = cm2(1, 1, 0, 2);
    auto id = iou_dice(cm);
    CHECK(id.per_class_iou[0] == doctest::Approx(0.5));
    CHECK(id.per_class_iou[1] == doctest::Approx(2.0 / 3.0));
    CHECK(id.per_class_dice[0] == doctest::Approx(2.0 / 3.0));
    CHECK(id.per_class_dice[1] == doctest::Approx(0.8));
    CHECK(id.miou == doctest::Approx(7.0 / 12.0));
    CHECK(overall_accuracy(cm) == doctest::Approx(0.75));
}

TEST_CASE("worked example: kappa of [[2,1],[1,2]] is 1/3") {
    CHECK(kappa(cm2(2, 1, 1, 2)) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("kappa degenerates to 0 when expected agreement is total") {
    CHECK(kappa(cm2(5, 0, 0, 0)) == 0.0);
}

TEST_CASE("exhaustive two-class 2x2 grids match brute-force formulas") {
    for (int gbits = 0; gbits < 16; ++gbits)
        for (int pbits = 0; pbits < 16; ++pbits) {
            LabelMap gt(2, 2), pred(2, 2);
            for (int k = 0; k < 4; ++k) {
                gt.vec()[k] = (gbits >> k) & 1;
                pred.vec()[k] = (pbits >> k) & 1;
            }
            auto cm = ConfusionMatrix::from_labels(gt, pred, 2);
            auto id = iou_dice(cm);
            for (std::size_t c = 0; c < 2; ++c) {
                long long tp = 0, fp = 0, fn = 0;
                for (int k = 0; k < 4; ++k) {
                    const bool g = gt.vec()[k] == static_cast<int>(c);
                    const bool p = pred.vec()[k] == static_cast<int>(c);
                    tp += g && p;
                    fp += !g && p;
                    fn += g && !p;
                }
                if (tp + fp + fn == 0) {
                    CHECK(std::isnan(id.per_class_iou[c]));
                    CHECK(std::isnan(id.per_class_dice[c]));
                } else {
                    CHECK(id.per_class_iou[c] ==
                          doctest::Approx(double(tp) / double(tp + fp + fn)));
                    CHECK(id.per_class_dice[c] ==
                          doctest::Approx(double(2 * tp) / double(2 * tp + fp + fn)));
                }
            }
            int agree = 0;
            for (int k = 0; k < 4; ++k) agree += gt.vec()[k] == pred.vec()[k];
            CHECK(overall_accuracy(cm) == doctest::Approx(agree / 4.0));
        }
}

TEST_CASE("random matrices: Dice = 2 IoU / (1 + IoU) and kappa <= OA") {
    std::mt19937_64 rng(7);
    for (int rep = 0; rep < 1000; ++rep) {
        auto cm = random_cm(2 + rep % 5, rng);
        auto id = iou_dice(cm);
        for (std::size_t c = 0; c < cm.num_classes(); ++c) {
            if (std::isnan(id.per_class_iou[c])) continue;
            CHECK(id.per_class_dice[c] ==
                  doctest::Approx(2.0 * id.per_class_iou[c] / (1.0 + id.per_class_iou[c]))
                      .epsilon(1e-12));
        }
        CHECK(kappa(cm) <= overall_accuracy(cm) + 1e-12);
    }
}

TEST_CASE("compute_metrics coverage, detection, precision, bias") {
    auto cm = cm2(1, 1, 0, 2);
    auto r = compute_metrics(cm);
    CHECK(r.per_class_coverage_gt[0] == doctest::Approx(50.0));
    CHECK(r.per_class_coverage_pred[0] == doctest::Approx(25.0));
    CHECK(r.per_class_signed_error[0] == doctest::Approx(-25.0));
    CHECK(r.per_class_signed_error[1] == doctest::Approx(25.0));
    CHECK(r.detection_rate[0] == doctest::Approx(0.5));
    CHECK(r.detection_rate[1] == doctest::Approx(1.0));
    CHECK(r.prediction_precision[0] == doctest::Approx(1.0));
    CHECK(r.prediction_precision[1] == doctest::Approx(2.0 / 3.0));
    CHECK(r.systematic_bias == doctest::Approx(25.0));
    // coverage percentages sum to 100
    CHECK(r.per_class_coverage_gt[0] + r.per_class_coverage_gt[1] == doctest::Approx(100.0));
    CHECK(r.per_class_coverage_pred[0] + r.per_class_coverage_pred[1] == doctest::Approx(100.0));
}

TEST_CASE("absent class serializes as null and round-trips to NaN") {
    ConfusionMatrix cm(3);
    cm.at(0, 0) = 3;
    cm.at(1, 1) = 2;  // class 2 entirely absent
    auto r = compute_metrics(cm);
    CHECK(std::isnan(r.per_class_iou[2]));
    CHECK(r.miou == doctest::Approx(1.0));  // mean over defined classes only

    auto j = r.to_json();
    CHECK(j["per_class_iou"][2].is_null());
    auto back = MetricsReport::from_json(j);
    CHECK(std::isnan(back.per_class_iou[2]));
    CHECK(back.oa == r.oa);
    CHECK(back.kappa == r.kappa);
    CHECK_FALSE(back.rgb_dominance.has_value());
}

TEST_CASE("gate summary and fusion indicators") {
    GateSummary gs;
    Tensor g1({1, 1, 2, 2}, 0.8), g2({1, 1, 2, 2}, 0.2);
    gs.accumulate(g1, g2);
    CHECK(gs.pixels == 4);

    auto r = compute_metrics(cm2(2, 0, 0, 2));
    attach_fusion_indicators(r, gs, std::make_pair(0.7, 0.6));
    REQUIRE(r.rgb_dominance.has_value());
    CHECK(*r.rgb_dominance == doctest::Approx(0.8));
    CHECK(*r.sar_dominance == doctest::Approx(0.2));
    CHECK(*r.complementarity == doctest::Approx(0.25));  // min/max = 0.2/0.8
    CHECK(*r.fusion_quality == doctest::Approx(1.0 - 0.7));

    // dominances always sum to 1
    CHECK(*r.rgb_dominance + *r.sar_dominance == doctest::Approx(1.0));

    // JSON round trip keeps the optional fields
    auto back = MetricsReport::from_json(r.to_json());
    REQUIRE(back.fusion_quality.has_value());
    CHECK(*back.fusion_quality == doctest::Approx(*r.fusion_quality));
}

TEST_CASE("fusion indicators absent without gate pixels") {
    auto r = compute_metrics(cm2(1, 0, 0, 1));
    attach_fusion_indicators(r, GateSummary{}, std::nullopt);
    CHECK_FALSE(r.rgb_dominance.has_value());
    CHECK_FALSE(r.fusion_quality.has_value());
}

TEST_CASE("metric error cases") {
    CHECK_THROWS_AS(ConfusionMatrix(1), config_error);
    CHECK_THROWS_AS(overall_accuracy(ConfusionMatrix(2)), invalid_input_error);
    CHECK_THROWS_AS(kappa(ConfusionMatrix(2)), invalid_input_error);
    ConfusionMatrix a(2), b(3);
    CHECK_THROWS_AS(a += b, invalid_input_error);
}
