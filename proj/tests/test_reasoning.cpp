#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "claire/reasoning.hpp"

using namespace claire;

namespace {

MetricsReport random_report(std::mt19937_64& rng, bool with_fusion) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = 2 + rng() % 4;
    MetricsReport r;
    r.per_class_iou.resize(n);
    r.per_class_dice.resize(n);
    r.per_class_coverage_pred.resize(n);
    r.per_class_coverage_gt.resize(n);
    r.per_class_signed_error.resize(n);
    r.detection_rate.resize(n);
    r.prediction_precision.resize(n);
    double cov = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        const double iou = u(rng);
        r.per_class_iou[c] = iou;
        r.per_class_dice[c] = 2 * iou / (1 + iou);
        r.per_class_coverage_gt[c] = 100.0 / static_cast<double>(n);
        r.per_class_coverage_pred[c] = u(rng) * 100.0;
        cov += r.per_class_coverage_pred[c];
        r.detection_rate[c] = u(rng);
        r.prediction_precision[c] = u(rng);
    }
    for (std::size_t c = 0; c < n; ++c) {
        r.per_class_coverage_pred[c] *= 100.0 / cov;
        r.per_class_signed_error[c] = r.per_class_coverage_pred[c] - r.per_class_coverage_gt[c];
        r.systematic_bias = std::max(r.systematic_bias, std::abs(r.per_class_signed_error[c]));
    }
    // occasional undefined entries
    if (rng() % 4 == 0) {
        r.per_class_iou[0] = std::numeric_limits<double>::quiet_NaN();
        r.detection_rate[0] = std::numeric_limits<double>::quiet_NaN();
    }
    r.miou = u(rng);
    r.mean_dice = u(rng);
    r.oa = u(rng);
    r.kappa = r.oa - 0.1;
    if (with_fusion) {
        const double d = u(rng);
        r.rgb_dominance = d;
        r.sar_dominance = 1.0 - d;
        r.complementarity = u(rng);
        r.fusion_quality = u(rng) - 0.5;
        if (rng() % 2) r.cloud_fraction = u(rng);
    }
    return r;
}

}  // namespace

TEST_CASE("prompt lists every included field by name") {
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 200; ++rep) {
        MetricsReport r = random_report(rng, rep % 2 == 0);
        ReasoningPrompt p = build_prompt(r, {"vegetation", "water"}, "s" + std::to_string(rep));
        CHECK(p.fields_included.size() >= 12);
        for (const auto& f : p.fields_included)
            CHECK(p.text.find(f + ":") != std::string::npos);
        // fusion fields appear iff present on the report
        CHECK((p.text.find("rgb_dominance") != std::string::npos) ==
              r.rgb_dominance.has_value());
        CHECK((p.text.find("cloud_fraction") != std::string::npos) ==
              r.cloud_fraction.has_value());
        CHECK(p.text.find("Sample: s" + std::to_string(rep)) != std::string::npos);
        // never a stray placeholder; NaN entries render as "n/a"
        CHECK(p.text.find("{") == std::string::npos);
        CHECK(p.text.find(": nan") == std::string::npos);
        CHECK(p.text.find("[nan") == std::string::npos);
        CHECK(p.text.find(" nan,") == std::string::npos);
        if (std::isnan(r.per_class_iou[0]))
            CHECK(p.text.find("n/a") != std::string::npos);
    }
}

TEST_CASE("prompt building is deterministic") {
    std::mt19937_64 rng(2);
    MetricsReport r = random_report(rng, true);
    ReasoningPrompt a = build_prompt(r, {"a", "b", "c"}, "x");
    ReasoningPrompt b = build_prompt(r, {"a", "b", "c"}, "x");
    CHECK(a.text == b.text);
}

TEST_CASE("optical dominance note") {
    std::mt19937_64 rng(3);
    MetricsReport r = random_report(rng, true);
    r.rgb_dominance = 0.8;
    r.sar_dominance = 0.2;
    ReasoningPrompt p = build_prompt(r, {}, "s");
    CHECK(p.text.find("prediction predominantly driven by optical features") != std::string::npos);
    r.rgb_dominance = 0.3;
    r.sar_dominance = 0.7;
    p = build_prompt(r, {}, "s");
    CHECK(p.text.find("prediction predominantly driven by SAR features") != std::string::npos);
}

TEST_CASE("template explanation is total over random reports") {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 200; ++rep) {
        MetricsReport r = random_report(rng, rep % 2 == 0);
        ReasoningPrompt p = build_prompt(r, {"veg", "water", "urban"}, "s");
        Explanation e = explain_template(p, r);
        CHECK(e.source == Explanation::Source::Template);
        CHECK(!e.text.empty());
        CHECK(e.text.find(": nan") == std::string::npos);
        CHECK(e.text.find("(nan") == std::string::npos);
        CHECK(e.text.find("{") == std::string::npos);
    }
    // degenerate all-zero report still explains
    MetricsReport z;
    z.per_class_iou = {0.0, 0.0};
    z.per_class_dice = {0.0, 0.0};
    z.per_class_coverage_pred = {100.0, 0.0};
    z.per_class_coverage_gt = {0.0, 100.0};
    z.per_class_signed_error = {100.0, -100.0};
    z.detection_rate = {0.0, 0.0};
    z.prediction_precision = {0.0, 0.0};
    z.systematic_bias = 100.0;
    Explanation e = explain_template(build_prompt(z, {}, "z"), z);
    CHECK(!e.text.empty());
}

TEST_CASE("template names the weakest class") {
    MetricsReport r;
    r.per_class_iou = {0.9, 0.2, 0.8};
    r.per_class_dice = {0.95, 0.33, 0.89};
    r.per_class_coverage_pred = {40, 20, 40};
    r.per_class_coverage_gt = {40, 20, 40};
    r.per_class_signed_error = {0, 0, 0};
    r.detection_rate = {0.9, 0.3, 0.8};
    r.prediction_precision = {0.9, 0.4, 0.8};
    r.oa = 0.85;
    r.miou = 0.63;
    ReasoningPrompt p = build_prompt(r, {"forest", "road", "water"}, "s");
    Explanation e = explain_template(p, r);
    CHECK(e.text.find("struggled most with road") != std::string::npos);
    CHECK(e.text.find("segmented forest most reliably") != std::string::npos);
}

TEST_CASE("template attributes SAR reliance to cloud cover when cloudy") {
    MetricsReport r;
    r.per_class_iou = {0.8, 0.6};
    r.per_class_dice = {0.89, 0.75};
    r.per_class_coverage_pred = {50, 50};
    r.per_class_coverage_gt = {50, 50};
    r.per_class_signed_error = {0, 0};
    r.detection_rate = {0.8, 0.7};
    r.prediction_precision = {0.8, 0.7};
    r.sar_dominance = 0.75;
    r.rgb_dominance = 0.25;
    r.cloud_fraction = 0.4;
    Explanation e = explain_template(build_prompt(r, {}, "s"), r);
    CHECK(e.text.find("optical data was obscured by cloud cover") != std::string::npos);

    r.cloud_fraction = 0.0;  // same dominance without clouds: no such attribution
    e = explain_template(build_prompt(r, {}, "s"), r);
    CHECK(e.text.find("obscured by cloud cover") == std::string::npos);
    CHECK(e.text.find("SAR") != std::string::npos);
}

TEST_CASE("external endpoint failure degrades to the template") {
    std::mt19937_64 rng(5);
    MetricsReport r = random_report(rng, true);
    ReasoningPrompt p = build_prompt(r, {"a", "b"}, "s1");
    EndpointConfig ep;
    ep.url = "http://127.0.0.1:9/v1/chat/completions";  // discard port: unreachable
    ep.timeout_seconds = 0.5;
    Explanation e = explain_external(p, r, ep);
    CHECK(e.source == Explanation::Source::Template);
    CHECK(e.text == explain_template(p, r).text);
}

TEST_CASE("endpoint config validation") {
    EndpointConfig ep;
    CHECK_THROWS_AS(ep.validate(), config_error);  // empty url
    ep.url = "ftp://host/x";
    CHECK_THROWS_AS(ep.validate(), config_error);
    ep.url = "http://host/x";
    ep.timeout_seconds = 0;
    CHECK_THROWS_AS(ep.validate(), config_error);
    ep.timeout_seconds = 5;
    ep.max_in_flight = 0;
    CHECK_THROWS_AS(ep.validate(), config_error);
    ep.max_in_flight = 1;
    CHECK_NOTHROW(ep.validate());
}
