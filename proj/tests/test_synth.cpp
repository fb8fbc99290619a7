#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "claire/synth.hpp"

using namespace claire;

namespace {

SynthSpec small_spec() {
    SynthSpec spec;
    spec.num_classes = 4;
    spec.patches = 20;
    spec.patch_size = 32;
    spec.seed = 42;
    return spec;
}

}  // namespace

TEST_CASE("generation is deterministic for a fixed seed") {
    auto a = generate_synthetic(small_spec());
    auto b = generate_synthetic(small_spec());
    REQUIRE(a.train.size() == b.train.size());
    for (std::size_t s = 0; s < a.train.size(); ++s) {
        CHECK(a.train[s].optical.vec() == b.train[s].optical.vec());
        CHECK(a.train[s].sar.vec() == b.train[s].sar.vec());
        CHECK(a.train[s].label.vec() == b.train[s].label.vec());
    }

    SynthSpec other = small_spec();
    other.seed = 43;
    auto c = generate_synthetic(other);
    CHECK(a.train[0].optical.vec() != c.train[0].optical.vec());
}

TEST_CASE("split sizes follow 80:10:10 in generation order") {
    auto ds = generate_synthetic(small_spec());
    CHECK(ds.train.size() == 16);
    CHECK(ds.val.size() == 2);
    CHECK(ds.test.size() == 2);
    CHECK(ds.total() == 20);

    // tiny datasets still get non-empty val/test splits
    SynthSpec tiny = small_spec();
    tiny.patches = 3;
    auto t = generate_synthetic(tiny);
    CHECK(!t.train.empty());
    CHECK(!t.val.empty());
    CHECK(!t.test.empty());
}

TEST_CASE("shapes and value ranges") {
    auto ds = generate_synthetic(small_spec());
    for (const auto& s : ds.train) {
        CHECK(s.optical.shape() == std::vector<std::size_t>{4, 32, 32});
        CHECK(s.sar.shape() == std::vector<std::size_t>{2, 32, 32});
        CHECK(s.label.height() == 32);
        for (double v : s.optical.vec()) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (double v : s.sar.vec()) CHECK(std::isfinite(v));
        for (int v : s.label.vec()) {
            CHECK(v >= 0);
            CHECK(v <= 3);
        }
    }
}

TEST_CASE("class frequencies track the requested proportions") {
    SynthSpec spec = small_spec();
    spec.patches = 40;
    spec.class_proportions = {0.5, 0.3, 0.15, 0.05};
    auto ds = generate_synthetic(spec);
    auto freq = class_frequencies(ds.train, 4);
    CHECK(std::abs(freq[0] - 0.5) < 0.05);
    CHECK(std::abs(freq[1] - 0.3) < 0.05);
    CHECK(std::abs(freq[2] - 0.15) < 0.05);
    CHECK(std::abs(freq[3] - 0.05) < 0.02);  // rare polyline budget
    CHECK(freq[3] > 0.0);
}

TEST_CASE("default proportions make the last class rare") {
    auto props = SynthSpec{}.resolved_proportions();
    CHECK(props.back() == doctest::Approx(0.03));
    double sum = 0.0;
    for (double p : props) sum += p;
    CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("clouds only touch optical pixels; SAR and labels are unchanged") {
    SynthSpec clear = small_spec();
    SynthSpec cloudy = small_spec();
    cloudy.cloud_fraction = 0.4;
    auto a = generate_synthetic(clear);
    auto b = generate_synthetic(cloudy);
    REQUIRE(a.train.size() == b.train.size());
    std::size_t changed = 0;
    for (std::size_t s = 0; s < a.train.size(); ++s) {
        CHECK(a.train[s].sar.vec() == b.train[s].sar.vec());
        CHECK(a.train[s].label.vec() == b.train[s].label.vec());
        const std::size_t npix = 32 * 32;
        for (std::size_t i = 0; i < npix; ++i) {
            bool touched = false;
            for (std::size_t c = 0; c < 4; ++c)
                touched = touched ||
                          a.train[s].optical[c * npix + i] != b.train[s].optical[c * npix + i];
            if (touched) {
                ++changed;
                // occluded pixels are bright in every channel
                for (std::size_t c = 0; c < 4; ++c)
                    CHECK(b.train[s].optical[c * npix + i] > 0.7);
            }
        }
    }
    // roughly 40% of all optical pixels are covered
    const double frac =
        static_cast<double>(changed) / static_cast<double>(a.train.size() * 32 * 32);
    CHECK(frac > 0.3);
    CHECK(frac < 0.5);
}

TEST_CASE("spec validation rejects out-of-range settings") {
    SynthSpec s = small_spec();
    s.num_classes = 1;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.patches = 0;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.patch_size = 4;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.cloud_fraction = 1.5;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.class_proportions = {0.5, 0.5, 0.5, 0.5};
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.class_proportions = {0.2, 0.2, 0.2, 0.4};  // rare class too large
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.class_proportions = {0.5, 0.3};  // wrong length
    CHECK_THROWS_AS(s.validate(), config_error);
}
