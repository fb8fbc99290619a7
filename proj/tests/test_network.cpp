#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "claire/checkpoint.hpp"
#include "claire/nn.hpp"

using namespace claire;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.encoder.stage_channels = {8, 16};
    cfg.encoder.se_reduction = 4;
    cfg.encoder.dropout_rate = 0.1;
    cfg.num_classes = 4;
    return cfg;
}

Tensor randn(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, scale);
    Tensor t(std::move(shape), 0.0);
    for (auto& v : t.vec()) v = d(rng);
    return t;
}

bool all_finite(const Tensor& t) {
    for (double v : t.vec())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace

TEST_CASE("model forward: logits shape, finiteness, gate range") {
    Rng rng(1);
    SegmentationModel model(tiny_config(), rng);
    Tensor opt = randn({2, 4, 32, 32}, 2, 0.3);
    Tensor sar = randn({2, 2, 32, 32}, 3, 0.3);
    RunCtx ctx;  // eval mode
    auto out = model.forward(opt, sar, ctx);
    REQUIRE(out.logits->value.shape() == std::vector<std::size_t>{2, 4, 32, 32});
    CHECK(all_finite(out.logits->value));

    // independent sigmoid gates at bottleneck resolution (two 2x pools: 32 -> 8)
    REQUIRE(out.cmaf.g1->value.shape() == std::vector<std::size_t>{2, 1, 8, 8});
    for (std::size_t i = 0; i < out.cmaf.g1->value.numel(); ++i) {
        const double a = out.cmaf.g1->value[i], b = out.cmaf.g2->value[i];
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        CHECK(b >= 0.0);
        CHECK(b <= 1.0);
    }

    // intermediate fusion state is populated
    CHECK(out.cmaf.m_o != nullptr);
    CHECK(out.cmaf.p_os != nullptr);
    CHECK(out.cmaf.mhat_s != nullptr);
    CHECK(out.cmaf.fuse_input != nullptr);
    CHECK(out.cmaf.f_fused != nullptr);
}

TEST_CASE("evaluation forward is deterministic") {
    Rng rng(4);
    SegmentationModel model(tiny_config(), rng);
    Tensor opt = randn({1, 4, 16, 16}, 5, 0.3);
    Tensor sar = randn({1, 2, 16, 16}, 6, 0.3);
    RunCtx ctx;
    auto a = model.forward(opt, sar, ctx);
    auto b = model.forward(opt, sar, ctx);
    for (std::size_t i = 0; i < a.logits->value.numel(); ++i)
        CHECK(a.logits->value[i] == b.logits->value[i]);
}

TEST_CASE("dropout is identity outside training") {
    Tensor x = randn({2, 8, 4, 4}, 7);
    RunCtx eval_ctx;
    eval_ctx.dropout_rate = 0.5;
    Var y = spatial_dropout(make_const(x), eval_ctx);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y->value[i] == x[i]);

    // training: whole channels zeroed, survivors scaled by 1/(1-rate)
    Rng rng(8);
    RunCtx train_ctx;
    train_ctx.training = true;
    train_ctx.dropout_rate = 0.5;
    train_ctx.rng = &rng;
    Var z = spatial_dropout(make_const(x), train_ctx);
    int dropped = 0;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t c = 0; c < 8; ++c) {
            bool zero = true, scaled = true;
            for (std::size_t i = 0; i < 4; ++i)
                for (std::size_t j = 0; j < 4; ++j) {
                    const double v = z->value.at(n, c, i, j);
                    zero = zero && v == 0.0;
                    scaled = scaled && std::abs(v - 2.0 * x.at(n, c, i, j)) < 1e-12;
                }
            CHECK((zero || scaled));
            dropped += zero;
        }
    CHECK(dropped > 0);
    CHECK(dropped < 16);
}

TEST_CASE("argmax_labels: lowest index wins ties") {
    Tensor logits({1, 3, 1, 2}, 0.0);
    logits.at(0, 1, 0, 1) = 2.0;  // pixel 1 -> class 1; pixel 0 all-tied -> class 0
    LabelMap lab = argmax_labels(logits, 0);
    CHECK(lab.at(0, 0) == 0);
    CHECK(lab.at(0, 1) == 1);
}

TEST_CASE("encoder rejects input not divisible by the total stride") {
    Rng rng(9);
    SegmentationModel model(tiny_config(), rng);
    RunCtx ctx;
    CHECK_THROWS_AS(
        model.forward(Tensor({1, 4, 30, 30}, 0.1), Tensor({1, 2, 30, 30}, 0.1), ctx),
        invalid_input_error);
}

TEST_CASE("checkpoint round trip is bit-identical") {
    Rng rng(10);
    SegmentationModel model(tiny_config(), rng);
    // run one training-mode forward so batchnorm buffers are non-trivial
    Rng drng(11);
    RunCtx ctx;
    ctx.training = true;
    ctx.dropout_rate = 0.1;
    ctx.rng = &drng;
    model.forward(randn({2, 4, 16, 16}, 12, 0.3), randn({2, 2, 16, 16}, 13, 0.3), ctx);

    const std::string path = "roundtrip.ckpt";
    CheckpointMeta meta;
    meta.config = model.config();
    meta.epoch = 3;
    meta.best_val_dice = 0.7125;
    save_checkpoint(path, model, meta);

    Rng rng2(999);  // different init, fully overwritten by the load
    SegmentationModel other(tiny_config(), rng2);
    CheckpointMeta loaded = load_checkpoint(path, other);
    CHECK(loaded.epoch == 3);
    CHECK(loaded.best_val_dice == 0.7125);

    std::vector<NamedTensor> a, b;
    model.collect_state("model", a);
    other.collect_state("model", b);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].tensor->numel() == b[i].tensor->numel());
        for (std::size_t k = 0; k < a[i].tensor->numel(); ++k)
            CHECK((*a[i].tensor)[k] == (*b[i].tensor)[k]);
    }

    CheckpointMeta peeked = peek_checkpoint(path);
    CHECK(peeked.epoch == 3);
    CHECK(peeked.config.num_classes == 4);

    // shape mismatch on load is rejected
    ModelConfig bigger = tiny_config();
    bigger.encoder.stage_channels = {8, 16, 32};
    Rng rng3(14);
    SegmentationModel wrong(bigger, rng3);
    CHECK_THROWS(load_checkpoint(path, wrong));
    std::remove(path.c_str());
}

TEST_CASE("state names are unique and parameters are a subset of state") {
    Rng rng(15);
    SegmentationModel model(tiny_config(), rng);
    std::vector<NamedTensor> state;
    model.collect_state("model", state);
    for (std::size_t i = 0; i < state.size(); ++i)
        for (std::size_t j = i + 1; j < state.size(); ++j)
            CHECK(state[i].name != state[j].name);

    std::vector<Var> params;
    model.collect_params(params);
    CHECK(params.size() <= state.size());
    for (const Var& p : params) {
        bool found = false;
        for (const auto& nt : state) found = found || nt.tensor == &p->value;
        CHECK(found);
    }
}
