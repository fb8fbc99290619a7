#include "claire/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "claire/losses.hpp"
#include "claire/nn.hpp"

namespace claire {

namespace {

constexpr double kStep = 1e-5;
constexpr double kFloor = 1e-8;

struct Probe {
    std::string name;
    Tensor* value;
    Tensor analytic;  // copy of the gradient after backward
};

/// Central finite differences over a strided sample of each probed tensor.
void run_fd(const std::function<double()>& eval, std::vector<Probe>& probes,
            std::size_t max_per_tensor, GradCheckResult& res) {
    const double center = eval();
    for (auto& pr : probes) {
        Tensor& t = *pr.value;
        const std::size_t n = t.numel();
        const std::size_t stride = std::max<std::size_t>(1, n / max_per_tensor);
        for (std::size_t k = 0; k < n; k += stride) {
            const double saved = t[k];
            t[k] = saved + kStep;
            const double up = eval();
            t[k] = saved - kStep;
            const double dn = eval();
            t[k] = saved;
            // one-sided differences disagreeing flags a kink (ReLU zero
            // crossing, max-pool argmax switch) where central differences
            // are meaningless; skip such probes
            const double fwd = (up - center) / kStep;
            const double bwd = (center - dn) / kStep;
            if (std::abs(fwd - bwd) >
                1e-2 * std::max(std::max(std::abs(fwd), std::abs(bwd)), kFloor))
                continue;
            const double fd = (up - dn) / (2.0 * kStep);
            const double an = pr.analytic[k];
            const double rel =
                std::abs(an - fd) / std::max(std::max(std::abs(an), std::abs(fd)), kFloor);
            ++res.checked;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = pr.name + "[" + std::to_string(k) + "]";
            }
        }
    }
}

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape), 0.0);
    std::normal_distribution<double> d(0.0, scale);
    for (auto& v : t.vec()) v = d(rng);
    return t;
}

GradCheckResult check_losses(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t C = 3, H = 6, W = 6;
    Tensor logits_val = random_tensor({1, C, H, W}, rng);
    std::uniform_int_distribution<int> lab(0, static_cast<int>(C) - 1);
    LabelMap labels(H, W);
    for (auto& v : labels.vec()) v = lab(rng);
    const Tensor onehot = one_hot({labels}, C);

    GradCheckResult res;
    const LossFamily families[] = {
        LossFamily::CE,       LossFamily::WeightedCE,      LossFamily::Focal,
        LossFamily::WeightedFocal, LossFamily::Dice,       LossFamily::Tversky,
        LossFamily::GeneralizedDice, LossFamily::FocalPlusTversky, LossFamily::RIFT,
    };
    for (LossFamily f : families) {
        LossConfig cfg;
        cfg.family = f;
        if (f == LossFamily::WeightedCE || f == LossFamily::WeightedFocal)
            cfg.class_weights = {0.2, 0.3, 0.5};

        Var logits = make_var(logits_val, true);
        Var loss = loss_graph(logits, onehot, cfg);
        backward(loss);

        std::vector<Probe> probes{{to_string(f) + ".logits", &logits_val, logits->grad}};
        auto eval = [&]() {
            Var l = make_var(logits_val, false);
            return loss_graph(l, onehot, cfg)->value[0];
        };
        run_fd(eval, probes, 40, res);
    }
    return res;
}

GradCheckResult check_cmaf(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t C = 8;
    Cmaf cmaf(C, 4, rng);
    Tensor fo_val = random_tensor({2, C, 4, 4}, rng);
    Tensor fs_val = random_tensor({2, C, 4, 4}, rng);

    RunCtx ctx;
    ctx.training = true;  // exercises the batch-statistics normalization path

    // scalar objective: a fixed random projection of the fused features
    Rng proj_rng(seed ^ 0xFACEull);
    Tensor weights;

    auto eval_state = [&](Tensor& fo, Tensor& fs) {
        Var vo = make_var(fo, true);
        Var vs = make_var(fs, true);
        CmafState st = cmaf.forward(vo, vs, ctx);
        if (weights.empty()) weights = random_tensor(st.f_fused->value.shape(), proj_rng);
        Var obj = sum_all(mul_const(st.f_fused, weights));
        return std::make_tuple(obj, vo, vs);
    };

    auto [obj, vo, vs] = eval_state(fo_val, fs_val);
    backward(obj);

    std::vector<Probe> probes{{"cmaf.f_optical", &fo_val, vo->grad},
                              {"cmaf.f_sar", &fs_val, vs->grad}};
    std::vector<Var> params;
    cmaf.collect_params(params);
    std::vector<NamedTensor> state;
    cmaf.collect_state("cmaf", state);
    // match parameter nodes back to names via the tensor pointer
    for (const auto& p : params) {
        std::string name = "param";
        for (const auto& nt : state)
            if (nt.tensor == &p->value) name = nt.name;
        probes.push_back({name, &p->value, p->grad});
    }

    auto eval = [&]() { return std::get<0>(eval_state(fo_val, fs_val))->value[0]; };
    GradCheckResult res;
    run_fd(eval, probes, 8, res);
    return res;
}

GradCheckResult check_network(std::uint64_t seed) {
    Rng rng(seed);
    ModelConfig cfg;
    cfg.encoder.stage_channels = {4, 8};
    cfg.encoder.se_reduction = 2;
    cfg.encoder.dropout_rate = 0.0;
    cfg.num_classes = 3;
    SegmentationModel model(cfg, rng);

    Tensor opt_val = random_tensor({2, 4, 8, 8}, rng, 0.5);
    Tensor sar_val = random_tensor({2, 2, 8, 8}, rng, 0.5);
    std::uniform_int_distribution<int> lab(0, 2);
    std::vector<LabelMap> labels(2, LabelMap(8, 8));
    for (auto& lm : labels)
        for (auto& v : lm.vec()) v = lab(rng);
    const Tensor onehot = one_hot(labels, cfg.num_classes);
    LossConfig loss_cfg;
    loss_cfg.family = LossFamily::CE;

    RunCtx ctx;
    ctx.training = true;

    auto forward_loss = [&](Tensor& o, Tensor& s) {
        Var vo = make_var(o, true);
        Var vs = make_var(s, true);
        ForwardResult fr = model.forward_vars(vo, vs, ctx);
        Var loss = loss_graph(fr.logits, onehot, loss_cfg);
        return std::make_tuple(loss, vo, vs);
    };

    auto [loss, vo, vs] = forward_loss(opt_val, sar_val);
    backward(loss);

    std::vector<Probe> probes{{"network.optical", &opt_val, vo->grad},
                              {"network.sar", &sar_val, vs->grad}};
    std::vector<Var> params;
    model.collect_params(params);
    std::vector<NamedTensor> state;
    model.collect_state("model", state);
    for (const auto& p : params) {
        std::string name = "param";
        for (const auto& nt : state)
            if (nt.tensor == &p->value) name = nt.name;
        probes.push_back({name, &p->value, p->grad});
    }

    auto eval = [&]() { return std::get<0>(forward_loss(opt_val, sar_val))->value[0]; };
    GradCheckResult res;
    run_fd(eval, probes, 4, res);
    return res;
}

}  // namespace

GradCheckResult grad_check(const std::string& component, std::uint64_t seed) {
    if (component == "losses") return check_losses(seed);
    if (component == "cmaf") return check_cmaf(seed);
    if (component == "network") return check_network(seed);
    throw config_error("grad_check: unknown component '" + component +
                       "' (expected losses, cmaf, or network)");
}

}  // namespace claire
