#include "claire/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace claire {

LossFamily loss_family_from_string(const std::string& s) {
    static const std::map<std::string, LossFamily> table = {
        {"ce", LossFamily::CE},
        {"weighted_ce", LossFamily::WeightedCE},
        {"focal", LossFamily::Focal},
        {"weighted_focal", LossFamily::WeightedFocal},
        {"dice", LossFamily::Dice},
        {"tversky", LossFamily::Tversky},
        {"generalized_dice", LossFamily::GeneralizedDice},
        {"focal_plus_tversky", LossFamily::FocalPlusTversky},
        {"rift", LossFamily::RIFT},
    };
    auto it = table.find(s);
    if (it == table.end()) throw config_error("unknown loss family: " + s);
    return it->second;
}

std::string to_string(LossFamily f) {
    switch (f) {
        case LossFamily::CE: return "ce";
        case LossFamily::WeightedCE: return "weighted_ce";
        case LossFamily::Focal: return "focal";
        case LossFamily::WeightedFocal: return "weighted_focal";
        case LossFamily::Dice: return "dice";
        case LossFamily::Tversky: return "tversky";
        case LossFamily::GeneralizedDice: return "generalized_dice";
        case LossFamily::FocalPlusTversky: return "focal_plus_tversky";
        case LossFamily::RIFT: return "rift";
    }
    return "?";
}

void LossConfig::validate() const {
    if (alpha <= 0.0 || beta <= 0.0) throw config_error("loss: alpha and beta must be > 0");
    if (eps <= 0.0) throw config_error("loss: eps must be > 0");
    if (family == LossFamily::RIFT) {
        if (gamma <= 0.0) throw config_error("rift: gamma must be > 0");
        if (gamma > 1.0 && !allow_gamma_above_one)
            throw config_error(
                "rift: gamma > 1 requires the explicit override flag (allow_gamma_above_one)");
    } else if (gamma < 0.0) {
        throw config_error("loss: gamma must be >= 0");
    }
}

std::vector<double> class_weights_inverse_frequency(const std::vector<long long>& pixel_counts,
                                                    double eps) {
    long long total = 0;
    for (long long c : pixel_counts) total += c;
    if (total <= 0) throw config_error("class weights: all pixel counts are zero");
    const std::size_t n = pixel_counts.size();
    std::vector<double> inv(n);
    double sum_inv = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        double f = static_cast<double>(pixel_counts[c]) / static_cast<double>(total);
        if (f <= 0.0) f = eps;  // frequency floor for absent classes
        inv[c] = 1.0 / f;
        sum_inv += inv[c];
    }
    for (auto& w : inv) w /= sum_inv;
    return inv;
}

Tensor one_hot(const std::vector<LabelMap>& labels, std::size_t num_classes) {
    if (labels.empty()) throw invalid_input_error("one_hot: empty batch");
    const std::size_t N = labels.size(), H = labels[0].height(), W = labels[0].width();
    Tensor t({N, num_classes, H, W}, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
        if (labels[n].height() != H || labels[n].width() != W)
            throw invalid_input_error("one_hot: inconsistent label shapes in batch");
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j) {
                const int y = labels[n].at(i, j);
                if (y < 0 || y >= static_cast<int>(num_classes))
                    throw invalid_input_error(
                        "label " + std::to_string(y) + " out of range [0," +
                        std::to_string(num_classes - 1) + "] at sample " + std::to_string(n) +
                        " pixel (" + std::to_string(i) + "," + std::to_string(j) + ")");
                t.at(n, static_cast<std::size_t>(y), i, j) = 1.0;
            }
    }
    return t;
}

namespace {

Tensor complement(const Tensor& t) {
    Tensor c = t;
    for (auto& v : c.vec()) v = 1.0 - v;
    return c;
}

// Per-pixel map of the true-class probability, N x 1 x H x W.
Var true_class_prob(const Var& probs, const Tensor& onehot) {
    return channel_sum(mul_const(probs, onehot));
}

// Per-pixel class weights as a constant map matching p_true's shape.
Tensor weight_map(const Tensor& onehot, const std::vector<double>& weights) {
    const auto& s = onehot.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    Tensor w({N, 1, s[2], s[3]}, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double wc = weights[c];
            const double* oh = onehot.data() + (n * C + c) * HW;
            double* dst = w.data() + n * HW;
            for (std::size_t i = 0; i < HW; ++i)
                if (oh[i] != 0.0) dst[i] = wc;
        }
    return w;
}

std::vector<double> resolved_weights(const LossConfig& cfg, std::size_t C, bool weighted) {
    if (!weighted) return std::vector<double>(C, 1.0);
    if (cfg.class_weights.empty())
        return std::vector<double>(C, 1.0 / static_cast<double>(C));
    if (cfg.class_weights.size() != C)
        throw config_error("loss: class_weights size does not match class count");
    return cfg.class_weights;
}

// -(1/Npix) sum alpha_y (1-p_y)^gamma log p_y; gamma = 0 recovers (weighted) CE.
Var focal_graph(const Var& probs, const Tensor& onehot, const LossConfig& cfg, double gamma,
                bool weighted) {
    const std::size_t C = onehot.dim(1);
    const double npix = static_cast<double>(onehot.numel() / C);
    Var p_true = true_class_prob(probs, onehot);
    Var term = scalar_mul(log_clamped(p_true, cfg.eps), -1.0);
    if (gamma != 0.0) term = mul(pow_const(one_minus(p_true), gamma), term);
    term = mul_const(term, weight_map(onehot, resolved_weights(cfg, C, weighted)));
    return scalar_mul(sum_all(term), 1.0 / npix);
}

// 1 - mean_c TI_c with the focal exponent applied to the pixel-wise soft counts.
// gamma = 1 is the plain Tversky loss; alpha scales FP, beta scales FN.
Var tversky_graph(const Var& probs, const Tensor& onehot, double alpha, double beta, double gamma,
                  double eps) {
    const Tensor not_t = complement(onehot);
    Var tp = class_sum(pow_const(mul_const(probs, onehot), gamma));
    Var fp = class_sum(pow_const(mul_const(probs, not_t), gamma));
    Var fn = class_sum(pow_const(mul_const(one_minus(probs), onehot), gamma));
    Var denom = add(tp, add(scalar_mul(fp, alpha), scalar_mul(fn, beta)));
    Var ti = div(scalar_add(tp, eps), scalar_add(denom, eps));
    return one_minus(mean_all(ti));
}

Var generalized_dice_graph(const Var& probs, const Tensor& onehot, double eps) {
    const auto& s = onehot.shape();
    const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
    std::vector<double> wc(C, 0.0);
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* oh = onehot.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) wc[c] += oh[i];
        }
    for (auto& v : wc) v = 1.0 / std::max(v * v, eps);
    Var inter = class_sum(mul_const(probs, onehot));
    Tensor oh_sum({C}, 0.0);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t n = 0; n < N; ++n) {
            const double* oh = onehot.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) oh_sum[c] += oh[i];
        }
    Var total = add(class_sum(probs), make_const(oh_sum));
    Tensor wt = Tensor::from_data({C}, wc);
    Var num = scalar_mul(sum_all(mul_const(inter, wt)), 2.0);
    Var den = sum_all(mul_const(total, wt));
    return one_minus(div(scalar_add(num, eps), scalar_add(den, eps)));
}

}  // namespace

std::vector<double> tversky_index_per_class(const Tensor& p, const Tensor& t,
                                            const LossConfig& cfg) {
    if (!p.same_shape(t)) throw invalid_input_error("tversky: p/t shape mismatch");
    const std::size_t C = p.dim(1), N = p.dim(0), HW = p.dim(2) * p.dim(3);
    std::vector<double> ti(C);
    for (std::size_t c = 0; c < C; ++c) {
        double tp = 0.0, fp = 0.0, fn = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            const double* pp = p.data() + (n * C + c) * HW;
            const double* tt = t.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
                tp += pp[i] * tt[i];
                fp += pp[i] * (1.0 - tt[i]);
                fn += (1.0 - pp[i]) * tt[i];
            }
        }
        ti[c] = (tp + cfg.eps) / (tp + cfg.alpha * fp + cfg.beta * fn + cfg.eps);
    }
    return ti;
}

Var loss_graph(const Var& logits, const Tensor& onehot, const LossConfig& cfg) {
    cfg.validate();
    if (!logits->value.same_shape(onehot))
        throw invalid_input_error("loss: logits/targets shape mismatch");
    Var probs = softmax_channel(logits);
    switch (cfg.family) {
        case LossFamily::CE:
            return focal_graph(probs, onehot, cfg, 0.0, false);
        case LossFamily::WeightedCE:
            return focal_graph(probs, onehot, cfg, 0.0, true);
        case LossFamily::Focal:
            return focal_graph(probs, onehot, cfg, cfg.gamma, false);
        case LossFamily::WeightedFocal:
            return focal_graph(probs, onehot, cfg, cfg.gamma, true);
        case LossFamily::Dice:
            return tversky_graph(probs, onehot, 0.5, 0.5, 1.0, cfg.eps);
        case LossFamily::Tversky:
            return tversky_graph(probs, onehot, cfg.alpha, cfg.beta, 1.0, cfg.eps);
        case LossFamily::GeneralizedDice:
            return generalized_dice_graph(probs, onehot, cfg.eps);
        case LossFamily::FocalPlusTversky:
            return add(focal_graph(probs, onehot, cfg, cfg.gamma, true),
                       tversky_graph(probs, onehot, cfg.alpha, cfg.beta, 1.0, cfg.eps));
        case LossFamily::RIFT:
            return tversky_graph(probs, onehot, cfg.alpha, cfg.beta, cfg.gamma, cfg.eps);
    }
    throw config_error("loss: unhandled family");
}

LossResult compute_loss(const Tensor& logits, const std::vector<LabelMap>& labels,
                        const LossConfig& cfg) {
    Var x = make_var(logits, true);
    Var loss = loss_graph(x, one_hot(labels, logits.dim(1)), cfg);
    backward(loss);
    LossResult r;
    r.value = loss->value[0];
    r.grad_logits = x->grad.same_shape(x->value) ? x->grad : Tensor(logits.shape(), 0.0);
    if (!std::isfinite(r.value))
        throw numerical_error("loss '" + to_string(cfg.family) + "' produced a non-finite value");
    return r;
}

}  // namespace claire
