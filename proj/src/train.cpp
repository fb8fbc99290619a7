#include "claire/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

namespace claire {

AdamW::AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1, double beta2,
             double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    if (lr_ < 0 || wd_ < 0) throw config_error("AdamW: lr and weight_decay must be >= 0");
    for (const auto& p : params_) {
        m_.emplace_back(p->value.shape(), 0.0);
        v_.emplace_back(p->value.shape(), 0.0);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Node& p = *params_[i];
        Tensor& g = p.ensure_grad();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t k = 0; k < g.numel(); ++k) {
            m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
            v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            // decoupled weight decay, scaled by lr so lr = 0 freezes the model
            p.value[k] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p.value[k]);
        }
    }
}

void AdamW::zero_grad() {
    for (const auto& p : params_) p->ensure_grad().zero();
}

double PlateauScheduler::observe(double monitored, double current_lr) {
    if (monitored < best - min_delta) {
        best = monitored;
        stall = 0;
        return current_lr;
    }
    if (++stall > patience) {
        stall = 0;
        return std::max(current_lr * factor, min_lr);
    }
    return current_lr;
}

void TrainConfig::validate() const {
    loss.validate();
    if (epochs < 1) throw config_error("train: epochs must be >= 1");
    if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
    if (lr < 0) throw config_error("train: lr must be >= 0");
    if (weight_decay < 0) throw config_error("train: weight_decay must be >= 0");
    if (plateau_factor <= 0 || plateau_factor >= 1)
        throw config_error("train: plateau_factor must be in (0, 1)");
    if (plateau_patience < 0) throw config_error("train: plateau_patience must be >= 0");
    if (model.encoder.stage_channels.empty())
        throw config_error("train: encoder must have at least one stage");
}

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw invalid_input_error("make_batch: empty index list");
    const Sample& first = samples.at(indices[0]);
    const std::size_t oc = first.optical.dim(0), sc = first.sar.dim(0);
    const std::size_t h = first.optical.dim(1), w = first.optical.dim(2);
    Batch b;
    b.optical = Tensor({indices.size(), oc, h, w}, 0.0);
    b.sar = Tensor({indices.size(), sc, h, w}, 0.0);
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const Sample& s = samples.at(indices[n]);
        if (s.optical.dim(1) != h || s.optical.dim(2) != w)
            throw invalid_input_error("make_batch: inconsistent patch sizes");
        std::copy(s.optical.vec().begin(), s.optical.vec().end(),
                  b.optical.data() + n * oc * h * w);
        std::copy(s.sar.vec().begin(), s.sar.vec().end(), b.sar.data() + n * sc * h * w);
        b.labels.push_back(s.label);
    }
    return b;
}

namespace {

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, int batch_size,
                                                    Rng* shuffle_rng) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_rng) std::shuffle(order.begin(), order.end(), *shuffle_rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < count; i += static_cast<std::size_t>(batch_size))
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() +
                                 static_cast<std::ptrdiff_t>(
                                     std::min(count, i + static_cast<std::size_t>(batch_size))));
    return batches;
}

double eval_loss(SegmentationModel& model, const std::vector<Sample>& samples,
                 const LossConfig& loss_cfg, int batch_size) {
    RunCtx ctx;  // eval mode
    double total = 0.0;
    std::size_t pixels_batches = 0;
    for (const auto& idx : batch_indices(samples.size(), batch_size, nullptr)) {
        Batch b = make_batch(samples, idx);
        ForwardResult fr = model.forward(b.optical, b.sar, ctx);
        Var loss = loss_graph(fr.logits, one_hot(b.labels, model.config().num_classes), loss_cfg);
        total += loss->value[0] * static_cast<double>(idx.size());
        pixels_batches += idx.size();
    }
    return pixels_batches ? total / static_cast<double>(pixels_batches) : 0.0;
}

}  // namespace

TrainingLog train(SegmentationModel& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw invalid_input_error("train: train and validation sets must be non-empty");

    std::vector<Var> params;
    model.collect_params(params);
    AdamW opt(params, cfg.lr, cfg.weight_decay);
    PlateauScheduler sched{cfg.plateau_factor, cfg.plateau_patience};

    Rng shuffle_rng(cfg.seed ^ 0x5E5Eull);
    Rng dropout_rng(cfg.seed ^ 0xD120ull);

    if (!cfg.checkpoint_dir.empty()) std::filesystem::create_directories(cfg.checkpoint_dir);

    TrainingLog log;
    const std::size_t num_classes = model.config().num_classes;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RunCtx ctx;
        ctx.training = true;
        ctx.dropout_rate = cfg.model.encoder.dropout_rate;
        ctx.rng = &dropout_rng;

        double train_loss = 0.0;
        std::size_t seen = 0;
        int batch_no = 0;
        for (const auto& idx : batch_indices(train_set.size(), cfg.batch_size, &shuffle_rng)) {
            Batch b = make_batch(train_set, idx);
            ForwardResult fr = model.forward(b.optical, b.sar, ctx);
            Var loss = loss_graph(fr.logits, one_hot(b.labels, num_classes), cfg.loss);
            const double lv = loss->value[0];
            if (!std::isfinite(lv))
                throw numerical_error("non-finite " + to_string(cfg.loss.family) +
                                      " loss in epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(batch_no));
            opt.zero_grad();
            backward(loss);
            opt.step();
            train_loss += lv * static_cast<double>(idx.size());
            seen += idx.size();
            ++batch_no;
        }
        train_loss /= static_cast<double>(seen);

        const double val_loss = eval_loss(model, val_set, cfg.loss, cfg.batch_size);
        EvalOptions eo;
        eo.batch_size = cfg.batch_size;
        eo.collect_gates = false;
        const double val_dice = evaluate(model, val_set, eo).report.mean_dice;

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss;
        st.val_loss = val_loss;
        st.val_mean_dice = val_dice;
        st.lr = opt.lr();
        log.epochs.push_back(st);
        if (cfg.verbose)
            std::printf("epoch %3d  train %.5f  val %.5f  dice %.4f  lr %.2e\n", epoch, train_loss,
                        val_loss, val_dice, opt.lr());

        if (val_dice > log.best_val_dice || log.best_epoch < 0) {
            log.best_val_dice = val_dice;
            log.best_epoch = epoch;
            if (!cfg.checkpoint_dir.empty()) {
                log.best_checkpoint_path = cfg.checkpoint_dir + "/best.ckpt";
                save_checkpoint(log.best_checkpoint_path, model,
                                {cfg.model, epoch, log.best_val_dice});
            }
        }
        opt.set_lr(sched.observe(val_loss, opt.lr()));
    }
    log.steps = opt.steps();
    if (!cfg.checkpoint_dir.empty())
        save_checkpoint(cfg.checkpoint_dir + "/last.ckpt", model,
                        {cfg.model, cfg.epochs - 1, log.best_val_dice});
    return log;
}

EvalResult evaluate(SegmentationModel& model, const std::vector<Sample>& samples,
                    const EvalOptions& opts) {
    if (samples.empty()) throw invalid_input_error("evaluate: empty sample set");
    const std::size_t num_classes = model.config().num_classes;
    RunCtx ctx;  // eval mode

    ConfusionMatrix cm(num_classes);
    GateSummary gates;
    Tensor sum_g1, sum_g2;
    std::size_t gate_batches = 0;
    for (const auto& idx : batch_indices(samples.size(), opts.batch_size, nullptr)) {
        Batch b = make_batch(samples, idx);
        ForwardResult fr = model.forward(b.optical, b.sar, ctx);
        for (std::size_t n = 0; n < idx.size(); ++n)
            cm.accumulate(b.labels[n], argmax_labels(fr.logits->value, n));
        if (opts.collect_gates) {
            const Tensor& g1 = fr.cmaf.g1->value;
            const Tensor& g2 = fr.cmaf.g2->value;
            gates.accumulate(g1, g2);
            const std::size_t gh = g1.dim(2), gw = g1.dim(3);
            if (sum_g1.empty()) {
                sum_g1 = Tensor({gh, gw}, 0.0);
                sum_g2 = Tensor({gh, gw}, 0.0);
            }
            for (std::size_t n = 0; n < g1.dim(0); ++n)
                for (std::size_t i = 0; i < gh; ++i)
                    for (std::size_t j = 0; j < gw; ++j) {
                        sum_g1.at(i, j) += g1.at(n, 0, i, j);
                        sum_g2.at(i, j) += g2.at(n, 0, i, j);
                    }
            gate_batches += idx.size();
        }
    }

    EvalResult res{compute_metrics(cm), cm, gates, {}, {}};
    if (gate_batches > 0) {
        res.mean_g1 = sum_g1;
        res.mean_g2 = sum_g2;
        for (auto& v : res.mean_g1.vec()) v /= static_cast<double>(gate_batches);
        for (auto& v : res.mean_g2.vec()) v /= static_cast<double>(gate_batches);
    }

    std::optional<std::pair<double, double>> per_modality;
    if (opts.per_modality) {
        auto oa_with_zeroed = [&](bool zero_sar) {
            ConfusionMatrix m(num_classes);
            for (const auto& idx : batch_indices(samples.size(), opts.batch_size, nullptr)) {
                Batch b = make_batch(samples, idx);
                if (zero_sar)
                    b.sar.zero();
                else
                    b.optical.zero();
                ForwardResult fr = model.forward(b.optical, b.sar, ctx);
                for (std::size_t n = 0; n < idx.size(); ++n)
                    m.accumulate(b.labels[n], argmax_labels(fr.logits->value, n));
            }
            return overall_accuracy(m);
        };
        per_modality = std::make_pair(oa_with_zeroed(true), oa_with_zeroed(false));
    }
    if (opts.collect_gates || per_modality)
        attach_fusion_indicators(res.report, gates, per_modality);
    res.report.cloud_fraction = opts.cloud_fraction;
    return res;
}

}  // namespace claire
