#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "claire/checkpoint.hpp"
#include "claire/losses.hpp"
#include "claire/metrics.hpp"
#include "claire/nn.hpp"

namespace claire {

/// AdamW: Adam moments on the gradient, weight decay applied decoupled and
/// scaled by the current learning rate.
class AdamW {
public:
    AdamW(std::vector<Var> params, double lr, double weight_decay, double beta1 = 0.9,
          double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }
    long long steps() const { return t_; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_, v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    long long t_ = 0;
};

/// Reduce-on-plateau: halve the learning rate when the monitored value has not
/// improved for `patience` epochs.
struct PlateauScheduler {
    double factor = 0.5;
    int patience = 5;
    double min_lr = 1e-7;
    double min_delta = 1e-6;

    double best = std::numeric_limits<double>::infinity();
    int stall = 0;

    /// Returns the (possibly reduced) learning rate.
    double observe(double monitored, double current_lr);
};

struct TrainConfig {
    ModelConfig model;
    LossConfig loss;
    int epochs = 20;
    int batch_size = 8;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double plateau_factor = 0.5;
    int plateau_patience = 5;
    std::uint64_t seed = 0;
    std::string checkpoint_dir;  // empty -> no checkpoints written
    bool verbose = false;

    void validate() const;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mean_dice = 0.0;
    double lr = 0.0;
};

struct TrainingLog {
    std::vector<EpochStats> epochs;
    double best_val_dice = 0.0;
    int best_epoch = -1;
    long long steps = 0;
    std::string best_checkpoint_path;  // empty when checkpointing disabled
};

/// A batch of samples stacked into NCHW tensors.
struct Batch {
    Tensor optical, sar;
    std::vector<LabelMap> labels;
};

Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

/// Train in place. Deterministic for a fixed config (single threaded, seeded
/// shuffling and dropout).
TrainingLog train(SegmentationModel& model, const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set, const TrainConfig& cfg);

struct EvalOptions {
    int batch_size = 8;
    bool collect_gates = true;
    /// Also evaluate with each modality zeroed to compute fusion_quality.
    bool per_modality = false;
    std::optional<double> cloud_fraction;  // carried into the report as metadata
};

struct EvalResult {
    MetricsReport report;
    ConfusionMatrix confusion;
    GateSummary gates;
    /// Mean gate maps over the evaluated set (H x W at the bottleneck
    /// resolution), for visualization.
    Tensor mean_g1, mean_g2;
};

EvalResult evaluate(SegmentationModel& model, const std::vector<Sample>& samples,
                    const EvalOptions& opts = {});

}  // namespace claire
