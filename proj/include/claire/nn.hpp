#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "claire/autograd.hpp"

namespace claire {

using Rng = std::mt19937_64;

/// Named view into a module's state (parameters and batchnorm buffers).
struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

/// Per-forward execution context. Dropout only fires when training and an RNG
/// is attached; evaluation is fully deterministic.
struct RunCtx {
    bool training = false;
    double dropout_rate = 0.0;
    Rng* rng = nullptr;
};

class Module {
public:
    virtual ~Module() = default;
    /// Parameters plus buffers, prefixed names (checkpoint order).
    virtual void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) = 0;
    /// Trainable parameter nodes only.
    virtual void collect_params(std::vector<Var>& out) = 0;
};

class Conv2dLayer : public Module {
public:
    /// `bias = false` for convolutions feeding a batchnorm (the shift would be
    /// normalized away and its gradient is identically zero).
    Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t pad,
                Rng& rng, bool bias = true);
    Var forward(const Var& x) const { return conv2d(x, w, b, pad_); }
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Var w, b;

private:
    std::size_t pad_;
    bool has_bias_;
};

class BatchNorm2dLayer : public Module {
public:
    explicit BatchNorm2dLayer(std::size_t channels);
    Var forward(const Var& x, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Var gamma, beta;
    Tensor running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

class LinearLayer : public Module {
public:
    LinearLayer(std::size_t in, std::size_t out, Rng& rng);
    Var forward(const Var& x) const { return linear(x, w, b); }
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Var w, b;
};

/// Squeeze-and-excitation channel gate: spatial mean -> bottleneck MLP -> sigmoid.
class SEBlock : public Module {
public:
    SEBlock(std::size_t channels, std::size_t reduction, Rng& rng);
    /// Sigmoid gates, shape N x C.
    Var gates(const Var& x) const;
    /// x rescaled per channel by gates(x).
    Var forward(const Var& x) const { return scale_channels(x, gates(x)); }
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    LinearLayer fc1, fc2;
};

/// Spatial attention: [channel mean, channel max] -> 7x7 conv -> sigmoid gate.
class SpatialGate : public Module {
public:
    explicit SpatialGate(Rng& rng);
    /// Sigmoid gate, shape N x 1 x H x W.
    Var gate(const Var& x) const;
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Conv2dLayer conv;
};

struct EncoderConfig {
    std::vector<std::size_t> stage_channels{32, 64, 128, 256};
    std::size_t se_reduction = 16;
    double dropout_rate = 0.1;
};

/// Residual three-conv block with SE recalibration.
class EncoderBlock : public Module {
public:
    EncoderBlock(std::size_t in_ch, std::size_t out_ch, std::size_t se_reduction, Rng& rng);
    Var forward(const Var& x, const RunCtx& ctx);
    /// Pre-SE residual activation z = ReLU(y + r).
    Var residual_activation(const Var& x, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Conv2dLayer conv1, conv2, conv3;
    BatchNorm2dLayer bn1, bn2, bn3;
    std::unique_ptr<Conv2dLayer> proj;
    std::unique_ptr<BatchNorm2dLayer> proj_bn;
    SEBlock se;
};

/// Modality encoder: stages of (block, spatial dropout, 2x max-pool).
class Encoder : public Module {
public:
    Encoder(std::size_t in_ch, const EncoderConfig& cfg, Rng& rng);
    /// Stage outputs (after pooling); back() is the bottleneck.
    std::vector<Var> forward(const Var& x, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    std::vector<std::unique_ptr<EncoderBlock>> blocks;
    double dropout_rate;
};

struct CmafState {
    Var m_o, m_s;          // multiscale-aggregated branch features
    Var p_os, p_so;        // cross projections
    Var a_o, a_s;          // dual-attention outputs
    Var mhat_o, mhat_s;    // enhanced modality features
    Var f_cat, f_att;
    Var g1, g2;            // gating masks, N x 1 x H x W in [0,1]
    Var fuse_input;        // g1*mhat_o + g2*mhat_s, before the Fuse stack
    Var f_fused;
};

class MultiscaleAggregate : public Module {
public:
    MultiscaleAggregate(std::size_t channels, Rng& rng);
    Var forward(const Var& x) const;
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Conv2dLayer conv1, conv3, conv5, agg;
};

class DualAttention : public Module {
public:
    DualAttention(std::size_t channels, std::size_t se_reduction, Rng& rng);
    Var forward(const Var& x) const;
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    SEBlock channel_att;
    SpatialGate spatial_att;
};

/// Cross-modality attention fusion bottleneck.
class Cmaf : public Module {
public:
    Cmaf(std::size_t channels, std::size_t se_reduction, Rng& rng);
    CmafState forward(const Var& f_optical, const Var& f_sar, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    MultiscaleAggregate ms_o, ms_s;
    Conv2dLayer proj_os, proj_so;
    DualAttention att_o, att_s, att_joint;
    Conv2dLayer enh_o, enh_s;
    BatchNorm2dLayer enh_o_bn, enh_s_bn;
    Conv2dLayer gate_conv;
    Conv2dLayer fuse1, fuse2;
    BatchNorm2dLayer fuse1_bn, fuse2_bn;
};

class DecoderBlock : public Module {
public:
    DecoderBlock(std::size_t in_ch, std::size_t out_ch, Rng& rng);
    Var forward(const Var& x, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    Conv2dLayer conv;
    BatchNorm2dLayer bn;
};

/// Progressive decoder: (upsample 2x, block) per stage, then segmentation head.
class Decoder : public Module {
public:
    Decoder(const EncoderConfig& cfg, std::size_t num_classes, Rng& rng);
    Var forward(const Var& fused, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    std::vector<std::unique_ptr<DecoderBlock>> blocks;
    Conv2dLayer head_conv;
    BatchNorm2dLayer head_bn;
    Conv2dLayer head_cls;
    double dropout_rate;
};

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t num_classes = 4;
    std::size_t optical_channels = 4;
    std::size_t sar_channels = 2;
};

struct ForwardResult {
    Var logits;  // N x num_classes x P x P
    CmafState cmaf;
};

/// Dual-encoder segmentation model with CMAF fusion.
class SegmentationModel : public Module {
public:
    SegmentationModel(const ModelConfig& cfg, Rng& rng);
    ForwardResult forward(const Tensor& optical, const Tensor& sar, const RunCtx& ctx);
    ForwardResult forward_vars(const Var& optical, const Var& sar, const RunCtx& ctx);
    void collect_state(const std::string& prefix, std::vector<NamedTensor>& out) override;
    void collect_params(std::vector<Var>& out) override;

    const ModelConfig& config() const { return cfg_; }

    Encoder enc_optical, enc_sar;
    Cmaf cmaf;
    Decoder decoder;

private:
    ModelConfig cfg_;
};

/// Spatial dropout: zeroes whole channels with probability `rate`, scaling
/// survivors by 1/(1-rate). Identity when not training.
Var spatial_dropout(const Var& x, const RunCtx& ctx);

/// Argmax over channel logits, lowest class index wins ties.
LabelMap argmax_labels(const Tensor& logits, std::size_t batch_index);

}  // namespace claire
