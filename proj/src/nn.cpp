#include "claire/nn.hpp"

#include <cmath>

namespace claire {

namespace {

Tensor he_init(std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
    Tensor t(std::move(shape), 0.0);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : t.vec()) v = dist(rng);
    return t;
}

}  // namespace

// ---- Conv2dLayer ----

Conv2dLayer::Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel,
                         std::size_t pad, Rng& rng, bool bias)
    : pad_(pad), has_bias_(bias) {
    w = make_var(he_init({out_ch, in_ch, kernel, kernel}, in_ch * kernel * kernel, rng), true);
    b = make_var(Tensor({out_ch}, 0.0), bias);
}

void Conv2dLayer::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w", &w->value});
    if (has_bias_) out.push_back({prefix + ".b", &b->value});
}

void Conv2dLayer::collect_params(std::vector<Var>& out) {
    out.push_back(w);
    if (has_bias_) out.push_back(b);
}

// ---- BatchNorm2dLayer ----

BatchNorm2dLayer::BatchNorm2dLayer(std::size_t channels)
    : running_mean({channels}, 0.0), running_var({channels}, 1.0) {
    gamma = make_var(Tensor({channels}, 1.0), true);
    beta = make_var(Tensor({channels}, 0.0), true);
}

Var BatchNorm2dLayer::forward(const Var& x, const RunCtx& ctx) {
    if (ctx.training)
        return batchnorm_train(x, gamma, beta, &running_mean, &running_var, momentum, eps);
    return batchnorm_eval(x, gamma, beta, running_mean, running_var, eps);
}

void BatchNorm2dLayer::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".gamma", &gamma->value});
    out.push_back({prefix + ".beta", &beta->value});
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
}

void BatchNorm2dLayer::collect_params(std::vector<Var>& out) {
    out.push_back(gamma);
    out.push_back(beta);
}

// ---- LinearLayer ----

LinearLayer::LinearLayer(std::size_t in, std::size_t out_dim, Rng& rng) {
    w = make_var(he_init({out_dim, in}, in, rng), true);
    b = make_var(Tensor({out_dim}, 0.0), true);
}

void LinearLayer::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    out.push_back({prefix + ".w", &w->value});
    out.push_back({prefix + ".b", &b->value});
}

void LinearLayer::collect_params(std::vector<Var>& out) {
    out.push_back(w);
    out.push_back(b);
}

// ---- SEBlock ----

SEBlock::SEBlock(std::size_t channels, std::size_t reduction, Rng& rng)
    : fc1(channels, std::max<std::size_t>(1, channels / reduction), rng),
      fc2(std::max<std::size_t>(1, channels / reduction), channels, rng) {}

Var SEBlock::gates(const Var& x) const {
    return sigmoid(fc2.forward(relu(fc1.forward(global_avg_pool(x)))));
}

void SEBlock::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    fc1.collect_state(prefix + ".fc1", out);
    fc2.collect_state(prefix + ".fc2", out);
}

void SEBlock::collect_params(std::vector<Var>& out) {
    fc1.collect_params(out);
    fc2.collect_params(out);
}

// ---- SpatialGate ----

SpatialGate::SpatialGate(Rng& rng) : conv(2, 1, 7, 3, rng) {}

Var SpatialGate::gate(const Var& x) const {
    return sigmoid(conv.forward(concat_channels(channel_mean(x), channel_max(x))));
}

void SpatialGate::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    conv.collect_state(prefix + ".conv", out);
}

void SpatialGate::collect_params(std::vector<Var>& out) { conv.collect_params(out); }

// ---- EncoderBlock ----

EncoderBlock::EncoderBlock(std::size_t in_ch, std::size_t out_ch, std::size_t se_reduction,
                           Rng& rng)
    : conv1(in_ch, out_ch, 3, 1, rng, false),
      conv2(out_ch, out_ch, 3, 1, rng, false),
      conv3(out_ch, out_ch, 3, 1, rng, false),
      bn1(out_ch),
      bn2(out_ch),
      bn3(out_ch),
      se(out_ch, se_reduction, rng) {
    if (in_ch != out_ch) {
        proj = std::make_unique<Conv2dLayer>(in_ch, out_ch, 1, 0, rng, false);
        proj_bn = std::make_unique<BatchNorm2dLayer>(out_ch);
    }
}

Var EncoderBlock::residual_activation(const Var& x, const RunCtx& ctx) {
    Var y = relu(bn1.forward(conv1.forward(x), ctx));
    y = relu(bn2.forward(conv2.forward(y), ctx));
    y = relu(bn3.forward(conv3.forward(y), ctx));
    Var r = proj ? proj_bn->forward(proj->forward(x), ctx) : x;
    return relu(add(y, r));
}

Var EncoderBlock::forward(const Var& x, const RunCtx& ctx) {
    return se.forward(residual_activation(x, ctx));
}

void EncoderBlock::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    conv1.collect_state(prefix + ".conv1", out);
    bn1.collect_state(prefix + ".bn1", out);
    conv2.collect_state(prefix + ".conv2", out);
    bn2.collect_state(prefix + ".bn2", out);
    conv3.collect_state(prefix + ".conv3", out);
    bn3.collect_state(prefix + ".bn3", out);
    if (proj) {
        proj->collect_state(prefix + ".proj", out);
        proj_bn->collect_state(prefix + ".proj_bn", out);
    }
    se.collect_state(prefix + ".se", out);
}

void EncoderBlock::collect_params(std::vector<Var>& out) {
    conv1.collect_params(out);
    bn1.collect_params(out);
    conv2.collect_params(out);
    bn2.collect_params(out);
    conv3.collect_params(out);
    bn3.collect_params(out);
    if (proj) {
        proj->collect_params(out);
        proj_bn->collect_params(out);
    }
    se.collect_params(out);
}

// ---- Encoder ----

Encoder::Encoder(std::size_t in_ch, const EncoderConfig& cfg, Rng& rng)
    : dropout_rate(cfg.dropout_rate) {
    if (cfg.stage_channels.empty()) throw config_error("Encoder: empty stage_channels");
    std::size_t prev = in_ch;
    for (std::size_t c : cfg.stage_channels) {
        blocks.push_back(std::make_unique<EncoderBlock>(prev, c, cfg.se_reduction, rng));
        prev = c;
    }
}

std::vector<Var> Encoder::forward(const Var& x, const RunCtx& ctx) {
    const std::size_t div = std::size_t{1} << blocks.size();
    if (x->value.dim(2) % div != 0 || x->value.dim(3) % div != 0)
        throw invalid_input_error("Encoder: spatial size " + x->value.shape_str() +
                                  " not divisible by 2^" + std::to_string(blocks.size()));
    RunCtx bctx = ctx;
    bctx.dropout_rate = dropout_rate;
    std::vector<Var> stages;
    Var h = x;
    for (auto& blk : blocks) {
        h = blk->forward(h, ctx);
        h = spatial_dropout(h, bctx);
        h = maxpool2x2(h);
        stages.push_back(h);
    }
    return stages;
}

void Encoder::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i]->collect_state(prefix + ".block" + std::to_string(i), out);
}

void Encoder::collect_params(std::vector<Var>& out) {
    for (auto& b : blocks) b->collect_params(out);
}

// ---- MultiscaleAggregate ----

MultiscaleAggregate::MultiscaleAggregate(std::size_t channels, Rng& rng)
    : conv1(channels, channels, 1, 0, rng),
      conv3(channels, channels, 3, 1, rng),
      conv5(channels, channels, 5, 2, rng),
      agg(3 * channels, channels, 1, 0, rng) {}

Var MultiscaleAggregate::forward(const Var& x) const {
    return agg.forward(
        concat_channels(conv1.forward(x), conv3.forward(x), conv5.forward(x)));
}

void MultiscaleAggregate::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    conv1.collect_state(prefix + ".conv1", out);
    conv3.collect_state(prefix + ".conv3", out);
    conv5.collect_state(prefix + ".conv5", out);
    agg.collect_state(prefix + ".agg", out);
}

void MultiscaleAggregate::collect_params(std::vector<Var>& out) {
    conv1.collect_params(out);
    conv3.collect_params(out);
    conv5.collect_params(out);
    agg.collect_params(out);
}

// ---- DualAttention ----

DualAttention::DualAttention(std::size_t channels, std::size_t se_reduction, Rng& rng)
    : channel_att(channels, se_reduction, rng), spatial_att(rng) {}

Var DualAttention::forward(const Var& x) const {
    return scale_spatial(scale_channels(x, channel_att.gates(x)), spatial_att.gate(x));
}

void DualAttention::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    channel_att.collect_state(prefix + ".channel", out);
    spatial_att.collect_state(prefix + ".spatial", out);
}

void DualAttention::collect_params(std::vector<Var>& out) {
    channel_att.collect_params(out);
    spatial_att.collect_params(out);
}

// ---- Cmaf ----

Cmaf::Cmaf(std::size_t channels, std::size_t se_reduction, Rng& rng)
    : ms_o(channels, rng),
      ms_s(channels, rng),
      proj_os(channels, channels, 3, 1, rng),
      proj_so(channels, channels, 3, 1, rng),
      att_o(channels, se_reduction, rng),
      att_s(channels, se_reduction, rng),
      att_joint(2 * channels, se_reduction, rng),
      enh_o(channels, channels, 3, 1, rng, false),
      enh_s(channels, channels, 3, 1, rng, false),
      enh_o_bn(channels),
      enh_s_bn(channels),
      gate_conv(2 * channels, 2, 1, 0, rng),
      fuse1(channels, channels, 3, 1, rng, false),
      fuse2(channels, channels, 3, 1, rng, false),
      fuse1_bn(channels),
      fuse2_bn(channels) {}

CmafState Cmaf::forward(const Var& f_optical, const Var& f_sar, const RunCtx& ctx) {
    if (!f_optical->value.same_shape(f_sar->value))
        throw config_error("Cmaf: optical/SAR bottleneck shapes differ: " +
                           f_optical->value.shape_str() + " vs " + f_sar->value.shape_str());
    CmafState st;
    st.m_o = ms_o.forward(f_optical);
    st.m_s = ms_s.forward(f_sar);
    st.p_os = proj_os.forward(st.m_o);
    st.p_so = proj_so.forward(st.m_s);
    st.a_o = att_o.forward(st.p_so);
    st.a_s = att_s.forward(st.p_os);
    st.mhat_o = add(st.m_o, relu(enh_o_bn.forward(enh_o.forward(st.a_o), ctx)));
    st.mhat_s = add(st.m_s, relu(enh_s_bn.forward(enh_s.forward(st.a_s), ctx)));
    st.f_cat = concat_channels(st.mhat_o, st.mhat_s);
    st.f_att = att_joint.forward(st.f_cat);
    Var g = sigmoid(gate_conv.forward(st.f_att));  // N x 2 x H x W
    // split into the two per-pixel masks
    const auto& gs = g->value.shape();
    const std::size_t HW = gs[2] * gs[3];
    {
        Tensor pick1({gs[0], 2, gs[2], gs[3]}, 0.0), pick2 = pick1;
        for (std::size_t n = 0; n < gs[0]; ++n)
            for (std::size_t i = 0; i < HW; ++i) {
                pick1[(n * 2 + 0) * HW + i] = 1.0;
                pick2[(n * 2 + 1) * HW + i] = 1.0;
            }
        st.g1 = channel_sum(mul_const(g, pick1));
        st.g2 = channel_sum(mul_const(g, pick2));
    }
    st.fuse_input = add(scale_spatial(st.mhat_o, st.g1), scale_spatial(st.mhat_s, st.g2));
    Var f = relu(fuse1_bn.forward(fuse1.forward(st.fuse_input), ctx));
    st.f_fused = relu(fuse2_bn.forward(fuse2.forward(f), ctx));
    return st;
}

void Cmaf::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    ms_o.collect_state(prefix + ".ms_o", out);
    ms_s.collect_state(prefix + ".ms_s", out);
    proj_os.collect_state(prefix + ".proj_os", out);
    proj_so.collect_state(prefix + ".proj_so", out);
    att_o.collect_state(prefix + ".att_o", out);
    att_s.collect_state(prefix + ".att_s", out);
    att_joint.collect_state(prefix + ".att_joint", out);
    enh_o.collect_state(prefix + ".enh_o", out);
    enh_o_bn.collect_state(prefix + ".enh_o_bn", out);
    enh_s.collect_state(prefix + ".enh_s", out);
    enh_s_bn.collect_state(prefix + ".enh_s_bn", out);
    gate_conv.collect_state(prefix + ".gate_conv", out);
    fuse1.collect_state(prefix + ".fuse1", out);
    fuse1_bn.collect_state(prefix + ".fuse1_bn", out);
    fuse2.collect_state(prefix + ".fuse2", out);
    fuse2_bn.collect_state(prefix + ".fuse2_bn", out);
}

void Cmaf::collect_params(std::vector<Var>& out) {
    ms_o.collect_params(out);
    ms_s.collect_params(out);
    proj_os.collect_params(out);
    proj_so.collect_params(out);
    att_o.collect_params(out);
    att_s.collect_params(out);
    att_joint.collect_params(out);
    enh_o.collect_params(out);
    enh_o_bn.collect_params(out);
    enh_s.collect_params(out);
    enh_s_bn.collect_params(out);
    gate_conv.collect_params(out);
    fuse1.collect_params(out);
    fuse1_bn.collect_params(out);
    fuse2.collect_params(out);
    fuse2_bn.collect_params(out);
}

// ---- DecoderBlock ----

DecoderBlock::DecoderBlock(std::size_t in_ch, std::size_t out_ch, Rng& rng)
    : conv(in_ch, out_ch, 3, 1, rng, false), bn(out_ch) {}

Var DecoderBlock::forward(const Var& x, const RunCtx& ctx) {
    return relu(bn.forward(conv.forward(x), ctx));
}

void DecoderBlock::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    conv.collect_state(prefix + ".conv", out);
    bn.collect_state(prefix + ".bn", out);
}

void DecoderBlock::collect_params(std::vector<Var>& out) {
    conv.collect_params(out);
    bn.collect_params(out);
}

// ---- Decoder ----

Decoder::Decoder(const EncoderConfig& cfg, std::size_t num_classes, Rng& rng)
    : head_conv(cfg.stage_channels.front(), cfg.stage_channels.front(), 3, 1, rng, false),
      head_bn(cfg.stage_channels.front()),
      head_cls(cfg.stage_channels.front(), num_classes, 1, 0, rng),
      dropout_rate(cfg.dropout_rate) {
    const auto& w = cfg.stage_channels;
    const std::size_t S = w.size();
    std::size_t prev = w.back();
    for (std::size_t k = 0; k < S; ++k) {
        const std::size_t out_ch = (k + 1 < S) ? w[S - 2 - k] : w.front();
        blocks.push_back(std::make_unique<DecoderBlock>(prev, out_ch, rng));
        prev = out_ch;
    }
}

Var Decoder::forward(const Var& fused, const RunCtx& ctx) {
    if (fused->value.dim(1) != blocks.front()->conv.w->value.dim(1))
        throw config_error("Decoder: fused channel count " +
                           std::to_string(fused->value.dim(1)) + " does not match configuration");
    RunCtx bctx = ctx;
    bctx.dropout_rate = dropout_rate;
    Var h = fused;
    for (auto& blk : blocks) {
        h = upsample_bilinear2x(h);
        h = blk->forward(h, ctx);
        h = spatial_dropout(h, bctx);
    }
    h = relu(head_bn.forward(head_conv.forward(h), ctx));
    return head_cls.forward(h);
}

void Decoder::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i]->collect_state(prefix + ".block" + std::to_string(i), out);
    head_conv.collect_state(prefix + ".head_conv", out);
    head_bn.collect_state(prefix + ".head_bn", out);
    head_cls.collect_state(prefix + ".head_cls", out);
}

void Decoder::collect_params(std::vector<Var>& out) {
    for (auto& b : blocks) b->collect_params(out);
    head_conv.collect_params(out);
    head_bn.collect_params(out);
    head_cls.collect_params(out);
}

// ---- SegmentationModel ----

SegmentationModel::SegmentationModel(const ModelConfig& cfg, Rng& rng)
    : enc_optical(cfg.optical_channels, cfg.encoder, rng),
      enc_sar(cfg.sar_channels, cfg.encoder, rng),
      cmaf(cfg.encoder.stage_channels.back(), cfg.encoder.se_reduction, rng),
      decoder(cfg.encoder, cfg.num_classes, rng),
      cfg_(cfg) {
    if (cfg.num_classes < 2) throw config_error("SegmentationModel: num_classes must be >= 2");
}

ForwardResult SegmentationModel::forward_vars(const Var& optical, const Var& sar,
                                              const RunCtx& ctx) {
    if (optical->value.dim(1) != cfg_.optical_channels)
        throw invalid_input_error("forward: optical channel count mismatch");
    if (sar->value.dim(1) != cfg_.sar_channels)
        throw invalid_input_error("forward: SAR channel count mismatch");
    auto stages_o = enc_optical.forward(optical, ctx);
    auto stages_s = enc_sar.forward(sar, ctx);
    ForwardResult res;
    res.cmaf = cmaf.forward(stages_o.back(), stages_s.back(), ctx);
    res.logits = decoder.forward(res.cmaf.f_fused, ctx);
    return res;
}

ForwardResult SegmentationModel::forward(const Tensor& optical, const Tensor& sar,
                                         const RunCtx& ctx) {
    return forward_vars(make_const(optical), make_const(sar), ctx);
}

void SegmentationModel::collect_state(const std::string& prefix, std::vector<NamedTensor>& out) {
    enc_optical.collect_state(prefix + ".enc_optical", out);
    enc_sar.collect_state(prefix + ".enc_sar", out);
    cmaf.collect_state(prefix + ".cmaf", out);
    decoder.collect_state(prefix + ".decoder", out);
}

void SegmentationModel::collect_params(std::vector<Var>& out) {
    enc_optical.collect_params(out);
    enc_sar.collect_params(out);
    cmaf.collect_params(out);
    decoder.collect_params(out);
}

// ---- utilities ----

Var spatial_dropout(const Var& x, const RunCtx& ctx) {
    if (!ctx.training || ctx.dropout_rate <= 0.0 || ctx.rng == nullptr) return x;
    const double p = ctx.dropout_rate;
    const std::size_t N = x->value.dim(0), C = x->value.dim(1);
    Tensor mask({N, C}, 0.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double scale = 1.0 / (1.0 - p);
    for (auto& v : mask.vec()) v = (u(*ctx.rng) >= p) ? scale : 0.0;
    return scale_channels(x, make_const(std::move(mask)));
}

LabelMap argmax_labels(const Tensor& logits, std::size_t n) {
    const std::size_t C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
    LabelMap out(H, W);
    const std::size_t HW = H * W;
    for (std::size_t i = 0; i < HW; ++i) {
        double best = logits[(n * C) * HW + i];
        int bc = 0;
        for (std::size_t c = 1; c < C; ++c) {
            const double v = logits[(n * C + c) * HW + i];
            if (v > best) {  // strict: ties resolve to the lowest class index
                best = v;
                bc = static_cast<int>(c);
            }
        }
        out.vec()[i] = bc;
    }
    return out;
}

}  // namespace claire
