#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "claire/tensor.hpp"

namespace claire {

/// Node in the dynamically built computation graph.
struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;  // accumulates into parents' grads

    Tensor& ensure_grad() {
        if (!grad.same_shape(value)) grad = Tensor(value.shape(), 0.0);
        return grad;
    }
};

using Var = std::shared_ptr<Node>;

Var make_var(Tensor value, bool requires_grad = false);
Var make_const(Tensor value);
Var make_scalar(double v);

/// Backpropagate from a scalar (or pre-seeded) root through the graph.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scalar_mul(const Var& a, double c);
Var scalar_add(const Var& a, double c);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var one_minus(const Var& a);
/// x^p with the subgradient convention d(x^p)/dx = 0 at x = 0 for p < 1.
Var pow_const(const Var& a, double p);
/// log(x) with the argument clamped below at eps (zero gradient in the clamped region).
Var log_clamped(const Var& a, double eps);
/// Elementwise multiply by a constant tensor (no gradient through the constant).
Var mul_const(const Var& a, const Tensor& c);

// ---- reductions ----
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}
/// NCHW -> {C}: sum over batch and spatial dims per channel.
Var class_sum(const Var& a);
/// NCHW -> N x 1 x H x W: sum over channels.
Var channel_sum(const Var& a);
/// NCHW -> N x 1 x H x W: mean over channels.
Var channel_mean(const Var& a);
/// NCHW -> N x 1 x H x W: max over channels (argmax backward, first-wins ties).
Var channel_max(const Var& a);
/// NCHW -> N x C: spatial average per channel (squeeze step of SE).
Var global_avg_pool(const Var& a);

// ---- structural ----
Var concat_channels(const Var& a, const Var& b);
Var concat_channels(const Var& a, const Var& b, const Var& c);
/// x (NCHW) scaled per channel by gates s (N x C).
Var scale_channels(const Var& x, const Var& s);
/// x (NCHW) scaled per pixel by a single-channel map g (N x 1 x H x W).
Var scale_spatial(const Var& x, const Var& g);

// ---- neural-net primitives ----
/// 2-D convolution, stride 1, symmetric zero padding. w: (Cout, Cin, K, K), b: (Cout).
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t pad);
/// Batch normalization using batch statistics (training mode). Updates running
/// stats in place when provided.
Var batchnorm_train(const Var& x, const Var& gamma, const Var& beta, Tensor* running_mean,
                    Tensor* running_var, double momentum, double eps);
/// Batch normalization with frozen running statistics (eval mode).
Var batchnorm_eval(const Var& x, const Var& gamma, const Var& beta, const Tensor& running_mean,
                   const Tensor& running_var, double eps);
/// 2x2 max pooling, stride 2 (spatial dims must be even).
Var maxpool2x2(const Var& x);
/// Bilinear 2x upsampling, half-pixel centers (align-corners off).
Var upsample_bilinear2x(const Var& x);
/// x: N x Cin, w: Cout x Cin, b: Cout -> N x Cout.
Var linear(const Var& x, const Var& w, const Var& b);
/// Softmax over the channel dimension of an NCHW tensor.
Var softmax_channel(const Var& x);

}  // namespace claire
