#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "claire/autograd.hpp"
#include "claire/tensor.hpp"

namespace claire {

enum class LossFamily {
    CE,
    WeightedCE,
    Focal,
    WeightedFocal,
    Dice,
    Tversky,
    GeneralizedDice,
    FocalPlusTversky,
    RIFT
};

LossFamily loss_family_from_string(const std::string& s);
std::string to_string(LossFamily f);

struct LossConfig {
    LossFamily family = LossFamily::RIFT;
    double alpha = 0.3;
    double beta = 0.7;
    double gamma = 0.75;  // focal exponent; 2.0 is the usual focal-loss setting
    double eps = 1e-6;
    std::vector<double> class_weights;  // empty -> unweighted
    bool allow_gamma_above_one = false;

    void validate() const;
};

/// w_c = (1/f_c) / sum_k (1/f_k); zero-count classes get a frequency floor.
std::vector<double> class_weights_inverse_frequency(const std::vector<long long>& pixel_counts,
                                                    double eps = 1e-6);

/// One-hot encoding of a batch of label maps -> N x C x H x W. Throws on
/// out-of-range labels, naming the offending pixel.
Tensor one_hot(const std::vector<LabelMap>& labels, std::size_t num_classes);

/// Soft Tversky index per class from probabilities p and one-hot targets t
/// (both N x C x H x W). Counts pooled over the whole batch.
std::vector<double> tversky_index_per_class(const Tensor& p, const Tensor& t,
                                            const LossConfig& cfg);

/// Build the scalar loss node from channel logits and one-hot targets.
Var loss_graph(const Var& logits, const Tensor& onehot, const LossConfig& cfg);

struct LossResult {
    double value;
    Tensor grad_logits;
};

/// Loss value plus analytic gradient w.r.t. the logits.
LossResult compute_loss(const Tensor& logits, const std::vector<LabelMap>& labels,
                        const LossConfig& cfg);

}  // namespace claire
