#pragma once

#include <cstdint>
#include <vector>

#include "claire/preprocess.hpp"

namespace claire {

/// Procedural dataset spec. The last class is the structurally rare one,
/// drawn as thin polylines over the blob background.
struct SynthSpec {
    int num_classes = 4;
    int patches = 300;
    int patch_size = 64;
    std::vector<double> class_proportions;  // empty -> imbalanced default
    double cloud_fraction = 0.0;            // fraction of optical pixels occluded
    double speckle_level = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
    std::vector<double> resolved_proportions() const;
};

struct SynthDataset {
    std::vector<Sample> train, val, test;

    std::size_t total() const { return train.size() + val.size() + test.size(); }
};

/// Deterministic given the seed; split 80:10:10 in generation order.
SynthDataset generate_synthetic(const SynthSpec& spec);

/// Pixel frequency of each class across a sample set.
std::vector<double> class_frequencies(const std::vector<Sample>& samples, int num_classes);

}  // namespace claire
