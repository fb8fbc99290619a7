#pragma once

#include <string>
#include <vector>

#include "claire/tensor.hpp"

namespace claire {

struct Epsilon {
    double value = 1e-6;
};

/// Co-registered raw rasters: optical (3 bands R,G,B or 4 with NIR), one-band
/// SAR intensity, and an integer label map, all sharing H x W.
struct RawScene {
    Tensor optical;  // B x H x W, B in {3, 4}
    Tensor sar;      // 1 x H x W
    LabelMap label;  // H x W
};

/// Aligned, normalized patch: optical (R,G,B,veg-index) in [0,1], SAR
/// (median-filtered intensity, log-backscatter), integer labels in [0, N-1].
struct Sample {
    Tensor optical;  // 4 x P x P
    Tensor sar;      // 2 x P x P
    LabelMap label;  // P x P
};

enum class VegIndexMode { Auto, NDVI, VARI };

/// 3x3 median filter with replicate edge padding.
Tensor median_filter3(const Tensor& image);

/// log10(sar + eps), negatives clamped to 0 first.
Tensor log_backscatter(const Tensor& sar, Epsilon eps = {});

/// (NIR - R) / (NIR + R + eps), non-finite results replaced by 0.
Tensor ndvi(const Tensor& nir, const Tensor& red, Epsilon eps = {});

/// (G - R) / (G + R - B + eps), clamped to [-1, 1], non-finite -> 0.
Tensor vari(const Tensor& r, const Tensor& g, const Tensor& b, Epsilon eps = {});

/// Per-channel min-max to [0,1]; constant channels map to all zeros.
Tensor normalize01(const Tensor& channel);

/// Clamp labels into [0, N-1] and resize to target x target by nearest neighbor.
LabelMap prepare_labels(const LabelMap& label, int num_classes, std::size_t target);

struct ExtractResult {
    std::vector<Sample> samples;
    std::vector<std::string> warnings;
};

/// Non-overlapping tiling of a scene into aligned patches; the remainder that
/// does not fill a full patch is dropped.
ExtractResult extract_samples(const RawScene& scene, std::size_t patch_size, int num_classes,
                              VegIndexMode mode = VegIndexMode::Auto);

}  // namespace claire
