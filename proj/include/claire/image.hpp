#pragma once

#include <string>
#include <vector>

#include "claire/tensor.hpp"

namespace claire {

/// 8-bit grayscale PNG. Values are min-max scaled to [0, 255]; a constant
/// image becomes uniform mid-gray.
void write_png_gray(const std::string& path, const Tensor& image);

/// Bar chart of per-class values in [0, 1] (e.g. IoU), rendered as grayscale.
/// NaN entries render as empty slots.
void write_bar_plot(const std::string& path, const std::vector<double>& values,
                    std::size_t width = 320, std::size_t height = 200);

}  // namespace claire
