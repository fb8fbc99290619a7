#pragma once

#include <string>

#include "claire/tensor.hpp"

namespace claire {

/// NPY v1 array reader. Accepts C-order arrays of u8/i8/u16/i16/i32/i64/f32/f64,
/// rank 2 or 3, converted to double.
Tensor read_npy(const std::string& path);

/// Writes a C-order float64 NPY v1 file.
void write_npy(const std::string& path, const Tensor& t);

/// Convenience: read a 2-D integer raster as labels.
LabelMap read_npy_labels(const std::string& path);

}  // namespace claire
