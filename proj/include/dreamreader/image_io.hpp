// Copyright (c) 2026 DreamReader contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "dreamreader/tensor.hpp"

namespace dreamreader {

// Quantizes a (3, h, w) float image to 8-bit binary PPM. Values are mapped
// with the fixed affine v*0.5 + 0.5 (so [-1, 1] spans the full range) and
// clamped; the byte stream is a pure function of the tensor.
void write_ppm(const std::string& path, const Tensor& image);

// Inverse of write_ppm up to quantization: bytes map back into [-1, 1].
Tensor read_ppm(const std::string& path);

// Concatenates equally-shaped (3, h, w) images into one horizontal strip
// (3, h, w * n), in the given order.
Tensor image_grid(const std::vector<Tensor>& images);

// Stacks equally-shaped grids vertically: (3, sum h_i, w).
Tensor stack_rows(const std::vector<Tensor>& rows);

}  // namespace dreamreader
