/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstdint>
#include <vector>

#include "nexume/tensor.hpp"

namespace nexume::kernels {

// Symmetric fixed-point format: codes live in [-(2^(bits-1)-1), 2^(bits-1)-1]
// and `scale` is the real value mapped to the top code.
struct QFormat {
  int bits = 16;
  double scale = 1.0;

  int32_t qmax() const { return (1 << (bits - 1)) - 1; }
  double step() const { return scale / static_cast<double>(qmax()); }
  bool operator==(const QFormat&) const = default;
};

bool valid_bit_width(int bits);
// The next narrower width (16->12->8->4); 4 stays 4.
int step_down_bits(int bits);

struct FixedTensor {
  std::vector<size_t> shape;
  std::vector<int32_t> codes;
  QFormat fmt;

  size_t size() const { return codes.size(); }
  int32_t at(size_t i, size_t j) const { return codes[i * shape[1] + j]; }
  int32_t& at(size_t i, size_t j) { return codes[i * shape[1] + j]; }
  double real(size_t idx) const { return codes[idx] * fmt.step(); }
};

// Round-half-to-even quantization with clamping to the symmetric range.
FixedTensor quantize(const Tensor& values, int bits, double scale);
Tensor dequantize(const FixedTensor& t);
double quantize_value(double v, int bits, double scale);  // round trip of one value

// Fixed-point GeMM: exact int64 dot products, requantized to out_fmt.
FixedTensor gemm(const FixedTensor& a, const FixedTensor& b, const QFormat& out_fmt);
// Float GeMM with IEEE double accumulation.
Tensor gemm(const Tensor& a, const Tensor& b);

// Valid-mode 1D cross-correlation: y_t = sum_j x_{t+j} * k_j.
std::vector<double> conv1d(const std::vector<double>& x, const std::vector<double>& k);

// Separable 2D convolution: rows with v, then columns with u. Equals direct
// 2D cross-correlation with the rank-1 kernel u*v^T.
Tensor conv2d_via_conv1d(const Tensor& x, const std::vector<double>& u,
                         const std::vector<double>& v);

// Textbook valid-mode 2D cross-correlation (float oracle path).
Tensor conv2d_direct(const Tensor& x, const Tensor& k);

// Fixed-point valid-mode 2D cross-correlation.
FixedTensor conv2d(const FixedTensor& x, const FixedTensor& k, const QFormat& out_fmt);

// Depthwise-separable conv from rank-1 depthwise factors plus a CxK
// pointwise mix. x is CxHxW; result is KxH'xW'.
Tensor dwsconv2d(const Tensor& x,
                 const std::vector<std::pair<std::vector<double>, std::vector<double>>>& dw_factors,
                 const Tensor& pw_kernel);

}  // namespace nexume::kernels
