/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "nexume/kernels.hpp"

#include <algorithm>
#include <cmath>

#include "nexume/errors.hpp"
#include "nexume/util.hpp"

namespace nexume::kernels {

namespace {

void check_qformat(int bits, double scale) {
  if (!valid_bit_width(bits)) {
    throw InvalidBitWidth("bit width must be one of 16/12/8/4, got " + std::to_string(bits));
  }
  if (!(scale > 0.0)) throw NonPositiveScale("quantization scale must be positive");
}

int32_t quantize_code(double v, const QFormat& fmt) {
  // Non-finite inputs saturate (NaN maps to zero) so diverging weights stay
  // representable until the loss check catches them.
  if (std::isnan(v)) return 0;
  if (std::isinf(v)) return v > 0 ? fmt.qmax() : -fmt.qmax();
  double scaled = round_half_even(v / fmt.scale * static_cast<double>(fmt.qmax()));
  double clamped = std::clamp(scaled, -static_cast<double>(fmt.qmax()),
                              static_cast<double>(fmt.qmax()));
  return static_cast<int32_t>(clamped);
}

int64_t checked_mul(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_mul_overflow(a, b, &r)) {
    throw AccumulatorOverflow("fixed-point multiply overflowed 64-bit accumulator");
  }
  return r;
}

int64_t checked_add(int64_t a, int64_t b) {
  int64_t r;
  if (__builtin_add_overflow(a, b, &r)) {
    throw AccumulatorOverflow("fixed-point accumulate overflowed 64-bit accumulator");
  }
  return r;
}

// Requantize an exact integer accumulator of products a_code*b_code into
// out_fmt. real = acc * step_a * step_b.
int32_t requantize(int64_t acc, const QFormat& a, const QFormat& b, const QFormat& out) {
  double real = static_cast<double>(acc) * a.step() * b.step();
  return quantize_code(real, out);
}

}  // namespace

bool valid_bit_width(int bits) {
  return bits == 16 || bits == 12 || bits == 8 || bits == 4;
}

int step_down_bits(int bits) {
  switch (bits) {
    case 16: return 12;
    case 12: return 8;
    case 8: return 4;
    default: return 4;
  }
}

FixedTensor quantize(const Tensor& values, int bits, double scale) {
  check_qformat(bits, scale);
  FixedTensor out;
  out.shape = values.shape;
  out.fmt = QFormat{bits, scale};
  out.codes.resize(values.size());
  for (size_t i = 0; i < values.size(); ++i) {
    out.codes[i] = quantize_code(values.data[i], out.fmt);
  }
  return out;
}

Tensor dequantize(const FixedTensor& t) {
  Tensor out(t.shape);
  double step = t.fmt.step();
  for (size_t i = 0; i < t.codes.size(); ++i) {
    out.data[i] = t.codes[i] * step;
  }
  return out;
}

double quantize_value(double v, int bits, double scale) {
  check_qformat(bits, scale);
  QFormat fmt{bits, scale};
  return quantize_code(v, fmt) * fmt.step();
}

FixedTensor gemm(const FixedTensor& a, const FixedTensor& b, const QFormat& out_fmt) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    throw ShapeMismatch("gemm inner dimensions do not agree");
  }
  check_qformat(out_fmt.bits, out_fmt.scale);
  size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  FixedTensor c;
  c.shape = {m, n};
  c.fmt = out_fmt;
  c.codes.assign(m * n, 0);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      int64_t acc = 0;
      for (size_t p = 0; p < k; ++p) {
        acc = checked_add(acc, checked_mul(a.codes[i * k + p], b.codes[p * n + j]));
      }
      c.codes[i * n + j] = requantize(acc, a.fmt, b.fmt, out_fmt);
    }
  }
  return c;
}

Tensor gemm(const Tensor& a, const Tensor& b) {
  if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0]) {
    throw ShapeMismatch("gemm inner dimensions do not agree");
  }
  size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor c({m, n});
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (size_t p = 0; p < k; ++p) {
        acc += a.data[i * k + p] * b.data[p * n + j];
      }
      c.data[i * n + j] = acc;
    }
  }
  return c;
}

std::vector<double> conv1d(const std::vector<double>& x, const std::vector<double>& k) {
  if (k.empty() || x.size() < k.size()) {
    throw KernelLongerThanInput("conv1d kernel must fit inside the input");
  }
  size_t out_len = x.size() - k.size() + 1;
  std::vector<double> y(out_len, 0.0);
  for (size_t t = 0; t < out_len; ++t) {
    double acc = 0.0;
    for (size_t j = 0; j < k.size(); ++j) {
      acc += x[t + j] * k[j];
    }
    y[t] = acc;
  }
  return y;
}

Tensor conv2d_via_conv1d(const Tensor& x, const std::vector<double>& u,
                         const std::vector<double>& v) {
  if (x.shape.size() != 2) throw ShapeMismatch("conv2d_via_conv1d expects a 2-D input");
  size_t h = x.shape[0], w = x.shape[1];
  if (u.empty() || v.empty() || h < u.size() || w < v.size()) {
    throw ShapeMismatch("separable kernel does not fit inside the input");
  }
  size_t out_w = w - v.size() + 1;
  size_t out_h = h - u.size() + 1;
  // Rows with v.
  Tensor rows({h, out_w});
  for (size_t i = 0; i < h; ++i) {
    std::vector<double> row(w);
    for (size_t j = 0; j < w; ++j) row[j] = x.at(i, j);
    auto conv = conv1d(row, v);
    for (size_t j = 0; j < out_w; ++j) rows.at(i, j) = conv[j];
  }
  // Columns with u.
  Tensor out({out_h, out_w});
  for (size_t j = 0; j < out_w; ++j) {
    std::vector<double> col(h);
    for (size_t i = 0; i < h; ++i) col[i] = rows.at(i, j);
    auto conv = conv1d(col, u);
    for (size_t i = 0; i < out_h; ++i) out.at(i, j) = conv[i];
  }
  return out;
}

Tensor conv2d_direct(const Tensor& x, const Tensor& k) {
  if (x.shape.size() != 2 || k.shape.size() != 2) {
    throw ShapeMismatch("conv2d_direct expects 2-D input and kernel");
  }
  size_t h = x.shape[0], w = x.shape[1];
  size_t kh = k.shape[0], kw = k.shape[1];
  if (kh == 0 || kw == 0 || h < kh || w < kw) {
    throw ShapeMismatch("conv2d kernel does not fit inside the input");
  }
  Tensor y({h - kh + 1, w - kw + 1});
  for (size_t i = 0; i + kh <= h; ++i) {
    for (size_t j = 0; j + kw <= w; ++j) {
      double acc = 0.0;
      for (size_t a = 0; a < kh; ++a) {
        for (size_t b = 0; b < kw; ++b) {
          acc += x.at(i + a, j + b) * k.at(a, b);
        }
      }
      y.at(i, j) = acc;
    }
  }
  return y;
}

FixedTensor conv2d(const FixedTensor& x, const FixedTensor& k, const QFormat& out_fmt) {
  if (x.shape.size() != 2 || k.shape.size() != 2) {
    throw ShapeMismatch("fixed conv2d expects 2-D input and kernel");
  }
  size_t h = x.shape[0], w = x.shape[1];
  size_t kh = k.shape[0], kw = k.shape[1];
  if (kh == 0 || kw == 0 || h < kh || w < kw) {
    throw ShapeMismatch("conv2d kernel does not fit inside the input");
  }
  check_qformat(out_fmt.bits, out_fmt.scale);
  FixedTensor y;
  y.shape = {h - kh + 1, w - kw + 1};
  y.fmt = out_fmt;
  y.codes.assign(shape_size(y.shape), 0);
  size_t out_w = y.shape[1];
  for (size_t i = 0; i + kh <= h; ++i) {
    for (size_t j = 0; j + kw <= w; ++j) {
      int64_t acc = 0;
      for (size_t a = 0; a < kh; ++a) {
        for (size_t b = 0; b < kw; ++b) {
          acc = checked_add(acc, checked_mul(x.at(i + a, j + b), k.at(a, b)));
        }
      }
      y.codes[i * out_w + j] = requantize(acc, x.fmt, k.fmt, out_fmt);
    }
  }
  return y;
}

Tensor dwsconv2d(const Tensor& x,
                 const std::vector<std::pair<std::vector<double>, std::vector<double>>>& dw_factors,
                 const Tensor& pw_kernel) {
  if (x.shape.size() != 3) throw ShapeMismatch("dwsconv2d expects a CxHxW input");
  size_t channels = x.shape[0];
  if (dw_factors.size() != channels) {
    throw ChannelCountMismatch("need one (u,v) factor pair per input channel");
  }
  if (pw_kernel.shape.size() != 2 || pw_kernel.shape[0] != channels) {
    throw ChannelCountMismatch("pointwise kernel must have one row per input channel");
  }
  // All depthwise outputs must agree in shape for the pointwise mix.
  size_t uh = dw_factors[0].first.size(), vw = dw_factors[0].second.size();
  for (const auto& [u, v] : dw_factors) {
    if (u.size() != uh || v.size() != vw) {
      throw ShapeMismatch("depthwise factors must share a kernel size across channels");
    }
  }
  size_t out_h = x.shape[1] - uh + 1;
  size_t out_w = x.shape[2] - vw + 1;
  size_t out_ch = pw_kernel.shape[1];

  std::vector<Tensor> dw;
  dw.reserve(channels);
  for (size_t c = 0; c < channels; ++c) {
    Tensor plane({x.shape[1], x.shape[2]});
    for (size_t i = 0; i < x.shape[1]; ++i) {
      for (size_t j = 0; j < x.shape[2]; ++j) plane.at(i, j) = x.at(c, i, j);
    }
    dw.push_back(conv2d_via_conv1d(plane, dw_factors[c].first, dw_factors[c].second));
  }

  Tensor out({out_ch, out_h, out_w});
  for (size_t kk = 0; kk < out_ch; ++kk) {
    for (size_t i = 0; i < out_h; ++i) {
      for (size_t j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (size_t c = 0; c < channels; ++c) {
          acc += dw[c].at(i, j) * pw_kernel.at(c, kk);
        }
        out.at(kk, i, j) = acc;
      }
    }
  }
  return out;
}

}  // namespace nexume::kernels
