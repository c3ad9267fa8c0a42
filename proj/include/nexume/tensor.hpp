/*
 * Copyright (c) 2026 nexume contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "nexume/errors.hpp"

namespace nexume {

inline size_t shape_size(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

// Dense row-major double tensor. Small networks only, so clarity wins over
// stride tricks.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
    data.assign(shape_size(shape), 0.0);
  }
  Tensor(std::vector<size_t> s, std::vector<double> d)
      : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_size(shape)) {
      throw ShapeMismatch("tensor data length does not match shape");
    }
  }

  static Tensor zeros(std::vector<size_t> s) { return Tensor(std::move(s)); }

  size_t size() const { return data.size(); }
  size_t ndim() const { return shape.size(); }

  double& at(size_t i) { return data[i]; }
  double at(size_t i) const { return data[i]; }

  double& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
  double at(size_t i, size_t j) const { return data[i * shape[1] + j]; }

  double& at(size_t c, size_t i, size_t j) {
    return data[(c * shape[1] + i) * shape[2] + j];
  }
  double at(size_t c, size_t i, size_t j) const {
    return data[(c * shape[1] + i) * shape[2] + j];
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

}  // namespace nexume
