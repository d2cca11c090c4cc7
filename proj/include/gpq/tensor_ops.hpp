#pragma once

#include <span>

#include "gpq/tensor.hpp"

namespace gpq::ops {

// Forward-only tensor operations. Both execution modes route through these:
// the autograd tape calls them and attaches backprop closures, the value mode
// chains them directly, so training and inference stay bit-identical.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, float c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f);
Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor concat_cols(std::span<const Tensor* const> parts);
Tensor sinusoid(const Tensor& points, std::span<const float> freqs);
Tensor sum(const Tensor& x);
Tensor focal_loss(const Tensor& probs, const Tensor& targets, float alpha, float gamma);
Tensor masked_l1(const Tensor& x, const Tensor& target, const Tensor& mask);

float stable_sigmoid(float x);

}  // namespace gpq::ops
