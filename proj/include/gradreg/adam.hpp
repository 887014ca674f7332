#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gradreg/tensor.hpp"

namespace gradreg {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Tensor> m;  // first moments, one per parameter tensor
    std::vector<Tensor> v;  // second moments
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
/// Moment buffers are allocated on the first call.
void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr);

}  // namespace gradreg
