#include "gradreg/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace gradreg {

void adam_step(AdamState& state, std::span<Tensor* const> params, std::span<const Tensor* const> grads, double lr) {
    if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params and grads differ in count");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape(), 0.0);
            state.v.emplace_back(p->shape(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state was built for other params");
    for (std::size_t k = 0; k < params.size(); ++k) {
        if (params[k]->shape() != grads[k]->shape() || state.m[k].shape() != params[k]->shape()) {
            throw std::invalid_argument("adam_step: shape mismatch for tensor " + std::to_string(k));
        }
        if (!grads[k]->all_finite()) throw NonFiniteError("adam_step: non-finite gradient in tensor " + std::to_string(k));
    }

    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = *grads[k];
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / c1;
            const double v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
        }
    }
}

}  // namespace gradreg
