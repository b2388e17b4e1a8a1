#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "circkit/tensor.hpp"

namespace circkit {

/// Named trainable tensor plus adaptive-moment optimizer state.
template <class S>
struct Parameter {
    std::string name;
    TensorT<S> tensor;
    std::vector<S> moment1;
    std::vector<S> moment2;
    std::int64_t step = 0;

    Parameter(std::string n, TensorT<S> t) : name(std::move(n)), tensor(std::move(t)) {
        tensor.set_requires_grad();
        moment1.assign(tensor.values().size(), S(0));
        moment2.assign(tensor.values().size(), S(0));
    }
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected adaptive-moment update on raw buffers.
template <class S>
void adam_step(std::span<S> values, std::span<const S> grads, std::vector<S>& m1, std::vector<S>& m2,
               std::int64_t& step, const AdamConfig& cfg = {}) {
    if (values.size() != grads.size() || m1.size() != values.size() || m2.size() != values.size())
        throw std::invalid_argument("adam_step: buffer size mismatch (param " +
                                    std::to_string(values.size()) + ", grad " +
                                    std::to_string(grads.size()) + ")");
    ++step;
    const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        const double m = cfg.beta1 * static_cast<double>(m1[i]) + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * static_cast<double>(m2[i]) + (1.0 - cfg.beta2) * g * g;
        m1[i] = static_cast<S>(m);
        m2[i] = static_cast<S>(v);
        const double mhat = m / b1t;
        const double vhat = v / b2t;
        values[i] -= static_cast<S>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

template <class S>
void adam_step(std::vector<Parameter<S>>& params, const AdamConfig& cfg = {}) {
    for (auto& p : params) {
        p.tensor.node()->ensure_grad();
        adam_step<S>(std::span<S>(p.tensor.values()), std::span<const S>(p.tensor.grads()), p.moment1,
                     p.moment2, p.step, cfg);
    }
}

template <class S>
void zero_grads(std::vector<Parameter<S>>& params) {
    for (auto& p : params) p.tensor.zero_grad();
}

/// Global L2 gradient norm across all parameters.
template <class S>
double grad_norm(const std::vector<Parameter<S>>& params) {
    double acc = 0;
    for (const auto& p : params)
        for (S g : p.tensor.grads()) acc += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(acc);
}

/// Scales all gradients so the global norm is at most max_norm.
/// Returns the pre-clip norm.
template <class S>
double clip_grad_norm(std::vector<Parameter<S>>& params, double max_norm) {
    const double norm = grad_norm(params);
    if (norm > max_norm && norm > 0) {
        const S s = static_cast<S>(max_norm / norm);
        for (auto& p : params)
            for (S& g : p.tensor.grads()) g *= s;
    }
    return norm;
}

}  // namespace circkit
