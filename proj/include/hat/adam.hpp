#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hat/tensor.hpp"

namespace hat {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with bias correction. Moments are kept in double; parameters stay f32.
class AdamState {
public:
    AdamState() = default;

    explicit AdamState(std::span<const Tensor* const> params, AdamConfig cfg = {}) : cfg_(cfg) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Tensor* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    AdamState(std::initializer_list<const Tensor*> params, AdamConfig cfg = {})
        : AdamState(std::span<const Tensor* const>(params.begin(), params.size()), cfg) {}

    long long steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }

    void step(std::span<Tensor* const> params,
              std::span<const std::vector<double>* const> grads) {
        if (params.size() != m_.size() || grads.size() != m_.size())
            throw ShapeError("AdamState::step: expected " + std::to_string(m_.size()) +
                             " parameters, got " + std::to_string(params.size()) + "/" +
                             std::to_string(grads.size()));
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t p = 0; p < params.size(); ++p) {
            Tensor& theta = *params[p];
            const std::vector<double>& g = *grads[p];
            if (theta.size() != m_[p].size() || g.size() != m_[p].size())
                throw ShapeError("AdamState::step: parameter " + std::to_string(p) +
                                 " size mismatch (" + std::to_string(theta.size()) + " vs " +
                                 std::to_string(m_[p].size()) + ")");
            for (size_t i = 0; i < g.size(); ++i) {
                m_[p][i] = cfg_.beta1 * m_[p][i] + (1.0 - cfg_.beta1) * g[i];
                v_[p][i] = cfg_.beta2 * v_[p][i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mhat = m_[p][i] / bc1;
                const double vhat = v_[p][i] / bc2;
                theta.data[i] = static_cast<float>(
                    static_cast<double>(theta.data[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
    }

private:
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    long long t_ = 0;
};

}  // namespace hat
