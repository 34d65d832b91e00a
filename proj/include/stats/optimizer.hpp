#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stats/errors.hpp"
#include "stats/tensor.hpp"

namespace stats {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0;  // global gradient-norm clip, <= 0 disables
};

/// Bias-corrected Adam over a fixed list of parameter tensors.
class Adam {
public:
    Adam() = default;
    Adam(AdamConfig cfg, std::vector<std::string> names) : cfg_(cfg), names_(std::move(names)) {
        if (!(cfg_.lr > 0.0)) throw ContractViolation("adam: learning rate must be > 0");
    }

    const AdamConfig& config() const { return cfg_; }
    std::size_t steps() const { return step_; }
    const std::vector<Tensor>& first_moment() const { return m_; }
    const std::vector<Tensor>& second_moment() const { return v_; }

    /// Returns the pre-clip global gradient norm.
    double step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size()) throw ContractViolation("adam: parameter/gradient count mismatch");
        if (m_.empty()) {
            for (Tensor* p : params) {
                m_.emplace_back(p->shape());
                v_.emplace_back(p->shape());
            }
        }
        if (m_.size() != params.size()) throw ContractViolation("adam: parameter list changed between steps");

        double sq = 0.0;
        for (std::size_t i = 0; i < grads.size(); ++i) {
            require_same_shape(*params[i], grads[i], "adam");
            if (!grads[i].all_finite())
                throw NumericFailure("adam", "non-finite gradient in '" + name(i) + "'");
            sq += squared_norm(grads[i]);
        }
        const double norm = std::sqrt(sq);
        const double scale = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

        ++step_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            const Tensor& g = grads[i];
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double gj = g[j] * scale;
                m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
                v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
                p[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
            }
        }
        return norm;
    }

private:
    std::string name(std::size_t i) const { return i < names_.size() ? names_[i] : "#" + std::to_string(i); }

    AdamConfig cfg_;
    std::vector<std::string> names_;
    std::vector<Tensor> m_, v_;
    std::size_t step_ = 0;
};

}  // namespace stats
