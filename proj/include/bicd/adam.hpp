#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bicd/tensor.hpp"

namespace bicd {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// A trainable tensor together with the name used in error messages and
/// checkpoints.
struct ParamRef {
    std::string name;
    Tensor* value;
};

/// Adam with bias correction. Moments are allocated lazily on the first step
/// and shape-checked on every step afterwards.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const { return cfg_; }
    std::uint64_t steps() const { return step_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

    void step(const std::vector<ParamRef>& params, const std::vector<Tensor>& grads) {
        if (params.size() != grads.size())
            throw DimensionError("adam: " + std::to_string(params.size()) + " params but " +
                                 std::to_string(grads.size()) + " gradients");
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (params[p].value->shape() != grads[p].shape())
                throw DimensionError("adam: gradient shape " + shape_str(grads[p].shape()) + " for parameter " +
                                     params[p].name + " of shape " + shape_str(params[p].value->shape()));
            for (std::size_t i = 0; i < grads[p].size(); ++i)
                if (std::isnan(grads[p][i])) throw NumericError("adam: NaN gradient for parameter " + params[p].name);
        }
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.value->shape(), 0.0);
                v_.emplace_back(p.value->shape(), 0.0);
            }
        } else if (m_.size() != params.size()) {
            throw DimensionError("adam: parameter count changed between steps");
        }

        ++step_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& w = *params[p].value;
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            if (m.shape() != w.shape()) throw DimensionError("adam: moment shape mismatch for " + params[p].name);
            const Tensor& g = grads[p];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mh = m[i] / bc1;
                const double vh = v[i] / bc2;
                w[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    std::uint64_t step_ = 0;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
};

}  // namespace bicd
