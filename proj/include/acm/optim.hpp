// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "acm/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace acm {

// AdamW with decoupled weight decay. Frozen parameters (requires_grad off)
// are never touched, not even by the decay term. Moment buffers live for the
// lifetime of the optimizer; training stages create a fresh instance.
class AdamW {
public:
    explicit AdamW(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                   double weight_decay = 0.01)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {}

    void add_param(const Tensor& p) {
        slots_.push_back(Slot{p, std::vector<double>(p.value().size(), 0.0),
                              std::vector<double>(p.value().size(), 0.0)});
    }
    void add_params(const std::vector<Tensor>& ps) {
        for (const Tensor& p : ps) add_param(p);
    }

    std::int64_t step_count() const { return t_; }
    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

    // One update over all registered non-frozen params; clears their grads.
    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (Slot& s : slots_) {
            TensorData* p = s.param.raw();
            if (!p->requires_grad) continue;
            if (!p->has_grad()) continue;
            const std::size_t n = p->value.size();
            for (std::size_t i = 0; i < n; ++i) {
                const double g = p->grad[i];
                s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
                s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                p->value[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->value[i]);
            }
            p->grad.clear();
        }
    }

    void zero_grad() {
        for (Slot& s : slots_) s.param.raw()->grad.clear();
    }

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    double lr_, beta1_, beta2_, eps_, wd_;
    std::int64_t t_ = 0;
    std::vector<Slot> slots_;
};

} // namespace acm
