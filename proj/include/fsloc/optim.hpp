#pragma once

#include <cmath>
#include <vector>

#include "fsloc/tensor.hpp"

namespace fsloc {

// lr after epoch e is lr0 * factor^floor(e / every).
inline double scheduled_lr(double lr0, int epoch, double factor = 0.25, int every = 80) {
    return lr0 * std::pow(factor, epoch / every);
}

// Adaptive-moment update with bias correction.
template <typename T>
class Adam {
public:
    explicit Adam(std::vector<Tensor<T>> params, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto& p : params) {
            Slot slot;
            slot.param = std::move(p);
            slot.m.assign(static_cast<std::size_t>(slot.param.numel()), 0.0);
            slot.v.assign(static_cast<std::size_t>(slot.param.numel()), 0.0);
            slots_.push_back(std::move(slot));
        }
    }

    void step(double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (auto& slot : slots_) {
            if (!slot.param.has_grad()) continue;
            const auto& g = slot.param.grad();
            T* w = slot.param.data_mut();
            for (std::size_t i = 0; i < slot.m.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gi;
                slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gi * gi;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

    void zero_grad() {
        for (auto& slot : slots_) slot.param.zero_grad();
    }

    long long steps() const { return t_; }

private:
    struct Slot {
        Tensor<T> param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double beta1_, beta2_, eps_;
    long long t_ = 0;
};

}  // namespace fsloc
