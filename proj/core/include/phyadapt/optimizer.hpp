#pragma once

#include <cmath>
#include <unordered_map>

#include "phyadapt/exec.hpp"
#include "phyadapt/tensor.hpp"

namespace phyadapt {

// Adam with bias correction and optional global gradient-norm clipping.
// Moment slots are keyed by parameter address; parameters must stay at a
// stable address for the lifetime of one training run.
class Adam {
public:
    Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Applies one step over the trainables registered in `exec`, reading
    // gradients off the tape. Parameters without a recorded gradient
    // (not reachable from the loss this step) are skipped.
    void step(Exec& exec, double clip_norm = 0.0) {
        double sq = 0.0;
        if (clip_norm > 0.0) {
            for (auto& [node, param] : exec.trainables) {
                if (!exec.g.has_grad(node)) continue;
                for (double v : exec.g.grad(node).data()) sq += v * v;
            }
        }
        const double norm = std::sqrt(sq);
        const double scale = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
        for (auto& [node, param] : exec.trainables) {
            if (!exec.g.has_grad(node)) continue;
            const Tensor& grad = exec.g.grad(node);
            Slot& slot = slots_[param];
            if (slot.m.size() != param->size()) {
                slot.m = Tensor(param->shape());
                slot.v = Tensor(param->shape());
                slot.t = 0;
            }
            // Per-parameter step count: adapters off the routing path of a
            // batch take no step, so their bias correction must not advance.
            ++slot.t;
            const double bc1 = 1.0 - std::pow(beta1_, slot.t);
            const double bc2 = 1.0 - std::pow(beta2_, slot.t);
            for (int64_t i = 0; i < param->size(); ++i) {
                const double gv = grad[i] * scale;
                slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * gv;
                slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * gv * gv;
                const double mhat = slot.m[i] / bc1;
                const double vhat = slot.v[i] / bc2;
                (*param)[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

private:
    struct Slot {
        Tensor m, v;
        int64_t t = 0;
    };
    double lr_, beta1_, beta2_, eps_;
    std::unordered_map<Tensor*, Slot> slots_;
};

}  // namespace phyadapt
