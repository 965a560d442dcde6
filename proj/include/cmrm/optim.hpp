#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "cmrm/errors.hpp"
#include "cmrm/tensor.hpp"

namespace cmrm {

/// Piecewise learning rate: linear 0 -> peak over [0, warmup], then cosine
/// peak -> lr_min over [warmup, total]. Endpoints are returned exactly.
/// total == 0 selects a constant rate (used by unit tests and short probes).
inline double scheduled_lr(std::size_t step, std::size_t warmup_steps, std::size_t total_steps,
                           double lr_peak, double lr_min) {
    if (total_steps == 0) {
        return lr_peak;
    }
    if (step >= total_steps) {
        return lr_min;
    }
    if (warmup_steps > 0 && step < warmup_steps) {
        return lr_peak * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    if (step == warmup_steps || total_steps <= warmup_steps) {
        return lr_peak;
    }
    const double phase = static_cast<double>(step - warmup_steps) /
                         static_cast<double>(total_steps - warmup_steps);
    return lr_min + 0.5 * (lr_peak - lr_min) * (1.0 + std::cos(std::numbers::pi * phase));
}

/// AdamW with decoupled weight decay and bias correction. One shared step
/// counter; per-parameter moment buffers and peak rate (parameter groups pick
/// different peaks). Updates run in registration order, deterministically.
class AdamW {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.0;
        double lr_min = 1e-5;
        std::size_t warmup_steps = 0;
        std::size_t total_steps = 0; // 0 = constant lr_peak
    };

    explicit AdamW(Hyper hyper) : hyper_(hyper) {}

    void add_param(Tensor param, double lr_peak, const std::string& name = "") {
        Slot s;
        s.param = std::move(param);
        s.lr_peak = lr_peak;
        s.name = name;
        s.m.assign(s.param.numel(), 0.0);
        s.v.assign(s.param.numel(), 0.0);
        slots_.push_back(std::move(s));
    }

    std::size_t step_count() const { return step_; }
    std::size_t param_tensor_count() const { return slots_.size(); }

    double current_lr(double lr_peak) const {
        return scheduled_lr(step_, hyper_.warmup_steps, hyper_.total_steps, lr_peak,
                            hyper_.lr_min);
    }

    void zero_grads() {
        for (Slot& s : slots_) {
            s.param.clear_grad();
        }
    }

    // One update over every registered parameter. Missing gradients are
    // treated as zeros (unreachable parameters still decay their moments).
    void step() {
        ++step_;
        const double bc1 = 1.0 - std::pow(hyper_.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(hyper_.beta2, static_cast<double>(step_));
        for (Slot& s : slots_) {
            if (s.m.size() != s.param.numel()) {
                throw ContractError("adamw: state shape drifted for parameter '" + s.name + "'");
            }
            if (s.param.has_grad() && s.param.grad().size() != s.param.numel()) {
                throw ContractError("adamw: gradient shape drifted for parameter '" + s.name +
                                    "'");
            }
            const double lr = scheduled_lr(step_, hyper_.warmup_steps, hyper_.total_steps,
                                           s.lr_peak, hyper_.lr_min);
            const bool has_g = s.param.has_grad();
            const std::vector<double>* g = has_g ? &s.param.grad() : nullptr;
            auto& p = s.param.v();
            for (std::size_t i = 0; i < p.size(); ++i) {
                const double gi = has_g ? (*g)[i] : 0.0;
                s.m[i] = hyper_.beta1 * s.m[i] + (1.0 - hyper_.beta1) * gi;
                s.v[i] = hyper_.beta2 * s.v[i] + (1.0 - hyper_.beta2) * gi * gi;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                p[i] -= lr * (mhat / (std::sqrt(vhat) + hyper_.eps) +
                              hyper_.weight_decay * p[i]);
            }
        }
    }

    const Hyper& hyper() const { return hyper_; }

    // Moment access for checkpointing / tests.
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
        double lr_peak = 0.0;
        std::string name;
    };
    const std::vector<Slot>& slots() const { return slots_; }
    std::vector<Slot>& slots() { return slots_; }

private:
    Hyper hyper_;
    std::vector<Slot> slots_;
    std::size_t step_ = 0;
};

} // namespace cmrm
