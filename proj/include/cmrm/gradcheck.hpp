#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cmrm/errors.hpp"
#include "cmrm/tensor.hpp"

namespace cmrm {

// Worst-coordinate relative error between analytic and central-difference
// gradients. Denominator floored at 1e-6 so exactly-zero gradients compare
// cleanly against finite-difference noise.
inline double gradcheck_rel_err(double analytic, double numeric) {
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
    return std::abs(analytic - numeric) / denom;
}

/// Central finite differences per input coordinate against the tape gradient.
/// `f` must map the given tensors to a scalar; it is re-evaluated with each
/// coordinate perturbed in place, outside any tape, so the check is
/// independent of every backward rule it verifies.
inline double grad_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         std::vector<Tensor> inputs, double eps = 1e-5) {
    for (Tensor& t : inputs) {
        t.set_requires_grad(true);
        t.clear_grad();
    }

    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f(inputs);
        if (loss.numel() != 1) {
            throw ContractError("grad_check: closure must return a scalar");
        }
        tape.backward(loss);
        for (Tensor& t : inputs) {
            analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));
        }
    }

    double worst = 0.0;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        Tensor& t = inputs[ti];
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double saved = t.v()[i];
            t.v()[i] = saved + eps;
            const double fp = f(inputs).v()[0];
            t.v()[i] = saved - eps;
            const double fm = f(inputs).v()[0];
            t.v()[i] = saved;
            const double numeric = (fp - fm) / (2.0 * eps);
            worst = std::max(worst, gradcheck_rel_err(analytic[ti][i], numeric));
        }
    }
    return worst;
}

// One named check with its own tolerance; run() returns the measured error.
struct GradCheckCase {
    std::string name;
    double tolerance;
    std::function<double()> run;
};

struct GradCheckOutcome {
    std::string name;
    double tolerance = 0.0;
    double error = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckOutcome> outcomes;
    bool all_pass = true;
    std::string worst_name;
    double worst_margin = 0.0; // error / tolerance of the worst offender

    const GradCheckOutcome* worst() const {
        const GradCheckOutcome* w = nullptr;
        double margin = -1.0;
        for (const auto& o : outcomes) {
            const double m = o.error / o.tolerance;
            if (m > margin) {
                margin = m;
                w = &o;
            }
        }
        return w;
    }
};

inline GradCheckReport run_gradcheck_cases(const std::vector<GradCheckCase>& cases) {
    GradCheckReport report;
    for (const GradCheckCase& c : cases) {
        GradCheckOutcome o;
        o.name = c.name;
        o.tolerance = c.tolerance;
        o.error = c.run();
        o.pass = o.error < c.tolerance;
        report.all_pass = report.all_pass && o.pass;
        report.outcomes.push_back(std::move(o));
    }
    if (const GradCheckOutcome* w = report.worst()) {
        report.worst_name = w->name;
        report.worst_margin = w->error / w->tolerance;
    }
    return report;
}

} // namespace cmrm
