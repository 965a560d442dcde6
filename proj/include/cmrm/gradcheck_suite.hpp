#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmrm/config.hpp"
#include "cmrm/gradcheck.hpp"
#include "cmrm/lora.hpp"
#include "cmrm/model.hpp"
#include "cmrm/nn.hpp"
#include "cmrm/plate.hpp"
#include "cmrm/rng.hpp"
#include "cmrm/tensor.hpp"

namespace cmrm {

// Smallest config exercising every path: 16x48 image, 2x6 patch grid (N=12),
// D=16, K=3, one layer everywhere.
inline RunConfig micro_config(std::uint64_t seed = 911) {
    RunConfig cfg;
    cfg.model.img_h = 16;
    cfg.model.img_w = 48;
    cfg.model.patch = 8;
    cfg.model.d_v = 16;
    cfg.model.d = 16;
    cfg.model.enc_layers = 1;
    cfg.model.dec_layers = 1;
    cfg.model.heads = 4;
    cfg.model.mlp_ratio = 2;
    cfg.model.plate_len = 3;
    cfg.model.cmrm_layers = 1;
    cfg.lora.rank = 2;
    cfg.mode = "D";
    cfg.seed = seed;
    return cfg;
}

/// The finite-difference suite: every primitive at 1e-6, composites and the
/// full micro-model at 1e-4. Deterministic given the seed.
inline std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed = 911) {
    constexpr double tol_primitive = 1e-6;
    constexpr double tol_composite = 1e-4;
    std::vector<GradCheckCase> cases;

    auto rnd = [seed](std::uint64_t stream, Shape shape, double std = 1.0) {
        Rng rng(derive_seed(seed, stream));
        return Tensor::gaussian(std::move(shape), rng, std);
    };

    cases.push_back({"add", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) { return ops::sum(ops::add(in[0], in[1])); },
            {rnd(1, {4, 5}), rnd(2, {4, 5})});
    }});
    cases.push_back({"scale", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) { return ops::sum(ops::scale(in[0], -1.7)); },
            {rnd(3, {3, 4})});
    }});
    cases.push_back({"matmul", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) { return ops::sum(ops::matmul(in[0], in[1])); },
            {rnd(4, {3, 5}), rnd(5, {5, 4})});
    }});
    cases.push_back({"matmul_nt", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) { return ops::sum(ops::matmul_nt(in[0], in[1])); },
            {rnd(6, {3, 5}), rnd(7, {4, 5})});
    }});
    cases.push_back({"linear", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                return ops::sum(ops::linear(in[0], in[1], in[2]));
            },
            {rnd(8, {4, 6}), rnd(9, {3, 6}), rnd(10, {3})});
    }});
    cases.push_back({"gelu", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) { return ops::sum(ops::gelu(in[0])); },
            {rnd(11, {4, 5})});
    }});
    // Sum of squared softmax outputs: a non-linear readout so the Jacobian
    // structure actually matters.
    cases.push_back({"softmax", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                Tensor y = ops::softmax(in[0]);
                Tensor y2 = ops::scale(ops::gelu(y), 2.0);
                return ops::sum(y2);
            },
            {rnd(12, {3, 7})});
    }});
    cases.push_back({"layer_norm", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                return ops::sum(ops::gelu(ops::layer_norm(in[0], in[1], in[2])));
            },
            {rnd(13, {4, 8}), rnd(14, {8}, 0.3), rnd(15, {8}, 0.3)});
    }});
    cases.push_back({"mean_rows", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) { return ops::sum(ops::gelu(ops::mean_rows(in[0]))); },
            {rnd(16, {5, 6})});
    }});
    cases.push_back({"inject", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                return ops::sum(ops::gelu(ops::inject(in[0], in[1], in[2])));
            },
            {rnd(17, {6, 4}), rnd(18, {4}), rnd(19, {1})});
    }});
    cases.push_back({"slice_concat", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                Tensor a = ops::slice_cols(in[0], 0, 2);
                Tensor b = ops::slice_rows(in[0], 1, 3);
                return ops::add(ops::sum(ops::gelu(ops::concat_cols({a, a}))),
                                ops::sum(ops::concat_rows({b, b})));
            },
            {rnd(20, {4, 6})});
    }});
    cases.push_back({"gather_rows", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                return ops::sum(ops::gelu(ops::gather_rows(in[0], {0, 2, 2, 1})));
            },
            {rnd(21, {4, 5})});
    }});
    cases.push_back({"cross_entropy", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                return ops::cross_entropy(in[0], {1, 4, -1, 0}, -1);
            },
            {rnd(22, {4, 6})});
    }});
    cases.push_back({"softmax_cross_entropy", tol_primitive, [rnd] {
        return grad_check(
            [](const std::vector<Tensor>& in) {
                Tensor p = ops::softmax(ops::matmul(in[0], in[1]));
                return ops::cross_entropy(p, {2, 0, 1}, -1);
            },
            {rnd(23, {3, 4}), rnd(24, {4, 5})});
    }});
    cases.push_back({"lora_path", tol_primitive, [rnd, seed] {
        Rng rng(derive_seed(seed, 25));
        LoraPair lora = LoraPair::make(4, 6, 2, 1.0, rng);
        for (double& v : lora.b.v()) v = rng.gaussian(0.0, 0.5); // move B off zero
        return grad_check(
            [lora](const std::vector<Tensor>& in) {
                LoraPair lp = lora;
                lp.a = in[2];
                lp.b = in[3];
                return ops::sum(ops::gelu(lora_forward(in[0], in[1], Tensor::zeros({4}), lp)));
            },
            {rnd(26, {5, 6}), rnd(27, {4, 6}), lora.a, lora.b});
    }});
    cases.push_back({"multi_head_attention", tol_composite, [rnd, seed] {
        Rng rng(derive_seed(seed, 28));
        MhaParams p = MhaParams::make(8, 2, rng);
        return grad_check(
            [p](const std::vector<Tensor>& in) {
                MhaParams q = p;
                q.wq.base.w = in[1];
                q.wk.base.w = in[2];
                q.wv.base.w = in[3];
                q.wo.base.w = in[4];
                return ops::sum(ops::gelu(multi_head_attention(in[0], in[0], in[0], q)));
            },
            {rnd(29, {5, 8}), p.wq.base.w, p.wk.base.w, p.wv.base.w, p.wo.base.w});
    }});
    cases.push_back({"causal_attention", tol_composite, [rnd, seed] {
        Rng rng(derive_seed(seed, 30));
        MhaParams p = MhaParams::make(8, 2, rng);
        return grad_check(
            [p](const std::vector<Tensor>& in) {
                const Tensor mask = ops::causal_mask(in[0].rows());
                return ops::sum(ops::gelu(multi_head_attention(in[0], in[0], in[0], p, &mask)));
            },
            {rnd(31, {5, 8})});
    }});
    cases.push_back({"transformer_block", tol_composite, [rnd, seed] {
        Rng rng(derive_seed(seed, 32));
        TransformerBlock b = TransformerBlock::make(8, 2, 2, rng);
        return grad_check(
            [b](const std::vector<Tensor>& in) { return ops::sum(ops::gelu(b.forward(in[0]))); },
            {rnd(33, {6, 8})});
    }});
    // Full micro model, every parameter perturbed, 4-sample batch.
    cases.push_back({"full_micro_model", tol_composite, [seed] {
        const RunConfig cfg = micro_config(seed);
        Model model = Model::build(cfg, true);
        model.attach_lora();
        // Nudge LoRA B off its zero init so its gradient path is generic.
        Rng rng(derive_seed(seed, 40));
        model.visit_params([&rng](const std::string& name, Tensor& t, ParamGroup g) {
            if (g == ParamGroup::Lora && name.back() == 'B') {
                for (double& v : t.v()) v = rng.gaussian(0.0, 0.05);
            }
        });
        std::vector<Image> images;
        std::vector<std::string> labels;
        for (std::uint64_t i = 0; i < 4; ++i) {
            PlateSample s = make_sample(derive_seed(seed, 41), i, SplitProfile::TrainDegraded,
                                        cfg.model.img_h, cfg.model.img_w, cfg.model.plate_len);
            images.push_back(s.image);
            labels.push_back(s.label);
        }
        std::vector<Tensor> params;
        model.visit_params(
            [&params](const std::string&, Tensor& t, ParamGroup) { params.push_back(t); });
        return grad_check(
            [&model, &images, &labels](const std::vector<Tensor>&) {
                Tensor total = Tensor::scalar(0.0);
                for (std::size_t i = 0; i < images.size(); ++i) {
                    total = ops::add(total, model.sample_loss(images[i], labels[i]));
                }
                return ops::scale(total, 1.0 / static_cast<double>(images.size()));
            },
            params, 3e-5);
    }});
    return cases;
}

} // namespace cmrm
