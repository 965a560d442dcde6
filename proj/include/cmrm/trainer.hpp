#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmrm/checkpoint.hpp"
#include "cmrm/config.hpp"
#include "cmrm/lora.hpp"
#include "cmrm/model.hpp"
#include "cmrm/optim.hpp"
#include "cmrm/plate.hpp"
#include "cmrm/tensor.hpp"

namespace cmrm {

struct StepLogEntry {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::string mode;
    double wall_ms = 0.0;

    nlohmann::json to_json() const {
        return nlohmann::json{{"step", step}, {"lr", lr}, {"loss", loss}, {"mode", mode},
                              {"wall_ms", wall_ms}};
    }
};

inline double group_lr_peak(ParamGroup g, const OptimConfig& o) {
    switch (g) {
        case ParamGroup::Base: return o.lr_base;
        case ParamGroup::Cmrm: return o.lr_cmrm;
        case ParamGroup::Lora: return o.lr_lora;
    }
    throw ConfigError("unknown parameter group");
}

inline AdamW make_optimizer(const FreezePartition& part, const OptimConfig& o,
                            std::size_t total_steps) {
    AdamW::Hyper hy;
    hy.beta1 = o.beta1;
    hy.beta2 = o.beta2;
    hy.eps = o.eps;
    hy.weight_decay = o.weight_decay;
    hy.lr_min = o.lr_min;
    hy.total_steps = total_steps;
    hy.warmup_steps = static_cast<std::size_t>(std::llround(o.warmup_frac *
                                                            static_cast<double>(total_steps)));
    AdamW opt(hy);
    for (const NamedParam& p : part.trainable) {
        opt.add_param(p.tensor, group_lr_peak(p.group, o), p.name);
    }
    return opt;
}

/// One optimizer step: forward + backward per batch sample on a fresh tape
/// (gradients accumulate across the batch, each seeded with 1/B), then one
/// AdamW update over the trainable set. Returns the mean sample loss.
inline double training_step(Model& model, const Dataset& ds, const std::vector<std::size_t>& idx,
                            AdamW& opt, const std::vector<Tensor>* cached_h) {
    if (idx.empty()) {
        throw ContractError("training_step: empty batch");
    }
    opt.zero_grads();
    const double inv_b = 1.0 / static_cast<double>(idx.size());
    double total = 0.0;
    for (std::size_t i : idx) {
        Tape tape;
        TapeScope scope(tape);
        Tensor h = (cached_h != nullptr) ? (*cached_h)[i]
                                         : model.encode_project(ds.samples[i].image);
        Tensor loss = model.sample_loss_from_h(h, ds.samples[i].label);
        Tensor scaled = ops::scale(loss, inv_b);
        tape.backward(scaled);
        total += loss.v()[0];
    }
    opt.step();
    return total * inv_b;
}

// Precomputed post-projector tokens for the frozen-backbone modes; the tape
// then starts at H and backward never enters the encoder.
inline std::vector<Tensor> cache_visual_tokens(const Model& model, const Dataset& ds) {
    std::vector<Tensor> cached;
    cached.reserve(ds.samples.size());
    for (const PlateSample& s : ds.samples) {
        cached.push_back(model.encode_project(s.image));
    }
    return cached;
}

struct TrainResult {
    std::vector<StepLogEntry> log;
    double final_loss = 0.0;
    std::uint64_t shuffle_rng_state = 0;
};

/// Epoch loop shared by pretraining and adaptation. Batch order comes from a
/// per-epoch Fisher-Yates shuffle seeded by (seed, epoch); the trailing
/// partial batch is kept.
inline TrainResult run_training(Model& model, const Dataset& ds, AdamW& opt, Mode mode,
                                std::size_t epochs, std::size_t batch_size,
                                const std::vector<Tensor>* cached_h, std::ostream* progress) {
    using Clock = std::chrono::steady_clock;
    TrainResult result;
    const std::size_t n = ds.samples.size();
    if (n == 0) {
        throw ContractError("run_training: empty dataset");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(0);
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        shuffle_rng = Rng(derive_seed(model.cfg.seed, 0xE90C4ull + epoch));
        shuffle_rng.shuffle(order);
        for (std::size_t start = 0; start < n; start += batch_size) {
            const std::size_t end = std::min(n, start + batch_size);
            const std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                                 order.begin() + static_cast<long>(end));
            const auto t0 = Clock::now();
            double loss = 0.0;
            try {
                loss = training_step(model, ds, batch, opt, cached_h);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at step " + std::to_string(step) + ": " +
                                   e.what());
            }
            ++step;
            StepLogEntry entry;
            entry.step = step;
            entry.lr = opt.current_lr(opt.slots().empty() ? 0.0 : opt.slots().front().lr_peak);
            entry.loss = loss;
            entry.mode = mode_name(mode);
            entry.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            if (progress != nullptr) {
                (*progress) << entry.to_json().dump() << "\n";
            }
            result.log.push_back(std::move(entry));
            result.final_loss = loss;
        }
    }
    result.shuffle_rng_state = shuffle_rng.state();
    return result;
}

inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
    return (n + batch - 1) / batch;
}

struct PretrainOutput {
    Model model;
    TrainResult train;
    nlohmann::json metadata;
};

/// Phase 1: clean-plate training of encoder + projector + decoder, no CMRM,
/// no LoRA. Stands in for the pretrained backbone the adaptation phase
/// freezes. Records the final clean-subset exact match in the metadata.
inline PretrainOutput pretrain_backbone(const RunConfig& cfg_in, const Dataset& clean,
                                        std::ostream* progress = nullptr) {
    RunConfig cfg = cfg_in;
    cfg.mode = "pretrain";
    cfg.validate();
    PretrainOutput out{Model::build(cfg, false), {}, {}};
    FreezePartition part = apply_freeze(out.model, Mode::Pretrain);
    const std::size_t total =
        cfg.optim.epochs * steps_per_epoch(clean.samples.size(), cfg.optim.batch_size);
    AdamW opt = make_optimizer(part, cfg.optim, total);
    out.train = run_training(out.model, clean, opt, Mode::Pretrain, cfg.optim.epochs,
                             cfg.optim.batch_size, nullptr, progress);
    // Cheap exact-match probe on a fixed-size clean subset.
    const std::size_t probe_n = std::min<std::size_t>(clean.samples.size(), 512);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < probe_n; ++i) {
        if (out.model.infer(clean.samples[i].image) == clean.samples[i].label) {
            ++hits;
        }
    }
    out.metadata = {{"mode", "pretrain"},
                    {"steps", out.train.log.size()},
                    {"final_loss", out.train.final_loss},
                    {"clean_acc", probe_n ? static_cast<double>(hits) / probe_n : 0.0},
                    {"clean_acc_samples", probe_n}};
    return out;
}

struct AdaptOutput {
    Model model;
    TrainResult train;
    nlohmann::json metadata;
    FreezePartition partition;
};

// Builds the mode-specific model around a pretrained backbone: backbone
// tensors come from the checkpoint, CMRM / LoRA (when the mode uses them) are
// freshly initialized from cfg.seed.
inline Model assemble_for_mode(const RunConfig& cfg, const Checkpoint& base, Mode mode) {
    RunConfig run_cfg = cfg;
    run_cfg.mode = mode_name(mode);
    run_cfg.validate();
    Model model = Model::build(run_cfg, mode_uses_cmrm(mode));
    if (mode_uses_lora(mode)) {
        model.attach_lora();
    }
    model.visit_params([&base](const std::string& name, Tensor& t, ParamGroup g) {
        if (g != ParamGroup::Base) {
            return;
        }
        auto it = base.tensors.find(name);
        if (it == base.tensors.end()) {
            throw ContractError("base checkpoint is missing backbone tensor '" + name + "'");
        }
        if (it->second.dims != t.shape()) {
            throw ContractError("base checkpoint tensor '" + name + "' has shape " +
                                shape_str(it->second.dims) + ", expected " + shape_str(t.shape()));
        }
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t.v()[i] = static_cast<double>(it->second.data[i]);
        }
    });
    return model;
}

/// Phase 2: Table-2-style adaptation. Mode A performs zero steps; B/C/D train
/// their trainable sets on the degraded data with the frozen backbone's
/// visual tokens precomputed once.
inline AdaptOutput adapt(const RunConfig& cfg, const Checkpoint& base, const Dataset& degraded,
                         Mode mode, std::ostream* progress = nullptr) {
    if (mode == Mode::Pretrain) {
        throw ConfigError("adapt: mode must be one of A|B|C|D");
    }
    AdaptOutput out{assemble_for_mode(cfg, base, mode), {}, {}, {}};
    out.partition = apply_freeze(out.model, mode);
    if (mode == Mode::A) {
        out.metadata = {{"mode", "A"}, {"steps", 0}, {"final_loss", nullptr}};
        return out;
    }
    const std::size_t total =
        cfg.optim.epochs * steps_per_epoch(degraded.samples.size(), cfg.optim.batch_size);
    AdamW opt = make_optimizer(out.partition, cfg.optim, total);
    const std::vector<Tensor> cached = cache_visual_tokens(out.model, degraded);
    out.train = run_training(out.model, degraded, opt, mode, cfg.optim.epochs,
                             cfg.optim.batch_size, &cached, progress);
    out.metadata = {{"mode", mode_name(mode)},
                    {"steps", out.train.log.size()},
                    {"final_loss", out.train.final_loss}};
    return out;
}

// First-batch gradient norms on the slot queries and alpha, no optimizer
// step. The probe for "gradients reach the CMRM through the injection".
struct GradFlowProbe {
    double slot_grad_norm = 0.0;
    double alpha_grad_norm = 0.0;
};

inline GradFlowProbe first_batch_grad_probe(Model& model, const Dataset& ds,
                                            std::size_t batch_size) {
    if (!model.cmrm) {
        throw ConfigError("grad probe requires a CMRM-enabled model");
    }
    model.cmrm->slots.clear_grad();
    model.cmrm->alpha.clear_grad();
    const std::size_t b = std::min(batch_size, ds.samples.size());
    Tape tape;
    TapeScope scope(tape);
    Tensor total;
    for (std::size_t i = 0; i < b; ++i) {
        Tensor loss = model.sample_loss(ds.samples[i].image, ds.samples[i].label);
        total = total ? ops::add(total, loss) : loss;
    }
    tape.backward(ops::scale(total, 1.0 / static_cast<double>(b)));
    GradFlowProbe probe;
    if (model.cmrm->slots.has_grad()) {
        for (double g : model.cmrm->slots.grad()) {
            probe.slot_grad_norm += g * g;
        }
        probe.slot_grad_norm = std::sqrt(probe.slot_grad_norm);
    }
    if (model.cmrm->alpha.has_grad()) {
        probe.alpha_grad_norm = std::abs(model.cmrm->alpha.grad()[0]);
    }
    return probe;
}

} // namespace cmrm
