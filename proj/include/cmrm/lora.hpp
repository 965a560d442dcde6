#pragma once

#include <string>
#include <vector>

#include "cmrm/config.hpp"
#include "cmrm/errors.hpp"
#include "cmrm/model.hpp"

namespace cmrm {

struct FreezePartition {
    std::vector<NamedParam> trainable;
    std::vector<NamedParam> frozen;
};

inline bool group_trainable(ParamGroup g, Mode mode) {
    switch (mode) {
        case Mode::Pretrain: return g == ParamGroup::Base;
        case Mode::A: return false;
        case Mode::B: return g == ParamGroup::Lora;
        case Mode::C: return g == ParamGroup::Cmrm;
        case Mode::D: return g == ParamGroup::Lora || g == ParamGroup::Cmrm;
    }
    throw ConfigError("unknown mode");
}

/// Partitions every parameter into exactly one of {trainable, frozen} per the
/// ablation mode and stamps requires_grad accordingly. The backbone is frozen
/// in every adaptation mode.
inline FreezePartition apply_freeze(Model& model, Mode mode) {
    if (mode_uses_cmrm(mode) && !model.cmrm) {
        throw ConfigError("mode " + mode_name(mode) + " requires a CMRM-enabled model");
    }
    if (mode_uses_lora(mode) && !model.lora_attached) {
        throw ConfigError("mode " + mode_name(mode) + " requires attached LoRA adapters");
    }
    FreezePartition part;
    model.visit_params([&](const std::string& name, Tensor& t, ParamGroup g) {
        const bool train = group_trainable(g, mode);
        t.set_requires_grad(train);
        (train ? part.trainable : part.frozen).push_back(NamedParam{name, t, g});
    });
    return part;
}

} // namespace cmrm
