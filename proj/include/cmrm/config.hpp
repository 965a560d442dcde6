#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>
#include <openssl/evp.h>

#include "cmrm/errors.hpp"

namespace cmrm {

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw ContractError("sha256: digest failure");
    }
    static const char* hex = "0123456789abcdef";
    std::string out(static_cast<std::size_t>(len) * 2, '0');
    for (unsigned int i = 0; i < len; ++i) {
        out[2 * i] = hex[digest[i] >> 4];
        out[2 * i + 1] = hex[digest[i] & 0xF];
    }
    return out;
}

enum class Mode { Pretrain, A, B, C, D };

inline std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Pretrain: return "pretrain";
        case Mode::A: return "A";
        case Mode::B: return "B";
        case Mode::C: return "C";
        case Mode::D: return "D";
    }
    throw ConfigError("unknown mode");
}

inline Mode parse_mode(const std::string& s) {
    if (s == "pretrain") return Mode::Pretrain;
    if (s == "A") return Mode::A;
    if (s == "B") return Mode::B;
    if (s == "C") return Mode::C;
    if (s == "D") return Mode::D;
    throw ConfigError("unknown mode '" + s + "' (pretrain|A|B|C|D)");
}

inline bool mode_uses_cmrm(Mode m) { return m == Mode::C || m == Mode::D; }
inline bool mode_uses_lora(Mode m) { return m == Mode::B || m == Mode::D; }

struct ModelConfig {
    std::size_t img_h = 32;
    std::size_t img_w = 96;
    std::size_t patch = 8;
    std::size_t d_v = 64; // visual feature dim
    std::size_t d = 64;   // shared model dim
    std::size_t enc_layers = 2;
    std::size_t dec_layers = 2;
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    std::size_t plate_len = 7; // K, also the slot count
    std::size_t cmrm_layers = 2;
    double alpha_init = 0.1;
    bool eos_in_loss = true;

    std::size_t patch_grid_h() const { return img_h / patch; }
    std::size_t patch_grid_w() const { return img_w / patch; }
    std::size_t token_count() const { return patch_grid_h() * patch_grid_w(); }

    void validate() const {
        if (patch == 0 || img_h % patch != 0 || img_w % patch != 0) {
            throw ConfigError("image " + std::to_string(img_h) + "x" + std::to_string(img_w) +
                              " not divisible by patch " + std::to_string(patch));
        }
        if (heads == 0 || d % heads != 0 || d_v % heads != 0) {
            throw ConfigError("model dims must be divisible by head count");
        }
        if (plate_len == 0) {
            throw ConfigError("plate_len must be positive");
        }
    }
};

struct LoraConfig {
    std::size_t rank = 4;
    double alpha = 1.0; // scale = alpha / rank
};

struct OptimConfig {
    double lr_base = 1e-3; // backbone pretraining group
    double lr_lora = 3e-3;
    double lr_cmrm = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double warmup_frac = 0.1;
    double lr_min = 1e-5;
    std::size_t epochs = 12;
    std::size_t batch_size = 16;
};

struct DataConfig {
    std::string train_dir;
    std::string eval_dir;
};

/// Every hyperparameter, seed and ablation switch. Serializes to canonical
/// JSON (sorted keys, compact) whose SHA-256 stamps checkpoints.
struct RunConfig {
    ModelConfig model;
    LoraConfig lora;
    OptimConfig optim;
    DataConfig data;
    std::string mode = "pretrain";
    std::uint64_t seed = 7;

    Mode run_mode() const { return parse_mode(mode); }

    void validate() const {
        model.validate();
        (void)run_mode();
        if (mode_uses_cmrm(run_mode()) && model.cmrm_layers == 0) {
            throw ConfigError("mode " + mode + " requires cmrm_layers >= 1");
        }
        if (optim.batch_size == 0) {
            throw ConfigError("batch_size must be positive");
        }
    }

    nlohmann::json to_json() const {
        return nlohmann::json{
            {"model",
             {{"img_h", model.img_h},
              {"img_w", model.img_w},
              {"patch", model.patch},
              {"d_v", model.d_v},
              {"d", model.d},
              {"enc_layers", model.enc_layers},
              {"dec_layers", model.dec_layers},
              {"heads", model.heads},
              {"mlp_ratio", model.mlp_ratio},
              {"plate_len", model.plate_len},
              {"cmrm_layers", model.cmrm_layers},
              {"alpha_init", model.alpha_init},
              {"eos_in_loss", model.eos_in_loss}}},
            {"lora", {{"rank", lora.rank}, {"alpha", lora.alpha}}},
            {"optim",
             {{"lr_base", optim.lr_base},
              {"lr_lora", optim.lr_lora},
              {"lr_cmrm", optim.lr_cmrm},
              {"beta1", optim.beta1},
              {"beta2", optim.beta2},
              {"eps", optim.eps},
              {"weight_decay", optim.weight_decay},
              {"warmup_frac", optim.warmup_frac},
              {"lr_min", optim.lr_min},
              {"epochs", optim.epochs},
              {"batch_size", optim.batch_size}}},
            {"data", {{"train_dir", data.train_dir}, {"eval_dir", data.eval_dir}}},
            {"mode", mode},
            {"seed", seed}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig c;
        const auto& m = j.at("model");
        c.model.img_h = m.at("img_h").get<std::size_t>();
        c.model.img_w = m.at("img_w").get<std::size_t>();
        c.model.patch = m.at("patch").get<std::size_t>();
        c.model.d_v = m.at("d_v").get<std::size_t>();
        c.model.d = m.at("d").get<std::size_t>();
        c.model.enc_layers = m.at("enc_layers").get<std::size_t>();
        c.model.dec_layers = m.at("dec_layers").get<std::size_t>();
        c.model.heads = m.at("heads").get<std::size_t>();
        c.model.mlp_ratio = m.at("mlp_ratio").get<std::size_t>();
        c.model.plate_len = m.at("plate_len").get<std::size_t>();
        c.model.cmrm_layers = m.at("cmrm_layers").get<std::size_t>();
        c.model.alpha_init = m.at("alpha_init").get<double>();
        c.model.eos_in_loss = m.at("eos_in_loss").get<bool>();
        const auto& l = j.at("lora");
        c.lora.rank = l.at("rank").get<std::size_t>();
        c.lora.alpha = l.at("alpha").get<double>();
        const auto& o = j.at("optim");
        c.optim.lr_base = o.at("lr_base").get<double>();
        c.optim.lr_lora = o.at("lr_lora").get<double>();
        c.optim.lr_cmrm = o.at("lr_cmrm").get<double>();
        c.optim.beta1 = o.at("beta1").get<double>();
        c.optim.beta2 = o.at("beta2").get<double>();
        c.optim.eps = o.at("eps").get<double>();
        c.optim.weight_decay = o.at("weight_decay").get<double>();
        c.optim.warmup_frac = o.at("warmup_frac").get<double>();
        c.optim.lr_min = o.at("lr_min").get<double>();
        c.optim.epochs = o.at("epochs").get<std::size_t>();
        c.optim.batch_size = o.at("batch_size").get<std::size_t>();
        const auto& d = j.at("data");
        c.data.train_dir = d.at("train_dir").get<std::string>();
        c.data.eval_dir = d.at("eval_dir").get<std::string>();
        c.mode = j.at("mode").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.validate();
        return c;
    }

    // Canonical form: nlohmann objects iterate keys sorted; dump() is compact.
    std::string canonical_json() const { return to_json().dump(); }
    std::string config_hash() const { return sha256_hex(canonical_json()); }

    // Architecture fingerprint: the subset that must match between a
    // checkpoint and the runtime it is loaded into (mode/optim/seed may vary).
    std::string arch_fingerprint() const {
        nlohmann::json j = to_json();
        return sha256_hex(nlohmann::json{{"lora", j["lora"]}, {"model", j["model"]}}.dump());
    }
};

} // namespace cmrm
