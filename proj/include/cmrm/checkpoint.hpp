#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmrm/config.hpp"
#include "cmrm/errors.hpp"
#include "cmrm/lora.hpp"
#include "cmrm/model.hpp"
#include "cmrm/rng.hpp"

namespace cmrm {

// Binary checkpoint, little-endian throughout:
//   "CMRM" | u32 version | u64 len + config json | 32-byte sha256(config)
//   u64 len + metadata json
//   u64 tensor count, then per tensor (lexicographic by name):
//     u32 name len | name | u8 dtype (0 = f32) | u8 ndim | u64 dims | f32 data
//   u8 rng flag | u64 state | u8 spare flag | f64 spare
//   u8 optimizer flag | u64 step | u64 count | per slot: name, f32 m, f32 v
// Tensor data is stored f32 (documented lossy narrowing from the f64 compute
// state); save -> load -> save is byte-identical because f32 widens exactly.
struct StoredTensor {
    std::vector<std::size_t> dims;
    std::vector<float> data;
};

struct Checkpoint {
    static constexpr std::uint32_t format_version = 1;

    std::string config_json;
    std::string config_hash; // hex sha256 of config_json
    nlohmann::json metadata;
    std::map<std::string, StoredTensor> tensors; // std::map keeps names sorted

    bool has_rng = false;
    std::uint64_t rng_state = 0;
    bool rng_has_spare = false;
    double rng_spare = 0.0;

    bool has_optimizer = false;
    std::uint64_t optimizer_step = 0;
    std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> optimizer_moments;

    RunConfig config() const { return RunConfig::from_json(nlohmann::json::parse(config_json)); }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}
inline void put_f64(std::string& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}
inline void put_bytes(std::string& out, const std::string& s) {
    out.append(s);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    std::string context;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) {
            throw IoError("truncated checkpoint: " + context);
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * i);
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline void put_tensor_entry(std::string& out, const std::string& name, const StoredTensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    put_bytes(out, name);
    out.push_back(0); // dtype f32
    out.push_back(static_cast<char>(t.dims.size()));
    for (std::size_t d : t.dims) put_u64(out, d);
    for (float v : t.data) put_f32(out, v);
}

} // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    std::string out;
    out.reserve(1 << 20);
    out.append("CMRM");
    detail::put_u32(out, Checkpoint::format_version);
    detail::put_u64(out, ck.config_json.size());
    detail::put_bytes(out, ck.config_json);
    const std::string hash_hex = sha256_hex(ck.config_json);
    for (std::size_t i = 0; i < 64; i += 2) {
        out.push_back(static_cast<char>(std::stoi(hash_hex.substr(i, 2), nullptr, 16)));
    }
    const std::string meta = ck.metadata.dump();
    detail::put_u64(out, meta.size());
    detail::put_bytes(out, meta);
    detail::put_u64(out, ck.tensors.size());
    for (const auto& [name, t] : ck.tensors) {
        detail::put_tensor_entry(out, name, t);
    }
    out.push_back(ck.has_rng ? 1 : 0);
    if (ck.has_rng) {
        detail::put_u64(out, ck.rng_state);
        out.push_back(ck.rng_has_spare ? 1 : 0);
        detail::put_f64(out, ck.rng_spare);
    }
    out.push_back(ck.has_optimizer ? 1 : 0);
    if (ck.has_optimizer) {
        detail::put_u64(out, ck.optimizer_step);
        detail::put_u64(out, ck.optimizer_moments.size());
        for (const auto& [name, mv] : ck.optimizer_moments) {
            detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
            detail::put_bytes(out, name);
            detail::put_u64(out, mv.first.size());
            for (float v : mv.first) detail::put_f32(out, v);
            for (float v : mv.second) detail::put_f32(out, v);
        }
    }
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf, const std::string& context) {
    detail::Reader r{buf, 0, context};
    if (r.bytes(4) != "CMRM") {
        throw IoError("bad magic in checkpoint: " + context);
    }
    const std::uint32_t version = r.u32();
    if (version != Checkpoint::format_version) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + context);
    }
    Checkpoint ck;
    ck.config_json = r.bytes(r.u64());
    std::string stored_hash;
    {
        const std::string raw = r.bytes(32);
        static const char* hex = "0123456789abcdef";
        for (unsigned char c : raw) {
            stored_hash.push_back(hex[c >> 4]);
            stored_hash.push_back(hex[c & 0xF]);
        }
    }
    ck.config_hash = sha256_hex(ck.config_json);
    if (ck.config_hash != stored_hash) {
        throw IoError("checkpoint config hash mismatch (corrupt file): " + context);
    }
    ck.metadata = nlohmann::json::parse(r.bytes(r.u64()));
    const std::uint64_t count = r.u64();
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        const std::uint8_t dtype = r.u8();
        if (dtype != 0) {
            throw IoError("unsupported tensor dtype in checkpoint: " + context);
        }
        StoredTensor t;
        const std::uint8_t ndim = r.u8();
        std::size_t numel = 1;
        for (std::uint8_t d = 0; d < ndim; ++d) {
            t.dims.push_back(static_cast<std::size_t>(r.u64()));
            numel *= t.dims.back();
        }
        t.data.resize(numel);
        for (std::size_t j = 0; j < numel; ++j) t.data[j] = r.f32();
        ck.tensors.emplace(name, std::move(t));
    }
    ck.has_rng = r.u8() != 0;
    if (ck.has_rng) {
        ck.rng_state = r.u64();
        ck.rng_has_spare = r.u8() != 0;
        ck.rng_spare = r.f64();
    }
    ck.has_optimizer = r.u8() != 0;
    if (ck.has_optimizer) {
        ck.optimizer_step = r.u64();
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::string name = r.bytes(r.u32());
            const std::uint64_t sz = r.u64();
            std::vector<float> m(sz), v(sz);
            for (auto& x : m) x = r.f32();
            for (auto& x : v) x = r.f32();
            ck.optimizer_moments.emplace(name, std::make_pair(std::move(m), std::move(v)));
        }
    }
    if (r.pos != buf.size()) {
        throw IoError("trailing bytes in checkpoint: " + context);
    }
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const std::string bytes = serialize_checkpoint(ck);
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for writing: " + path.string());
    }
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw IoError("short write: " + path.string());
    }
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open for reading: " + path.string());
    }
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(buf, path.string());
}

// ---------------------------------------------------------------------------
// model <-> checkpoint
// ---------------------------------------------------------------------------

inline Checkpoint checkpoint_from_model(Model& model, nlohmann::json metadata) {
    Checkpoint ck;
    ck.config_json = model.cfg.canonical_json();
    ck.config_hash = sha256_hex(ck.config_json);
    ck.metadata = std::move(metadata);
    model.visit_params([&ck](const std::string& name, Tensor& t, ParamGroup) {
        StoredTensor st;
        st.dims = t.shape();
        st.data.reserve(t.numel());
        for (double v : t.v()) st.data.push_back(static_cast<float>(v));
        ck.tensors.emplace(name, std::move(st));
    });
    return ck;
}

/// Rebuilds the model a checkpoint describes: CMRM per the stored mode, LoRA
/// attached per the stored mode, every tensor assigned (widened f32 -> f64).
/// Missing or extra names are contract errors.
inline Model model_from_checkpoint(const Checkpoint& ck) {
    const RunConfig cfg = ck.config();
    const Mode mode = cfg.run_mode();
    Model model = Model::build(cfg, mode_uses_cmrm(mode));
    if (mode_uses_lora(mode)) {
        model.attach_lora();
    }
    std::size_t assigned = 0;
    model.visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) {
            throw ContractError("checkpoint is missing tensor '" + name + "'");
        }
        if (it->second.dims != t.shape()) {
            throw ContractError("checkpoint tensor '" + name + "' has shape " +
                                shape_str(it->second.dims) + ", model expects " +
                                shape_str(t.shape()));
        }
        for (std::size_t i = 0; i < t.numel(); ++i) {
            t.v()[i] = static_cast<double>(it->second.data[i]);
        }
        ++assigned;
    });
    if (assigned != ck.tensors.size()) {
        throw ContractError("checkpoint carries " + std::to_string(ck.tensors.size()) +
                            " tensors, model consumed " + std::to_string(assigned));
    }
    return model;
}

/// Architecture compatibility gate: loading under a mismatched model/lora
/// fingerprint fails loudly unless forced. Mode, optimizer and seed may
/// legitimately differ (that is what adaptation does).
inline void check_arch_compatible(const Checkpoint& ck, const RunConfig& runtime, bool force) {
    if (ck.config().arch_fingerprint() == runtime.arch_fingerprint()) {
        return;
    }
    if (force) {
        return;
    }
    throw ConfigError("checkpoint architecture fingerprint does not match the runtime config "
                      "(pass --force to override)");
}

// Writes the adapter-free merged weights W0 + scale*B*A for every adapted
// projection, leaving non-LoRA tensors as-is and dropping lora.* entries.
inline Checkpoint merged_checkpoint(Model& model, nlohmann::json metadata) {
    if (!model.lora_attached) {
        throw ContractError("merged export requires attached LoRA adapters");
    }
    Model merged = model_from_checkpoint(checkpoint_from_model(model, metadata));
    for (auto& block : merged.dec.blocks) {
        for (Proj* p : {&block.attn.wq, &block.attn.wk, &block.attn.wv, &block.attn.wo}) {
            const LoraPair& lp = *p->lora;
            const std::size_t out = p->base.w.rows(), in = p->base.w.cols(), r = lp.a.rows();
            for (std::size_t i = 0; i < out; ++i) {
                for (std::size_t j = 0; j < in; ++j) {
                    double acc = 0.0;
                    for (std::size_t q = 0; q < r; ++q) {
                        acc += lp.b.at(i, q) * lp.a.at(q, j);
                    }
                    p->base.w.v()[i * in + j] += lp.scale * acc;
                }
            }
            p->lora.reset();
        }
    }
    merged.lora_attached = false;
    RunConfig cfg = merged.cfg;
    cfg.mode = mode_uses_cmrm(cfg.run_mode()) ? "C" : "A"; // lora-free equivalent mode
    merged.cfg = cfg;
    nlohmann::json meta = metadata;
    meta["merged_lora"] = true;
    return checkpoint_from_model(merged, meta);
}

} // namespace cmrm
