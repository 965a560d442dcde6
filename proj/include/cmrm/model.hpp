#pragma once

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmrm/config.hpp"
#include "cmrm/errors.hpp"
#include "cmrm/font5x7.hpp"
#include "cmrm/image.hpp"
#include "cmrm/nn.hpp"
#include "cmrm/rng.hpp"
#include "cmrm/tensor.hpp"

namespace cmrm {

// ---------------------------------------------------------------------------
// vocabulary
// ---------------------------------------------------------------------------

/// 36 plate characters followed by the specials. Ids are stable across every
/// checkpoint: A..Z = 0..25, 0..9 = 26..35, then BOS, EOS, PAD, PROMPT.
struct Vocab {
    static constexpr int bos = 36;
    static constexpr int eos = 37;
    static constexpr int pad = 38;
    static constexpr int prompt = 39;
    static constexpr std::size_t size = 40;

    static int char_to_id(char c) { return static_cast<int>(alphabet_index(c)); }

    static bool is_alphabet(int id) { return id >= 0 && id < 36; }

    static char id_to_char(int id) {
        if (!is_alphabet(id)) {
            throw IndexError("token id " + std::to_string(id) + " is not an alphabet character");
        }
        return plate_alphabet()[static_cast<std::size_t>(id)];
    }

    static std::vector<int> encode(const std::string& label) {
        std::vector<int> ids;
        ids.reserve(label.size());
        for (char c : label) {
            ids.push_back(char_to_id(c));
        }
        return ids;
    }
};

// ---------------------------------------------------------------------------
// vision encoder
// ---------------------------------------------------------------------------

/// Patchify -> linear embed -> learned absolute positions -> pre-norm
/// transformer blocks -> final norm. Token row i is raster-order patch i.
struct VisionEncoder {
    Linear patch_embed; // [d_v x patch*patch]
    Tensor pos;         // [n x d_v]
    std::vector<TransformerBlock> blocks;
    LayerNormParams final_ln;

    static VisionEncoder make(const ModelConfig& cfg, Rng& rng) {
        VisionEncoder e;
        e.patch_embed = Linear::make(cfg.d_v, cfg.patch * cfg.patch, rng);
        e.pos = Tensor::gaussian({cfg.token_count(), cfg.d_v}, rng, 0.1);
        for (std::size_t i = 0; i < cfg.enc_layers; ++i) {
            e.blocks.push_back(TransformerBlock::make(cfg.d_v, cfg.heads, cfg.mlp_ratio, rng));
        }
        e.final_ln = LayerNormParams::make(cfg.d_v);
        return e;
    }

    // Raster-order patch extraction; constant (non-differentiable) input.
    static Tensor patchify(const Image& img, const ModelConfig& cfg) {
        if (img.h != cfg.img_h || img.w != cfg.img_w) {
            throw ConfigError("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                              " does not match config " + std::to_string(cfg.img_h) + "x" +
                              std::to_string(cfg.img_w));
        }
        cfg.validate();
        const std::size_t p = cfg.patch;
        const std::size_t gh = cfg.patch_grid_h(), gw = cfg.patch_grid_w();
        Tensor out = Tensor::zeros({gh * gw, p * p});
        for (std::size_t gy = 0; gy < gh; ++gy) {
            for (std::size_t gx = 0; gx < gw; ++gx) {
                double* row = out.v().data() + (gy * gw + gx) * p * p;
                for (std::size_t y = 0; y < p; ++y) {
                    for (std::size_t x = 0; x < p; ++x) {
                        row[y * p + x] = img.at(gy * p + y, gx * p + x);
                    }
                }
            }
        }
        return out;
    }

    // Pre-transformer patch embeddings (patch linear + positional term).
    Tensor embed_patches(const Image& img, const ModelConfig& cfg) const {
        return ops::add(patch_embed.forward(patchify(img, cfg)), pos);
    }

    Tensor encode(const Image& img, const ModelConfig& cfg) const {
        Tensor x = embed_patches(img, cfg);
        for (const auto& b : blocks) {
            x = b.forward(x);
        }
        return final_ln.forward(x);
    }
};

// ---------------------------------------------------------------------------
// CMRM: slot queries, slot-to-vision cross-attention, pooling, injection
// ---------------------------------------------------------------------------

struct CrossAttnLayer {
    MhaParams attn;
    LayerNormParams ln;

    static CrossAttnLayer make(std::size_t d, std::size_t heads, Rng& rng) {
        CrossAttnLayer l;
        l.attn = MhaParams::make(d, heads, rng);
        l.ln = LayerNormParams::make(d);
        return l;
    }
};

/// K learnable slot queries iterated through L residual cross-attention
/// layers over the visual tokens, mean-pooled into g and injected back into
/// every token as alpha * g. Token count is asserted unchanged on every call.
struct CmrmModule {
    Tensor slots; // Q, [k x d]
    std::vector<CrossAttnLayer> layers;
    Tensor alpha; // learnable scalar

    static CmrmModule make(const ModelConfig& cfg, Rng& rng) {
        CmrmModule m;
        m.slots = Tensor::gaussian({cfg.plate_len, cfg.d}, rng, 0.02);
        for (std::size_t i = 0; i < cfg.cmrm_layers; ++i) {
            m.layers.push_back(CrossAttnLayer::make(cfg.d, cfg.heads, rng));
        }
        m.alpha = Tensor::from_data({1}, {cfg.alpha_init});
        return m;
    }

    // S^(0) = Q; S^(l+1) = LN(S^(l) + Attn(S^(l), H, H)); returns S^(L).
    // With zero layers the queries are returned as-is (same storage).
    Tensor slot_cross_attention(const Tensor& h, AttnCapture* capture = nullptr) const {
        if (h.cols() != slots.cols()) {
            throw ConfigError("cmrm: visual dim " + std::to_string(h.cols()) +
                              " != slot dim " + std::to_string(slots.cols()));
        }
        Tensor s = slots;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            AttnCapture* cap = (capture != nullptr && l + 1 == layers.size()) ? capture : nullptr;
            Tensor upd = multi_head_attention(s, h, h, layers[l].attn, nullptr, cap);
            s = layers[l].ln.forward(ops::add(s, upd));
        }
        return s;
    }

    static Tensor pool_slots(const Tensor& s) { return ops::mean_rows(s); }

    struct Output {
        Tensor s;       // [k x d]
        Tensor g;       // [d]
        Tensor h_prime; // [n x d], same token count as input
    };

    Output forward(const Tensor& h, AttnCapture* capture = nullptr) const {
        Output out;
        out.s = slot_cross_attention(h, capture);
        out.g = pool_slots(out.s);
        out.h_prime = ops::inject(h, out.g, alpha);
        if (out.h_prime.rows() != h.rows()) {
            throw ContractError("cmrm: injection changed the token count");
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// character decoder
// ---------------------------------------------------------------------------

/// Decoder-only toy LM. Input sequence is [H' tokens][PROMPT][BOS][y_1..y_K]
/// ([EOS] appended under teacher forcing); attention is causal over the whole
/// sequence, which leaves the visual prefix fully visible to every text
/// position. Predictions are read at BOS..y_K.
struct CharDecoder {
    Tensor tok_embed; // [vocab x d]
    Tensor pos;       // [k+3 x d], text segment positions only
    std::vector<TransformerBlock> blocks;
    LayerNormParams final_ln;
    Linear lm_head; // [vocab x d]

    static CharDecoder make(const ModelConfig& cfg, Rng& rng) {
        CharDecoder dec;
        dec.tok_embed = Tensor::gaussian({Vocab::size, cfg.d}, rng, 0.1);
        dec.pos = Tensor::gaussian({cfg.plate_len + 3, cfg.d}, rng, 0.1);
        for (std::size_t i = 0; i < cfg.dec_layers; ++i) {
            dec.blocks.push_back(TransformerBlock::make(cfg.d, cfg.heads, cfg.mlp_ratio, rng));
        }
        dec.final_ln = LayerNormParams::make(cfg.d);
        dec.lm_head = Linear::make(Vocab::size, cfg.d, rng, 0.02); // near-uniform head at init
        return dec;
    }

    // Final-norm hidden states for [prefix || embedded text ids].
    Tensor forward_states(const Tensor& prefix, const std::vector<int>& text_ids) const {
        if (text_ids.size() > pos.rows()) {
            throw ContractError("decoder: text segment longer than positional table");
        }
        Tensor text = ops::add(ops::gather_rows(tok_embed, text_ids),
                               ops::slice_rows(pos, 0, text_ids.size()));
        Tensor x = ops::concat_rows({prefix, text});
        const Tensor mask = ops::causal_mask(x.rows());
        for (const auto& b : blocks) {
            x = b.forward(x, &mask);
        }
        return final_ln.forward(x);
    }

    // Teacher-forced logits at the K+1 predicting positions (BOS..y_K).
    Tensor teacher_logits(const Tensor& h_prime, const std::vector<int>& label_ids) const {
        const std::size_t k = label_ids.size();
        std::vector<int> text_ids;
        text_ids.reserve(k + 3);
        text_ids.push_back(Vocab::prompt);
        text_ids.push_back(Vocab::bos);
        text_ids.insert(text_ids.end(), label_ids.begin(), label_ids.end());
        text_ids.push_back(Vocab::eos);
        Tensor states = forward_states(h_prime, text_ids);
        const std::size_t n = h_prime.rows();
        Tensor pred = ops::slice_rows(states, n + 1, n + 2 + k);
        return lm_head.forward(pred);
    }

    // Mean token NLL over the K character positions (plus EOS when enabled).
    Tensor loss(const Tensor& logits, const std::vector<int>& label_ids, bool eos_in_loss) const {
        std::vector<int> targets = label_ids;
        targets.push_back(eos_in_loss ? Vocab::eos : -1);
        return ops::cross_entropy(logits, targets, -1);
    }

    // Greedy decode: argmax per step, stop at EOS or after K characters,
    // specials stripped from the returned string.
    std::string generate_greedy(const Tensor& h_prime, std::size_t k) const {
        std::vector<int> text_ids = {Vocab::prompt, Vocab::bos};
        std::string out;
        for (std::size_t step = 0; step < k; ++step) {
            Tensor states = forward_states(h_prime, text_ids);
            Tensor last = ops::slice_rows(states, states.rows() - 1, states.rows());
            Tensor logits = lm_head.forward(last);
            int best = 0;
            double best_v = logits.at(0, 0);
            for (std::size_t j = 1; j < Vocab::size; ++j) {
                if (logits.at(0, j) > best_v) {
                    best_v = logits.at(0, j);
                    best = static_cast<int>(j);
                }
            }
            if (best == Vocab::eos) {
                break;
            }
            text_ids.push_back(best);
            if (Vocab::is_alphabet(best)) {
                out.push_back(Vocab::id_to_char(best));
            }
        }
        return out;
    }
};

// ---------------------------------------------------------------------------
// assembled model
// ---------------------------------------------------------------------------

enum class ParamGroup { Base, Cmrm, Lora };

struct NamedParam {
    std::string name;
    Tensor tensor;
    ParamGroup group;
};

/// Backbone (encoder + projector + decoder) with the optional CMRM and
/// optional LoRA adapters. Parameter traversal order is fixed and drives
/// init, checkpoints and optimizer registration.
struct Model {
    RunConfig cfg;
    VisionEncoder enc;
    Linear projector; // d_v -> d
    std::optional<CmrmModule> cmrm;
    CharDecoder dec;
    bool lora_attached = false;

    /// Builds and initializes from (seed, with_cmrm). CMRM presence is an
    /// architecture property; LoRA is attached separately so that zero-init
    /// equivalence is observable.
    static Model build(const RunConfig& cfg, bool with_cmrm) {
        cfg.validate();
        Model m;
        m.cfg = cfg;
        // One derived stream per module: the backbone init is identical
        // whether or not the CMRM exists (the alpha=0 equivalence tests and
        // the ablation rely on shared weights across modes).
        Rng enc_rng(derive_seed(cfg.seed, 0x11171));
        Rng proj_rng(derive_seed(cfg.seed, 0x11172));
        Rng dec_rng(derive_seed(cfg.seed, 0x11173));
        m.enc = VisionEncoder::make(cfg.model, enc_rng);
        m.projector = Linear::make(cfg.model.d, cfg.model.d_v, proj_rng);
        if (with_cmrm) {
            Rng cmrm_rng(derive_seed(cfg.seed, 0x11174));
            m.cmrm = CmrmModule::make(cfg.model, cmrm_rng);
        }
        m.dec = CharDecoder::make(cfg.model, dec_rng);
        return m;
    }

    /// Wraps q,k,v,o of every decoder block with rank-r adapters (B = 0, so
    /// logits are bitwise unchanged until training moves B).
    void attach_lora() {
        if (lora_attached) {
            throw ContractError("lora adapters already attached");
        }
        Rng rng(derive_seed(cfg.seed, 0x20B0A));
        for (auto& block : dec.blocks) {
            for (Proj* p : {&block.attn.wq, &block.attn.wk, &block.attn.wv, &block.attn.wo}) {
                p->lora = LoraPair::make(p->base.w.rows(), p->base.w.cols(), cfg.lora.rank,
                                         cfg.lora.alpha, rng);
            }
        }
        lora_attached = true;
    }

    std::size_t lora_param_count() const {
        std::size_t n = 0;
        if (lora_attached) {
            for (const auto& block : dec.blocks) {
                for (const Proj* p :
                     {&block.attn.wq, &block.attn.wk, &block.attn.wv, &block.attn.wo}) {
                    n += p->lora->a.numel() + p->lora->b.numel();
                }
            }
        }
        return n;
    }

    // Fixed-order traversal of every parameter tensor.
    void visit_params(const std::function<void(const std::string&, Tensor&, ParamGroup)>& fn) {
        auto block_params = [&fn](const std::string& prefix, TransformerBlock& b,
                                  ParamGroup group) {
            fn(prefix + ".ln1.g", b.ln1.gamma, group);
            fn(prefix + ".ln1.b", b.ln1.beta, group);
            const char* names[4] = {"q", "k", "v", "o"};
            Proj* projs[4] = {&b.attn.wq, &b.attn.wk, &b.attn.wv, &b.attn.wo};
            for (int i = 0; i < 4; ++i) {
                fn(prefix + ".attn." + names[i] + ".w", projs[i]->base.w, group);
                fn(prefix + ".attn." + names[i] + ".b", projs[i]->base.b, group);
            }
            fn(prefix + ".ln2.g", b.ln2.gamma, group);
            fn(prefix + ".ln2.b", b.ln2.beta, group);
            fn(prefix + ".mlp.fc1.w", b.mlp.fc1.w, group);
            fn(prefix + ".mlp.fc1.b", b.mlp.fc1.b, group);
            fn(prefix + ".mlp.fc2.w", b.mlp.fc2.w, group);
            fn(prefix + ".mlp.fc2.b", b.mlp.fc2.b, group);
        };

        fn("enc.patch.w", enc.patch_embed.w, ParamGroup::Base);
        fn("enc.patch.b", enc.patch_embed.b, ParamGroup::Base);
        fn("enc.pos", enc.pos, ParamGroup::Base);
        for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
            block_params("enc.b" + std::to_string(i), enc.blocks[i], ParamGroup::Base);
        }
        fn("enc.ln.g", enc.final_ln.gamma, ParamGroup::Base);
        fn("enc.ln.b", enc.final_ln.beta, ParamGroup::Base);
        fn("proj.w", projector.w, ParamGroup::Base);
        fn("proj.b", projector.b, ParamGroup::Base);
        if (cmrm) {
            fn("cmrm.slots", cmrm->slots, ParamGroup::Cmrm);
            for (std::size_t i = 0; i < cmrm->layers.size(); ++i) {
                const std::string prefix = "cmrm.l" + std::to_string(i);
                const char* names[4] = {"q", "k", "v", "o"};
                Proj* projs[4] = {&cmrm->layers[i].attn.wq, &cmrm->layers[i].attn.wk,
                                  &cmrm->layers[i].attn.wv, &cmrm->layers[i].attn.wo};
                for (int p = 0; p < 4; ++p) {
                    fn(prefix + ".attn." + names[p] + ".w", projs[p]->base.w, ParamGroup::Cmrm);
                    fn(prefix + ".attn." + names[p] + ".b", projs[p]->base.b, ParamGroup::Cmrm);
                }
                fn(prefix + ".ln.g", cmrm->layers[i].ln.gamma, ParamGroup::Cmrm);
                fn(prefix + ".ln.b", cmrm->layers[i].ln.beta, ParamGroup::Cmrm);
            }
            fn("cmrm.alpha", cmrm->alpha, ParamGroup::Cmrm);
        }
        fn("dec.tok", dec.tok_embed, ParamGroup::Base);
        fn("dec.pos", dec.pos, ParamGroup::Base);
        for (std::size_t i = 0; i < dec.blocks.size(); ++i) {
            block_params("dec.b" + std::to_string(i), dec.blocks[i], ParamGroup::Base);
        }
        fn("dec.ln.g", dec.final_ln.gamma, ParamGroup::Base);
        fn("dec.ln.b", dec.final_ln.beta, ParamGroup::Base);
        fn("dec.head.w", dec.lm_head.w, ParamGroup::Base);
        fn("dec.head.b", dec.lm_head.b, ParamGroup::Base);
        if (lora_attached) {
            for (std::size_t i = 0; i < dec.blocks.size(); ++i) {
                const char* names[4] = {"q", "k", "v", "o"};
                Proj* projs[4] = {&dec.blocks[i].attn.wq, &dec.blocks[i].attn.wk,
                                  &dec.blocks[i].attn.wv, &dec.blocks[i].attn.wo};
                for (int p = 0; p < 4; ++p) {
                    const std::string prefix = "lora." + std::to_string(i) + "." + names[p];
                    fn(prefix + ".A", projs[p]->lora->a, ParamGroup::Lora);
                    fn(prefix + ".B", projs[p]->lora->b, ParamGroup::Lora);
                }
            }
        }
    }

    std::vector<NamedParam> named_params() {
        std::vector<NamedParam> out;
        visit_params([&out](const std::string& name, Tensor& t, ParamGroup g) {
            out.push_back(NamedParam{name, t, g});
        });
        return out;
    }

    // ---- forward paths ----

    Tensor encode_project(const Image& img) const {
        Tensor v = enc.encode(img, cfg.model);
        Tensor h = projector.forward(v);
        if (h.rows() != v.rows()) {
            throw ContractError("projector changed the token count");
        }
        return h;
    }

    // H' when CMRM is present, H otherwise (the ablated path).
    Tensor reason(const Tensor& h, AttnCapture* capture = nullptr) const {
        if (!cmrm) {
            return h;
        }
        return cmrm->forward(h, capture).h_prime;
    }

    Tensor sample_loss_from_h(const Tensor& h, const std::string& label) const {
        if (label.size() != cfg.model.plate_len) {
            throw ContractError("label '" + label + "' does not match plate length " +
                                std::to_string(cfg.model.plate_len));
        }
        const std::vector<int> ids = Vocab::encode(label);
        Tensor logits = dec.teacher_logits(reason(h), ids);
        return dec.loss(logits, ids, cfg.model.eos_in_loss);
    }

    Tensor sample_loss(const Image& img, const std::string& label) const {
        return sample_loss_from_h(encode_project(img), label);
    }

    std::string infer(const Image& img) const {
        Tensor h_prime = reason(encode_project(img));
        return dec.generate_greedy(h_prime, cfg.model.plate_len);
    }
};

} // namespace cmrm
