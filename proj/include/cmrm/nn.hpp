#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "cmrm/errors.hpp"
#include "cmrm/rng.hpp"
#include "cmrm/tensor.hpp"

namespace cmrm {

struct Linear {
    Tensor w; // [out x in]
    Tensor b; // [out]

    // std <= 0 selects Xavier scaling; at these widths a fixed small std
    // leaves attention too uniform to break symmetry in reasonable time.
    static Linear make(std::size_t out, std::size_t in, Rng& rng, double std = 0.0) {
        Linear l;
        if (std <= 0.0) {
            std = std::sqrt(2.0 / static_cast<double>(in + out));
        }
        l.w = Tensor::gaussian({out, in}, rng, std);
        l.b = Tensor::zeros({out});
        return l;
    }

    Tensor forward(const Tensor& x) const { return ops::linear(x, w, b); }
};

// Low-rank factors wrapped around a frozen base matrix, Eq-10 style:
// y = W0 x + (alpha/r) B (A x). B starts at zero so attaching is a no-op.
struct LoraPair {
    Tensor a; // [r x in]
    Tensor b; // [out x r]
    double scale = 1.0;

    static LoraPair make(std::size_t out, std::size_t in, std::size_t rank, double lora_alpha,
                         Rng& rng) {
        if (rank < 1) {
            throw ConfigError("lora rank must be >= 1");
        }
        LoraPair p;
        p.a = Tensor::gaussian({rank, in}, rng, 0.02);
        p.b = Tensor::zeros({out, rank});
        p.scale = lora_alpha / static_cast<double>(rank);
        return p;
    }
};

// The two small matmuls of the low-rank path; BA is never materialized.
inline Tensor lora_forward(const Tensor& x, const Tensor& w0, const Tensor& b0,
                           const LoraPair& lora) {
    Tensor y = ops::linear(x, w0, b0);
    Tensor xa = ops::matmul_nt(x, lora.a);  // [t x r]
    Tensor xab = ops::matmul_nt(xa, lora.b); // [t x out]
    return ops::add(y, ops::scale(xab, lora.scale));
}

/// A projection that may carry a LoRA adapter. Plain linear until attached.
struct Proj {
    Linear base;
    std::optional<LoraPair> lora;

    Tensor forward(const Tensor& x) const {
        if (lora) {
            return lora_forward(x, base.w, base.b, *lora);
        }
        return base.forward(x);
    }
};

struct LayerNormParams {
    Tensor gamma;
    Tensor beta;
    double eps = 1e-5;

    static LayerNormParams make(std::size_t d) {
        LayerNormParams ln;
        ln.gamma = Tensor::full({d}, 1.0);
        ln.beta = Tensor::zeros({d});
        return ln;
    }

    Tensor forward(const Tensor& x) const { return ops::layer_norm(x, gamma, beta, eps); }
};

// Per-head attention weights of one forward call, averaged later by callers.
struct AttnCapture {
    std::size_t tq = 0;
    std::size_t tk = 0;
    std::vector<std::vector<double>> head_weights; // one [tq*tk] buffer per head
};

struct MhaParams {
    Proj wq, wk, wv, wo;
    std::size_t heads = 1;

    static MhaParams make(std::size_t d, std::size_t heads, Rng& rng) {
        if (heads == 0 || d % heads != 0) {
            throw ConfigError("attention dim " + std::to_string(d) + " not divisible by " +
                              std::to_string(heads) + " heads");
        }
        MhaParams p;
        p.wq.base = Linear::make(d, d, rng);
        p.wk.base = Linear::make(d, d, rng);
        p.wv.base = Linear::make(d, d, rng);
        p.wo.base = Linear::make(d, d, rng);
        p.heads = heads;
        return p;
    }
};

/// Scaled dot-product multi-head attention, 1/sqrt(head_dim) scaling, heads
/// concatenated then output-projected. `mask`, when given, is additive over
/// the [tq x tk] score matrix.
inline Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                                   const MhaParams& p, const Tensor* mask = nullptr,
                                   AttnCapture* capture = nullptr) {
    const std::size_t d = q_in.cols();
    if (p.heads == 0 || d % p.heads != 0) {
        throw ConfigError("attention dim " + std::to_string(d) + " not divisible by " +
                          std::to_string(p.heads) + " heads");
    }
    if (k_in.rows() != v_in.rows()) {
        throw ShapeError("attention: key/value row mismatch");
    }
    const std::size_t hd = d / p.heads;
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    Tensor q = p.wq.forward(q_in);
    Tensor k = p.wk.forward(k_in);
    Tensor v = p.wv.forward(v_in);

    if (capture != nullptr) {
        capture->tq = q_in.rows();
        capture->tk = k_in.rows();
        capture->head_weights.clear();
    }

    std::vector<Tensor> head_outs;
    head_outs.reserve(p.heads);
    for (std::size_t h = 0; h < p.heads; ++h) {
        Tensor qh = ops::slice_cols(q, h * hd, (h + 1) * hd);
        Tensor kh = ops::slice_cols(k, h * hd, (h + 1) * hd);
        Tensor vh = ops::slice_cols(v, h * hd, (h + 1) * hd);
        Tensor scores = ops::scale(ops::matmul_nt(qh, kh), inv_sqrt_hd);
        if (mask != nullptr) {
            scores = ops::add(scores, *mask);
        }
        Tensor weights = ops::softmax(scores);
        if (capture != nullptr) {
            capture->head_weights.push_back(weights.v());
        }
        head_outs.push_back(ops::matmul(weights, vh));
    }
    return p.wo.forward(ops::concat_cols(head_outs));
}

struct Mlp {
    Linear fc1;
    Linear fc2;

    static Mlp make(std::size_t d, std::size_t hidden, Rng& rng) {
        Mlp m;
        m.fc1 = Linear::make(hidden, d, rng);
        m.fc2 = Linear::make(d, hidden, rng);
        return m;
    }

    Tensor forward(const Tensor& x) const { return fc2.forward(ops::gelu(fc1.forward(x))); }
};

// Pre-norm transformer block; mask = nullptr gives the bidirectional encoder
// flavor, a causal mask gives the decoder flavor.
struct TransformerBlock {
    LayerNormParams ln1, ln2;
    MhaParams attn;
    Mlp mlp;

    static TransformerBlock make(std::size_t d, std::size_t heads, std::size_t mlp_ratio,
                                 Rng& rng) {
        TransformerBlock b;
        b.ln1 = LayerNormParams::make(d);
        b.attn = MhaParams::make(d, heads, rng);
        b.ln2 = LayerNormParams::make(d);
        b.mlp = Mlp::make(d, d * mlp_ratio, rng);
        return b;
    }

    Tensor forward(const Tensor& x, const Tensor* mask = nullptr) const {
        Tensor h = ln1.forward(x);
        Tensor y = ops::add(x, multi_head_attention(h, h, h, attn, mask));
        return ops::add(y, mlp.forward(ln2.forward(y)));
    }
};

} // namespace cmrm
