#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cmrm/errors.hpp"
#include "cmrm/rng.hpp"

namespace cmrm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) {
        n *= e;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        os << (i ? "x" : "") << s[i];
    }
    os << "]";
    return os.str();
}

struct TensorData {
    Shape shape;
    std::vector<double> value; // contiguous, row-major
    std::vector<double> grad;  // empty until backward touches it
    bool requires_grad = false;
    int node_id = -1; // producing tape node, -1 for leaves
};

/// Dense f64 tensor handle. Copies share storage; ops produce fresh storage.
/// Values are immutable once an op has produced them (parameter updates happen
/// outside any tape). grad is allocated lazily so untouched tensors stay
/// distinguishable from zero-gradient ones.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape) {
        return from_data(std::move(shape), {});
    }

    static Tensor full(Shape shape, double v) {
        auto d = std::make_shared<TensorData>();
        d->shape = std::move(shape);
        d->value.assign(shape_numel(d->shape), v);
        return Tensor(std::move(d));
    }

    static Tensor from_data(Shape shape, std::vector<double> value) {
        auto d = std::make_shared<TensorData>();
        const std::size_t n = shape_numel(shape);
        if (value.empty()) {
            value.assign(n, 0.0);
        } else if (value.size() != n) {
            throw ShapeError("tensor data length " + std::to_string(value.size()) +
                             " does not match shape " + shape_str(shape));
        }
        d->shape = std::move(shape);
        d->value = std::move(value);
        return Tensor(std::move(d));
    }

    static Tensor scalar(double v) { return from_data({1}, {v}); }

    static Tensor gaussian(Shape shape, Rng& rng, double std) {
        Tensor t = zeros(std::move(shape));
        for (double& x : t.v()) {
            x = rng.gaussian(0.0, std);
        }
        return t;
    }

    explicit operator bool() const { return d_ != nullptr; }

    const Shape& shape() const { return d_->shape; }
    std::size_t rank() const { return d_->shape.size(); }
    std::size_t numel() const { return d_->value.size(); }

    std::size_t rows() const {
        if (rank() != 2) {
            throw ShapeError("rows(): tensor is not rank 2, shape " + shape_str(shape()));
        }
        return d_->shape[0];
    }
    std::size_t cols() const {
        if (rank() != 2) {
            throw ShapeError("cols(): tensor is not rank 2, shape " + shape_str(shape()));
        }
        return d_->shape[1];
    }

    std::vector<double>& v() { return d_->value; }
    const std::vector<double>& v() const { return d_->value; }

    double at(std::size_t i) const { return d_->value.at(i); }
    double at(std::size_t i, std::size_t j) const { return d_->value.at(i * cols() + j); }

    bool requires_grad() const { return d_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        d_->requires_grad = b;
        return *this;
    }

    int node_id() const { return d_->node_id; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::vector<double>& ensure_grad() {
        if (d_->grad.empty()) {
            d_->grad.assign(d_->value.size(), 0.0);
        }
        return d_->grad;
    }
    const std::vector<double>& grad() const {
        if (d_->grad.empty()) {
            throw ContractError("tensor has no gradient (backward never reached it)");
        }
        return d_->grad;
    }
    void clear_grad() { d_->grad.clear(); }

    // Deep copy of values; detached from any tape.
    Tensor clone_detached() const {
        auto d = std::make_shared<TensorData>();
        d->shape = d_->shape;
        d->value = d_->value;
        return Tensor(std::move(d));
    }

    bool same_storage(const Tensor& other) const { return d_ == other.d_; }

    const std::shared_ptr<TensorData>& handle() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    friend class Tape;

    std::shared_ptr<TensorData> d_;
};

/// Append-only record of one forward pass. backward() walks nodes in strict
/// reverse append order exactly once; reset() drops every node (and with it all
/// saved activations captured by the closures).
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    int record(const char* op, std::function<void()> backward) {
        if (consumed_) {
            throw ContractError(std::string("tape already consumed; reset() before recording ") + op);
        }
        nodes_.push_back(Node{op, std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    void backward(const Tensor& loss) {
        if (!loss || loss.numel() != 1) {
            throw ContractError("backward: loss must be a scalar tensor");
        }
        if (loss.node_id() < 0 || loss.node_id() >= static_cast<int>(nodes_.size())) {
            throw ContractError("backward: loss is not a node of this tape");
        }
        if (consumed_) {
            throw ContractError("backward: tape already consumed (single-use; call reset())");
        }
        consumed_ = true;
        loss.handle()->grad.assign(1, 1.0);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            nodes_[i].backward();
        }
    }

    void reset() {
        nodes_.clear();
        consumed_ = false;
    }

    std::size_t size() const { return nodes_.size(); }
    bool consumed() const { return consumed_; }

private:
    struct Node {
        const char* op;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    bool consumed_ = false;
};

namespace detail {

inline Tape*& active_tape_slot() {
    static thread_local Tape* t = nullptr;
    return t;
}

} // namespace detail

inline Tape* active_tape() { return detail::active_tape_slot(); }

/// RAII guard selecting the tape ops record onto. No active scope = pure
/// inference, nothing is recorded.
class TapeScope {
public:
    explicit TapeScope(Tape& t) : prev_(detail::active_tape_slot()) {
        detail::active_tape_slot() = &t;
    }
    ~TapeScope() { detail::active_tape_slot() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

namespace ops {

namespace kernel {

// All contractions accumulate in ascending k order per output cell, so a
// given output row is bit-identical no matter how many other rows the
// operands carry. The causal-prefix equalities in the decoder tests rely on
// this; a blocked GEMM would break them at the last ulp.

// c[m x n] += a[m x k] . b[k x n]
// One uniform fused update per kk: trailing zero-weight terms are exact
// identities, so a given output cell is bit-identical no matter how many
// rows or contraction entries the operands carry beyond it. Grouped or
// blocked kernels break that at the last ulp.
inline void gemm_accum(const double* __restrict a, const double* __restrict b,
                       double* __restrict c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* __restrict ai = a + i * k;
        double* __restrict ci = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = ai[kk];
            const double* __restrict bk = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                ci[j] += av * bk[j];
            }
        }
    }
}

inline std::vector<double> transpose(const double* x, std::size_t rows, std::size_t cols) {
    std::vector<double> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
            out[j * rows + i] = x[i * cols + j];
        }
    }
    return out;
}

} // namespace kernel

inline void check_finite(const char* op, const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string(op) + ": non-finite value in forward result");
        }
    }
}

// Records the op when a tape is active and gradient is needed.
inline void finish(const char* op, Tensor& out, bool needs_grad, std::function<void()> backward) {
    check_finite(op, out.v());
    Tape* tape = active_tape();
    if (tape != nullptr && needs_grad) {
        out.set_requires_grad(true);
        out.handle()->node_id = tape->record(op, std::move(backward));
    }
}

inline void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
    }
}

// out = a + b (same shape)
inline Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.v()[i] = a.v()[i] + b.v()[i];
    }
    auto ah = a, bh = b, oh = out;
    finish("add", out, a.requires_grad() || b.requires_grad(), [ah, bh, oh]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        if (ah.requires_grad()) {
            auto& ga = ah.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (bh.requires_grad()) {
            auto& gb = bh.ensure_grad();
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

// out = c * a, constant c
inline Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const std::size_t n = a.numel();
    for (std::size_t i = 0; i < n; ++i) {
        out.v()[i] = c * a.v()[i];
    }
    auto ah = a, oh = out;
    finish("scale", out, a.requires_grad(), [ah, oh, c]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        auto& ga = ah.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
    return out;
}

// out[m x n] = a[m x k] . b[k x n]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    kernel::gemm_accum(a.v().data(), b.v().data(), out.v().data(), m, k, n);
    auto ah = a, bh = b, oh = out;
    finish("matmul", out, a.requires_grad() || b.requires_grad(), [ah, bh, oh, m, k, n]() mutable {
        if (!oh.has_grad()) return;
        const double* g = oh.grad().data();
        if (ah.requires_grad()) {
            // dA += G . B^T
            const auto bt = kernel::transpose(bh.v().data(), k, n); // [n x k]
            kernel::gemm_accum(g, bt.data(), ah.ensure_grad().data(), m, n, k);
        }
        if (bh.requires_grad()) {
            // dB += A^T . G
            const auto at = kernel::transpose(ah.v().data(), m, k); // [k x m]
            kernel::gemm_accum(at.data(), g, bh.ensure_grad().data(), k, m, n);
        }
    });
    return out;
}

// out[m x n] = a[m x k] . b[n x k]^T
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_rank2("matmul_nt", a);
    require_rank2("matmul_nt", b);
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " . " +
                         shape_str(b.shape()) + "^T");
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros({m, n});
    const auto bt = kernel::transpose(b.v().data(), n, k); // [k x n]
    kernel::gemm_accum(a.v().data(), bt.data(), out.v().data(), m, k, n);
    auto ah = a, bh = b, oh = out;
    finish("matmul_nt", out, a.requires_grad() || b.requires_grad(),
           [ah, bh, oh, m, k, n]() mutable {
               if (!oh.has_grad()) return;
               const double* g = oh.grad().data();
               if (ah.requires_grad()) {
                   // dA += G . B
                   kernel::gemm_accum(g, bh.v().data(), ah.ensure_grad().data(), m, n, k);
               }
               if (bh.requires_grad()) {
                   // dB += G^T . A
                   const auto gt = kernel::transpose(g, m, n); // [n x m]
                   kernel::gemm_accum(gt.data(), ah.v().data(), bh.ensure_grad().data(), n, m, k);
               }
           });
    return out;
}

// out[t x d_out] = x[t x d_in] . w[d_out x d_in]^T + b[d_out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank2("linear", x);
    require_rank2("linear", w);
    if (x.cols() != w.cols() || b.numel() != w.rows()) {
        throw ShapeError("linear: shapes disagree, x=" + shape_str(x.shape()) + " w=" +
                         shape_str(w.shape()) + " b=" + shape_str(b.shape()));
    }
    const std::size_t t = x.rows(), din = x.cols(), dout = w.rows();
    Tensor out = Tensor::zeros({t, dout});
    for (std::size_t i = 0; i < t; ++i) {
        std::copy_n(b.v().data(), dout, out.v().data() + i * dout);
    }
    const auto wt = kernel::transpose(w.v().data(), dout, din); // [din x dout]
    kernel::gemm_accum(x.v().data(), wt.data(), out.v().data(), t, din, dout);
    auto xh = x, wh = w, bh = b, oh = out;
    finish("linear", out, x.requires_grad() || w.requires_grad() || b.requires_grad(),
           [xh, wh, bh, oh, t, din, dout]() mutable {
               if (!oh.has_grad()) return;
               const double* g = oh.grad().data();
               if (xh.requires_grad()) {
                   // dX += G . W
                   kernel::gemm_accum(g, wh.v().data(), xh.ensure_grad().data(), t, dout, din);
               }
               if (wh.requires_grad()) {
                   // dW += G^T . X
                   const auto gt = kernel::transpose(g, t, dout); // [dout x t]
                   kernel::gemm_accum(gt.data(), xh.v().data(), wh.ensure_grad().data(), dout, t,
                                      din);
               }
               if (bh.requires_grad()) {
                   auto& gb = bh.ensure_grad();
                   for (std::size_t i = 0; i < t; ++i) {
                       const double* gi = g + i * dout;
                       for (std::size_t j = 0; j < dout; ++j) gb[j] += gi[j];
                   }
               }
           });
    return out;
}

// Exact GELU, x * Phi(x); smooth everywhere so finite differences stay tight.
inline Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    Tensor out = Tensor::zeros(x.shape());
    const std::size_t n = x.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const double xi = x.v()[i];
        out.v()[i] = 0.5 * xi * (1.0 + std::erf(xi * inv_sqrt2));
    }
    auto xh = x, oh = out;
    finish("gelu", out, x.requires_grad(), [xh, oh, inv_sqrt2]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        auto& gx = xh.ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double xi = xh.v()[i];
            const double phi_cdf = 0.5 * (1.0 + std::erf(xi * inv_sqrt2));
            const double phi_pdf = inv_sqrt_2pi * std::exp(-0.5 * xi * xi);
            gx[i] += g[i] * (phi_cdf + xi * phi_pdf);
        }
    });
    return out;
}

// Scalar sum of all elements.
inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.v()) {
        s += v;
    }
    Tensor out = Tensor::from_data({1}, {s});
    auto xh = x, oh = out;
    finish("sum", out, x.requires_grad(), [xh, oh]() mutable {
        if (!oh.has_grad()) return;
        const double g = oh.grad()[0];
        auto& gx = xh.ensure_grad();
        for (double& v : gx) v += g;
    });
    return out;
}

// Row softmax along the last axis (rank 1 or 2), max-subtracted for stability.
inline Tensor softmax(const Tensor& x, int axis = -1) {
    const std::size_t r = x.rank();
    if (r != 1 && r != 2) {
        throw ShapeError("softmax: expected rank 1 or 2, got " + shape_str(x.shape()));
    }
    const int last = static_cast<int>(r) - 1;
    if (axis != -1 && axis != last) {
        throw ShapeError("softmax: only the last axis is supported");
    }
    const std::size_t rows = (r == 2) ? x.shape()[0] : 1;
    const std::size_t n = (r == 2) ? x.shape()[1] : x.shape()[0];
    if (n < 1) {
        throw ShapeError("softmax: empty axis");
    }
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xi = x.v().data() + i * n;
        double* oi = out.v().data() + i * n;
        double m = xi[0];
        for (std::size_t j = 1; j < n; ++j) m = std::max(m, xi[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            oi[j] = std::exp(xi[j] - m);
            z += oi[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < n; ++j) oi[j] *= inv;
    }
    auto xh = x, oh = out;
    finish("softmax", out, x.requires_grad(), [xh, oh, rows, n]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        const auto& y = oh.v();
        auto& gx = xh.ensure_grad();
        for (std::size_t i = 0; i < rows; ++i) {
            const double* gi = g.data() + i * n;
            const double* yi = y.data() + i * n;
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += gi[j] * yi[j];
            double* gxi = gx.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) gxi[j] += yi[j] * (gi[j] - dot);
        }
    });
    return out;
}

// Per-row layer norm over the last axis with affine scale/shift.
// Population variance; eps inside the sqrt keeps the constant-row case finite.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    const std::size_t r = x.rank();
    if (r != 1 && r != 2) {
        throw ShapeError("layer_norm: expected rank 1 or 2, got " + shape_str(x.shape()));
    }
    const std::size_t rows = (r == 2) ? x.shape()[0] : 1;
    const std::size_t d = (r == 2) ? x.shape()[1] : x.shape()[0];
    if (d < 2) {
        throw ShapeError("layer_norm: normalized axis must have extent >= 2");
    }
    if (gamma.numel() != d || beta.numel() != d) {
        throw ShapeError("layer_norm: gamma/beta extent " + shape_str(gamma.shape()) +
                         " does not match axis " + std::to_string(d));
    }
    Tensor out = Tensor::zeros(x.shape());
    // Saved for backward: normalized activations and per-row 1/sigma.
    auto xhat = std::make_shared<std::vector<double>>(x.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* xi = x.v().data() + i * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += xi[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = xi[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        double* oi = out.v().data() + i * d;
        double* hi = xhat->data() + i * d;
        for (std::size_t j = 0; j < d; ++j) {
            hi[j] = (xi[j] - mu) * is;
            oi[j] = gamma.v()[j] * hi[j] + beta.v()[j];
        }
    }
    auto xh = x, gh = gamma, bh = beta, oh = out;
    finish("layer_norm", out,
           x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
           [xh, gh, bh, oh, xhat, inv_std, rows, d]() mutable {
               if (!oh.has_grad()) return;
               const auto& g = oh.grad();
               for (std::size_t i = 0; i < rows; ++i) {
                   const double* gi = g.data() + i * d;
                   const double* hi = xhat->data() + i * d;
                   if (gh.requires_grad()) {
                       auto& gg = gh.ensure_grad();
                       for (std::size_t j = 0; j < d; ++j) gg[j] += gi[j] * hi[j];
                   }
                   if (bh.requires_grad()) {
                       auto& gb = bh.ensure_grad();
                       for (std::size_t j = 0; j < d; ++j) gb[j] += gi[j];
                   }
                   if (xh.requires_grad()) {
                       auto& gx = xh.ensure_grad();
                       double* gxi = gx.data() + i * d;
                       double sum_gy = 0.0, sum_gyh = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                           const double gy = gi[j] * gh.v()[j];
                           sum_gy += gy;
                           sum_gyh += gy * hi[j];
                       }
                       const double inv_d = 1.0 / static_cast<double>(d);
                       const double is = (*inv_std)[i];
                       for (std::size_t j = 0; j < d; ++j) {
                           const double gy = gi[j] * gh.v()[j];
                           gxi[j] += is * (gy - inv_d * sum_gy - hi[j] * inv_d * sum_gyh);
                       }
                   }
               }
           });
    return out;
}

// g[d] = mean over rows of s[k x d]
inline Tensor mean_rows(const Tensor& s) {
    require_rank2("mean_rows", s);
    const std::size_t k = s.rows(), d = s.cols();
    Tensor out = Tensor::zeros({d});
    for (std::size_t i = 0; i < k; ++i) {
        const double* si = s.v().data() + i * d;
        for (std::size_t j = 0; j < d; ++j) out.v()[j] += si[j];
    }
    const double inv_k = 1.0 / static_cast<double>(k);
    for (std::size_t j = 0; j < d; ++j) out.v()[j] *= inv_k;
    auto sh = s, oh = out;
    finish("mean_rows", out, s.requires_grad(), [sh, oh, k, d, inv_k]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        auto& gs = sh.ensure_grad();
        for (std::size_t i = 0; i < k; ++i) {
            double* gi = gs.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) gi[j] += g[j] * inv_k;
        }
    });
    return out;
}

// out[i] = h[i] + alpha * g, the token-count-preserving residual modulation.
inline Tensor inject(const Tensor& h, const Tensor& g, const Tensor& alpha) {
    require_rank2("inject", h);
    if (g.rank() != 1 || g.numel() != h.cols()) {
        throw ShapeError("inject: g shape " + shape_str(g.shape()) + " does not match h " +
                         shape_str(h.shape()));
    }
    if (alpha.numel() != 1) {
        throw ShapeError("inject: alpha must be a scalar tensor");
    }
    const std::size_t n = h.rows(), d = h.cols();
    const double a = alpha.v()[0];
    Tensor out = Tensor::zeros(h.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* hi = h.v().data() + i * d;
        double* oi = out.v().data() + i * d;
        for (std::size_t j = 0; j < d; ++j) oi[j] = hi[j] + a * g.v()[j];
    }
    auto hh = h, gh = g, ah = alpha, oh = out;
    finish("inject", out, h.requires_grad() || g.requires_grad() || alpha.requires_grad(),
           [hh, gh, ah, oh, n, d]() mutable {
               if (!oh.has_grad()) return;
               const auto& gr = oh.grad();
               if (hh.requires_grad()) {
                   auto& ghh = hh.ensure_grad();
                   for (std::size_t i = 0; i < gr.size(); ++i) ghh[i] += gr[i];
               }
               if (gh.requires_grad()) {
                   auto& gg = gh.ensure_grad();
                   const double a = ah.v()[0];
                   for (std::size_t i = 0; i < n; ++i) {
                       const double* gi = gr.data() + i * d;
                       for (std::size_t j = 0; j < d; ++j) gg[j] += a * gi[j];
                   }
               }
               if (ah.requires_grad()) {
                   double da = 0.0;
                   for (std::size_t i = 0; i < n; ++i) {
                       const double* gi = gr.data() + i * d;
                       for (std::size_t j = 0; j < d; ++j) da += gi[j] * gh.v()[j];
                   }
                   ah.ensure_grad()[0] += da;
               }
           });
    return out;
}

// Row slice [r0, r1) of a rank-2 tensor.
inline Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    require_rank2("slice_rows", x);
    if (r0 > r1 || r1 > x.rows()) {
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") out of " + shape_str(x.shape()));
    }
    const std::size_t d = x.cols(), t = r1 - r0;
    Tensor out = Tensor::zeros({t, d});
    std::copy_n(x.v().data() + r0 * d, t * d, out.v().data());
    auto xh = x, oh = out;
    finish("slice_rows", out, x.requires_grad(), [xh, oh, r0, d, t]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        auto& gx = xh.ensure_grad();
        for (std::size_t i = 0; i < t * d; ++i) gx[r0 * d + i] += g[i];
    });
    return out;
}

// Column slice [c0, c1) of a rank-2 tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    require_rank2("slice_cols", x);
    if (c0 > c1 || c1 > x.cols()) {
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of " + shape_str(x.shape()));
    }
    const std::size_t t = x.rows(), d = x.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({t, w});
    for (std::size_t i = 0; i < t; ++i) {
        std::copy_n(x.v().data() + i * d + c0, w, out.v().data() + i * w);
    }
    auto xh = x, oh = out;
    finish("slice_cols", out, x.requires_grad(), [xh, oh, t, d, c0, w]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        auto& gx = xh.ensure_grad();
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < w; ++j) gx[i * d + c0 + j] += g[i * w + j];
        }
    });
    return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: no parts");
    }
    const std::size_t d = parts[0].cols();
    std::size_t total = 0;
    bool needs = false;
    for (const Tensor& p : parts) {
        require_rank2("concat_rows", p);
        if (p.cols() != d) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.shape()));
        }
        total += p.rows();
        needs = needs || p.requires_grad();
    }
    Tensor out = Tensor::zeros({total, d});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        std::copy_n(p.v().data(), p.numel(), out.v().data() + off);
        off += p.numel();
    }
    auto ps = parts;
    auto oh = out;
    finish("concat_rows", out, needs, [ps, oh]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        std::size_t off = 0;
        for (Tensor& p : ps) {
            if (p.requires_grad()) {
                auto& gp = p.ensure_grad();
                for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
            }
            off += p.numel();
        }
    });
    return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: no parts");
    }
    const std::size_t t = parts[0].rows();
    std::size_t total = 0;
    bool needs = false;
    for (const Tensor& p : parts) {
        require_rank2("concat_cols", p);
        if (p.rows() != t) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
        }
        total += p.cols();
        needs = needs || p.requires_grad();
    }
    Tensor out = Tensor::zeros({t, total});
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < t; ++i) {
            std::copy_n(p.v().data() + i * w, w, out.v().data() + i * total + off);
        }
        off += w;
    }
    auto ps = parts;
    auto oh = out;
    finish("concat_cols", out, needs, [ps, oh, t, total]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        std::size_t off = 0;
        for (Tensor& p : ps) {
            const std::size_t w = p.cols();
            if (p.requires_grad()) {
                auto& gp = p.ensure_grad();
                for (std::size_t i = 0; i < t; ++i) {
                    for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * total + off + j];
                }
            }
            off += w;
        }
    });
    return out;
}

// Embedding lookup: out[i] = table[ids[i]].
inline Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    require_rank2("gather_rows", table);
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= v) {
            throw IndexError("gather_rows: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v) + " rows");
        }
    }
    Tensor out = Tensor::zeros({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        std::copy_n(table.v().data() + static_cast<std::size_t>(ids[i]) * d, d,
                    out.v().data() + i * d);
    }
    auto th = table, oh = out;
    finish("gather_rows", out, table.requires_grad(), [th, oh, ids, d]() mutable {
        if (!oh.has_grad()) return;
        const auto& g = oh.grad();
        auto& gt = th.ensure_grad();
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* dst = gt.data() + static_cast<std::size_t>(ids[i]) * d;
            const double* src = g.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return out;
}

/// Mean negative log-softmax probability of `targets` over non-ignored rows.
/// Zero non-ignored rows is defined as loss 0 with zero gradient so padded
/// batches never poison training.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            int ignore_index = -1) {
    require_rank2("cross_entropy", logits);
    const std::size_t t = logits.rows(), v = logits.cols();
    if (targets.size() != t) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(t) + " rows");
    }
    for (int y : targets) {
        if (y != ignore_index && (y < 0 || static_cast<std::size_t>(y) >= v)) {
            throw IndexError("cross_entropy: target " + std::to_string(y) +
                             " outside vocabulary of size " + std::to_string(v));
        }
    }
    // Saved softmax probabilities for the backward pass.
    auto probs = std::make_shared<std::vector<double>>(t * v);
    double nll = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < t; ++i) {
        const double* zi = logits.v().data() + i * v;
        double* pi = probs->data() + i * v;
        double m = zi[0];
        for (std::size_t j = 1; j < v; ++j) m = std::max(m, zi[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            pi[j] = std::exp(zi[j] - m);
            z += pi[j];
        }
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < v; ++j) pi[j] *= inv;
        if (targets[i] != ignore_index) {
            nll += std::log(z) + m - zi[targets[i]];
            ++count;
        }
    }
    const double loss = (count > 0) ? nll / static_cast<double>(count) : 0.0;
    Tensor out = Tensor::from_data({1}, {loss});
    auto lh = logits, oh = out;
    finish("cross_entropy", out, logits.requires_grad(),
           [lh, oh, probs, targets, ignore_index, t, v, count]() mutable {
               if (!oh.has_grad() || count == 0) return;
               const double g = oh.grad()[0] / static_cast<double>(count);
               auto& gl = lh.ensure_grad();
               for (std::size_t i = 0; i < t; ++i) {
                   if (targets[i] == ignore_index) continue;
                   const double* pi = probs->data() + i * v;
                   double* gi = gl.data() + i * v;
                   for (std::size_t j = 0; j < v; ++j) gi[j] += g * pi[j];
                   gi[targets[i]] -= g;
               }
           });
    return out;
}

// Additive attention mask: 0 where key j is visible to query i, -1e30 where
// hidden. exp() of masked scores underflows to exactly +0, which keeps prefix
// activations bit-identical regardless of suffix length.
inline Tensor causal_mask(std::size_t t) {
    Tensor m = Tensor::zeros({t, t});
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = i + 1; j < t; ++j) {
            m.v()[i * t + j] = -1e30;
        }
    }
    return m;
}

} // namespace ops

// backward(loss): convenience wrapper on the active tape.
inline void backward(const Tensor& loss) {
    Tape* tape = active_tape();
    if (tape == nullptr) {
        throw ContractError("backward: no active tape");
    }
    tape->backward(loss);
}

} // namespace cmrm
