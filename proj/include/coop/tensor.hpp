#pragma once

// Dense f64 tensors with tape-based reverse-mode autodiff.
//
// A tensor is a handle onto shared storage (row-major values + lazily sized
// gradient) plus an optional producing node; copies alias the same storage, so
// gradient accumulation across fan-out lands in one buffer. Nodes hold their
// input tensors, their output storage and a backward closure, so the graph for
// one loss is an implicit tape released when the loss goes out of scope.
//
// Gradients are only computed where some upstream leaf has requires_grad; ops
// whose inputs are all constant record no node, so forward passes under a
// frozen prefix or during evaluation pay nothing for autodiff.
//
// The graph is single-threaded by design; independent training jobs each build
// their own graphs and share no mutable state.
//
// forward_op() is the validated dispatch surface (shape checks, finite-input
// checks, diagnostics naming the op); the typed helpers below it are the fast
// path used by the model internals and skip the full-input finite scan.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "blas.hpp"
#include "common.hpp"

// glibc ships simd variants of these in libmvec but only advertises them under
// fast-math; the ~4-ulp vector kernels are deterministic per build and well
// inside this engine's tolerances, so declare them for the vectorizer directly
#pragma omp declare simd notinbranch
extern "C" double tanh(double);
#pragma omp declare simd notinbranch
extern "C" double exp(double);

namespace coop {

struct node;

struct storage {
    std::vector<double> data;
    std::vector<double> grad; // empty until first accumulation
};

class tensor {
  public:
    std::vector<int> shape;
    std::shared_ptr<storage> st;
    bool requires_grad = false;
    std::shared_ptr<node> src; // producing op; null for leaves

    tensor() = default;
    tensor(std::vector<int> s, std::vector<double> v, bool rg = false)
        : shape(std::move(s)), st(std::make_shared<storage>(storage{std::move(v), {}})),
          requires_grad(rg) {
        if (st->data.size() != size_t(numel()))
            throw validation_error(cat("tensor: data size ", st->data.size(),
                                       " does not match shape ", shape_str(shape)));
    }

    static tensor zeros(std::vector<int> s, bool rg = false) {
        size_t n = 1;
        for (int d : s) n *= size_t(d);
        return tensor(std::move(s), std::vector<double>(n, 0.0), rg);
    }

    long numel() const {
        long n = 1;
        for (int d : shape) n *= d;
        return n;
    }
    int rows() const { return shape.empty() ? 1 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : int(shape.back()); }
    bool is_scalar() const { return numel() == 1; }

    std::vector<double>& data() { return st->data; }
    const std::vector<double>& data() const { return st->data; }
    double* ptr() { return st->data.data(); }
    const double* ptr() const { return st->data.data(); }

    double item() const {
        if (!is_scalar())
            throw validation_error(cat("item: tensor is not scalar, shape ", shape_str(shape)));
        return st->data[0];
    }

    bool has_grad() const { return st && !st->grad.empty(); }
    void ensure_grad() {
        if (st->grad.empty()) st->grad.assign(st->data.size(), 0.0);
    }
    void zero_grad() {
        if (st && !st->grad.empty()) std::fill(st->grad.begin(), st->grad.end(), 0.0);
    }
    std::vector<double>& grad() { return st->grad; }
    const std::vector<double>& grad() const { return st->grad; }
    double* gptr() { return st->grad.data(); }
};

struct node {
    const char* op;
    std::vector<tensor> inputs;
    std::shared_ptr<storage> out; // no back-pointer to the node: no cycles
    std::function<void(node&)> backward;
};

namespace detail {

inline bool any_requires_grad(const std::vector<tensor>& ts) {
    for (const auto& t : ts)
        if (t.requires_grad) return true;
    return false;
}

// attach a node to `out` only when gradients can flow
inline void record(tensor& out, const char* op, std::vector<tensor> inputs,
                   std::function<void(node&)> bwd) {
    out.requires_grad = any_requires_grad(inputs);
    if (out.requires_grad)
        out.src = std::make_shared<node>(node{op, std::move(inputs), out.st, std::move(bwd)});
}

inline void check_finite(const tensor& t, const char* op) {
    for (double v : t.data())
        if (!std::isfinite(v))
            throw validation_error(cat(op, ": non-finite value in input tensor"));
}

inline void check_2d(const tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw validation_error(cat(op, ": expected 2-d tensor, got ", shape_str(t.shape)));
}

// uninitialized op-private scratch, shared with the backward closure; callers
// fully overwrite it, so skipping value-init saves a memset per use
inline std::shared_ptr<double[]> scratch_buf(size_t n) {
    return std::shared_ptr<double[]>(new double[n]);
}

} // namespace detail

// ---------------------------------------------------------------------------
// primitive operations
// ---------------------------------------------------------------------------

inline tensor matmul(const tensor& a, const tensor& b) {
    detail::check_2d(a, "matmul");
    detail::check_2d(b, "matmul");
    if (a.shape[1] != b.shape[0])
        throw validation_error(cat("matmul: shape mismatch ", shape_str(a.shape), " x ",
                                   shape_str(b.shape)));
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    tensor out = tensor::zeros({m, n});
    gemm(false, false, m, n, k, 1.0, a.ptr(), k, b.ptr(), n, 0.0, out.ptr(), n);
    detail::record(out, "matmul", {a, b}, [m, k, n](node& nd) {
        auto& a = nd.inputs[0];
        auto& b = nd.inputs[1];
        const double* g = nd.out->grad.data();
        if (a.requires_grad) {
            a.ensure_grad();
            gemm(false, true, m, k, n, 1.0, g, n, b.ptr(), n, 1.0, a.gptr(), k);
        }
        if (b.requires_grad) {
            b.ensure_grad();
            gemm(true, false, k, n, m, 1.0, a.ptr(), k, g, n, 1.0, b.gptr(), n);
        }
    });
    return out;
}

// same-shape elementwise add, or row-broadcast bias add [R,C] + [C]
inline tensor add(const tensor& a, const tensor& b) {
    const bool same = a.shape == b.shape;
    const bool bias = a.shape.size() == 2 && b.shape.size() == 1 && a.shape[1] == b.shape[0];
    if (!same && !bias)
        throw validation_error(cat("add: shape mismatch ", shape_str(a.shape), " + ",
                                   shape_str(b.shape)));
    tensor out = tensor::zeros(a.shape);
    const long n = a.numel();
    const double* pa = a.ptr();
    double* po = out.ptr();
    if (same) {
        const double* pb = b.ptr();
        for (long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    } else {
        const int rows = a.shape[0], cols = a.shape[1];
        const double* pb = b.ptr();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) po[r * cols + c] = pa[r * cols + c] + pb[c];
    }
    detail::record(out, "add", {a, b}, [same, n](node& nd) {
        auto& a = nd.inputs[0];
        auto& b = nd.inputs[1];
        const double* g = nd.out->grad.data();
        if (a.requires_grad) {
            a.ensure_grad();
            double* ga = a.gptr();
            for (long i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b.requires_grad) {
            b.ensure_grad();
            double* gb = b.gptr();
            if (same) {
                for (long i = 0; i < n; ++i) gb[i] += g[i];
            } else {
                const int rows = a.shape[0], cols = a.shape[1];
                for (int r = 0; r < rows; ++r)
                    for (int c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
            }
        }
    });
    return out;
}

// row-wise layernorm with affine scale/shift; population variance, small eps
// so normalized rows keep variance within 1e-6 of 1
inline tensor layernorm(const tensor& x, const tensor& gain, const tensor& bias,
                        double eps = 1e-8) {
    detail::check_2d(x, "layernorm");
    const int rows = x.shape[0], cols = x.shape[1];
    if (gain.numel() != cols || bias.numel() != cols)
        throw validation_error(cat("layernorm: affine params ", shape_str(gain.shape), ", ",
                                   shape_str(bias.shape), " do not match row width ", cols));
    tensor out = tensor::zeros(x.shape);
    auto xhat = detail::scratch_buf(size_t(rows) * cols);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    const double* px = x.ptr();
    const double* pg = gain.ptr();
    const double* pb = bias.ptr();
    double* po = out.ptr();
    for (int r = 0; r < rows; ++r) {
        const double* xr = px + size_t(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xr[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = xr[c] - mu;
            var += d * d;
        }
        var /= cols;
        const double rs = 1.0 / std::sqrt(std::max(var, 0.0) + eps);
        (*rstd)[r] = rs;
        double* xh = xhat.get() + size_t(r) * cols;
        double* orow = po + size_t(r) * cols;
        for (int c = 0; c < cols; ++c) {
            xh[c] = (xr[c] - mu) * rs;
            orow[c] = xh[c] * pg[c] + pb[c];
        }
    }
    detail::record(out, "layernorm", {x, gain, bias}, [rows, cols, xhat, rstd](node& nd) {
        auto& x = nd.inputs[0];
        auto& gain = nd.inputs[1];
        auto& bias = nd.inputs[2];
        const double* g = nd.out->grad.data();
        const double* pg = gain.ptr();
        if (gain.requires_grad) gain.ensure_grad();
        if (bias.requires_grad) bias.ensure_grad();
        if (x.requires_grad) x.ensure_grad();
        for (int r = 0; r < rows; ++r) {
            const double* grow = g + size_t(r) * cols;
            const double* xh = xhat.get() + size_t(r) * cols;
            if (gain.requires_grad) {
                double* gg = gain.gptr();
                for (int c = 0; c < cols; ++c) gg[c] += grow[c] * xh[c];
            }
            if (bias.requires_grad) {
                double* gb = bias.gptr();
                for (int c = 0; c < cols; ++c) gb[c] += grow[c];
            }
            if (x.requires_grad) {
                double m1 = 0.0, m2 = 0.0; // mean(dxhat), mean(dxhat*xhat)
                for (int c = 0; c < cols; ++c) {
                    const double dxh = grow[c] * pg[c];
                    m1 += dxh;
                    m2 += dxh * xh[c];
                }
                m1 /= cols;
                m2 /= cols;
                double* gx = x.gptr() + size_t(r) * cols;
                const double rs = (*rstd)[r];
                for (int c = 0; c < cols; ++c)
                    gx[c] += rs * (grow[c] * pg[c] - m1 - xh[c] * m2);
            }
        }
    });
    return out;
}

inline tensor embedding_lookup(const tensor& table, const std::vector<int>& ids) {
    detail::check_2d(table, "embedding_lookup");
    const int vocab = table.shape[0], d = table.shape[1];
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] < 0 || ids[i] >= vocab)
            throw validation_error(cat("embedding_lookup: token id ", ids[i], " at position ",
                                       i, " outside vocab of ", vocab));
    tensor out = tensor::zeros({int(ids.size()), d});
    const double* pt = table.ptr();
    double* po = out.ptr();
    for (size_t r = 0; r < ids.size(); ++r)
        std::memcpy(po + r * d, pt + size_t(ids[r]) * d, sizeof(double) * d);
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    detail::record(out, "embedding_lookup", {table}, [d, ids_copy](node& nd) {
        auto& table = nd.inputs[0];
        if (!table.requires_grad) return;
        table.ensure_grad();
        const double* g = nd.out->grad.data();
        double* gt = table.gptr();
        for (size_t r = 0; r < ids_copy->size(); ++r) {
            double* row = gt + size_t((*ids_copy)[r]) * d;
            const double* grow = g + r * d;
            for (int c = 0; c < d; ++c) row[c] += grow[c];
        }
    });
    return out;
}

// numerically stable row-wise softmax; rows of the output sum to 1 within 1e-12
inline tensor softmax(const tensor& x) {
    detail::check_2d(x, "softmax");
    const int rows = x.shape[0], cols = x.shape[1];
    tensor out = tensor::zeros(x.shape);
    const double* px = x.ptr();
    double* po = out.ptr();
    for (int r = 0; r < rows; ++r) {
        const double* xr = px + size_t(r) * cols;
        double* orow = po + size_t(r) * cols;
        double m = xr[0];
#pragma omp simd reduction(max : m)
        for (int c = 1; c < cols; ++c) m = std::max(m, xr[c]);
        double s = 0.0;
#pragma omp simd reduction(+ : s)
        for (int c = 0; c < cols; ++c) {
            orow[c] = exp(xr[c] - m);
            s += orow[c];
        }
        const double inv = 1.0 / s;
#pragma omp simd
        for (int c = 0; c < cols; ++c) orow[c] *= inv;
    }
    detail::record(out, "softmax", {x}, [rows, cols](node& nd) {
        auto& x = nd.inputs[0];
        if (!x.requires_grad) return;
        x.ensure_grad();
        const double* y = nd.out->data.data();
        const double* g = nd.out->grad.data();
        double* gx = x.gptr();
        for (int r = 0; r < rows; ++r) {
            const size_t off = size_t(r) * cols;
            double dot = 0.0;
            for (int c = 0; c < cols; ++c) dot += y[off + c] * g[off + c];
            for (int c = 0; c < cols; ++c) gx[off + c] += y[off + c] * (g[off + c] - dot);
        }
    });
    return out;
}

// gelu, tanh approximation (the variant standard in GPT-style models)
inline tensor gelu(const tensor& x) {
    constexpr double c = 0.7978845608028654; // sqrt(2/pi)
    constexpr double a = 0.044715;
    const long n = x.numel();
    tensor out = tensor::zeros(x.shape);
    const bool needs_grad = x.requires_grad;
    // tanh values are kept for backward; at eval the output buffer doubles as
    // the staging area so nothing extra is allocated
    auto tanh_u = needs_grad ? detail::scratch_buf(size_t(n)) : nullptr;
    const double* px = x.ptr();
    double* po = out.ptr();
    double* stage = needs_grad ? tanh_u.get() : po;
#pragma omp simd
    for (long i = 0; i < n; ++i) {
        const double v = px[i];
        stage[i] = c * (v + a * v * v * v);
    }
#pragma omp simd
    for (long i = 0; i < n; ++i) stage[i] = tanh(stage[i]);
#pragma omp simd
    for (long i = 0; i < n; ++i) po[i] = 0.5 * px[i] * (1.0 + stage[i]);
    detail::record(out, "gelu", {x}, [n, tanh_u](node& nd) {
        auto& x = nd.inputs[0];
        x.ensure_grad();
        const double* px = x.ptr();
        const double* pt = tanh_u.get();
        const double* g = nd.out->grad.data();
        double* gx = x.gptr();
        for (long i = 0; i < n; ++i) {
            const double v = px[i], t = pt[i];
            const double du = c * (1.0 + 3.0 * a * v * v);
            gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
        }
    });
    return out;
}

// fused causal multi-head self-attention over packed rows.
// q, k, v are [batch*seq, d_model] with heads occupying column blocks; the
// causal mask adds -1e9 to future-position scores before the row softmax
// (implementation masks by restricting each softmax row to positions <= t,
// identical to adding -1e9 at f64 precision for desk-scale score magnitudes).
inline tensor scaled_dot_attention(const tensor& q, const tensor& k, const tensor& v,
                                   int n_heads = 1, int batch = 1) {
    detail::check_2d(q, "scaled_dot_attention");
    if (q.shape != k.shape || q.shape != v.shape)
        throw validation_error(cat("scaled_dot_attention: shape mismatch q ",
                                   shape_str(q.shape), " k ", shape_str(k.shape), " v ",
                                   shape_str(v.shape)));
    const int rows = q.shape[0], d = q.shape[1];
    if (n_heads < 1 || d % n_heads != 0)
        throw validation_error(cat("scaled_dot_attention: d_model ", d,
                                   " not divisible by n_heads ", n_heads));
    if (batch < 1 || rows % batch != 0)
        throw validation_error(cat("scaled_dot_attention: rows ", rows,
                                   " not divisible by batch ", batch));
    const int seq = rows / batch, dh = d / n_heads;
    const double alpha = 1.0 / std::sqrt(double(dh));

    tensor out = tensor::zeros(q.shape);
    const bool needs_grad = detail::any_requires_grad({q, k, v});
    // attention probabilities: saved per (batch, head) when training, else a
    // single scratch pane reused across heads
    auto probs =
        detail::scratch_buf((needs_grad ? size_t(batch) * n_heads : 1) * seq * seq);

    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            const size_t off = size_t(b) * seq * d + size_t(h) * dh;
            double* p = probs.get() +
                        (needs_grad ? (size_t(b) * n_heads + h) * size_t(seq) * seq : 0);
            // scores = alpha * Q K^T
            gemm(false, true, seq, seq, dh, alpha, q.ptr() + off, d, k.ptr() + off, d, 0.0,
                 p, seq);
            // causal softmax row by row; masked entries become exact zeros
            for (int t = 0; t < seq; ++t) {
                double* row = p + size_t(t) * seq;
                double m = row[0];
#pragma omp simd reduction(max : m)
                for (int j = 1; j <= t; ++j) m = std::max(m, row[j]);
                double s = 0.0;
#pragma omp simd reduction(+ : s)
                for (int j = 0; j <= t; ++j) {
                    row[j] = exp(row[j] - m);
                    s += row[j];
                }
                const double inv = 1.0 / s;
#pragma omp simd
                for (int j = 0; j <= t; ++j) row[j] *= inv;
                for (int j = t + 1; j < seq; ++j) row[j] = 0.0;
            }
            // out = P V
            gemm(false, false, seq, dh, seq, 1.0, p, seq, v.ptr() + off, d, 0.0,
                 out.ptr() + off, d);
        }
    }

    detail::record(out, "scaled_dot_attention", {q, k, v},
                   [batch, n_heads, seq, dh, d, alpha, probs](node& nd) {
        auto& q = nd.inputs[0];
        auto& k = nd.inputs[1];
        auto& v = nd.inputs[2];
        q.ensure_grad();
        k.ensure_grad();
        v.ensure_grad();
        std::vector<double> dp(size_t(seq) * seq);
        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < n_heads; ++h) {
                const size_t off = size_t(b) * seq * d + size_t(h) * dh;
                const double* p = probs.get() + (size_t(b) * n_heads + h) * size_t(seq) * seq;
                const double* go = nd.out->grad.data() + off;
                // dV += P^T dO
                gemm(true, false, seq, dh, seq, 1.0, p, seq, go, d, 1.0, v.gptr() + off, d);
                // dP = dO V^T
                gemm(false, true, seq, seq, dh, 1.0, go, d, v.ptr() + off, d, 0.0,
                     dp.data(), seq);
                // dS = P * (dP - rowsum(dP * P)), zero outside the causal band
                for (int t = 0; t < seq; ++t) {
                    double* dpr = dp.data() + size_t(t) * seq;
                    const double* pr = p + size_t(t) * seq;
                    double dot = 0.0;
                    for (int j = 0; j <= t; ++j) dot += dpr[j] * pr[j];
                    for (int j = 0; j <= t; ++j) dpr[j] = pr[j] * (dpr[j] - dot);
                    for (int j = t + 1; j < seq; ++j) dpr[j] = 0.0;
                }
                // dQ += alpha dS K ; dK += alpha dS^T Q
                gemm(false, false, seq, dh, seq, alpha, dp.data(), seq, k.ptr() + off, d,
                     1.0, q.gptr() + off, d);
                gemm(true, false, seq, dh, seq, alpha, dp.data(), seq, q.ptr() + off, d,
                     1.0, k.gptr() + off, d);
            }
        }
    });
    return out;
}

// mean cross-entropy of row-wise logits against integer targets, in nats
inline tensor cross_entropy(const tensor& logits, const std::vector<int>& targets) {
    detail::check_2d(logits, "cross_entropy");
    const int rows = logits.shape[0], vocab = logits.shape[1];
    if (int(targets.size()) != rows)
        throw validation_error(cat("cross_entropy: ", targets.size(), " targets for ", rows,
                                   " logit rows"));
    for (size_t i = 0; i < targets.size(); ++i)
        if (targets[i] < 0 || targets[i] >= vocab)
            throw validation_error(cat("cross_entropy: target id ", targets[i],
                                       " at position ", i, " outside vocab of ", vocab));
    const bool needs_grad = logits.requires_grad;
    auto probs = detail::scratch_buf(needs_grad ? size_t(rows) * vocab : size_t(vocab));
    const double* px = logits.ptr();
    double total = 0.0;
    for (int r = 0; r < rows; ++r) {
        const double* xr = px + size_t(r) * vocab;
        double* pr = probs.get() + (needs_grad ? size_t(r) * vocab : 0);
        double m = xr[0];
#pragma omp simd reduction(max : m)
        for (int c = 1; c < vocab; ++c) m = std::max(m, xr[c]);
        double s = 0.0;
#pragma omp simd reduction(+ : s)
        for (int c = 0; c < vocab; ++c) {
            pr[c] = exp(xr[c] - m);
            s += pr[c];
        }
        const double inv = 1.0 / s;
#pragma omp simd
        for (int c = 0; c < vocab; ++c) pr[c] *= inv;
        total += m + std::log(s) - xr[targets[r]];
    }
    tensor out({1}, {total / rows});
    auto tg = std::make_shared<std::vector<int>>(targets);
    detail::record(out, "cross_entropy", {logits}, [rows, vocab, probs, tg](node& nd) {
        auto& logits = nd.inputs[0];
        logits.ensure_grad();
        const double scale = nd.out->grad[0] / rows;
        double* gx = logits.gptr();
        const double* pr = probs.get();
        for (int r = 0; r < rows; ++r) {
            const size_t off = size_t(r) * vocab;
            for (int c = 0; c < vocab; ++c) gx[off + c] += scale * pr[off + c];
            gx[off + (*tg)[r]] -= scale;
        }
    });
    return out;
}

// convex mixture of expert logits under per-row gates:
// out[r,:] = sum_i gates[r,i] * experts[i][r,:]
inline tensor mix_logits(const tensor& gates, const std::vector<tensor>& experts) {
    detail::check_2d(gates, "mix_logits");
    const int rows = gates.shape[0], n = gates.shape[1];
    if (int(experts.size()) != n)
        throw validation_error(cat("mix_logits: ", experts.size(), " experts for gate width ",
                                   n));
    for (const auto& e : experts)
        if (e.shape.size() != 2 || e.shape[0] != rows)
            throw validation_error(cat("mix_logits: expert logits ", shape_str(e.shape),
                                       " do not match ", rows, " gate rows"));
    const int vocab = experts[0].shape[1];
    tensor out = tensor::zeros({rows, vocab});
    double* po = out.ptr();
    const double* pg = gates.ptr();
    for (int i = 0; i < n; ++i) {
        const double* pe = experts[i].ptr();
        for (int r = 0; r < rows; ++r) {
            const double g = pg[size_t(r) * n + i];
            if (g == 0.0) continue; // keeps one-hot mixtures bit-exact
            double* orow = po + size_t(r) * vocab;
            const double* erow = pe + size_t(r) * vocab;
            for (int c = 0; c < vocab; ++c) orow[c] += g * erow[c];
        }
    }
    std::vector<tensor> inputs = {gates};
    inputs.insert(inputs.end(), experts.begin(), experts.end());
    detail::record(out, "mix_logits", std::move(inputs), [rows, n, vocab](node& nd) {
        auto& gates = nd.inputs[0];
        const double* g = nd.out->grad.data();
        if (gates.requires_grad) {
            gates.ensure_grad();
            double* gg = gates.gptr();
            for (int i = 0; i < n; ++i) {
                const double* pe = nd.inputs[1 + i].ptr();
                for (int r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    const size_t off = size_t(r) * vocab;
                    for (int c = 0; c < vocab; ++c) dot += g[off + c] * pe[off + c];
                    gg[size_t(r) * n + i] += dot;
                }
            }
        }
        const double* pg = gates.ptr();
        for (int i = 0; i < n; ++i) {
            auto& e = nd.inputs[1 + i];
            if (!e.requires_grad) continue;
            e.ensure_grad();
            double* ge = e.gptr();
            for (int r = 0; r < rows; ++r) {
                const double gv = pg[size_t(r) * n + i];
                const size_t off = size_t(r) * vocab;
                for (int c = 0; c < vocab; ++c) ge[off + c] += gv * g[off + c];
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// backward pass
// ---------------------------------------------------------------------------

inline void backward(tensor& loss) {
    if (!loss.is_scalar())
        throw validation_error(cat("backward: loss must be scalar, got shape ",
                                   shape_str(loss.shape)));
    if (!loss.requires_grad || !loss.src) return;

    // topological order over producing nodes (iterative DFS)
    std::vector<node*> order;
    std::unordered_set<node*> seen;
    std::vector<std::pair<node*, size_t>> stack;
    seen.insert(loss.src.get());
    stack.push_back({loss.src.get(), 0});
    while (!stack.empty()) {
        auto& [nd, idx] = stack.back();
        if (idx < nd->inputs.size()) {
            node* child = nd->inputs[idx++].src.get();
            if (child && seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(nd);
            stack.pop_back();
        }
    }

    loss.ensure_grad();
    loss.grad()[0] = 1.0;

    // reverse topological order; nodes whose output gradient never materialized
    // sit on branches the loss does not depend on
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        node* nd = *it;
        if (!nd->out->grad.empty()) nd->backward(*nd);
    }
}

// ---------------------------------------------------------------------------
// validated dispatch surface
// ---------------------------------------------------------------------------

enum class op_kind {
    matmul,
    add,
    layernorm,
    embedding_lookup,
    softmax,
    gelu,
    scaled_dot_attention,
    cross_entropy,
};

inline const char* op_name(op_kind k) {
    switch (k) {
        case op_kind::matmul: return "matmul";
        case op_kind::add: return "add";
        case op_kind::layernorm: return "layernorm";
        case op_kind::embedding_lookup: return "embedding_lookup";
        case op_kind::softmax: return "softmax";
        case op_kind::gelu: return "gelu";
        case op_kind::scaled_dot_attention: return "scaled_dot_attention";
        case op_kind::cross_entropy: return "cross_entropy";
    }
    return "?";
}

namespace detail {
// integer ids passed through the generic surface arrive as an f64 tensor
inline std::vector<int> as_ids(const tensor& t, const char* op) {
    std::vector<int> ids;
    ids.reserve(t.numel());
    for (double v : t.data()) {
        if (!std::isfinite(v) || v != std::floor(v))
            throw validation_error(cat(op, ": id tensor holds non-integer value ", v));
        ids.push_back(int(v));
    }
    return ids;
}
} // namespace detail

inline tensor forward_op(op_kind kind, const std::vector<tensor>& inputs) {
    const char* name = op_name(kind);
    auto want = [&](size_t n) {
        if (inputs.size() != n)
            throw validation_error(cat(name, ": expected ", n, " inputs, got ",
                                       inputs.size()));
    };
    // trailing id/target tensors are validated by the ops themselves
    const size_t finite_until =
        (kind == op_kind::embedding_lookup || kind == op_kind::cross_entropy)
            ? 1
            : inputs.size();
    for (size_t i = 0; i < inputs.size() && i < finite_until; ++i)
        detail::check_finite(inputs[i], name);

    switch (kind) {
        case op_kind::matmul: want(2); return matmul(inputs[0], inputs[1]);
        case op_kind::add: want(2); return add(inputs[0], inputs[1]);
        case op_kind::layernorm: want(3); return layernorm(inputs[0], inputs[1], inputs[2]);
        case op_kind::embedding_lookup:
            want(2);
            return embedding_lookup(inputs[0], detail::as_ids(inputs[1], name));
        case op_kind::softmax: want(1); return softmax(inputs[0]);
        case op_kind::gelu: want(1); return gelu(inputs[0]);
        case op_kind::scaled_dot_attention:
            want(3);
            return scaled_dot_attention(inputs[0], inputs[1], inputs[2]);
        case op_kind::cross_entropy:
            want(2);
            return cross_entropy(inputs[0], detail::as_ids(inputs[1], name));
    }
    throw validation_error("forward_op: unknown op kind");
}

} // namespace coop
