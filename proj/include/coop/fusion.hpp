#pragma once

// Post-hoc fusion of independently trained specialists.
//
// A small router maps a d-dim hidden state to one gate per expert; fused
// logits are the gate-weighted sum of expert logits. Router kinds:
//
//   uniform  no parameters, gates exactly 1/N
//   linear   softmax(h W), W zero-initialized (starts exactly uniform)
//   mlp2     softmax(gelu(h W1 + b1) W2), W2 zero-initialized
//
// Gate input: the mean of the specialists' final hidden states, or the base
// model's final hidden state. Inference modes: soft (mix logits by gates),
// hard (one-hot argmax gates, ties to the lowest index; every expert still
// runs), and sparse top-1 (choose one expert per sequence from a cheap
// hidden, then run only that expert).
//
// Training the router never touches specialist weights: experts run in eval
// mode (no graph), so gradients exist only for router parameters.

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "common.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "protocol.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace coop {

enum class router_kind { uniform, linear, mlp2 };
enum class router_input { specialist_mean, base_hidden };
enum class fuse_mode { soft, hard, sparse_top1 };

inline const char* router_kind_name(router_kind k) {
    switch (k) {
        case router_kind::uniform: return "uniform";
        case router_kind::linear: return "linear";
        case router_kind::mlp2: return "mlp2";
    }
    return "?";
}

inline router_kind router_kind_from_name(const std::string& s) {
    if (s == "uniform") return router_kind::uniform;
    if (s == "linear") return router_kind::linear;
    if (s == "mlp2") return router_kind::mlp2;
    throw validation_error(cat("router: unknown kind '", s, "'"));
}

inline const char* router_input_name(router_input m) {
    return m == router_input::specialist_mean ? "specialist_mean" : "base_hidden";
}

inline router_input router_input_from_name(const std::string& s) {
    if (s == "specialist_mean") return router_input::specialist_mean;
    if (s == "base_hidden") return router_input::base_hidden;
    throw validation_error(cat("router: unknown input mode '", s, "'"));
}

inline const char* fuse_mode_name(fuse_mode m) {
    switch (m) {
        case fuse_mode::soft: return "soft";
        case fuse_mode::hard: return "hard";
        case fuse_mode::sparse_top1: return "sparse_top1";
    }
    return "?";
}

inline fuse_mode fuse_mode_from_name(const std::string& s) {
    if (s == "soft") return fuse_mode::soft;
    if (s == "hard") return fuse_mode::hard;
    if (s == "sparse_top1") return fuse_mode::sparse_top1;
    throw validation_error(cat("fusion: unknown mode '", s, "'"));
}

struct router {
    router_kind kind = router_kind::linear;
    router_input input = router_input::specialist_mean;
    int n_experts = 0;
    int d = 0;
    std::vector<std::pair<std::string, tensor>> params;

    tensor& named(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return t;
        throw validation_error(cat("router: no parameter named '", name, "'"));
    }

    std::vector<param_ref> param_refs() {
        std::vector<param_ref> refs;
        for (auto& [n, t] : params) refs.push_back({cat("router.", n), &t, true});
        return refs;
    }

    void set_training(bool training) {
        for (auto& [n, t] : params) t.requires_grad = training;
    }
};

// final projections start at zero so an untrained router gates uniformly
inline router make_router(router_kind kind, router_input input, int n_experts, int d,
                          uint64_t seed = 0) {
    if (n_experts < 1) throw validation_error(cat("router: n_experts must be >= 1, got ", n_experts));
    if (d < 1) throw validation_error(cat("router: hidden dim must be >= 1, got ", d));
    router r;
    r.kind = kind;
    r.input = input;
    r.n_experts = n_experts;
    r.d = d;
    if (kind == router_kind::linear) {
        r.params.push_back({"w", tensor::zeros({d, n_experts})});
    } else if (kind == router_kind::mlp2) {
        tensor w1 = tensor::zeros({d, d});
        rng stream(seed ^ 0x726f75746572ull);
        for (auto& v : w1.data()) v = 0.02 * stream.normal();
        r.params.push_back({"w1", std::move(w1)});
        r.params.push_back({"b1", tensor::zeros({d})});
        r.params.push_back({"w2", tensor::zeros({d, n_experts})});
    }
    return r;
}

// gates from a single T x d hidden; uniform kind bypasses the softmax so the
// rows are exactly 1/N
inline tensor compute_gates_from(router& r, const tensor& h) {
    if (h.shape.size() != 2 || h.shape[1] != r.d)
        throw validation_error(cat("router: hidden shape ", shape_str(h.shape),
                                   " does not match router dim ", r.d));
    if (r.kind == router_kind::uniform) {
        tensor g = tensor::zeros({h.shape[0], r.n_experts});
        const double u = 1.0 / r.n_experts;
        std::fill(g.data().begin(), g.data().end(), u);
        return g;
    }
    if (r.kind == router_kind::linear) return softmax(matmul(h, r.named("w")));
    tensor hidden = gelu(add(matmul(h, r.named("w1")), r.named("b1")));
    return softmax(matmul(hidden, r.named("w2")));
}

// element-wise mean of the specialists' hiddens (constant w.r.t. the router)
inline tensor mean_hidden(const std::vector<tensor>& hiddens) {
    if (hiddens.empty()) throw validation_error("router: no hidden states to average");
    for (const auto& h : hiddens)
        if (h.shape != hiddens[0].shape)
            throw validation_error(cat("router: hidden shape mismatch ", shape_str(h.shape),
                                       " vs ", shape_str(hiddens[0].shape)));
    tensor m = tensor::zeros(hiddens[0].shape);
    const double inv = 1.0 / double(hiddens.size());
    auto& out = m.data();
    for (const auto& h : hiddens) {
        const auto& src = h.data();
        for (size_t i = 0; i < out.size(); ++i) out[i] += src[i] * inv;
    }
    return m;
}

inline tensor compute_gates(router& r, const std::vector<tensor>& hiddens,
                            const tensor* base_hidden = nullptr) {
    if (r.input == router_input::base_hidden) {
        if (!base_hidden)
            throw validation_error("router: input mode base_hidden requires the base hidden state");
        return compute_gates_from(r, *base_hidden);
    }
    if (int(hiddens.size()) != r.n_experts)
        throw validation_error(cat("router: ", hiddens.size(), " hidden states for ",
                                   r.n_experts, " experts"));
    return compute_gates_from(r, mean_hidden(hiddens));
}

struct fused_model {
    std::vector<checkpoint> specialists;
    std::vector<model> experts; // materialized from the checkpoints, eval mode
    router gate;
    fuse_mode mode = fuse_mode::soft;
    bool has_base = false;
    checkpoint base_ckpt;
    model base;
};

// all specialists must descend from the same base checkpoint unless the
// caller explicitly waives the check (shared-init mismatch studies)
inline void require_same_base(const std::vector<checkpoint>& specs, bool allow_mismatch) {
    if (allow_mismatch) return;
    for (const auto& s : specs) {
        if (s.prov.base_digest.empty())
            throw validation_error(cat("fusion: checkpoint '", s.prov.domain_label.empty()
                                           ? s.digest.substr(0, 12) : s.prov.domain_label,
                                       "' records no base digest; pass --allow-mismatch to fuse anyway"));
        if (s.prov.base_digest != specs[0].prov.base_digest)
            throw validation_error(cat("fusion: specialists descend from different bases (",
                                       specs[0].prov.base_digest.substr(0, 12), "... vs ",
                                       s.prov.base_digest.substr(0, 12),
                                       "...); pass --allow-mismatch to fuse anyway"));
    }
}

inline fused_model make_fused(std::vector<checkpoint> specialists, router r, fuse_mode mode,
                              const checkpoint* base = nullptr, bool allow_mismatch = false) {
    if (specialists.empty()) throw validation_error("fusion: need at least one specialist");
    for (const auto& s : specialists)
        if (!s.cfg.same_arch(specialists[0].cfg))
            throw validation_error("fusion: specialists have mismatched architectures");
    require_same_base(specialists, allow_mismatch);
    if (r.n_experts != int(specialists.size()))
        throw validation_error(cat("fusion: router built for ", r.n_experts, " experts, got ",
                                   specialists.size(), " specialists"));
    if (r.d != specialists[0].cfg.d_model)
        throw validation_error(cat("fusion: router dim ", r.d, " vs model dim ",
                                   specialists[0].cfg.d_model));

    const bool needs_base =
        r.input == router_input::base_hidden ||
        (mode == fuse_mode::sparse_top1 && specialists[0].cfg.freeze_layers == 0);
    if (needs_base && !base)
        throw validation_error(cat("fusion: ", r.input == router_input::base_hidden
                                       ? "input mode base_hidden"
                                       : "sparse mode with no frozen prefix",
                                   " requires the base checkpoint"));

    fused_model fm;
    fm.specialists = std::move(specialists);
    fm.gate = std::move(r);
    fm.mode = mode;
    for (auto& s : fm.specialists) {
        fm.experts.push_back(to_model(s));
        fm.experts.back().set_training(false);
    }
    if (base) {
        if (!base->cfg.same_arch(fm.specialists[0].cfg))
            throw validation_error("fusion: base architecture does not match the specialists");
        if (!allow_mismatch && !fm.specialists[0].prov.base_digest.empty() &&
            base->digest != fm.specialists[0].prov.base_digest)
            throw validation_error(cat("fusion: base checkpoint digest ",
                                       base->digest.substr(0, 12),
                                       "... is not the base the specialists descend from (",
                                       fm.specialists[0].prov.base_digest.substr(0, 12),
                                       "...); pass --allow-mismatch to fuse anyway"));
        fm.has_base = true;
        fm.base_ckpt = *base;
        fm.base = to_model(fm.base_ckpt);
        fm.base.set_training(false);
    }
    return fm;
}

inline int argmax_row(const double* row, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (row[i] > row[best]) best = i; // ties keep the lowest index
    return best;
}

struct fused_output {
    tensor logits; // [batch*seq, vocab]
    tensor gates;  // [batch*seq, n_experts]
    std::vector<int> top1;
};

// dense fusion: every expert runs; soft mixes logits by gates, hard selects
// the per-position argmax expert's logits bit-exactly
inline fused_output fused_forward(fused_model& fm, const std::vector<int>& tokens, int batch = 1) {
    if (fm.mode == fuse_mode::sparse_top1)
        throw validation_error("fusion: sparse_top1 mode is served by sparse_forward");
    std::vector<tensor> logits, hiddens;
    for (auto& e : fm.experts) {
        forward_result fr = forward(e, tokens, batch);
        logits.push_back(fr.logits);
        hiddens.push_back(fr.hidden_final);
    }
    tensor base_hidden;
    if (fm.gate.input == router_input::base_hidden) {
        if (!fm.has_base)
            throw validation_error("fusion: input mode base_hidden requires the base checkpoint");
        base_hidden = forward(fm.base, tokens, batch).hidden_final;
    }
    fused_output out;
    out.gates = compute_gates(fm.gate, hiddens,
                              fm.gate.input == router_input::base_hidden ? &base_hidden : nullptr);
    const int rows = out.gates.shape[0], n = fm.gate.n_experts;
    out.top1.resize(size_t(rows));
    for (int t = 0; t < rows; ++t)
        out.top1[size_t(t)] = argmax_row(out.gates.data().data() + size_t(t) * size_t(n), n);
    if (fm.mode == fuse_mode::hard) {
        tensor hard = tensor::zeros({rows, n});
        for (int t = 0; t < rows; ++t) hard.data()[size_t(t) * size_t(n) + size_t(out.top1[size_t(t)])] = 1.0;
        out.gates = hard;
    }
    out.logits = mix_logits(out.gates, logits);
    return out;
}

struct sparse_output {
    tensor logits;         // the chosen expert's logits
    std::vector<int> top1; // per-position argmax from the chosen expert's hidden
    int expert = 0;        // sequence-level choice
};

// sparse top-1: pick one expert per sequence from a cheap hidden (the shared
// frozen-prefix residual, or the base model's hidden when none exists or when
// gating from the base anyway), then run only that expert. The router saw
// mean final hiddens in training, so prefix gating is an approximation; the
// agreement metric quantifies the cost.
inline sparse_output sparse_forward(fused_model& fm, const std::vector<int>& tokens) {
    if (fm.mode != fuse_mode::sparse_top1)
        throw validation_error("fusion: sparse_forward requires sparse_top1 mode");
    const int k = fm.experts[0].cfg.freeze_layers;
    tensor h0;
    if (fm.gate.input == router_input::base_hidden || k == 0) {
        if (!fm.has_base)
            throw validation_error("fusion: sparse gating needs the base checkpoint when no "
                                   "frozen prefix is shared");
        h0 = forward(fm.base, tokens).hidden_final;
    } else {
        h0 = forward(fm.experts[0], tokens).hidden_freeze; // identical across experts
    }
    tensor g0 = compute_gates_from(fm.gate, h0);
    const int rows = g0.shape[0], n = fm.gate.n_experts;
    std::vector<double> mass(size_t(n), 0.0);
    for (int t = 0; t < rows; ++t)
        for (int i = 0; i < n; ++i) mass[size_t(i)] += g0.data()[size_t(t) * size_t(n) + size_t(i)];

    sparse_output out;
    out.expert = argmax_row(mass.data(), n);
    forward_result fr = forward(fm.experts[size_t(out.expert)], tokens);
    out.logits = fr.logits;
    tensor g1 = compute_gates_from(fm.gate, fr.hidden_final);
    out.top1.resize(size_t(rows));
    for (int t = 0; t < rows; ++t)
        out.top1[size_t(t)] = argmax_row(g1.data().data() + size_t(t) * size_t(n), n);
    return out;
}

struct router_train_opts {
    long steps = 500;
    int batch_size = 8;
    double lr = 3e-2;        // gate fitting is a tiny convex-ish problem
    double weight_decay = 0; // decay shrinks the gate matrix toward uniform
    uint64_t seed = 0;
    long print_every = 0;
};

// fit the router on the mixed stream with the fused cross-entropy loss;
// specialists stay frozen (they run without a tape, so no gradient can reach
// them and their checkpoints are untouched)
inline router train_router(const std::vector<checkpoint>& specialists, const checkpoint* base,
                           router_kind kind, router_input input,
                           const std::vector<std::vector<int>>& mixed,
                           const router_train_opts& opts) {
    if (kind == router_kind::uniform)
        throw validation_error("train_router: uniform router has no trainable parameters");
    if (specialists.empty()) throw validation_error("train_router: no specialists");
    if (mixed.empty()) throw validation_error("train_router: mixed stream is empty");
    for (const auto& c : mixed)
        if (c.size() != mixed[0].size() || c.size() < 2)
            throw validation_error(cat("train_router: ragged chunk (", c.size(),
                                       " tokens, expected ", mixed[0].size(), ")"));
    if (input == router_input::base_hidden && !base)
        throw validation_error("train_router: input mode base_hidden requires the base checkpoint");

    const model_config& cfg = specialists[0].cfg;
    router r = make_router(kind, input, int(specialists.size()), cfg.d_model, opts.seed);
    if (opts.steps == 0) return r;

    std::vector<model> experts;
    for (const auto& s : specialists) {
        experts.push_back(to_model(s));
        experts.back().set_training(false);
    }
    model base_model;
    if (base) {
        base_model = to_model(*base);
        base_model.set_training(false);
    }

    r.set_training(true);
    auto refs = r.param_refs();
    adamw_opts aopts;
    aopts.lr = opts.lr;
    aopts.weight_decay = opts.weight_decay;
    aopts.total_steps = opts.steps;
    adamw opt(aopts);
    rng batch_rng(opts.seed);

    const size_t context = mixed[0].size();
    const int t_in = int(context) - 1;
    const int n_experts = int(experts.size());
    const int d = cfg.d_model, vocab = cfg.vocab;
    std::vector<int> targets(size_t(opts.batch_size) * size_t(t_in));

    // the experts (and base) are frozen, so their logits and the router's
    // gate input are constants of the chunk: compute each distinct chunk once
    // and assemble training batches from the cache
    struct chunk_cache {
        std::vector<tensor> logits; // one [T, vocab] per expert
        tensor gate_input;          // [T, d]
        bool ready = false;
    };
    std::vector<chunk_cache> cache(mixed.size());
    auto cached = [&](size_t idx) -> const chunk_cache& {
        chunk_cache& cc = cache[idx];
        if (cc.ready) return cc;
        const auto& c = mixed[idx];
        const std::vector<int> toks(c.begin(), c.end() - 1);
        std::vector<tensor> hiddens;
        for (auto& e : experts) {
            forward_result fr = forward(e, toks, 1);
            cc.logits.push_back(fr.logits);
            hiddens.push_back(fr.hidden_final);
        }
        cc.gate_input = input == router_input::base_hidden
                            ? forward(base_model, toks, 1).hidden_final
                            : mean_hidden(hiddens);
        cc.ready = true;
        return cc;
    };

    for (long step = 1; step <= opts.steps; ++step) {
        std::vector<tensor> logits;
        for (int i = 0; i < n_experts; ++i)
            logits.push_back(tensor::zeros({opts.batch_size * t_in, vocab}));
        tensor gate_in = tensor::zeros({opts.batch_size * t_in, d});
        for (int b = 0; b < opts.batch_size; ++b) {
            const size_t idx = size_t(batch_rng.below(mixed.size()));
            const chunk_cache& cc = cached(idx);
            const auto& c = mixed[idx];
            for (int t = 0; t < t_in; ++t)
                targets[size_t(b) * size_t(t_in) + size_t(t)] = c[size_t(t) + 1];
            for (int i = 0; i < n_experts; ++i)
                std::copy_n(cc.logits[size_t(i)].ptr(), size_t(t_in) * vocab,
                            logits[size_t(i)].ptr() + size_t(b) * t_in * vocab);
            std::copy_n(cc.gate_input.ptr(), size_t(t_in) * d,
                        gate_in.ptr() + size_t(b) * t_in * d);
        }
        tensor gates = compute_gates_from(r, gate_in);
        tensor loss = cross_entropy(mix_logits(gates, logits), targets);
        const double loss_val = loss.data()[0];
        if (!std::isfinite(loss_val))
            throw divergence_error(cat("train_router: non-finite loss at step ", step,
                                       " (last completed step ", step - 1, ")"));
        backward(loss);
        try {
            opt.step(refs);
        } catch (const divergence_error& e) {
            throw divergence_error(cat(e.what(), " (last completed step ", step - 1, ")"));
        }
        if (opts.print_every > 0 && (step % opts.print_every == 0 || step == opts.steps))
            std::printf("  router step %ld/%ld  loss %.4f\n", step, opts.steps, loss_val);
    }
    r.set_training(false);
    return r;
}

// uniform parameter-space mean of the specialists (weight-averaging baseline)
inline checkpoint average_checkpoints(const std::vector<checkpoint>& specs,
                                      bool allow_mismatch = false) {
    if (specs.empty()) throw validation_error("average: no checkpoints");
    for (const auto& s : specs)
        if (!s.cfg.same_arch(specs[0].cfg))
            throw validation_error("average: checkpoints have mismatched architectures");
    require_same_base(specs, allow_mismatch);

    checkpoint out;
    out.cfg = specs[0].cfg;
    const double inv = 1.0 / double(specs.size());
    for (size_t i = 0; i < specs[0].weights.size(); ++i) {
        std::vector<double> acc(specs[0].weights[i].second.size(), 0.0);
        for (const auto& s : specs) {
            const auto& src = s.weights[i].second;
            for (size_t j = 0; j < acc.size(); ++j) acc[j] += src[j] * inv;
        }
        out.weights.push_back({specs[0].weights[i].first, std::move(acc)});
    }
    out.prov.method = "weight_average";
    out.prov.base_digest = specs[0].prov.base_digest;
    out.prov.train_steps = 0;
    out.prov.param_ratio = 1.0;
    out.digest = compute_digest(out);
    return out;
}

} // namespace coop
