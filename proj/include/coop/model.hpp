#pragma once

// Decoder-only transformer: learned absolute position embeddings, pre-norm
// blocks (attention + gelu MLP with 4x expansion), untied unembedding.
//
// Parameters live in one canonical ordered list; that order defines the
// checkpoint layout and the per-array RNG streams, so a given (config, seed)
// reproduces identical weights bit-for-bit regardless of freeze settings.
//
// Freezing: freeze_layers = K marks the token/position embeddings and blocks
// 0..K-1 as non-trainable. Frozen arrays participate fully in the forward
// pass; the optimizer never updates them, and no gradient work is spent below
// the first trainable array.

#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace coop {

struct model_config {
    int n_layers = 4;
    int d_model = 128;
    int n_heads = 4;
    int vocab = 128;
    int context = 128;
    int freeze_layers = 0; // K

    void validate() const {
        if (n_layers < 1 || d_model < 1 || n_heads < 1 || vocab < 2 || context < 2)
            throw validation_error(cat("model_config: invalid sizes (layers ", n_layers,
                                       ", d_model ", d_model, ", heads ", n_heads,
                                       ", vocab ", vocab, ", context ", context, ")"));
        if (d_model % n_heads != 0)
            throw validation_error(cat("model_config: d_model ", d_model,
                                       " not divisible by n_heads ", n_heads));
        if (freeze_layers < 0 || freeze_layers > n_layers)
            throw validation_error(cat("model_config: freeze_layers ", freeze_layers,
                                       " outside [0, ", n_layers, "]"));
    }

    bool operator==(const model_config&) const = default;

    // architecture equality: everything except the freeze depth
    bool same_arch(const model_config& o) const {
        return n_layers == o.n_layers && d_model == o.d_model && n_heads == o.n_heads &&
               vocab == o.vocab && context == o.context;
    }

    long param_count() const {
        const long d = d_model;
        return long(vocab) * d + long(context) * d + n_layers * (12 * d * d + 13 * d) +
               2 * d + d * long(vocab);
    }
};

// canonical array descriptors: name + shape, in serialization order
struct array_desc {
    std::string name;
    std::vector<int> shape;
};

inline std::vector<array_desc> array_layout(const model_config& cfg) {
    const int d = cfg.d_model, ff = 4 * cfg.d_model;
    std::vector<array_desc> out;
    out.push_back({"tok_embed", {cfg.vocab, d}});
    out.push_back({"pos_embed", {cfg.context, d}});
    for (int i = 0; i < cfg.n_layers; ++i) {
        const std::string p = cat("layer", i, ".");
        out.push_back({p + "ln1.g", {d}});
        out.push_back({p + "ln1.b", {d}});
        out.push_back({p + "attn.wq", {d, d}});
        out.push_back({p + "attn.bq", {d}});
        out.push_back({p + "attn.wk", {d, d}});
        out.push_back({p + "attn.bk", {d}});
        out.push_back({p + "attn.wv", {d, d}});
        out.push_back({p + "attn.bv", {d}});
        out.push_back({p + "attn.wo", {d, d}});
        out.push_back({p + "attn.bo", {d}});
        out.push_back({p + "ln2.g", {d}});
        out.push_back({p + "ln2.b", {d}});
        out.push_back({p + "mlp.w1", {d, ff}});
        out.push_back({p + "mlp.b1", {ff}});
        out.push_back({p + "mlp.w2", {ff, d}});
        out.push_back({p + "mlp.b2", {d}});
    }
    out.push_back({"lnf.g", {d}});
    out.push_back({"lnf.b", {d}});
    out.push_back({"unembed.w", {d, cfg.vocab}});
    return out;
}

// trainable flags per canonical array index; K > 0 freezes the embeddings and
// every array of blocks 0..K-1
inline std::vector<bool> trainable_mask(const model_config& cfg) {
    cfg.validate();
    const auto layout = array_layout(cfg);
    std::vector<bool> mask(layout.size(), true);
    if (cfg.freeze_layers > 0) {
        mask[0] = mask[1] = false; // tok_embed, pos_embed
        for (int i = 0; i < cfg.freeze_layers; ++i)
            for (int j = 0; j < 16; ++j) mask[2 + size_t(i) * 16 + j] = false;
    }
    return mask;
}

struct model {
    model_config cfg;
    std::vector<std::pair<std::string, tensor>> params; // canonical order

    tensor& at(size_t idx) { return params[idx].second; }
    const tensor& at(size_t idx) const { return params[idx].second; }

    tensor& named(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return t;
        throw validation_error(cat("model: no parameter named '", name, "'"));
    }

    // training mode: trainable arrays get gradients; eval mode: none do
    void set_training(bool training) {
        const auto mask = trainable_mask(cfg);
        for (size_t i = 0; i < params.size(); ++i)
            params[i].second.requires_grad = training && mask[i];
    }

    std::vector<param_ref> param_refs() {
        const auto mask = trainable_mask(cfg);
        std::vector<param_ref> refs;
        refs.reserve(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            refs.push_back({params[i].first, &params[i].second, mask[i]});
        return refs;
    }
};

// deterministic init: one RNG stream per array (keyed by canonical index), so
// identical (config, seed) gives identical weights. Projections are normal
// with std 0.02; residual-facing projections (attn.wo, mlp.w2) are scaled by
// 1/sqrt(2 * n_layers); biases and norm shifts start at zero, norm gains at 1.
inline model init_model(const model_config& cfg, uint64_t seed) {
    cfg.validate();
    model m;
    m.cfg = cfg;
    const double res_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
    rng root(seed);
    const auto layout = array_layout(cfg);
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& desc = layout[i];
        tensor t = tensor::zeros(desc.shape);
        const bool is_matrix = desc.shape.size() == 2;
        const bool is_gain = desc.name.ends_with(".g");
        const bool is_residual_proj =
            desc.name.ends_with("attn.wo") || desc.name.ends_with("mlp.w2");
        if (is_matrix) {
            rng stream = root.split(i);
            const double std_dev = 0.02 * (is_residual_proj ? res_scale : 1.0);
            for (auto& v : t.data()) v = std_dev * stream.normal();
        } else if (is_gain) {
            std::fill(t.data().begin(), t.data().end(), 1.0);
        } // biases and norm shifts stay zero
        m.params.push_back({desc.name, std::move(t)});
    }
    return m;
}

struct forward_result {
    tensor logits;        // [batch*seq, vocab]
    tensor hidden_final;  // [batch*seq, d_model], after the final layernorm
    tensor hidden_freeze; // [batch*seq, d_model], residual stream after block K
};

// tokens is batch*seq ids, sequences packed back to back; seq <= context
inline forward_result forward(model& m, const std::vector<int>& tokens, int batch = 1) {
    const auto& cfg = m.cfg;
    if (batch < 1 || tokens.empty() || tokens.size() % size_t(batch) != 0)
        throw validation_error(cat("forward: ", tokens.size(),
                                   " tokens not divisible into batch of ", batch));
    const int seq = int(tokens.size() / size_t(batch));
    if (seq > cfg.context)
        throw validation_error(cat("forward: sequence length ", seq, " exceeds context ",
                                   cfg.context));

    std::vector<int> pos_ids(tokens.size());
    for (int b = 0; b < batch; ++b)
        for (int t = 0; t < seq; ++t) pos_ids[size_t(b) * seq + t] = t;

    size_t idx = 0;
    auto next = [&]() -> tensor& { return m.params[idx++].second; };

    tensor& tok_embed = next();
    tensor& pos_embed = next();
    tensor x = add(embedding_lookup(tok_embed, tokens), embedding_lookup(pos_embed, pos_ids));

    forward_result res;
    if (cfg.freeze_layers == 0) res.hidden_freeze = x;

    for (int i = 0; i < cfg.n_layers; ++i) {
        tensor& ln1g = next();
        tensor& ln1b = next();
        tensor& wq = next();
        tensor& bq = next();
        tensor& wk = next();
        tensor& bk = next();
        tensor& wv = next();
        tensor& bv = next();
        tensor& wo = next();
        tensor& bo = next();
        tensor& ln2g = next();
        tensor& ln2b = next();
        tensor& w1 = next();
        tensor& b1 = next();
        tensor& w2 = next();
        tensor& b2 = next();

        tensor n1 = layernorm(x, ln1g, ln1b);
        tensor q = add(matmul(n1, wq), bq);
        tensor k = add(matmul(n1, wk), bk);
        tensor v = add(matmul(n1, wv), bv);
        tensor a = scaled_dot_attention(q, k, v, cfg.n_heads, batch);
        x = add(x, add(matmul(a, wo), bo));

        tensor n2 = layernorm(x, ln2g, ln2b);
        tensor u = gelu(add(matmul(n2, w1), b1));
        x = add(x, add(matmul(u, w2), b2));

        if (cfg.freeze_layers == i + 1) res.hidden_freeze = x;
    }

    tensor& lnfg = next();
    tensor& lnfb = next();
    tensor& unembed = next();
    res.hidden_final = layernorm(x, lnfg, lnfb);
    res.logits = matmul(res.hidden_final, unembed);
    return res;
}

} // namespace coop
