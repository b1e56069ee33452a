#pragma once

// Training loops and the cooperative pipeline:
//
//   1. shared init     one seeded model, briefly pretrained on a mixed stream
//   2. freeze depth    specialists keep the embeddings + first K blocks fixed
//   3. specialization  each copy trains independently on one domain
//   4. fusion          router combination happens post hoc (fusion.hpp)
//
// plus the reference baselines: a monolithic model trained on the mixture and
// a wider monolithic model with at least `min_ratio` times the parameters.
//
// Every chunk has exactly `context` tokens; a step feeds chunk[0..T-2] and
// predicts chunk[1..T-1], so all positions (separators included) carry loss.
// A non-finite loss or gradient aborts training with the last completed step
// in the message, and the model is left untouched by the failed step.

#include <cstdio>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "common.hpp"
#include "corpus.hpp"
#include "model.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace coop {

struct train_opts {
    long steps = 0;
    int batch_size = 8;
    adamw_opts optim;       // total_steps is overwritten with `steps`
    uint64_t seed = 0;      // batch sampling order
    long print_every = 0;   // 0 = silent
};

struct step_record {
    long step = 0;
    double loss = 0.0;
    double lr = 0.0;
};

struct training_log {
    std::vector<step_record> records; // one per step
    double final_loss = 0.0;
};

inline training_log train_lm(model& m, const std::vector<std::vector<int>>& chunks,
                             const train_opts& opts) {
    if (opts.steps < 0) throw validation_error(cat("train: negative step count ", opts.steps));
    if (opts.batch_size < 1)
        throw validation_error(cat("train: batch_size must be >= 1, got ", opts.batch_size));
    if (chunks.empty() && opts.steps > 0)
        throw validation_error("train: no training chunks");
    const size_t context = chunks.empty() ? 0 : chunks[0].size();
    for (const auto& c : chunks)
        if (c.size() != context)
            throw validation_error(cat("train: ragged chunk (", c.size(), " tokens, expected ",
                                       context, ")"));

    training_log log;
    if (opts.steps == 0) return log;

    adamw_opts aopts = opts.optim;
    aopts.total_steps = opts.steps;
    adamw opt(aopts);

    m.set_training(true);
    auto refs = m.param_refs();
    rng batch_rng(opts.seed);

    const int t_in = int(context) - 1;
    std::vector<int> tokens(size_t(opts.batch_size) * size_t(t_in));
    std::vector<int> targets(size_t(opts.batch_size) * size_t(t_in));

    for (long step = 1; step <= opts.steps; ++step) {
        for (int b = 0; b < opts.batch_size; ++b) {
            const auto& c = chunks[size_t(batch_rng.below(chunks.size()))];
            for (int t = 0; t < t_in; ++t) {
                tokens[size_t(b) * size_t(t_in) + size_t(t)] = c[size_t(t)];
                targets[size_t(b) * size_t(t_in) + size_t(t)] = c[size_t(t) + 1];
            }
        }
        forward_result fr = forward(m, tokens, opts.batch_size);
        tensor loss = cross_entropy(fr.logits, targets);
        const double loss_val = loss.data()[0];
        if (!std::isfinite(loss_val))
            throw divergence_error(cat("train: non-finite loss at step ", step,
                                       " (last completed step ", step - 1, ")"));
        backward(loss);
        try {
            opt.step(refs);
        } catch (const divergence_error& e) {
            throw divergence_error(cat(e.what(), " (last completed step ", step - 1, ")"));
        }
        log.records.push_back({step, loss_val, opt.effective_lr(step)});
        log.final_loss = loss_val;
        if (opts.print_every > 0 && (step % opts.print_every == 0 || step == opts.steps))
            std::printf("  step %ld/%ld  loss %.4f  lr %.2e\n", step, opts.steps, loss_val,
                        opt.effective_lr(step));
    }
    m.set_training(false);
    return log;
}

// phase 1: shared starting point, pretrained on a stratified domain mixture
inline checkpoint make_base(const model_config& cfg, uint64_t init_seed,
                            const std::vector<std::vector<int>>& mixture,
                            const train_opts& opts, training_log* log = nullptr) {
    model_config base_cfg = cfg;
    base_cfg.freeze_layers = 0; // nothing is frozen while making the base
    model m = init_model(base_cfg, init_seed);
    training_log l = train_lm(m, mixture, opts);
    if (log) *log = std::move(l);
    provenance prov;
    prov.seed = int64_t(init_seed);
    prov.train_steps = opts.steps;
    prov.method = "base";
    prov.param_ratio = 1.0;
    return to_checkpoint(m, prov);
}

// phases 2+3: copy the base, freeze the bottom K blocks (and embeddings),
// train on a single domain. The frozen arrays stay bit-identical to the base.
inline checkpoint train_specialist(const checkpoint& base, const domain_data& domain,
                                   int freeze_k, const train_opts& opts,
                                   training_log* log = nullptr) {
    model m = to_model(base);
    m.cfg.freeze_layers = freeze_k;
    m.cfg.validate();
    training_log l = train_lm(m, domain.train, opts);
    if (log) *log = std::move(l);
    provenance prov;
    prov.base_digest = base.digest;
    prov.seed = int64_t(opts.seed);
    prov.train_steps = opts.steps;
    prov.domain_label = domain.spec.name;
    prov.method = "specialist";
    prov.param_ratio = 1.0;
    return to_checkpoint(m, prov);
}

// baseline: one fresh model trained on the full mixture
inline checkpoint train_monolithic(const model_config& cfg, uint64_t init_seed,
                                   const std::vector<std::vector<int>>& mixture,
                                   const train_opts& opts, training_log* log = nullptr) {
    model_config mono_cfg = cfg;
    mono_cfg.freeze_layers = 0;
    model m = init_model(mono_cfg, init_seed);
    training_log l = train_lm(m, mixture, opts);
    if (log) *log = std::move(l);
    provenance prov;
    prov.seed = int64_t(init_seed);
    prov.train_steps = opts.steps;
    prov.method = "monolithic";
    prov.param_ratio = 1.0;
    return to_checkpoint(m, prov);
}

// smallest width (multiple of n_heads) whose parameter count reaches
// min_ratio times the reference model's
inline model_config widen_config(const model_config& ref, double min_ratio) {
    if (min_ratio <= 1.0)
        throw validation_error(cat("widen_config: ratio must exceed 1, got ", min_ratio));
    model_config w = ref;
    w.freeze_layers = 0;
    const double target = min_ratio * double(ref.param_count());
    while (double(w.param_count()) < target) w.d_model += ref.n_heads;
    return w;
}

// baseline: a wider monolithic model with >= min_ratio x the parameters
inline checkpoint train_wider(const model_config& ref, double min_ratio, uint64_t init_seed,
                              const std::vector<std::vector<int>>& mixture,
                              const train_opts& opts, training_log* log = nullptr) {
    const model_config wide = widen_config(ref, min_ratio);
    model m = init_model(wide, init_seed);
    training_log l = train_lm(m, mixture, opts);
    if (log) *log = std::move(l);
    provenance prov;
    prov.seed = int64_t(init_seed);
    prov.train_steps = opts.steps;
    prov.method = "wider";
    prov.param_ratio = double(wide.param_count()) / double(ref.param_count());
    return to_checkpoint(m, prov);
}

} // namespace coop
