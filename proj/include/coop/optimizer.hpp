#pragma once

// AdamW with decoupled weight decay and linear learning-rate warmup.
//
// effective lr at step t (1-based):  lr * min(1, t / (warmup_fraction * total_steps))
//
// Decay is decoupled (applied directly to the parameter, not through the
// moments) and skipped for 1-d arrays (biases, norm gains/shifts), matching
// common transformer practice. A non-finite gradient aborts the step before
// any parameter is touched and names the offending array. Gradients are zeroed
// after a successful step.

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"
#include "tensor.hpp"

namespace coop {

struct adamw_opts {
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
    double warmup_fraction = 0.1;
    long total_steps = 1;
};

struct param_ref {
    std::string name;
    tensor* t = nullptr;
    bool trainable = true;
};

class adamw {
  public:
    explicit adamw(adamw_opts opts) : opts_(opts) {
        if (opts_.total_steps < 1)
            throw validation_error(cat("adamw: total_steps must be >= 1, got ",
                                       opts_.total_steps));
        if (opts_.lr <= 0) throw validation_error("adamw: lr must be positive");
    }

    long step_count() const { return step_count_; }
    const adamw_opts& opts() const { return opts_; }

    double effective_lr(long step) const {
        const double warm = opts_.warmup_fraction * double(opts_.total_steps);
        const double factor = warm > 0 ? std::min(1.0, double(step) / warm) : 1.0;
        return opts_.lr * factor;
    }

    void step(std::vector<param_ref>& params) {
        if (m_.empty()) {
            m_.resize(params.size());
            v_.resize(params.size());
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(params[i].t->data().size(), 0.0);
                v_[i].assign(params[i].t->data().size(), 0.0);
            }
        }
        if (m_.size() != params.size())
            throw validation_error("adamw: parameter list changed between steps");

        const long t = step_count_ + 1;

        // abort before mutating anything if any gradient is non-finite
        for (auto& p : params) {
            if (!p.trainable || !p.t->has_grad()) continue;
            for (double g : p.t->grad())
                if (!std::isfinite(g))
                    throw divergence_error(cat("adamw: non-finite gradient in '", p.name,
                                               "' at step ", t));
        }

        const double lr_t = effective_lr(t);
        const double bc1 = 1.0 - std::pow(opts_.beta1, double(t));
        const double bc2 = 1.0 - std::pow(opts_.beta2, double(t));
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            if (!p.trainable) continue;
            const bool decay = p.t->shape.size() >= 2;
            auto& data = p.t->data();
            const size_t n = data.size();
            const double* g = p.t->has_grad() ? p.t->grad().data() : nullptr;
            double* m = m_[i].data();
            double* v = v_[i].data();
            for (size_t j = 0; j < n; ++j) {
                const double gj = g ? g[j] : 0.0;
                m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
                v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                data[j] -= lr_t * mhat / (std::sqrt(vhat) + opts_.eps);
                if (decay) data[j] -= lr_t * opts_.weight_decay * data[j];
            }
            p.t->zero_grad();
        }
        step_count_ = t;
    }

  private:
    adamw_opts opts_;
    long step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

} // namespace coop
