#pragma once

// Per-domain evaluation protocol and derived metrics.
//
// Every domain is evaluated separately on its own held-out chunks, in
// generation order, and the headline number is the equal-weight mean of the
// per-domain losses (nats). Chunks are forwarded one at a time, so the
// requested batch size can never perturb results — it is recorded as protocol
// metadata only. The alternative token-weighted pooled mean is also provided
// because the two disagree whenever domains contribute unequal token counts;
// the per-domain protocol is the canonical one.

#include <cmath>
#include <string>
#include <vector>

#include "common.hpp"
#include "corpus.hpp"
#include "fusion.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace coop {

namespace eval_detail {

inline void check_set(const std::vector<std::vector<int>>& chunks, int batch_size) {
    if (chunks.empty()) throw validation_error("evaluation: held-out set is empty");
    if (batch_size < 1)
        throw validation_error(cat("evaluation: batch_size must be >= 1, got ", batch_size));
    for (const auto& c : chunks)
        if (c.size() != chunks[0].size() || c.size() < 2)
            throw validation_error(cat("evaluation: ragged or undersized chunk (", c.size(),
                                       " tokens)"));
}

inline void split_chunk(const std::vector<int>& c, std::vector<int>& tokens,
                        std::vector<int>& targets) {
    const size_t t_in = c.size() - 1;
    tokens.assign(c.begin(), c.begin() + long(t_in));
    targets.assign(c.begin() + 1, c.end());
}

} // namespace eval_detail

// token-averaged cross-entropy (nats) of a single model over a held-out set
inline double eval_loss(model& m, const std::vector<std::vector<int>>& chunks,
                        int batch_size = 4) {
    eval_detail::check_set(chunks, batch_size);
    m.set_training(false);
    std::vector<int> tokens, targets;
    double total = 0.0;
    for (const auto& c : chunks) {
        eval_detail::split_chunk(c, tokens, targets);
        total += cross_entropy(forward(m, tokens).logits, targets).data()[0];
    }
    return total / double(chunks.size()); // chunks share a length, so this is the token mean
}

// same protocol through a fused model, honoring its inference mode
inline double eval_loss(fused_model& fm, const std::vector<std::vector<int>>& chunks,
                        int batch_size = 4) {
    eval_detail::check_set(chunks, batch_size);
    std::vector<int> tokens, targets;
    double total = 0.0;
    for (const auto& c : chunks) {
        eval_detail::split_chunk(c, tokens, targets);
        tensor logits = fm.mode == fuse_mode::sparse_top1 ? sparse_forward(fm, tokens).logits
                                                          : fused_forward(fm, tokens).logits;
        total += cross_entropy(logits, targets).data()[0];
    }
    return total / double(chunks.size());
}

inline double equal_weight(const std::vector<double>& losses) {
    if (losses.empty()) throw validation_error("equal_weight: no domain losses");
    double s = 0.0;
    for (double l : losses) s += l;
    return s / double(losses.size());
}

// pooled alternative: weights each domain by its token count; disagrees with
// equal_weight whenever counts are unequal
inline double token_weighted_mean(const std::vector<double>& losses,
                                  const std::vector<long>& token_counts) {
    if (losses.empty() || losses.size() != token_counts.size())
        throw validation_error(cat("token_weighted_mean: ", losses.size(), " losses vs ",
                                   token_counts.size(), " counts"));
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < losses.size(); ++i) {
        if (token_counts[i] <= 0)
            throw validation_error("token_weighted_mean: non-positive token count");
        num += losses[i] * double(token_counts[i]);
        den += double(token_counts[i]);
    }
    return num / den;
}

// signed percentage; positive means `method` beats `baseline`
inline double improvement(double baseline_loss, double method_loss) {
    if (!(baseline_loss > 0.0))
        throw validation_error(cat("improvement: baseline loss must be positive, got ",
                                   baseline_loss));
    return 100.0 * (baseline_loss - method_loss) / baseline_loss;
}

inline double perplexity(double loss) {
    if (!std::isfinite(loss))
        throw validation_error(cat("perplexity: loss must be finite, got ", loss));
    return std::exp(loss);
}

// rows = specialists, columns = domains
inline std::vector<std::vector<double>> cross_domain_matrix(
    std::vector<model>& specialists, const std::vector<domain_data>& domains,
    int batch_size = 4) {
    if (specialists.empty() || domains.empty())
        throw validation_error("cross_domain_matrix: need at least one specialist and one domain");
    std::vector<std::vector<double>> m;
    for (auto& s : specialists) {
        std::vector<double> row;
        for (const auto& d : domains) row.push_back(eval_loss(s, d.heldout, batch_size));
        m.push_back(std::move(row));
    }
    return m;
}

struct oracle_result {
    std::vector<int> assignment; // domain index -> specialist index
    double ew_loss = 0.0;
};

// best static per-domain assignment; ties go to the lowest specialist index
inline oracle_result oracle_from_matrix(const std::vector<std::vector<double>>& m) {
    if (m.empty() || m[0].empty()) throw validation_error("oracle: empty loss matrix");
    const size_t n_spec = m.size(), n_dom = m[0].size();
    for (const auto& row : m)
        if (row.size() != n_dom) throw validation_error("oracle: ragged loss matrix");
    oracle_result out;
    std::vector<double> best(n_dom);
    for (size_t d = 0; d < n_dom; ++d) {
        size_t arg = 0;
        for (size_t s = 1; s < n_spec; ++s)
            if (m[s][d] < m[arg][d]) arg = s;
        out.assignment.push_back(int(arg));
        best[d] = m[arg][d];
    }
    out.ew_loss = equal_weight(best);
    return out;
}

inline oracle_result oracle_dispatch(std::vector<model>& specialists,
                                     const std::vector<domain_data>& domains,
                                     int batch_size = 4) {
    return oracle_from_matrix(cross_domain_matrix(specialists, domains, batch_size));
}

struct routing_stats {
    std::vector<std::pair<std::string, std::vector<double>>> per_domain_gate_mass;
    double switches_per_prompt = 0.0; // argmax changes between adjacent positions
    double max_gate_mean = 0.0;       // mean over positions of the largest gate
};

// count of positions whose argmax expert differs from the previous position
inline long count_switches(const std::vector<int>& top1) {
    long s = 0;
    for (size_t t = 1; t < top1.size(); ++t)
        if (top1[t] != top1[t - 1]) ++s;
    return s;
}

inline routing_stats routing_diagnostics(fused_model& fm, const std::vector<domain_data>& domains) {
    if (fm.mode == fuse_mode::sparse_top1)
        throw validation_error("routing_diagnostics: needs per-position gates (soft or hard mode)");
    routing_stats rs;
    const int n = fm.gate.n_experts;
    long total_prompts = 0, total_switches = 0, total_rows = 0;
    double max_sum = 0.0;
    std::vector<int> tokens, targets;
    for (const auto& d : domains) {
        eval_detail::check_set(d.heldout, 4);
        std::vector<double> mass(size_t(n), 0.0);
        long rows_in_domain = 0;
        for (const auto& c : d.heldout) {
            eval_detail::split_chunk(c, tokens, targets);
            fused_output out = fused_forward(fm, tokens);
            const int rows = out.gates.shape[0];
            for (int t = 0; t < rows; ++t) {
                const double* row = out.gates.data().data() + size_t(t) * size_t(n);
                double mx = row[0];
                for (int i = 0; i < n; ++i) {
                    mass[size_t(i)] += row[i];
                    if (row[i] > mx) mx = row[i];
                }
                max_sum += mx;
            }
            total_switches += count_switches(out.top1);
            total_rows += rows;
            rows_in_domain += rows;
            ++total_prompts;
        }
        for (auto& v : mass) v /= double(rows_in_domain);
        rs.per_domain_gate_mass.push_back({d.spec.name, std::move(mass)});
    }
    rs.switches_per_prompt = double(total_switches) / double(total_prompts);
    rs.max_gate_mean = max_sum / double(total_rows);
    return rs;
}

// percentage of positions whose two expert choices coincide
inline double match_pct(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || a.size() != b.size())
        throw validation_error(cat("match_pct: ", a.size(), " vs ", b.size(), " positions"));
    long agree = 0;
    for (size_t t = 0; t < a.size(); ++t) agree += a[t] == b[t] ? 1 : 0;
    return 100.0 * double(agree) / double(a.size());
}

// fraction (as a percentage) of positions where the sparse pass picks the
// same top-1 expert as the dense pass
inline double sparse_agreement(fused_model& fm, const std::vector<std::vector<int>>& chunks) {
    eval_detail::check_set(chunks, 4);
    const fuse_mode saved = fm.mode;
    std::vector<int> dense_all, sparse_all;
    std::vector<int> tokens, targets;
    try {
        for (const auto& c : chunks) {
            eval_detail::split_chunk(c, tokens, targets);
            fm.mode = fuse_mode::soft;
            fused_output dense = fused_forward(fm, tokens);
            fm.mode = fuse_mode::sparse_top1;
            sparse_output sp = sparse_forward(fm, tokens);
            dense_all.insert(dense_all.end(), dense.top1.begin(), dense.top1.end());
            sparse_all.insert(sparse_all.end(), sp.top1.begin(), sp.top1.end());
        }
    } catch (...) {
        fm.mode = saved;
        throw;
    }
    fm.mode = saved;
    return match_pct(dense_all, sparse_all);
}

struct eval_report {
    std::vector<std::pair<std::string, double>> per_domain_loss;
    double ew_loss = 0.0;
    double vs_base_pct = 0.0;
    double vs_best_specialist_pct = 0.0;
    bool has_routing = false;
    routing_stats routing;
};

inline eval_report make_report(const std::vector<std::string>& domain_names,
                               const std::vector<double>& losses, double base_ew,
                               double best_specialist_ew, const routing_stats* rs = nullptr) {
    if (domain_names.size() != losses.size())
        throw validation_error(cat("report: ", domain_names.size(), " names for ",
                                   losses.size(), " losses"));
    eval_report r;
    for (size_t i = 0; i < losses.size(); ++i)
        r.per_domain_loss.push_back({domain_names[i], losses[i]});
    r.ew_loss = equal_weight(losses);
    r.vs_base_pct = improvement(base_ew, r.ew_loss);
    r.vs_best_specialist_pct = improvement(best_specialist_ew, r.ew_loss);
    if (rs) {
        r.has_routing = true;
        r.routing = *rs;
    }
    return r;
}

} // namespace coop
