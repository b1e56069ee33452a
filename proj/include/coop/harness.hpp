#pragma once
// Experiment orchestration: the canonical cooperative run (multi-seed, all
// baselines), parameter sweeps (crossover, scaling, shared-init, hetero),
// results persistence as JSON/CSV under one output directory, and the
// self-audit that re-derives every stored statistic from its inputs.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "analysis.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "evaluation.hpp"
#include "fusion.hpp"
#include "model.hpp"
#include "protocol.hpp"

namespace coop {

using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------- plumbing

namespace harness_detail {

// fixed salts derive one independent stream per pipeline stage from the run
// seed, so adding a stage never perturbs the draws of another
constexpr uint64_t base_mix_salt = 0xba5e;
constexpr uint64_t router_mix_salt = 0xf00d;
constexpr uint64_t router_train_salt = 0x9a7e;
constexpr uint64_t monolithic_salt = 0x31337;
constexpr uint64_t wider_salt = 0x71de;

inline uint64_t specialist_seed(uint64_t run_seed, size_t i) {
    return run_seed ^ mix64(uint64_t(i) + 1);
}

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / double(v.size());
}

// population standard deviation: defined for a single seed, and the audit
// recomputes it with the same convention
inline double std_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / double(v.size()));
}

inline std::string fmt(double v) { return config_detail::fmt_double(v); }

inline double now_sec() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

} // namespace harness_detail

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw validation_error(cat("harness: cannot open '", p.string(), "' for writing"));
    out << text;
    out.flush();
    if (!out) throw validation_error(cat("harness: short write to '", p.string(), "'"));
}

inline std::string read_text_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw validation_error(cat("harness: cannot open '", p.string(), "'"));
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ------------------------------------------------------------- run manifest

struct run_manifest {
    int format_version = 1;
    std::string name;
    std::string suite; // core | crossover | scaling | shared_init | hetero
    std::string config_text;
    std::vector<uint64_t> seeds;
    std::vector<std::pair<std::string, std::string>> digests; // label -> hex digest
    std::vector<std::string> report_files;                    // relative to output_dir
    std::vector<std::pair<std::string, double>> timings_sec;
    std::vector<std::string> errors; // "<kind>: <stage>: <message>"
};

inline ordered_json manifest_json(const run_manifest& m) {
    ordered_json j;
    j["format_version"] = m.format_version;
    j["name"] = m.name;
    j["suite"] = m.suite;
    j["config_text"] = m.config_text;
    j["seeds"] = m.seeds;
    ordered_json dg = ordered_json::object();
    for (const auto& [label, digest] : m.digests) dg[label] = digest;
    j["digests"] = dg;
    j["report_files"] = m.report_files;
    ordered_json tm = ordered_json::object();
    for (const auto& [stage, sec] : m.timings_sec) tm[stage] = sec;
    j["timings_sec"] = tm;
    j["errors"] = m.errors;
    return j;
}

// every referenced report must exist by the time the manifest lands on disk
inline void save_manifest(const run_manifest& m, const std::filesystem::path& dir) {
    for (const auto& rel : m.report_files)
        if (!std::filesystem::exists(dir / rel))
            throw validation_error(cat("harness: manifest references missing file '", rel, "'"));
    write_text_file(dir / "manifest.json", manifest_json(m).dump(2) + "\n");
}

// ------------------------------------------------------------ core pipeline

// everything one seed produced, kept in memory so callers (tests, sweeps) can
// reuse the trained artifacts without reloading from disk
struct seed_outcome {
    uint64_t seed = 0;
    checkpoint base;
    std::vector<checkpoint> specialists;
    router gate;
    std::vector<double> base_losses;          // per domain
    std::vector<std::vector<double>> matrix;  // specialists x domains
    oracle_result oracle;
    std::vector<double> fused_losses;         // trained router, soft
    routing_stats routing;
    ordered_json report;
};

struct core_result {
    run_manifest manifest;
    std::vector<seed_outcome> per_seed;
    ordered_json aggregate;
};

namespace harness_detail {

inline train_opts make_train_opts(const cooperative_config& c, long steps, uint64_t seed) {
    train_opts t;
    t.steps = steps;
    t.batch_size = c.batch_size;
    t.seed = seed;
    t.optim.lr = c.lr;
    t.optim.weight_decay = c.weight_decay;
    t.optim.warmup_fraction = c.warmup_frac;
    return t;
}

inline router_train_opts make_router_opts(const router_config& rc, uint64_t seed) {
    router_train_opts o;
    o.steps = rc.steps;
    o.batch_size = rc.batch_size;
    o.lr = rc.lr;
    o.weight_decay = rc.weight_decay;
    o.seed = seed;
    return o;
}

inline std::vector<double> eval_per_domain(model& m, const std::vector<domain_data>& doms) {
    std::vector<double> out;
    for (const auto& d : doms) out.push_back(eval_loss(m, d.heldout));
    return out;
}

inline std::vector<double> eval_per_domain(fused_model& fm, const std::vector<domain_data>& doms) {
    std::vector<double> out;
    for (const auto& d : doms) out.push_back(eval_loss(fm, d.heldout));
    return out;
}

inline ordered_json losses_json(const std::vector<double>& per_domain) {
    ordered_json j;
    j["per_domain_loss"] = per_domain;
    j["ew_loss"] = equal_weight(per_domain);
    return j;
}

inline double best_specialist_ew(const std::vector<std::vector<double>>& matrix) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& row : matrix) best = std::min(best, equal_weight(row));
    return best;
}

inline std::string matrix_csv(const std::vector<std::string>& domains,
                              const std::vector<std::vector<double>>& matrix) {
    std::ostringstream o;
    o << "specialist";
    for (const auto& d : domains) o << "," << d;
    o << "\n";
    for (size_t i = 0; i < matrix.size(); ++i) {
        o << domains[i];
        for (double v : matrix[i]) o << "," << fmt(v);
        o << "\n";
    }
    return o.str();
}

} // namespace harness_detail

inline std::vector<domain_data> generate_domains(const experiment_config& cfg) {
    std::vector<domain_data> doms;
    for (const auto& d : cfg.domains) doms.push_back(generate_domain(d, cfg.model.context));
    return doms;
}

inline std::vector<std::vector<int>> equal_mixture(const std::vector<domain_data>& doms,
                                                   int total, uint64_t seed) {
    std::vector<const domain_data*> ptrs;
    for (const auto& d : doms) ptrs.push_back(&d);
    const std::vector<double> props(doms.size(), 1.0 / double(doms.size()));
    return mixed_stream(ptrs, props, total, seed);
}

// one seed of the cooperative pipeline: base -> N specialists -> router ->
// fused + baselines -> report JSON. Pure apart from the passed-in corpora.
inline seed_outcome run_seed(const experiment_config& cfg, const std::vector<domain_data>& doms,
                             uint64_t seed) {
    namespace hd = harness_detail;
    seed_outcome out;
    out.seed = seed;

    auto base_mix = equal_mixture(doms, cfg.coop.mixture_chunks, seed ^ hd::base_mix_salt);
    out.base = make_base(cfg.model, seed, base_mix,
                         hd::make_train_opts(cfg.coop, cfg.coop.pretrain_steps, seed));

    for (size_t i = 0; i < doms.size(); ++i)
        out.specialists.push_back(
            train_specialist(out.base, doms[i], cfg.coop.freeze_layers,
                             hd::make_train_opts(cfg.coop, cfg.coop.specialist_steps,
                                                 hd::specialist_seed(seed, i))));

    model base_model = to_model(out.base);
    base_model.set_training(false);
    out.base_losses = hd::eval_per_domain(base_model, doms);

    std::vector<model> spec_models;
    for (auto& s : out.specialists) spec_models.push_back(to_model(s));
    for (auto& m : spec_models) m.set_training(false);
    out.matrix = cross_domain_matrix(spec_models, doms);
    out.oracle = oracle_from_matrix(out.matrix);

    auto router_mix = equal_mixture(doms, cfg.router.mixture_chunks, seed ^ hd::router_mix_salt);
    out.gate = train_router(out.specialists, &out.base, cfg.router.kind, cfg.router.input,
                            router_mix, hd::make_router_opts(cfg.router,
                                                             seed ^ hd::router_train_salt));

    const double base_ew = equal_weight(out.base_losses);
    const double best_spec_ew = hd::best_specialist_ew(out.matrix);

    ordered_json rep;
    rep["format_version"] = 1;
    rep["suite"] = "core";
    rep["seed"] = seed;
    rep["eval_batch_size"] = 4;
    std::vector<std::string> domain_names;
    for (const auto& d : cfg.domains) domain_names.push_back(d.name);
    rep["domains"] = domain_names;

    ordered_json jb = hd::losses_json(out.base_losses);
    jb["digest"] = out.base.digest;
    jb["train_steps"] = cfg.coop.pretrain_steps;
    rep["base"] = jb;

    ordered_json jspecs = ordered_json::array();
    std::vector<double> divergences;
    for (size_t i = 0; i < out.specialists.size(); ++i) {
        ordered_json js;
        js["domain"] = domain_names[i];
        js["digest"] = out.specialists[i].digest;
        js["per_domain_loss"] = out.matrix[i];
        js["ew_loss"] = equal_weight(out.matrix[i]);
        js["own_loss"] = out.matrix[i][i];
        const double div = divergence(out.base_losses[i], out.matrix[i][i]);
        js["divergence_pct"] = div;
        divergences.push_back(div);
        jspecs.push_back(js);
    }
    rep["specialists"] = jspecs;
    rep["best_specialist_ew"] = best_spec_ew;
    rep["mean_divergence_pct"] = hd::mean_of(divergences);

    {
        fused_model fm = make_fused(out.specialists, out.gate, fuse_mode::soft, &out.base);
        out.fused_losses = hd::eval_per_domain(fm, doms);
        out.routing = routing_diagnostics(fm, doms);
    }
    const double fused_ew = equal_weight(out.fused_losses);
    ordered_json jf = hd::losses_json(out.fused_losses);
    jf["vs_base_pct"] = improvement(base_ew, fused_ew);
    jf["vs_best_specialist_pct"] = improvement(best_spec_ew, fused_ew);
    ordered_json jr = ordered_json::object();
    {
        ordered_json mass = ordered_json::object();
        for (const auto& [dom, gates] : out.routing.per_domain_gate_mass) mass[dom] = gates;
        jr["per_domain_gate_mass"] = mass;
        jr["switches_per_prompt"] = out.routing.switches_per_prompt;
        jr["max_gate_mean"] = out.routing.max_gate_mean;
    }
    jf["routing"] = jr;
    rep["fused"] = jf;

    {
        ordered_json jo;
        std::vector<double> opd;
        for (size_t d = 0; d < doms.size(); ++d)
            opd.push_back(out.matrix[size_t(out.oracle.assignment[d])][d]);
        jo["assignment"] = out.oracle.assignment;
        jo["per_domain_loss"] = opd;
        jo["ew_loss"] = out.oracle.ew_loss;
        if (cfg.baselines.oracle) rep["oracle"] = jo;
    }

    if (cfg.baselines.uniform) {
        router uni = make_router(router_kind::uniform, cfg.router.input,
                                 int(out.specialists.size()), cfg.model.d_model);
        fused_model fu = make_fused(out.specialists, std::move(uni), fuse_mode::soft, &out.base);
        rep["uniform"] = hd::losses_json(hd::eval_per_domain(fu, doms));
    }
    if (cfg.baselines.hard) {
        fused_model fh = make_fused(out.specialists, out.gate, fuse_mode::hard, &out.base);
        rep["hard"] = hd::losses_json(hd::eval_per_domain(fh, doms));
    }
    if (cfg.baselines.sparse) {
        fused_model fs = make_fused(out.specialists, out.gate, fuse_mode::sparse_top1, &out.base);
        ordered_json js = hd::losses_json(hd::eval_per_domain(fs, doms));
        std::vector<std::vector<int>> all_heldout;
        for (const auto& d : doms)
            all_heldout.insert(all_heldout.end(), d.heldout.begin(), d.heldout.end());
        js["agreement_pct"] = sparse_agreement(fs, all_heldout);
        rep["sparse"] = js;
    }
    if (cfg.baselines.weight_avg) {
        checkpoint avg = average_checkpoints(out.specialists);
        model am = to_model(avg);
        am.set_training(false);
        ordered_json ja = hd::losses_json(hd::eval_per_domain(am, doms));
        ja["digest"] = avg.digest;
        rep["weight_avg"] = ja;
    }
    const long summed_budget = cfg.coop.specialist_steps * long(doms.size());
    if (cfg.baselines.monolithic) {
        checkpoint mono = train_monolithic(cfg.model, seed ^ hd::monolithic_salt, base_mix,
                                           hd::make_train_opts(cfg.coop, summed_budget,
                                                               seed ^ hd::monolithic_salt));
        model mm = to_model(mono);
        mm.set_training(false);
        ordered_json jm = hd::losses_json(hd::eval_per_domain(mm, doms));
        jm["digest"] = mono.digest;
        jm["train_steps"] = summed_budget;
        rep["monolithic"] = jm;
    }
    if (cfg.baselines.wider) {
        checkpoint wide = train_wider(cfg.model, 3.0, seed ^ hd::wider_salt, base_mix,
                                      hd::make_train_opts(cfg.coop, summed_budget,
                                                          seed ^ hd::wider_salt));
        model wm = to_model(wide);
        wm.set_training(false);
        ordered_json jw = hd::losses_json(hd::eval_per_domain(wm, doms));
        jw["digest"] = wide.digest;
        jw["param_ratio"] = wide.prov.param_ratio;
        jw["train_steps"] = summed_budget;
        rep["wider"] = jw;
    }

    const double mean_div = rep["mean_divergence_pct"].get<double>();
    if (mean_div > 0.0)
        rep["conversion_rate"] =
            conversion_rate(rep["fused"]["vs_base_pct"].get<double>(), mean_div);

    out.report = std::move(rep);
    return out;
}

// aggregate metric extraction: metric name -> value inside one seed report
inline std::optional<double> report_metric(const ordered_json& rep, const std::string& name) {
    auto path = [&](std::initializer_list<const char*> keys) -> std::optional<double> {
        const ordered_json* cur = &rep;
        for (const char* k : keys) {
            if (!cur->contains(k)) return std::nullopt;
            cur = &(*cur)[k];
        }
        return cur->get<double>();
    };
    if (name == "base_ew_loss") return path({"base", "ew_loss"});
    if (name == "fused_ew_loss") return path({"fused", "ew_loss"});
    if (name == "fused_vs_base_pct") return path({"fused", "vs_base_pct"});
    if (name == "fused_vs_best_specialist_pct") return path({"fused", "vs_best_specialist_pct"});
    if (name == "best_specialist_ew") return path({"best_specialist_ew"});
    if (name == "mean_divergence_pct") return path({"mean_divergence_pct"});
    if (name == "conversion_rate") return path({"conversion_rate"});
    if (name == "oracle_ew_loss") return path({"oracle", "ew_loss"});
    if (name == "uniform_ew_loss") return path({"uniform", "ew_loss"});
    if (name == "hard_ew_loss") return path({"hard", "ew_loss"});
    if (name == "sparse_ew_loss") return path({"sparse", "ew_loss"});
    if (name == "sparse_agreement_pct") return path({"sparse", "agreement_pct"});
    if (name == "weight_avg_ew_loss") return path({"weight_avg", "ew_loss"});
    if (name == "monolithic_ew_loss") return path({"monolithic", "ew_loss"});
    if (name == "wider_ew_loss") return path({"wider", "ew_loss"});
    return std::nullopt;
}

inline const std::vector<std::string>& aggregate_metric_names() {
    static const std::vector<std::string> names = {
        "base_ew_loss", "fused_ew_loss", "fused_vs_base_pct", "fused_vs_best_specialist_pct",
        "best_specialist_ew", "mean_divergence_pct", "conversion_rate", "oracle_ew_loss",
        "uniform_ew_loss", "hard_ew_loss", "sparse_ew_loss", "sparse_agreement_pct",
        "weight_avg_ew_loss", "monolithic_ew_loss", "wider_ew_loss"};
    return names;
}

inline ordered_json aggregate_reports(const experiment_config& cfg,
                                      const std::vector<const ordered_json*>& reports) {
    namespace hd = harness_detail;
    ordered_json agg;
    agg["format_version"] = 1;
    agg["suite"] = "core";
    agg["name"] = cfg.name;
    std::vector<uint64_t> seeds;
    for (const auto* r : reports) seeds.push_back((*r)["seed"].get<uint64_t>());
    agg["seeds"] = seeds;
    ordered_json metrics = ordered_json::object();
    for (const auto& name : aggregate_metric_names()) {
        std::vector<double> vals;
        for (const auto* r : reports) {
            auto v = report_metric(*r, name);
            if (v) vals.push_back(*v);
        }
        if (vals.size() != reports.size()) continue; // metric absent for this config
        ordered_json m;
        m["mean"] = hd::mean_of(vals);
        m["std"] = hd::std_of(vals);
        m["per_seed"] = vals;
        metrics[name] = m;
    }
    agg["metrics"] = metrics;
    return agg;
}

inline core_result run_core(const experiment_config& cfg) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    cfg.validate();
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);

    core_result res;
    res.manifest.name = cfg.name;
    res.manifest.suite = "core";
    res.manifest.config_text = write_config(cfg);
    res.manifest.seeds = cfg.seeds;
    write_text_file(dir / "config.txt", res.manifest.config_text);

    const double t_start = hd::now_sec();
    std::vector<domain_data> doms = generate_domains(cfg);
    res.manifest.timings_sec.push_back({"corpus", hd::now_sec() - t_start});

    std::ostringstream scatter;
    scatter << "seed,mean_divergence_pct,fused_vs_base_pct,fused_vs_best_specialist_pct\n";

    for (uint64_t seed : cfg.seeds) {
        const std::string seed_dir = cat("seed_", seed);
        const double t0 = hd::now_sec();
        try {
            seed_outcome so = run_seed(cfg, doms, seed);

            fs::create_directories(dir / seed_dir);
            save_checkpoint(so.base, (dir / seed_dir / "base.ckpt").string());
            res.manifest.digests.push_back({cat(seed_dir, "/base"), so.base.digest});
            for (size_t i = 0; i < so.specialists.size(); ++i) {
                const std::string label = cat("specialist_", cfg.domains[i].name);
                save_checkpoint(so.specialists[i],
                                (dir / seed_dir / (label + ".ckpt")).string());
                res.manifest.digests.push_back({cat(seed_dir, "/", label),
                                                so.specialists[i].digest});
            }
            write_text_file(dir / seed_dir / "report.json", so.report.dump(2) + "\n");
            std::vector<std::string> dnames;
            for (const auto& d : cfg.domains) dnames.push_back(d.name);
            write_text_file(dir / seed_dir / "cross_domain_matrix.csv",
                            hd::matrix_csv(dnames, so.matrix));
            res.manifest.report_files.push_back(cat(seed_dir, "/report.json"));

            scatter << seed << "," << hd::fmt(so.report["mean_divergence_pct"].get<double>())
                    << "," << hd::fmt(so.report["fused"]["vs_base_pct"].get<double>()) << ","
                    << hd::fmt(so.report["fused"]["vs_best_specialist_pct"].get<double>())
                    << "\n";
            res.per_seed.push_back(std::move(so));
        } catch (const divergence_error& e) {
            res.manifest.errors.push_back(cat("divergence: ", seed_dir, ": ", e.what()));
        } catch (const validation_error& e) {
            res.manifest.errors.push_back(cat("validation: ", seed_dir, ": ", e.what()));
        }
        res.manifest.timings_sec.push_back({seed_dir, hd::now_sec() - t0});
    }

    if (res.per_seed.empty())
        throw validation_error(cat("run_core: every seed failed; first error: ",
                                   res.manifest.errors.empty() ? "(none recorded)"
                                                               : res.manifest.errors[0]));

    std::vector<const ordered_json*> reports;
    for (const auto& so : res.per_seed) reports.push_back(&so.report);
    res.aggregate = aggregate_reports(cfg, reports);
    write_text_file(dir / "aggregate.json", res.aggregate.dump(2) + "\n");
    res.manifest.report_files.push_back("aggregate.json");
    write_text_file(dir / "divergence_gain.csv", scatter.str());
    res.manifest.timings_sec.push_back({"total", hd::now_sec() - t_start});
    save_manifest(res.manifest, dir);
    return res;
}

// -------------------------------------------------------------- crossover

struct crossover_cell {
    long specialist_steps = 0;
    int freeze_k = 0;
    double fused_ew = 0.0;
    double gain_vs_base_pct = 0.0;
    bool leader = false; // best K at this step count
};

struct crossover_result {
    run_manifest manifest;
    std::vector<crossover_cell> cells;
};

// grid over specialist training budget x freeze depth on the first seed;
// each cell is a fully independent pipeline from the shared base
inline crossover_result run_crossover(const experiment_config& cfg,
                                      const std::vector<long>& step_grid,
                                      const std::vector<int>& freeze_grid) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    cfg.validate();
    if (step_grid.empty() || freeze_grid.empty())
        throw validation_error("run_crossover: step and freeze grids must be non-empty");
    for (int k : freeze_grid)
        if (k < 0 || k > cfg.model.n_layers)
            throw validation_error(cat("run_crossover: freeze depth ", k, " outside [0, ",
                                       cfg.model.n_layers, "]"));
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    const uint64_t seed = cfg.seeds[0];

    crossover_result res;
    res.manifest.name = cfg.name;
    res.manifest.suite = "crossover";
    res.manifest.config_text = write_config(cfg);
    res.manifest.seeds = {seed};

    const double t_start = hd::now_sec();
    std::vector<domain_data> doms = generate_domains(cfg);
    auto base_mix = equal_mixture(doms, cfg.coop.mixture_chunks, seed ^ hd::base_mix_salt);
    checkpoint base = make_base(cfg.model, seed, base_mix,
                                hd::make_train_opts(cfg.coop, cfg.coop.pretrain_steps, seed));
    res.manifest.digests.push_back({"base", base.digest});
    model base_model = to_model(base);
    base_model.set_training(false);
    const double base_ew = equal_weight(hd::eval_per_domain(base_model, doms));

    auto router_mix = equal_mixture(doms, cfg.router.mixture_chunks, seed ^ hd::router_mix_salt);
    for (long steps : step_grid) {
        for (int k : freeze_grid) {
            std::vector<checkpoint> specs;
            for (size_t i = 0; i < doms.size(); ++i)
                specs.push_back(train_specialist(
                    base, doms[i], k,
                    hd::make_train_opts(cfg.coop, steps, hd::specialist_seed(seed, i))));
            router r = train_router(specs, &base, cfg.router.kind, cfg.router.input, router_mix,
                                    hd::make_router_opts(cfg.router,
                                                         seed ^ hd::router_train_salt));
            fused_model fm = make_fused(specs, std::move(r), fuse_mode::soft, &base);
            const double ew = equal_weight(hd::eval_per_domain(fm, doms));
            res.cells.push_back({steps, k, ew, improvement(base_ew, ew), false});
        }
    }
    // leader = argmax gain over K within one step count (ties: lowest K wins)
    for (size_t i = 0; i < res.cells.size(); ++i) {
        bool best = true;
        for (size_t j = 0; j < res.cells.size(); ++j)
            if (res.cells[j].specialist_steps == res.cells[i].specialist_steps &&
                res.cells[j].gain_vs_base_pct > res.cells[i].gain_vs_base_pct)
                best = false;
        for (size_t j = 0; j < i; ++j)
            if (res.cells[j].specialist_steps == res.cells[i].specialist_steps &&
                res.cells[j].leader)
                best = false;
        res.cells[i].leader = best;
    }

    std::ostringstream csv;
    csv << "specialist_steps,freeze_k,fused_ew,gain_vs_base_pct,leader\n";
    ordered_json rows = ordered_json::array();
    for (const auto& c : res.cells) {
        csv << c.specialist_steps << "," << c.freeze_k << "," << hd::fmt(c.fused_ew) << ","
            << hd::fmt(c.gain_vs_base_pct) << "," << (c.leader ? 1 : 0) << "\n";
        ordered_json row;
        row["specialist_steps"] = c.specialist_steps;
        row["freeze_k"] = c.freeze_k;
        row["fused_ew"] = c.fused_ew;
        row["gain_vs_base_pct"] = c.gain_vs_base_pct;
        row["leader"] = c.leader;
        rows.push_back(row);
    }
    write_text_file(dir / "crossover.csv", csv.str());
    ordered_json rep;
    rep["format_version"] = 1;
    rep["suite"] = "crossover";
    rep["seed"] = seed;
    rep["base_ew_loss"] = base_ew;
    rep["base_digest"] = base.digest;
    rep["cells"] = rows;
    write_text_file(dir / "report.json", rep.dump(2) + "\n");
    res.manifest.report_files.push_back("report.json");
    res.manifest.timings_sec.push_back({"total", hd::now_sec() - t_start});
    save_manifest(res.manifest, dir);
    return res;
}

// ---------------------------------------------------------------- scaling

struct scaling_row {
    int n_specialists = 0;
    double fused_ew = 0.0;            // always over all configured domains
    double best_specialist_ew = 0.0;  // best among the included specialists
    double gain_vs_best_pct = 0.0;
};

struct scaling_result {
    run_manifest manifest;
    std::vector<scaling_row> rows;
};

// fuse growing specialist subsets while always evaluating on the full
// domain set: uncovered domains show what coverage buys
inline scaling_result run_scaling(const experiment_config& cfg, const std::vector<int>& n_grid) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    cfg.validate();
    if (n_grid.empty()) throw validation_error("run_scaling: n_grid must be non-empty");
    for (int n : n_grid)
        if (n < 1 || n > int(cfg.domains.size()))
            throw validation_error(cat("run_scaling: specialist count ", n, " outside [1, ",
                                       cfg.domains.size(), "]"));
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    const uint64_t seed = cfg.seeds[0];

    scaling_result res;
    res.manifest.name = cfg.name;
    res.manifest.suite = "scaling";
    res.manifest.config_text = write_config(cfg);
    res.manifest.seeds = {seed};

    const double t_start = hd::now_sec();
    std::vector<domain_data> doms = generate_domains(cfg);
    auto base_mix = equal_mixture(doms, cfg.coop.mixture_chunks, seed ^ hd::base_mix_salt);
    checkpoint base = make_base(cfg.model, seed, base_mix,
                                hd::make_train_opts(cfg.coop, cfg.coop.pretrain_steps, seed));
    res.manifest.digests.push_back({"base", base.digest});

    std::vector<checkpoint> all_specs;
    for (size_t i = 0; i < doms.size(); ++i)
        all_specs.push_back(train_specialist(
            base, doms[i], cfg.coop.freeze_layers,
            hd::make_train_opts(cfg.coop, cfg.coop.specialist_steps,
                                hd::specialist_seed(seed, i))));
    std::vector<model> spec_models;
    for (auto& s : all_specs) spec_models.push_back(to_model(s));
    for (auto& m : spec_models) m.set_training(false);
    const auto matrix = cross_domain_matrix(spec_models, doms);

    auto router_mix = equal_mixture(doms, cfg.router.mixture_chunks, seed ^ hd::router_mix_salt);
    for (int n : n_grid) {
        std::vector<checkpoint> subset(all_specs.begin(), all_specs.begin() + n);
        std::vector<double> per_domain;
        if (n == 1) {
            // single-expert fusion is the expert itself; skip router training
            per_domain = matrix[0];
        } else {
            router r = train_router(subset, &base, cfg.router.kind, cfg.router.input, router_mix,
                                    hd::make_router_opts(cfg.router,
                                                         seed ^ hd::router_train_salt));
            fused_model fm = make_fused(subset, std::move(r), fuse_mode::soft, &base);
            per_domain = hd::eval_per_domain(fm, doms);
        }
        double best = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) best = std::min(best, equal_weight(matrix[size_t(i)]));
        const double ew = equal_weight(per_domain);
        res.rows.push_back({n, ew, best, improvement(best, ew)});
    }

    std::ostringstream csv;
    csv << "n_specialists,fused_ew,best_specialist_ew,gain_vs_best_pct\n";
    ordered_json rows = ordered_json::array();
    for (const auto& r : res.rows) {
        csv << r.n_specialists << "," << hd::fmt(r.fused_ew) << ","
            << hd::fmt(r.best_specialist_ew) << "," << hd::fmt(r.gain_vs_best_pct) << "\n";
        ordered_json row;
        row["n_specialists"] = r.n_specialists;
        row["fused_ew"] = r.fused_ew;
        row["best_specialist_ew"] = r.best_specialist_ew;
        row["gain_vs_best_pct"] = r.gain_vs_best_pct;
        rows.push_back(row);
    }
    write_text_file(dir / "scaling.csv", csv.str());
    ordered_json rep;
    rep["format_version"] = 1;
    rep["suite"] = "scaling";
    rep["seed"] = seed;
    rep["rows"] = rows;
    write_text_file(dir / "report.json", rep.dump(2) + "\n");
    res.manifest.report_files.push_back("report.json");
    res.manifest.timings_sec.push_back({"total", hd::now_sec() - t_start});
    save_manifest(res.manifest, dir);
    return res;
}

// -------------------------------------------------------- shared-init gap

struct shared_init_row {
    std::string condition;
    long gap_steps = 0;
    double fused_ew = 0.0;
    double confusion = 0.0; // max off-diagonal per-domain gate mass
};

struct shared_init_result {
    run_manifest manifest;
    std::vector<shared_init_row> rows;
};

// specialist 0 trains from the reference base; the rest train from a base
// that pretrained `gap` extra steps. gap 0 reproduces the matched pipeline
// bit-for-bit; gap > 0 requires the explicit mismatch waiver
inline shared_init_result run_shared_init_ablation(const experiment_config& cfg,
                                                   const std::vector<long>& stage_gaps,
                                                   bool allow_mismatch) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    cfg.validate();
    if (stage_gaps.empty())
        throw validation_error("run_shared_init_ablation: no stage gaps given");
    for (long g : stage_gaps) {
        if (g < 0) throw validation_error(cat("run_shared_init_ablation: negative gap ", g));
        if (g > 0 && !allow_mismatch)
            throw validation_error(cat("run_shared_init_ablation: gap ", g, " breaks shared "
                                       "initialisation; pass --allow-mismatch to run anyway"));
    }
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    const uint64_t seed = cfg.seeds[0];

    shared_init_result res;
    res.manifest.name = cfg.name;
    res.manifest.suite = "shared_init";
    res.manifest.config_text = write_config(cfg);
    res.manifest.seeds = {seed};

    const double t_start = hd::now_sec();
    std::vector<domain_data> doms = generate_domains(cfg);
    auto base_mix = equal_mixture(doms, cfg.coop.mixture_chunks, seed ^ hd::base_mix_salt);
    checkpoint base_ref = make_base(cfg.model, seed, base_mix,
                                    hd::make_train_opts(cfg.coop, cfg.coop.pretrain_steps, seed));
    res.manifest.digests.push_back({"base", base_ref.digest});
    auto router_mix = equal_mixture(doms, cfg.router.mixture_chunks, seed ^ hd::router_mix_salt);

    for (long gap : stage_gaps) {
        // same seed, longer run: the first pretrain_steps are bit-identical,
        // so gap 0 regenerates base_ref exactly
        checkpoint base_gap =
            gap == 0 ? base_ref
                     : make_base(cfg.model, seed, base_mix,
                                 hd::make_train_opts(cfg.coop, cfg.coop.pretrain_steps + gap,
                                                     seed));
        std::vector<checkpoint> specs;
        for (size_t i = 0; i < doms.size(); ++i)
            specs.push_back(train_specialist(
                i == 0 ? base_ref : base_gap, doms[i], cfg.coop.freeze_layers,
                hd::make_train_opts(cfg.coop, cfg.coop.specialist_steps,
                                    hd::specialist_seed(seed, i))));
        router r = train_router(specs, &base_ref, cfg.router.kind, cfg.router.input, router_mix,
                                hd::make_router_opts(cfg.router, seed ^ hd::router_train_salt));
        fused_model fm = make_fused(specs, std::move(r), fuse_mode::soft, &base_ref,
                                    /*allow_mismatch=*/gap != 0);
        const double ew = equal_weight(hd::eval_per_domain(fm, doms));
        routing_stats rs = routing_diagnostics(fm, doms);
        double confusion = 0.0;
        for (size_t d = 0; d < rs.per_domain_gate_mass.size(); ++d)
            for (size_t e = 0; e < rs.per_domain_gate_mass[d].second.size(); ++e)
                if (e != d) confusion = std::max(confusion, rs.per_domain_gate_mass[d].second[e]);
        res.rows.push_back({gap == 0 ? "matched" : cat("gap_", gap), gap, ew, confusion});
    }

    std::ostringstream csv;
    csv << "condition,gap_steps,fused_ew,routing_confusion\n";
    ordered_json rows = ordered_json::array();
    for (const auto& r : res.rows) {
        csv << r.condition << "," << r.gap_steps << "," << hd::fmt(r.fused_ew) << ","
            << hd::fmt(r.confusion) << "\n";
        ordered_json row;
        row["condition"] = r.condition;
        row["gap_steps"] = r.gap_steps;
        row["fused_ew"] = r.fused_ew;
        row["routing_confusion"] = r.confusion;
        rows.push_back(row);
    }
    write_text_file(dir / "shared_init.csv", csv.str());
    ordered_json rep;
    rep["format_version"] = 1;
    rep["suite"] = "shared_init";
    rep["seed"] = seed;
    rep["rows"] = rows;
    write_text_file(dir / "report.json", rep.dump(2) + "\n");
    res.manifest.report_files.push_back("report.json");
    res.manifest.timings_sec.push_back({"total", hd::now_sec() - t_start});
    save_manifest(res.manifest, dir);
    return res;
}

// ------------------------------------------------------------ heterogeneous

struct hetero_variation {
    std::string condition;  // e.g. diff_steps
    int specialist = 0;     // which specialist deviates
    std::string field;      // steps | lr | batch_size
    double value = 0.0;
};

struct hetero_row {
    std::string condition;
    double fused_ew = 0.0;
    double gain_vs_best_pct = 0.0;
    double delta_vs_control_pp = 0.0;
    double modified_own_divergence_pct = 0.0;
};

struct hetero_result {
    run_manifest manifest;
    std::vector<hetero_row> rows;
};

// one specialist per condition trains under an overridden hyperparameter;
// everything else is the control pipeline
inline hetero_result run_heterogeneous(const experiment_config& cfg,
                                       const std::vector<hetero_variation>& variations) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    cfg.validate();
    for (const auto& v : variations) {
        if (v.specialist < 0 || v.specialist >= int(cfg.domains.size()))
            throw validation_error(cat("run_heterogeneous: specialist ", v.specialist,
                                       " outside [0, ", cfg.domains.size(), ")"));
        if (v.field != "steps" && v.field != "lr" && v.field != "batch_size")
            throw validation_error(cat("run_heterogeneous: unknown field '", v.field,
                                       "' (steps, lr, batch_size)"));
        if (!(v.value > 0.0))
            throw validation_error(cat("run_heterogeneous: field '", v.field,
                                       "' must be positive, got ", v.value));
    }
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    const uint64_t seed = cfg.seeds[0];

    hetero_result res;
    res.manifest.name = cfg.name;
    res.manifest.suite = "hetero";
    res.manifest.config_text = write_config(cfg);
    res.manifest.seeds = {seed};

    const double t_start = hd::now_sec();
    std::vector<domain_data> doms = generate_domains(cfg);
    auto base_mix = equal_mixture(doms, cfg.coop.mixture_chunks, seed ^ hd::base_mix_salt);
    checkpoint base = make_base(cfg.model, seed, base_mix,
                                hd::make_train_opts(cfg.coop, cfg.coop.pretrain_steps, seed));
    res.manifest.digests.push_back({"base", base.digest});
    model base_model = to_model(base);
    base_model.set_training(false);
    const std::vector<double> base_losses = hd::eval_per_domain(base_model, doms);

    std::vector<checkpoint> control_specs;
    for (size_t i = 0; i < doms.size(); ++i)
        control_specs.push_back(train_specialist(
            base, doms[i], cfg.coop.freeze_layers,
            hd::make_train_opts(cfg.coop, cfg.coop.specialist_steps,
                                hd::specialist_seed(seed, i))));
    auto router_mix = equal_mixture(doms, cfg.router.mixture_chunks, seed ^ hd::router_mix_salt);

    auto evaluate = [&](std::vector<checkpoint>& specs, int modified) -> hetero_row {
        std::vector<model> ms;
        for (auto& s : specs) ms.push_back(to_model(s));
        for (auto& m : ms) m.set_training(false);
        auto matrix = cross_domain_matrix(ms, doms);
        router r = train_router(specs, &base, cfg.router.kind, cfg.router.input, router_mix,
                                hd::make_router_opts(cfg.router, seed ^ hd::router_train_salt));
        fused_model fm = make_fused(specs, std::move(r), fuse_mode::soft, &base);
        const double ew = equal_weight(hd::eval_per_domain(fm, doms));
        const double best = hd::best_specialist_ew(matrix);
        hetero_row row;
        row.fused_ew = ew;
        row.gain_vs_best_pct = improvement(best, ew);
        const int m = modified < 0 ? 0 : modified;
        row.modified_own_divergence_pct =
            divergence(base_losses[size_t(m)], matrix[size_t(m)][size_t(m)]);
        return row;
    };

    hetero_row control = evaluate(control_specs, -1);
    control.condition = "control";
    control.delta_vs_control_pp = 0.0;
    res.rows.push_back(control);

    for (const auto& v : variations) {
        train_opts o = hd::make_train_opts(cfg.coop, cfg.coop.specialist_steps,
                                           hd::specialist_seed(seed, size_t(v.specialist)));
        if (v.field == "steps") o.steps = long(v.value);
        else if (v.field == "lr") o.optim.lr = v.value;
        else o.batch_size = int(v.value);
        std::vector<checkpoint> specs = control_specs;
        specs[size_t(v.specialist)] =
            train_specialist(base, doms[size_t(v.specialist)], cfg.coop.freeze_layers, o);
        hetero_row row = evaluate(specs, v.specialist);
        row.condition = v.condition;
        row.delta_vs_control_pp = row.gain_vs_best_pct - control.gain_vs_best_pct;
        res.rows.push_back(row);
    }

    std::ostringstream csv;
    csv << "condition,fused_ew,gain_vs_best_pct,delta_vs_control_pp,modified_own_divergence_pct\n";
    ordered_json rows = ordered_json::array();
    for (const auto& r : res.rows) {
        csv << r.condition << "," << hd::fmt(r.fused_ew) << "," << hd::fmt(r.gain_vs_best_pct)
            << "," << hd::fmt(r.delta_vs_control_pp) << ","
            << hd::fmt(r.modified_own_divergence_pct) << "\n";
        ordered_json row;
        row["condition"] = r.condition;
        row["fused_ew"] = r.fused_ew;
        row["gain_vs_best_pct"] = r.gain_vs_best_pct;
        row["delta_vs_control_pp"] = r.delta_vs_control_pp;
        row["modified_own_divergence_pct"] = r.modified_own_divergence_pct;
        rows.push_back(row);
    }
    write_text_file(dir / "hetero.csv", csv.str());
    ordered_json rep;
    rep["format_version"] = 1;
    rep["suite"] = "hetero";
    rep["seed"] = seed;
    rep["rows"] = rows;
    write_text_file(dir / "report.json", rep.dump(2) + "\n");
    res.manifest.report_files.push_back("report.json");
    res.manifest.timings_sec.push_back({"total", hd::now_sec() - t_start});
    save_manifest(res.manifest, dir);
    return res;
}

// ------------------------------------------------------------------- audit

struct audit_report {
    long checks_run = 0;
    long checks_passed = 0;
    std::vector<std::string> issues;
    bool passed() const { return checks_run > 0 && checks_passed == checks_run; }
};

namespace audit_detail {

// forward-slash form so reports written on any platform compare equal
inline std::string norm_path(const std::filesystem::path& p) { return p.generic_string(); }

inline void check(audit_report& a, bool ok, const std::string& what) {
    ++a.checks_run;
    if (ok) ++a.checks_passed;
    else a.issues.push_back(what);
}

inline bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol; }

inline std::optional<ordered_json> try_load(audit_report& a, const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        ++a.checks_run;
        a.issues.push_back(cat("cannot read ", norm_path(p)));
        return std::nullopt;
    }
    try {
        ordered_json j = ordered_json::parse(in);
        ++a.checks_run;
        ++a.checks_passed;
        return j;
    } catch (const std::exception& e) {
        ++a.checks_run;
        a.issues.push_back(cat("cannot parse ", norm_path(p), ": ", e.what()));
        return std::nullopt;
    }
}

// check 5: every block that stores both the per-domain losses and their
// equal-weight mean must agree with itself
inline void check_ew_consistency(audit_report& a, const ordered_json& rep,
                                 const std::string& file) {
    static const char* blocks[] = {"base",   "fused",      "uniform",    "hard",
                                   "sparse", "weight_avg", "monolithic", "wider", "oracle"};
    for (const char* b : blocks) {
        if (!rep.contains(b)) continue;
        const auto& j = rep[b];
        if (!j.contains("per_domain_loss") || !j.contains("ew_loss")) continue;
        std::vector<double> pd = j["per_domain_loss"].get<std::vector<double>>();
        check(a, close(equal_weight(pd), j["ew_loss"].get<double>(), 1e-9),
              cat(file, ": ", b, ".ew_loss does not equal the mean of ", b,
                  ".per_domain_loss"));
    }
    if (rep.contains("specialists"))
        for (size_t i = 0; i < rep["specialists"].size(); ++i) {
            const auto& j = rep["specialists"][i];
            std::vector<double> pd = j["per_domain_loss"].get<std::vector<double>>();
            check(a, close(equal_weight(pd), j["ew_loss"].get<double>(), 1e-9),
                  cat(file, ": specialists[", i, "].ew_loss does not equal the mean of its "
                      "per_domain_loss"));
        }
}

// check 3: improvement percentages recomputable from the stored losses
inline void check_improvements(audit_report& a, const ordered_json& rep,
                               const std::string& file) {
    if (!rep.contains("base") || !rep.contains("fused")) return;
    const double base_ew = rep["base"]["ew_loss"].get<double>();
    const double fused_ew = rep["fused"]["ew_loss"].get<double>();
    check(a,
          close(improvement(base_ew, fused_ew), rep["fused"]["vs_base_pct"].get<double>(), 0.005),
          cat(file, ": fused.vs_base_pct is not recomputable from the stored losses"));
    if (rep.contains("best_specialist_ew")) {
        const double best = rep["best_specialist_ew"].get<double>();
        check(a,
              close(improvement(best, fused_ew),
                    rep["fused"]["vs_best_specialist_pct"].get<double>(), 0.005),
              cat(file, ": fused.vs_best_specialist_pct is not recomputable"));
        // best_specialist_ew itself must be the minimum specialist row mean
        if (rep.contains("specialists")) {
            double lowest = std::numeric_limits<double>::infinity();
            for (const auto& s : rep["specialists"])
                lowest = std::min(lowest, s["ew_loss"].get<double>());
            check(a, close(lowest, best, 1e-9),
                  cat(file, ": best_specialist_ew is not the minimum specialist ew_loss"));
        }
    }
    if (rep.contains("specialists")) {
        const std::vector<double> base_pd =
            rep["base"]["per_domain_loss"].get<std::vector<double>>();
        std::vector<double> divs;
        for (size_t i = 0; i < rep["specialists"].size(); ++i) {
            const auto& s = rep["specialists"][i];
            const double own = s["own_loss"].get<double>();
            const double stored = s["divergence_pct"].get<double>();
            check(a, close(divergence(base_pd[i], own), stored, 0.005),
                  cat(file, ": specialists[", i, "].divergence_pct is not recomputable"));
            divs.push_back(stored);
        }
        if (rep.contains("mean_divergence_pct"))
            check(a,
                  close(harness_detail::mean_of(divs), rep["mean_divergence_pct"].get<double>(),
                        0.005),
                  cat(file, ": mean_divergence_pct is not the mean of the stored divergences"));
    }
}

} // namespace audit_detail

// re-derives every stored statistic in a results directory tree:
// (1) aggregate means/stds match the per-seed values, (2) base losses are
// identical wherever the base digest matches, (3) improvement percentages
// recompute from stored losses within 0.005pp, (4) every declared seed has
// its report, (5) each ew_loss is the mean of its per-domain losses
inline audit_report audit_results(const std::string& results_dir) {
    namespace fs = std::filesystem;
    namespace ad = audit_detail;
    audit_report a;
    const fs::path root(results_dir);
    if (!fs::exists(root)) {
        ad::check(a, false, cat("results directory '", results_dir, "' does not exist"));
        return a;
    }

    std::vector<fs::path> manifest_paths;
    for (auto it = fs::recursive_directory_iterator(root);
         it != fs::recursive_directory_iterator(); ++it)
        if (it->is_regular_file() && it->path().filename() == "manifest.json")
            manifest_paths.push_back(it->path());
    std::sort(manifest_paths.begin(), manifest_paths.end());
    if (manifest_paths.empty()) {
        ad::check(a, false, cat("no manifest.json found under '", results_dir, "'"));
        return a;
    }

    // digest -> (source file, domain names, per-domain base losses) for check 2
    std::map<std::string, std::tuple<std::string, std::vector<std::string>,
                                     std::vector<double>>> base_by_digest;

    for (const auto& mp : manifest_paths) {
        auto mj = ad::try_load(a, mp);
        if (!mj) continue;
        const fs::path run_dir = mp.parent_path();
        const std::string mfile = ad::norm_path(fs::relative(mp, root));

        std::vector<std::string> report_files;
        if (mj->contains("report_files"))
            report_files = (*mj)["report_files"].get<std::vector<std::string>>();
        ordered_json aggregate;
        std::vector<const ordered_json*> seed_reports;
        std::vector<std::pair<std::string, ordered_json>> loaded;

        for (const auto& rel : report_files) {
            auto rj = ad::try_load(a, run_dir / rel);
            if (!rj) continue;
            loaded.push_back({ad::norm_path(fs::path(rel)), std::move(*rj)});
        }
        for (const auto& [rfile, r] : loaded) {
            if (r.contains("metrics")) aggregate = r;
            else if (r.contains("seed") && r.value("suite", "") == "core")
                seed_reports.push_back(&r);
        }

        // per-report self-consistency (checks 3 and 5) + base collection
        for (const auto& [rfile, r] : loaded) {
            ad::check_ew_consistency(a, r, rfile);
            ad::check_improvements(a, r, rfile);
            if (r.contains("base") && r["base"].contains("digest")) {
                const std::string dg = r["base"]["digest"].get<std::string>();
                const auto pd = r["base"]["per_domain_loss"].get<std::vector<double>>();
                const auto dn = r["domains"].get<std::vector<std::string>>();
                auto it = base_by_digest.find(dg);
                if (it == base_by_digest.end()) {
                    base_by_digest[dg] = {rfile, dn, pd};
                } else {
                    const auto& [ofile, odn, opd] = it->second;
                    ad::check(a, odn == dn && opd == pd,
                              cat(rfile, ": base losses differ from ", ofile,
                                  " despite identical base digest ", dg.substr(0, 12), "..."));
                }
            }
        }

        // check 4: every declared seed has a report that claims that seed
        if (mj->contains("seeds")) {
            for (uint64_t s : (*mj)["seeds"].get<std::vector<uint64_t>>()) {
                if ((*mj)["suite"] == "core") {
                    bool found = false;
                    for (const auto* r : seed_reports)
                        if ((*r)["seed"].get<uint64_t>() == s) found = true;
                    ad::check(a, found, cat(mfile, ": declared seed ", s,
                                            " has no seed report"));
                } else {
                    bool found = false;
                    for (const auto& [rfile, r] : loaded)
                        if (r.contains("seed") && r["seed"].get<uint64_t>() == s) found = true;
                    ad::check(a, found, cat(mfile, ": declared seed ", s,
                                            " appears in no report"));
                }
            }
        }

        // check 1: aggregate means/stds/per-seed values match the seed reports
        if (!aggregate.is_null() && aggregate.contains("metrics")) {
            for (auto it = aggregate["metrics"].begin(); it != aggregate["metrics"].end(); ++it) {
                const std::string& name = it.key();
                const auto per_seed = it.value()["per_seed"].get<std::vector<double>>();
                ad::check(a, per_seed.size() == seed_reports.size(),
                          cat(mfile, ": aggregate metric ", name, " has ", per_seed.size(),
                              " per-seed values for ", seed_reports.size(), " seed reports"));
                if (per_seed.size() == seed_reports.size()) {
                    for (size_t i = 0; i < per_seed.size(); ++i) {
                        auto v = report_metric(*seed_reports[i], name);
                        ad::check(a, v && ad::close(*v, per_seed[i], 1e-9),
                                  cat(mfile, ": aggregate ", name, ".per_seed[", i,
                                      "] does not match its seed report"));
                    }
                }
                if (!per_seed.empty()) {
                    ad::check(a,
                              ad::close(harness_detail::mean_of(per_seed),
                                        it.value()["mean"].get<double>(), 1e-9),
                              cat(mfile, ": aggregate ", name, ".mean does not match its "
                                  "per-seed values"));
                    ad::check(a,
                              ad::close(harness_detail::std_of(per_seed),
                                        it.value()["std"].get<double>(), 1e-9),
                              cat(mfile, ": aggregate ", name, ".std does not match its "
                                  "per-seed values"));
                }
            }
        }
    }
    return a;
}

// ------------------------------------------------------------- regression

struct regress_point {
    double divergence_pct = 0.0;
    double gain_pct = 0.0;
    double predicted_pct = 0.0;
    double residual = 0.0;
};

struct regress_output {
    regression_fit fit;
    std::vector<regress_point> points;
};

inline std::vector<std::pair<double, double>> read_points_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw validation_error(cat("regress: cannot open '", path, "'"));
    std::vector<std::pair<double, double>> pts;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = config_detail::trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t comma = t.find(',');
        if (comma == std::string::npos)
            throw validation_error(cat("regress: line ", lineno, " is not 'x,y'"));
        try {
            pts.push_back({std::stod(t.substr(0, comma)), std::stod(t.substr(comma + 1))});
        } catch (const std::exception&) {
            if (lineno == 1 && pts.empty()) continue; // header row
            throw validation_error(cat("regress: line ", lineno, " is not numeric"));
        }
    }
    return pts;
}

inline regress_output regress_points(const std::vector<std::pair<double, double>>& pts) {
    regress_output out;
    out.fit = fit_divergence_gain(pts);
    for (const auto& [x, y] : pts) {
        const double pred = predict_gain(out.fit, x);
        out.points.push_back({x, y, pred, y - pred});
    }
    return out;
}

inline ordered_json regress_json(const regress_output& r) {
    ordered_json j;
    j["slope"] = r.fit.slope;
    j["intercept"] = r.fit.intercept;
    j["r_squared"] = r.fit.r_squared;
    j["slope_se"] = r.fit.slope_se;
    j["slope_ci_low"] = r.fit.slope_ci_low;
    j["slope_ci_high"] = r.fit.slope_ci_high;
    j["zero_gain_divergence"] = zero_gain_divergence(r.fit);
    j["n"] = r.fit.n;
    ordered_json rows = ordered_json::array();
    for (const auto& p : r.points) {
        ordered_json row;
        row["divergence_pct"] = p.divergence_pct;
        row["gain_pct"] = p.gain_pct;
        row["predicted_pct"] = p.predicted_pct;
        row["residual"] = p.residual;
        rows.push_back(row);
    }
    j["points"] = rows;
    return j;
}

inline std::string regress_csv(const regress_output& r) {
    namespace hd = harness_detail;
    std::ostringstream o;
    o << "divergence_pct,gain_pct,predicted_pct,residual\n";
    for (const auto& p : r.points)
        o << hd::fmt(p.divergence_pct) << "," << hd::fmt(p.gain_pct) << ","
          << hd::fmt(p.predicted_pct) << "," << hd::fmt(p.residual) << "\n";
    return o.str();
}

} // namespace coop
