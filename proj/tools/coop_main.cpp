// `coop` command-line front end: experiment suites, single pipeline stages,
// regression fits, and results audits. Exit codes: 0 success, 1 validation
// error, 2 audit failure, 3 numerical divergence.
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <coop/harness.hpp>

namespace {

using namespace coop;

experiment_config load_cfg(const std::string& path, const std::string& out_override,
                           uint64_t seed_override, bool has_seed) {
    if (path.empty()) throw validation_error("a --config file is required");
    experiment_config ec = load_experiment(path);
    if (!out_override.empty()) ec.output_dir = out_override;
    if (has_seed) ec.seeds = {seed_override};
    ec.validate();
    return ec;
}

size_t domain_index(const experiment_config& ec, const std::string& name) {
    for (size_t i = 0; i < ec.domains.size(); ++i)
        if (ec.domains[i].name == name) return i;
    throw validation_error(cat("config has no domain named '", name, "'"));
}

std::vector<long> long_list(const std::string& csv, const std::string& what) {
    std::vector<long> out;
    for (const auto& s : config_detail::split_commas(csv))
        out.push_back(config_detail::to_long(s, what));
    if (out.empty()) throw validation_error(cat(what, ": empty list"));
    return out;
}

std::vector<int> int_list(const std::string& csv, const std::string& what) {
    std::vector<int> out;
    for (long v : long_list(csv, what)) out.push_back(int(v));
    return out;
}

void print_losses(const char* label, const experiment_config& ec,
                  const std::vector<double>& per_domain) {
    std::printf("%s:\n", label);
    for (size_t i = 0; i < per_domain.size(); ++i)
        std::printf("  %-24s %.6f\n", ec.domains[i].name.c_str(), per_domain[i]);
    std::printf("  %-24s %.6f\n", "equal_weight", equal_weight(per_domain));
}

int cmd_run_core(const experiment_config& ec) {
    core_result res = run_core(ec);
    std::printf("core run '%s' -> %s (%zu/%zu seeds succeeded)\n", ec.name.c_str(),
                ec.output_dir.c_str(), res.per_seed.size(), ec.seeds.size());
    for (const auto& err : res.manifest.errors)
        std::printf("  stage failure: %s\n", err.c_str());
    const auto& m = res.aggregate["metrics"];
    for (const char* k : {"base_ew_loss", "best_specialist_ew", "fused_ew_loss",
                          "fused_vs_base_pct", "fused_vs_best_specialist_pct",
                          "mean_divergence_pct"})
        if (m.contains(k))
            std::printf("  %-30s mean %9.4f  std %8.4f\n", k, m[k]["mean"].get<double>(),
                        m[k]["std"].get<double>());
    return res.manifest.errors.empty() ? 0 : 1;
}

int cmd_train_specialist(const experiment_config& ec, const std::string& domain,
                         const std::string& base_path, int freeze_override, long steps_override,
                         std::string out_path) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    const size_t di = domain_index(ec, domain);
    const uint64_t seed = ec.seeds[0];
    if (out_path.empty())
        out_path = (fs::path(ec.output_dir) / cat("specialist_", domain, ".ckpt")).string();
    if (fs::path(out_path).has_parent_path())
        fs::create_directories(fs::path(out_path).parent_path());

    std::vector<domain_data> doms = generate_domains(ec);
    checkpoint base;
    if (!base_path.empty()) {
        base = load_checkpoint(base_path);
    } else {
        auto mix = equal_mixture(doms, ec.coop.mixture_chunks, seed ^ hd::base_mix_salt);
        base = make_base(ec.model, seed, mix,
                         hd::make_train_opts(ec.coop, ec.coop.pretrain_steps, seed));
        const std::string bp = (fs::path(out_path).parent_path() / "base.ckpt").string();
        save_checkpoint(base, bp);
        std::printf("trained base -> %s (digest %.12s...)\n", bp.c_str(), base.digest.c_str());
    }
    const int freeze = freeze_override >= 0 ? freeze_override : ec.coop.freeze_layers;
    const long steps = steps_override > 0 ? steps_override : ec.coop.specialist_steps;
    checkpoint spec = train_specialist(base, doms[di], freeze,
                                       hd::make_train_opts(ec.coop, steps,
                                                           hd::specialist_seed(seed, di)));
    save_checkpoint(spec, out_path);
    std::printf("specialist '%s' (%ld steps, freeze %d) -> %s (digest %.12s...)\n",
                domain.c_str(), steps, freeze, out_path.c_str(), spec.digest.c_str());
    model m = to_model(spec);
    m.set_training(false);
    print_losses("heldout loss", ec, harness_detail::eval_per_domain(m, doms));
    return 0;
}

int cmd_train_monolithic(const experiment_config& ec, long steps_override,
                         std::string out_path) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    const uint64_t seed = ec.seeds[0];
    if (out_path.empty())
        out_path = (fs::path(ec.output_dir) / "monolithic.ckpt").string();
    if (fs::path(out_path).has_parent_path())
        fs::create_directories(fs::path(out_path).parent_path());
    std::vector<domain_data> doms = generate_domains(ec);
    const long steps = steps_override > 0
                           ? steps_override
                           : ec.coop.specialist_steps * long(ec.domains.size());
    auto mix = equal_mixture(doms, ec.coop.mixture_chunks, seed ^ hd::base_mix_salt);
    checkpoint mono =
        train_monolithic(ec.model, seed ^ hd::monolithic_salt, mix,
                         hd::make_train_opts(ec.coop, steps, seed ^ hd::monolithic_salt));
    save_checkpoint(mono, out_path);
    std::printf("monolithic (%ld steps) -> %s (digest %.12s...)\n", steps, out_path.c_str(),
                mono.digest.c_str());
    model m = to_model(mono);
    m.set_training(false);
    print_losses("heldout loss", ec, harness_detail::eval_per_domain(m, doms));
    return 0;
}

int cmd_eval(const experiment_config& ec, const std::string& ckpt_path,
             const std::string& out_path) {
    checkpoint ck = load_checkpoint(ckpt_path);
    std::vector<domain_data> doms = generate_domains(ec);
    model m = to_model(ck);
    m.set_training(false);
    const std::vector<double> pd = harness_detail::eval_per_domain(m, doms);
    ordered_json j;
    j["checkpoint"] = ckpt_path;
    j["digest"] = ck.digest;
    j["method"] = ck.prov.method;
    ordered_json pl = ordered_json::object();
    for (size_t i = 0; i < pd.size(); ++i) pl[ec.domains[i].name] = pd[i];
    j["per_domain_loss"] = pl;
    j["ew_loss"] = equal_weight(pd);
    j["eval_batch_size"] = 4;
    const std::string text = j.dump(2) + "\n";
    if (!out_path.empty()) write_text_file(out_path, text);
    std::fputs(text.c_str(), stdout);
    return 0;
}

int cmd_fuse(const experiment_config& ec, const std::vector<std::string>& expert_paths,
             const std::string& base_path, const std::string& mode_name, bool allow_mismatch) {
    namespace hd = harness_detail;
    namespace fs = std::filesystem;
    if (expert_paths.size() < 2)
        throw validation_error("fuse: need at least two --experts checkpoints");
    const fuse_mode mode = fuse_mode_from_name(mode_name);
    const uint64_t seed = ec.seeds[0];
    std::vector<checkpoint> specs;
    for (const auto& p : expert_paths) specs.push_back(load_checkpoint(p));
    checkpoint base;
    const checkpoint* base_ptr = nullptr;
    if (!base_path.empty()) {
        base = load_checkpoint(base_path);
        base_ptr = &base;
    }
    std::vector<domain_data> doms = generate_domains(ec);
    auto mix = equal_mixture(doms, ec.router.mixture_chunks, seed ^ hd::router_mix_salt);
    router r = ec.router.kind == router_kind::uniform
                   ? make_router(router_kind::uniform, ec.router.input, int(specs.size()),
                                 ec.model.d_model)
                   : train_router(specs, base_ptr, ec.router.kind, ec.router.input, mix,
                                  hd::make_router_opts(ec.router, seed ^ hd::router_train_salt));
    fused_model fm = make_fused(specs, std::move(r), mode, base_ptr, allow_mismatch);
    const std::vector<double> pd = hd::eval_per_domain(fm, doms);

    ordered_json j;
    j["mode"] = mode_name;
    j["router_kind"] = router_kind_name(ec.router.kind);
    j["router_input"] = router_input_name(ec.router.input);
    ordered_json experts = ordered_json::array();
    for (const auto& s : specs) experts.push_back(s.digest);
    j["expert_digests"] = experts;
    ordered_json pl = ordered_json::object();
    for (size_t i = 0; i < pd.size(); ++i) pl[ec.domains[i].name] = pd[i];
    j["per_domain_loss"] = pl;
    j["ew_loss"] = equal_weight(pd);
    if (mode != fuse_mode::sparse_top1) {
        routing_stats rs = routing_diagnostics(fm, doms);
        ordered_json mass = ordered_json::object();
        for (const auto& [dom, gates] : rs.per_domain_gate_mass) mass[dom] = gates;
        j["per_domain_gate_mass"] = mass;
        j["switches_per_prompt"] = rs.switches_per_prompt;
        j["max_gate_mean"] = rs.max_gate_mean;
    } else {
        std::vector<std::vector<int>> all;
        for (const auto& d : doms) all.insert(all.end(), d.heldout.begin(), d.heldout.end());
        j["agreement_pct"] = sparse_agreement(fm, all);
    }
    fs::create_directories(ec.output_dir);
    const std::string out = (fs::path(ec.output_dir) / "fuse_report.json").string();
    write_text_file(out, j.dump(2) + "\n");
    std::fputs((j.dump(2) + "\n").c_str(), stdout);
    std::printf("fuse report -> %s\n", out.c_str());
    return 0;
}

int cmd_regress(const std::string& points_path, const std::string& out_dir) {
    regress_output r = regress_points(read_points_csv(points_path));
    const ordered_json j = regress_json(r);
    if (!out_dir.empty()) {
        namespace fs = std::filesystem;
        write_text_file(fs::path(out_dir) / "regression.json", j.dump(2) + "\n");
        write_text_file(fs::path(out_dir) / "regression.csv", regress_csv(r));
        std::printf("regression -> %s\n", out_dir.c_str());
    }
    std::fputs((j.dump(2) + "\n").c_str(), stdout);
    return 0;
}

int cmd_audit(const std::string& dir) {
    audit_report a = audit_results(dir);
    for (const auto& issue : a.issues) std::printf("FAIL %s\n", issue.c_str());
    std::printf("audit: %ld/%ld checks passed\n", a.checks_passed, a.checks_run);
    return a.passed() ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"cooperative specialist training laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, domain, base_path, ckpt_path, mode_name = "soft";
    std::string steps_csv, freeze_csv, counts_csv, gaps_csv, points_path, audit_dir;
    std::vector<std::string> expert_paths, vary_specs;
    uint64_t seed = 0;
    bool allow_mismatch = false;
    long steps_override = 0, freeze_steps = 0;
    int freeze_override = -1;
    std::function<int()> action;

    auto add_common = [&](CLI::App* c, bool needs_config = true) {
        auto* opt = c->add_option("--config", config_path, "experiment config file");
        if (needs_config) opt->required();
        c->add_option("--out", out_dir, "output directory override");
        c->add_option("--seed", seed, "replace the config seed list with this single seed");
        c->add_flag("--allow-mismatch", allow_mismatch,
                    "waive the shared-base-checkpoint requirement");
    };
    auto cfg = [&](CLI::App* c) {
        return load_cfg(config_path, out_dir, seed, c->count("--seed") > 0);
    };

    auto* core = app.add_subcommand("run-core", "multi-seed cooperative pipeline + baselines");
    add_common(core);
    core->callback([&, core] { action = [&, core] { return cmd_run_core(cfg(core)); }; });

    auto* ts = app.add_subcommand("train-specialist",
                                  "train one domain specialist from a shared base");
    add_common(ts);
    ts->add_option("--domain", domain, "domain name from the config")->required();
    ts->add_option("--base", base_path, "base checkpoint (trained from config when omitted)");
    ts->add_option("--freeze", freeze_override, "freeze depth override");
    ts->add_option("--steps", steps_override, "training steps override");
    ts->add_option("--ckpt-out", ckpt_path, "output checkpoint path");
    ts->callback([&, ts] {
        action = [&, ts] {
            return cmd_train_specialist(cfg(ts), domain, base_path, freeze_override,
                                        steps_override, ckpt_path);
        };
    });

    auto* tm = app.add_subcommand("train-monolithic",
                                  "train one model on the domain mixture at the summed budget");
    add_common(tm);
    tm->add_option("--steps", steps_override, "training steps override");
    tm->add_option("--ckpt-out", ckpt_path, "output checkpoint path");
    tm->callback([&, tm] {
        action = [&, tm] { return cmd_train_monolithic(cfg(tm), steps_override, ckpt_path); };
    });

    auto* ev = app.add_subcommand("eval", "per-domain heldout loss of one checkpoint");
    add_common(ev);
    ev->add_option("--ckpt", ckpt_path, "checkpoint to evaluate")->required();
    ev->add_option("--report-out", points_path, "also write the JSON report here");
    ev->callback([&, ev] {
        action = [&, ev] { return cmd_eval(cfg(ev), ckpt_path, points_path); };
    });

    auto* fu = app.add_subcommand("fuse", "train a router over expert checkpoints and evaluate");
    add_common(fu);
    fu->add_option("--experts", expert_paths, "expert checkpoint paths")->required();
    fu->add_option("--base", base_path, "shared base checkpoint");
    fu->add_option("--mode", mode_name, "soft | hard | sparse_top1");
    fu->callback([&, fu] {
        action = [&, fu] {
            return cmd_fuse(cfg(fu), expert_paths, base_path, mode_name, allow_mismatch);
        };
    });

    auto* sweep = app.add_subcommand("sweep", "parameter sweeps");
    sweep->require_subcommand(1);

    auto* cross = sweep->add_subcommand("crossover", "specialist-steps x freeze-depth grid");
    add_common(cross);
    cross->add_option("--steps", steps_csv, "comma-separated specialist step counts")->required();
    cross->add_option("--freeze", freeze_csv, "comma-separated freeze depths")->required();
    cross->callback([&, cross] {
        action = [&, cross] {
            auto c = cfg(cross);
            crossover_result r = run_crossover(c, long_list(steps_csv, "steps"),
                                               int_list(freeze_csv, "freeze"));
            std::printf("crossover -> %s (%zu cells)\n", c.output_dir.c_str(), r.cells.size());
            return 0;
        };
    });

    auto* fz = sweep->add_subcommand("freeze", "freeze-depth sweep at fixed specialist steps");
    add_common(fz);
    fz->add_option("--freeze", freeze_csv, "comma-separated freeze depths")->required();
    fz->add_option("--steps", freeze_steps, "specialist steps (default: config value)");
    fz->callback([&, fz] {
        action = [&, fz] {
            auto c = cfg(fz);
            const long s = freeze_steps > 0 ? freeze_steps : c.coop.specialist_steps;
            crossover_result r = run_crossover(c, {s}, int_list(freeze_csv, "freeze"));
            std::printf("freeze sweep -> %s (%zu cells)\n", c.output_dir.c_str(),
                        r.cells.size());
            return 0;
        };
    });

    auto* sc = sweep->add_subcommand("scaling", "specialist-count scaling on the full EW metric");
    add_common(sc);
    sc->add_option("--counts", counts_csv, "comma-separated specialist counts")->required();
    sc->callback([&, sc] {
        action = [&, sc] {
            auto c = cfg(sc);
            scaling_result r = run_scaling(c, int_list(counts_csv, "counts"));
            std::printf("scaling -> %s (%zu rows)\n", c.output_dir.c_str(), r.rows.size());
            return 0;
        };
    });

    auto* si = sweep->add_subcommand("shared-init", "base-checkpoint gap ablation");
    add_common(si);
    si->add_option("--gaps", gaps_csv, "comma-separated extra pretrain steps")->required();
    si->callback([&, si] {
        action = [&, si] {
            auto c = cfg(si);
            shared_init_result r =
                run_shared_init_ablation(c, long_list(gaps_csv, "gaps"), allow_mismatch);
            std::printf("shared-init -> %s (%zu conditions)\n", c.output_dir.c_str(),
                        r.rows.size());
            return 0;
        };
    });

    auto* he = sweep->add_subcommand("hetero", "per-specialist hyperparameter variations");
    add_common(he);
    he->add_option("--vary", vary_specs,
                   "condition:specialist:field:value (field: steps | lr | batch_size)");
    he->callback([&, he] {
        action = [&, he] {
            auto c = cfg(he);
            std::vector<hetero_variation> vars;
            for (const auto& vs : vary_specs) {
                std::vector<std::string> parts;
                std::stringstream ss(vs);
                std::string cur;
                while (std::getline(ss, cur, ':')) parts.push_back(cur);
                if (parts.size() != 4)
                    throw validation_error(cat("--vary '", vs,
                                               "' is not condition:specialist:field:value"));
                vars.push_back({parts[0], int(config_detail::to_long(parts[1], "--vary")),
                                parts[2], config_detail::to_double(parts[3], "--vary")});
            }
            hetero_result r = run_heterogeneous(c, vars);
            std::printf("hetero -> %s (%zu conditions)\n", c.output_dir.c_str(), r.rows.size());
            return 0;
        };
    });

    auto* rg = app.add_subcommand("regress", "OLS divergence-gain fit over a two-column CSV");
    rg->add_option("--points", points_path, "CSV of divergence_pct,gain_pct rows")->required();
    rg->add_option("--out", out_dir, "directory for regression.json + regression.csv");
    rg->callback([&] { action = [&] { return cmd_regress(points_path, out_dir); }; });

    auto* au = app.add_subcommand("audit", "re-derive every stored statistic in a results tree");
    au->add_option("dir", audit_dir, "results directory")->required();
    au->callback([&] { action = [&] { return cmd_audit(audit_dir); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        return action ? action() : 1;
    } catch (const coop::divergence_error& e) {
        std::fprintf(stderr, "numerical divergence: %s\n", e.what());
        return 3;
    } catch (const coop::validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
