#include <catch2/catch_amalgamated.hpp>

#include <coop/harness.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace coop;
namespace fs = std::filesystem;

namespace {

experiment_config tiny_experiment(const std::string& out) {
    experiment_config ec;
    ec.name = "tiny";
    ec.output_dir = out;
    ec.seeds = {7};
    ec.model.n_layers = 2;
    ec.model.d_model = 32;
    ec.model.n_heads = 2;
    ec.model.vocab = 128;
    ec.model.context = 48;
    ec.domains = {
        {"arithmetic_expressions", generator_kind::arithmetic_expressions, 0, 11, 60, 0.2},
        {"balanced_brackets", generator_kind::balanced_brackets, 0, 12, 60, 0.2},
        {"markov_dialect_0", generator_kind::markov_dialect, 0, 13, 60, 0.2},
    };
    ec.coop.pretrain_steps = 30;
    ec.coop.specialist_steps = 60;
    ec.coop.batch_size = 4;
    ec.coop.lr = 5e-4;
    ec.coop.freeze_layers = 1;
    ec.coop.mixture_chunks = 48;
    ec.router.kind = router_kind::linear;
    ec.router.input = router_input::specialist_mean;
    ec.router.steps = 40;
    ec.router.batch_size = 4;
    ec.router.lr = 0.03;
    ec.router.mixture_chunks = 24;
    return ec;
}

fs::path fresh_dir(const std::string& leaf) {
    const fs::path p = fs::temp_directory_path() / "coop_harness_tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ordered_json load_json(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    return ordered_json::parse(in);
}

void dump_json(const ordered_json& j, const fs::path& p) {
    std::ofstream out(p, std::ios::binary);
    out << j.dump(2) << "\n";
}

// run_core output reused across sections; built once because training, while
// tiny, still dominates this suite's runtime
const core_result& shared_core() {
    static const fs::path dir = fresh_dir("core_a");
    static const core_result res = run_core(tiny_experiment(dir.string()));
    return res;
}

} // namespace

TEST_CASE("config round-trip through its canonical serialization") {
    experiment_config ec = tiny_experiment("runs/tiny");
    const std::string text = write_config(ec);
    experiment_config back = experiment_from_config(parse_config(text));
    CHECK(write_config(back) == text);
    CHECK(back.seeds == ec.seeds);
    CHECK(back.domains.size() == 3);
    CHECK(back.router.lr == ec.router.lr);
    CHECK(back.coop.freeze_layers == 1);
}

TEST_CASE("core run writes the full results tree") {
    const core_result& res = shared_core();
    const fs::path dir = fs::temp_directory_path() / "coop_harness_tests" / "core_a";

    for (const char* f : {"config.txt", "aggregate.json", "divergence_gain.csv",
                          "manifest.json", "seed_7/report.json",
                          "seed_7/cross_domain_matrix.csv", "seed_7/base.ckpt",
                          "seed_7/specialist_arithmetic_expressions.ckpt",
                          "seed_7/specialist_balanced_brackets.ckpt",
                          "seed_7/specialist_markov_dialect_0.ckpt"}) {
        INFO(f);
        CHECK(fs::exists(dir / f));
    }

    REQUIRE(res.per_seed.size() == 1);
    const ordered_json& rep = res.per_seed[0].report;
    for (const char* block : {"base", "specialists", "fused", "oracle", "uniform", "hard",
                              "sparse", "weight_avg"}) {
        INFO(block);
        CHECK(rep.contains(block));
    }
    CHECK(rep["eval_batch_size"] == 4);
    CHECK(rep["seed"] == 7);
    CHECK(rep["specialists"].size() == 3);
    CHECK(rep["fused"]["routing"]["per_domain_gate_mass"].size() == 3);
    CHECK(rep["sparse"].contains("agreement_pct"));

    const ordered_json agg = load_json(dir / "aggregate.json");
    REQUIRE(agg.contains("metrics"));
    const auto& m = agg["metrics"];
    for (const char* k : {"base_ew_loss", "fused_ew_loss", "fused_vs_base_pct",
                          "best_specialist_ew", "mean_divergence_pct", "oracle_ew_loss",
                          "uniform_ew_loss", "hard_ew_loss", "sparse_ew_loss",
                          "weight_avg_ew_loss"}) {
        INFO(k);
        CHECK(m.contains(k));
    }
    CHECK(m["fused_ew_loss"]["per_seed"].size() == 1);
    CHECK(m["fused_ew_loss"]["std"].get<double>() == 0.0); // single seed
    CHECK(m["fused_ew_loss"]["mean"].get<double>() ==
          rep["fused"]["ew_loss"].get<double>());

    const ordered_json man = load_json(dir / "manifest.json");
    CHECK(man["format_version"] == 1);
    CHECK(man["suite"] == "core");
    CHECK(man["errors"].empty());
    CHECK(man["seeds"] == ordered_json::array({7}));
    for (const auto& rel : man["report_files"])
        CHECK(fs::exists(dir / rel.get<std::string>()));
    CHECK(man["digests"].size() == 4); // base + three specialists
    CHECK(man["timings_sec"].contains("total"));

    // the emitted tree must satisfy its own audit
    const audit_report audit = audit_results(dir.string());
    for (const auto& i : audit.issues) INFO(i);
    CHECK(audit.passed());
    CHECK(audit.checks_run > 20);
}

TEST_CASE("identical config reproduces digests and report bytes") {
    const core_result& a = shared_core();
    const fs::path dir_b = fresh_dir("core_b");
    experiment_config ec = tiny_experiment(dir_b.string());
    const core_result b = run_core(ec);

    REQUIRE(a.per_seed.size() == b.per_seed.size());
    CHECK(a.per_seed[0].base.digest == b.per_seed[0].base.digest);
    for (size_t i = 0; i < 3; ++i)
        CHECK(a.per_seed[0].specialists[i].digest == b.per_seed[0].specialists[i].digest);
    CHECK(a.per_seed[0].report.dump() == b.per_seed[0].report.dump());
    CHECK(a.aggregate.dump() == b.aggregate.dump());

    const fs::path dir_a = fs::temp_directory_path() / "coop_harness_tests" / "core_a";
    CHECK(read_text_file(dir_a / "seed_7/report.json") ==
          read_text_file(dir_b / "seed_7/report.json"));
    CHECK(read_text_file(dir_a / "divergence_gain.csv") ==
          read_text_file(dir_b / "divergence_gain.csv"));
}

TEST_CASE("audit detects constructed corruptions") {
    shared_core();
    const fs::path src = fs::temp_directory_path() / "coop_harness_tests" / "core_a";

    SECTION("ew_loss inconsistent with its per-domain losses") {
        const fs::path dir = fresh_dir("corrupt_ew");
        fs::copy(src, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        ordered_json rep = load_json(dir / "seed_7/report.json");
        rep["fused"]["ew_loss"] = rep["fused"]["ew_loss"].get<double>() + 0.01;
        dump_json(rep, dir / "seed_7/report.json");
        const audit_report a = audit_results(dir.string());
        CHECK_FALSE(a.passed());
        bool named = false;
        for (const auto& i : a.issues)
            if (i.find("report.json") != std::string::npos &&
                i.find("fused.ew_loss") != std::string::npos)
                named = true;
        CHECK(named);
    }

    SECTION("aggregate mean drifts from the per-seed values") {
        const fs::path dir = fresh_dir("corrupt_mean");
        fs::copy(src, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        ordered_json agg = load_json(dir / "aggregate.json");
        agg["metrics"]["fused_ew_loss"]["mean"] =
            agg["metrics"]["fused_ew_loss"]["mean"].get<double>() + 0.001;
        dump_json(agg, dir / "aggregate.json");
        const audit_report a = audit_results(dir.string());
        CHECK_FALSE(a.passed());
        bool named = false;
        for (const auto& i : a.issues)
            if (i.find("fused_ew_loss.mean") != std::string::npos) named = true;
        CHECK(named);
    }

    SECTION("declared seed loses its report") {
        const fs::path dir = fresh_dir("corrupt_seed");
        fs::copy(src, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        fs::remove(dir / "seed_7/report.json");
        const audit_report a = audit_results(dir.string());
        CHECK_FALSE(a.passed());
        bool missing = false, unseeded = false;
        for (const auto& i : a.issues) {
            if (i.find("cannot read") != std::string::npos) missing = true;
            if (i.find("declared seed 7") != std::string::npos) unseeded = true;
        }
        CHECK(missing);
        CHECK(unseeded);
    }

    SECTION("unreadable JSON is an issue, not a crash") {
        const fs::path dir = fresh_dir("corrupt_garbage");
        fs::copy(src, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        std::ofstream(dir / "seed_7/report.json") << "{not json";
        const audit_report a = audit_results(dir.string());
        CHECK_FALSE(a.passed());
        bool parse_issue = false;
        for (const auto& i : a.issues)
            if (i.find("cannot parse") != std::string::npos) parse_issue = true;
        CHECK(parse_issue);
    }

    SECTION("pristine copy still passes") {
        const fs::path dir = fresh_dir("corrupt_none");
        fs::copy(src, dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
        CHECK(audit_results(dir.string()).passed());
    }

    SECTION("empty directory fails with a named issue") {
        const fs::path dir = fresh_dir("corrupt_empty");
        const audit_report a = audit_results(dir.string());
        CHECK_FALSE(a.passed());
        REQUIRE(a.issues.size() == 1);
        CHECK(a.issues[0].find("no manifest.json") != std::string::npos);
    }
}

TEST_CASE("crossover grid: shape, leaders, cell independence") {
    const fs::path dir = fresh_dir("crossover");
    experiment_config ec = tiny_experiment(dir.string());
    const crossover_result r = run_crossover(ec, {20, 40}, {0, 1});
    REQUIRE(r.cells.size() == 4);

    for (long s : {20L, 40L}) {
        int leaders = 0;
        double best = -1e300;
        for (const auto& c : r.cells)
            if (c.specialist_steps == s) best = std::max(best, c.gain_vs_base_pct);
        for (const auto& c : r.cells)
            if (c.specialist_steps == s && c.leader) {
                ++leaders;
                CHECK(c.gain_vs_base_pct == best);
            }
        CHECK(leaders == 1);
    }

    const std::string csv = read_text_file(dir / "crossover.csv");
    CHECK(csv.rfind("specialist_steps,freeze_k,fused_ew,gain_vs_base_pct,leader\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

    // rerunning one cell in isolation reproduces its value bit-exactly
    const fs::path dir2 = fresh_dir("crossover_cell");
    experiment_config ec2 = tiny_experiment(dir2.string());
    const crossover_result r2 = run_crossover(ec2, {40}, {1});
    REQUIRE(r2.cells.size() == 1);
    for (const auto& c : r.cells)
        if (c.specialist_steps == 40 && c.freeze_k == 1)
            CHECK(c.fused_ew == r2.cells[0].fused_ew);

    CHECK_THROWS_AS(run_crossover(ec, {}, {0}), validation_error);
    CHECK_THROWS_AS(run_crossover(ec, {20}, {5}), validation_error);
}

TEST_CASE("scaling table: row count, degenerate single-specialist row") {
    const fs::path dir = fresh_dir("scaling");
    experiment_config ec = tiny_experiment(dir.string());
    const scaling_result r = run_scaling(ec, {1, 2, 3});
    REQUIRE(r.rows.size() == 3);
    CHECK(r.rows[0].n_specialists == 1);
    // one specialist fused is that specialist: no gain over itself
    CHECK(r.rows[0].gain_vs_best_pct == 0.0);
    CHECK(r.rows[0].fused_ew == r.rows[0].best_specialist_ew);
    const std::string csv = read_text_file(dir / "scaling.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK_THROWS_AS(run_scaling(ec, {4}), validation_error);
    CHECK_THROWS_AS(run_scaling(ec, {}), validation_error);
}

TEST_CASE("shared-init ablation: waiver rules and matched reproducibility") {
    const fs::path dir = fresh_dir("shared_init");
    experiment_config ec = tiny_experiment(dir.string());
    CHECK_THROWS_WITH(run_shared_init_ablation(ec, {0, 10}, false),
                      Catch::Matchers::ContainsSubstring("allow-mismatch"));
    CHECK_THROWS_AS(run_shared_init_ablation(ec, {}, true), validation_error);
    CHECK_THROWS_AS(run_shared_init_ablation(ec, {-5}, true), validation_error);

    const shared_init_result r = run_shared_init_ablation(ec, {0, 10}, true);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].condition == "matched");
    CHECK(r.rows[1].condition == "gap_10");
    CHECK(r.rows[0].confusion >= 0.0);
    CHECK(r.rows[0].confusion <= 1.0);

    // the matched condition is the core pipeline: same fused loss as run_core
    const core_result& core = shared_core();
    CHECK(r.rows[0].fused_ew ==
          core.per_seed[0].report["fused"]["ew_loss"].get<double>());
}

TEST_CASE("heterogeneous conditions: control identity and validation") {
    const fs::path dir = fresh_dir("hetero");
    experiment_config ec = tiny_experiment(dir.string());

    const hetero_result control_only = run_heterogeneous(ec, {});
    REQUIRE(control_only.rows.size() == 1);
    CHECK(control_only.rows[0].condition == "control");
    CHECK(control_only.rows[0].delta_vs_control_pp == 0.0);

    const fs::path dir2 = fresh_dir("hetero_vary");
    experiment_config ec2 = tiny_experiment(dir2.string());
    const hetero_result r =
        run_heterogeneous(ec2, {{"diff_steps", 1, "steps", 30.0}});
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].fused_ew == control_only.rows[0].fused_ew);
    CHECK(r.rows[1].condition == "diff_steps");
    CHECK(r.rows[1].delta_vs_control_pp ==
          r.rows[1].gain_vs_best_pct - r.rows[0].gain_vs_best_pct);
    // halving one specialist's training shrinks its own-domain divergence
    CHECK(r.rows[1].modified_own_divergence_pct <
          r.rows[0].modified_own_divergence_pct);

    CHECK_THROWS_AS(run_heterogeneous(ec, {{"bad", 0, "momentum", 1.0}}), validation_error);
    CHECK_THROWS_AS(run_heterogeneous(ec, {{"bad", 9, "lr", 1e-3}}), validation_error);
    CHECK_THROWS_AS(run_heterogeneous(ec, {{"bad", 0, "lr", -1.0}}), validation_error);
}

TEST_CASE("regression helper: CSV ingestion and residuals") {
    const fs::path dir = fresh_dir("regress");
    const fs::path csv = dir / "points.csv";
    std::ofstream(csv) << "divergence_pct,gain_pct\n"
                       << "10.4,5.91\n15.65,10.07\n18.61,12.76\n"
                       << "21.95,15.21\n24.37,17.05\n31.92,23.55\n";
    const auto pts = read_points_csv(csv.string());
    REQUIRE(pts.size() == 6);
    CHECK(pts[0].first == 10.4);
    CHECK(pts[5].second == 23.55);

    const regress_output r = regress_points(pts);
    const regression_fit direct = fit_divergence_gain(pts);
    CHECK(r.fit.slope == direct.slope);
    CHECK(r.fit.intercept == direct.intercept);
    REQUIRE(r.points.size() == 6);
    for (const auto& p : r.points)
        CHECK(p.residual == Catch::Approx(p.gain_pct - (r.fit.intercept +
                                                        r.fit.slope * p.divergence_pct))
                                .margin(1e-12));
    const std::string rcsv = regress_csv(r);
    CHECK(std::count(rcsv.begin(), rcsv.end(), '\n') == 7);

    const ordered_json j = regress_json(r);
    CHECK(j["n"] == 6);
    CHECK(j.contains("zero_gain_divergence"));

    std::ofstream(csv) << "1.0\n";
    CHECK_THROWS_AS(read_points_csv(csv.string()), validation_error);
    CHECK_THROWS_AS(read_points_csv((dir / "absent.csv").string()), validation_error);
}

TEST_CASE("aggregate metric extraction") {
    ordered_json rep;
    rep["base"]["ew_loss"] = 2.0;
    rep["fused"]["ew_loss"] = 1.5;
    rep["fused"]["vs_base_pct"] = 25.0;
    CHECK(report_metric(rep, "base_ew_loss") == 2.0);
    CHECK(report_metric(rep, "fused_vs_base_pct") == 25.0);
    CHECK_FALSE(report_metric(rep, "oracle_ew_loss").has_value());
    CHECK_FALSE(report_metric(rep, "unheard_of").has_value());
}
