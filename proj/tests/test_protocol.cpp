#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "coop/corpus.hpp"
#include "coop/protocol.hpp"

using namespace coop;
using Catch::Matchers::WithinAbs;

namespace {

model_config tiny_config() {
    model_config c;
    c.n_layers = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.vocab = 128;
    c.context = 16;
    return c;
}

domain_data tiny_domain(generator_kind kind, uint64_t seed, int context = 16,
                        int n_chunks = 20) {
    domain_spec ds;
    ds.name = generator_name(kind);
    ds.kind = kind;
    ds.seed = seed;
    ds.n_chunks = n_chunks;
    ds.holdout_frac = 0.10;
    return generate_domain(ds, context);
}

} // namespace

TEST_CASE("training reduces loss and logs every step") {
    const model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::copy_tasks, 7);
    model m = init_model(cfg, 1);
    train_opts to;
    to.steps = 60;
    to.batch_size = 4;
    to.seed = 5;
    training_log log;
    log = train_lm(m, dom.train, to);
    REQUIRE(log.records.size() == 60);
    CHECK(log.records.front().step == 1);
    CHECK(log.records.back().step == 60);
    CHECK(log.final_loss == log.records.back().loss);
    // warmup then decay-free plateau: lr positive everywhere
    for (const auto& r : log.records) CHECK(r.lr > 0.0);
    const double first5 = (log.records[0].loss + log.records[1].loss + log.records[2].loss +
                           log.records[3].loss + log.records[4].loss) / 5.0;
    const double last5 = (log.records[55].loss + log.records[56].loss + log.records[57].loss +
                          log.records[58].loss + log.records[59].loss) / 5.0;
    CHECK(last5 < first5);
}

TEST_CASE("training validation") {
    const model_config cfg = tiny_config();
    model m = init_model(cfg, 1);
    train_opts to;
    to.steps = -1;
    CHECK_THROWS_AS(train_lm(m, {}, to), validation_error);
    to.steps = 1;
    CHECK_THROWS_AS(train_lm(m, {}, to), validation_error);
    to.batch_size = 0;
    CHECK_THROWS_AS(train_lm(m, {{1, 2, 3}}, to), validation_error);
    to.batch_size = 1;
    CHECK_THROWS_AS(train_lm(m, {{1, 2, 3}, {1, 2}}, to), validation_error);
    to.steps = 0;
    auto log = train_lm(m, {}, to);
    CHECK(log.records.empty());
}

TEST_CASE("base provenance and determinism") {
    const model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::copy_tasks, 9);
    train_opts to;
    to.steps = 10;
    to.batch_size = 2;
    to.seed = 3;
    checkpoint a = make_base(cfg, 11, dom.train, to);
    checkpoint b = make_base(cfg, 11, dom.train, to);
    CHECK(a.digest == b.digest);
    CHECK(a.prov.method == "base");
    CHECK(a.prov.seed == 11);
    CHECK(a.prov.train_steps == 10);
    CHECK(a.prov.base_digest.empty());
    CHECK(a.cfg.freeze_layers == 0);

    checkpoint c = make_base(cfg, 12, dom.train, to);
    CHECK(a.digest != c.digest);
}

TEST_CASE("specialists keep frozen arrays bit-identical to the base") {
    model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::arithmetic_expressions, 13);
    train_opts to;
    to.steps = 8;
    to.batch_size = 2;
    to.seed = 21;
    checkpoint base = make_base(cfg, 31, dom.train, to);

    const int k = 1;
    checkpoint spec = train_specialist(base, dom, k, to);
    CHECK(spec.prov.base_digest == base.digest);
    CHECK(spec.prov.method == "specialist");
    CHECK(spec.prov.domain_label == dom.spec.name);
    CHECK(spec.cfg.freeze_layers == k);

    REQUIRE(spec.weights.size() == base.weights.size());
    bool any_changed = false;
    for (size_t i = 0; i < base.weights.size(); ++i) {
        const auto& [name, vals] = base.weights[i];
        REQUIRE(spec.weights[i].first == name);
        const bool frozen = name == "tok_embed.w" || name == "pos_embed.w" ||
                            name.rfind("layer0.", 0) == 0;
        if (frozen) {
            CHECK(spec.weights[i].second == vals); // bit-identical
        } else if (spec.weights[i].second != vals) {
            any_changed = true;
        }
    }
    CHECK(any_changed);
}

TEST_CASE("zero-step specialist keeps the base weights and a fresh identity") {
    const model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::copy_tasks, 17);
    train_opts to;
    to.steps = 2;
    to.batch_size = 2;
    checkpoint base = make_base(cfg, 41, dom.train, to);

    train_opts none = to;
    none.steps = 0;
    checkpoint spec = train_specialist(base, dom, 0, none);
    for (size_t i = 0; i < base.weights.size(); ++i)
        CHECK(spec.weights[i].second == base.weights[i].second);
    // same config + same weights hash identically; provenance is excluded
    CHECK(spec.digest == base.digest);
    CHECK(spec.prov.method == "specialist");
}

TEST_CASE("monolithic baseline provenance") {
    const model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::copy_tasks, 19);
    train_opts to;
    to.steps = 6;
    to.batch_size = 2;
    checkpoint mono = train_monolithic(cfg, 51, dom.train, to);
    CHECK(mono.prov.method == "monolithic");
    CHECK(mono.prov.train_steps == 6);
    CHECK(mono.cfg.freeze_layers == 0);
    CHECK_THAT(mono.prov.param_ratio, WithinAbs(1.0, 1e-15));
}

TEST_CASE("widened config reaches the parameter ratio") {
    const model_config cfg; // default 4-layer model
    const model_config wide = widen_config(cfg, 3.0);
    CHECK(wide.d_model > cfg.d_model);
    CHECK(wide.d_model % cfg.n_heads == 0);
    CHECK(double(wide.param_count()) >= 3.0 * double(cfg.param_count()));
    // minimality: one width notch narrower falls short
    model_config narrower = wide;
    narrower.d_model -= cfg.n_heads;
    CHECK(double(narrower.param_count()) < 3.0 * double(cfg.param_count()));
    CHECK(wide.freeze_layers == 0);
    CHECK_THROWS_AS(widen_config(cfg, 1.0), validation_error);
}

TEST_CASE("wider baseline records its parameter ratio") {
    const model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::copy_tasks, 23);
    train_opts to;
    to.steps = 2;
    to.batch_size = 2;
    checkpoint wide = train_wider(cfg, 3.0, 61, dom.train, to);
    CHECK(wide.prov.method == "wider");
    CHECK(wide.prov.param_ratio >= 3.0);
    CHECK(wide.cfg.d_model > cfg.d_model);
}

TEST_CASE("diverged training names the last completed step") {
    const model_config cfg = tiny_config();
    auto dom = tiny_domain(generator_kind::copy_tasks, 29);
    model m = init_model(cfg, 71);
    // a poisoned weight makes the very first loss non-finite
    m.params[0].second.data()[0] = std::numeric_limits<double>::quiet_NaN();
    train_opts to;
    to.steps = 5;
    to.batch_size = 2;
    try {
        train_lm(m, dom.train, to);
        FAIL("expected divergence_error");
    } catch (const divergence_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("last completed step 0") != std::string::npos);
    }
}
