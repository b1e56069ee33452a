#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <coop/checkpoint.hpp>
#include <coop/model.hpp>

using namespace coop;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

model_config tiny_config() {
    model_config cfg;
    cfg.n_layers = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.vocab = 24;
    cfg.context = 12;
    return cfg;
}

} // namespace

TEST_CASE("config validation and parameter count") {
    model_config cfg; // defaults: 4 layers, d 128, 4 heads, vocab 128, context 128
    cfg.validate();
    CHECK(cfg.param_count() == 842496);

    model_config bad = cfg;
    bad.d_model = 130; // not divisible by 4 heads
    REQUIRE_THROWS_AS(bad.validate(), validation_error);
    bad = cfg;
    bad.freeze_layers = 5;
    REQUIRE_THROWS_AS(bad.validate(), validation_error);

    // the closed-form count matches the sum over the actual array layout
    for (const auto& c : {cfg, tiny_config()}) {
        long total = 0;
        for (const auto& d : array_layout(c)) {
            long n = 1;
            for (int s : d.shape) n *= s;
            total += n;
        }
        CHECK(total == c.param_count());
    }
    CHECK(array_layout(cfg).size() == 2 + 16 * 4 + 3);
}

TEST_CASE("initialization is deterministic and seed-sensitive") {
    const auto cfg = tiny_config();
    const std::string d1 = to_checkpoint(init_model(cfg, 7)).digest;
    const std::string d2 = to_checkpoint(init_model(cfg, 7)).digest;
    CHECK(d1 == d2);
    CHECK(d1.size() == 64);

    std::set<std::string> digests;
    for (uint64_t s = 0; s < 20; ++s) digests.insert(to_checkpoint(init_model(cfg, s)).digest);
    CHECK(digests.size() == 20);
}

TEST_CASE("initialization shapes the right distributions") {
    model_config cfg; // full size for stable statistics
    model m = init_model(cfg, 3);

    for (double v : m.named("layer0.ln1.g").data()) REQUIRE(v == 1.0);
    for (double v : m.named("layer0.attn.bq").data()) REQUIRE(v == 0.0);
    for (double v : m.named("lnf.b").data()) REQUIRE(v == 0.0);

    auto sample_std = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x * x;
        return std::sqrt(s / double(v.size()));
    };
    CHECK_THAT(sample_std(m.named("tok_embed").data()), WithinAbs(0.02, 0.002));
    // residual-facing projections are shrunk by 1/sqrt(2 * n_layers)
    const double expect = 0.02 / std::sqrt(2.0 * cfg.n_layers);
    CHECK_THAT(sample_std(m.named("layer0.attn.wo").data()), WithinAbs(expect, 0.001));
    CHECK_THAT(sample_std(m.named("layer2.mlp.w2").data()), WithinAbs(expect, 0.001));
}

TEST_CASE("forward produces the right shapes, including a single token") {
    model m = init_model(tiny_config(), 1);
    auto r = forward(m, {1, 2, 3, 4, 5});
    CHECK(r.logits.shape == std::vector<int>{5, 24});
    CHECK(r.hidden_final.shape == std::vector<int>{5, 16});

    auto r1 = forward(m, {7});
    CHECK(r1.logits.shape == std::vector<int>{1, 24});

    auto rb = forward(m, {1, 2, 3, 4, 5, 6}, 2); // batch 2, seq 3
    CHECK(rb.logits.shape == std::vector<int>{6, 24});
    // first sequence of the batch matches running it alone
    auto ra = forward(m, {1, 2, 3});
    for (size_t i = 0; i < ra.logits.data().size(); ++i)
        REQUIRE_THAT(rb.logits.data()[i], WithinAbs(ra.logits.data()[i], 1e-12));

    REQUIRE_THROWS_WITH(forward(m, std::vector<int>(13, 1)), ContainsSubstring("context"));
    REQUIRE_THROWS_AS(forward(m, {1, 2, 3}, 2), validation_error);
    REQUIRE_THROWS_WITH(forward(m, {0, 24}), ContainsSubstring("outside vocab"));
}

TEST_CASE("evaluation forwards record no tape, training forwards do") {
    model m = init_model(tiny_config(), 1);
    m.set_training(false);
    auto r = forward(m, {1, 2, 3});
    CHECK_FALSE(r.logits.requires_grad);
    CHECK(r.logits.src == nullptr);

    m.set_training(true);
    auto rt = forward(m, {1, 2, 3});
    CHECK(rt.logits.requires_grad);
    tensor loss = cross_entropy(rt.logits, {2, 3, 4});
    backward(loss);
    REQUIRE(m.named("tok_embed").has_grad());
    double gsum = 0;
    for (double g : m.named("tok_embed").grad()) gsum += std::abs(g);
    CHECK(gsum > 0.0);
    m.set_training(false);
}

TEST_CASE("frozen prefix hidden state at depth zero is the embedding sum") {
    auto cfg = tiny_config();
    cfg.freeze_layers = 0;
    model m = init_model(cfg, 5);
    auto r = forward(m, {3, 7});
    const auto& tok = m.named("tok_embed").data();
    const auto& pos = m.named("pos_embed").data();
    const int d = cfg.d_model;
    for (int j = 0; j < d; ++j) {
        REQUIRE(r.hidden_freeze.data()[size_t(j)] == tok[size_t(3 * d + j)] + pos[size_t(j)]);
        REQUIRE(r.hidden_freeze.data()[size_t(d + j)] ==
                tok[size_t(7 * d + j)] + pos[size_t(d + j)]);
    }
}

TEST_CASE("models sharing a frozen prefix agree on the prefix hidden state") {
    auto cfg = tiny_config();
    cfg.freeze_layers = 1;
    model a = init_model(cfg, 9);
    model b = init_model(cfg, 9);
    for (double& v : b.named("layer1.mlp.w1").data()) v += 0.05;
    for (double& v : b.named("unembed.w").data()) v -= 0.03;

    auto ra = forward(a, {1, 2, 3, 4});
    auto rb = forward(b, {1, 2, 3, 4});
    for (size_t i = 0; i < ra.hidden_freeze.data().size(); ++i)
        REQUIRE(ra.hidden_freeze.data()[i] == rb.hidden_freeze.data()[i]);
    double diff = 0;
    for (size_t i = 0; i < ra.logits.data().size(); ++i)
        diff += std::abs(ra.logits.data()[i] - rb.logits.data()[i]);
    CHECK(diff > 0.0);
}

TEST_CASE("freeze mask exempts embeddings and early blocks") {
    auto cfg = tiny_config();
    cfg.freeze_layers = 1;
    const auto layout = array_layout(cfg);
    const auto mask = trainable_mask(cfg);
    for (size_t i = 0; i < layout.size(); ++i) {
        const auto& n = layout[i].name;
        const bool frozen = n == "tok_embed" || n == "pos_embed" || n.starts_with("layer0.");
        CHECK(mask[i] == !frozen);
    }
}

TEST_CASE("checkpoints round-trip through bytes and files bit-exactly") {
    const auto cfg = tiny_config();
    model m = init_model(cfg, 11);
    provenance prov;
    prov.seed = 11;
    prov.train_steps = 0;
    prov.domain_label = "arith";
    prov.method = "specialist";
    prov.param_ratio = 1.0;
    prov.base_digest = std::string(64, 'a');
    checkpoint ck = to_checkpoint(m, prov);

    std::string buf = serialize_checkpoint(ck);
    checkpoint rt = parse_checkpoint(reinterpret_cast<const uint8_t*>(buf.data()), buf.size(),
                                     "buffer");
    CHECK(rt.digest == ck.digest);
    CHECK(rt.prov.seed == 11);
    CHECK(rt.prov.domain_label == "arith");
    CHECK(rt.prov.method == "specialist");
    CHECK(rt.prov.base_digest == prov.base_digest);
    CHECK(rt.prov.param_ratio == 1.0);
    REQUIRE(rt.weights.size() == ck.weights.size());
    for (size_t i = 0; i < ck.weights.size(); ++i) {
        REQUIRE(rt.weights[i].first == ck.weights[i].first);
        REQUIRE(rt.weights[i].second == ck.weights[i].second);
    }

    const std::string path = "roundtrip.ckpt";
    save_checkpoint(ck, path);
    checkpoint from_file = load_checkpoint(path);
    CHECK(from_file.digest == ck.digest);

    model back = to_model(from_file);
    for (size_t i = 0; i < m.params.size(); ++i)
        REQUIRE(back.params[i].second.data() == m.params[i].second.data());
    std::remove(path.c_str());
}

TEST_CASE("digest covers config and weights but not provenance") {
    model m = init_model(tiny_config(), 2);
    provenance p1;
    p1.domain_label = "first";
    provenance p2;
    p2.domain_label = "relabelled";
    p2.seed = 999;
    CHECK(to_checkpoint(m, p1).digest == to_checkpoint(m, p2).digest);

    checkpoint ck = to_checkpoint(m, p1);
    ck.cfg.freeze_layers = 1; // config participates in identity
    CHECK(compute_digest(ck) != to_checkpoint(m, p1).digest);

    checkpoint cw = to_checkpoint(m, p1);
    cw.weights[3].second[0] += 1e-12;
    CHECK(compute_digest(cw) != ck.digest);
}

TEST_CASE("corrupted checkpoint bytes are rejected") {
    model m = init_model(tiny_config(), 4);
    checkpoint ck = to_checkpoint(m);
    std::string buf = serialize_checkpoint(ck);
    auto parse = [](const std::string& b) {
        return parse_checkpoint(reinterpret_cast<const uint8_t*>(b.data()), b.size(), "t");
    };

    std::string flipped = buf;
    flipped[flipped.size() - 200] ^= 0x01; // inside the weights block
    REQUIRE_THROWS_WITH(parse(flipped), ContainsSubstring("digest mismatch"));

    std::string truncated = buf.substr(0, buf.size() / 2);
    REQUIRE_THROWS_WITH(parse(truncated), ContainsSubstring("truncated"));

    std::string magic = buf;
    magic[0] = 'X';
    REQUIRE_THROWS_WITH(parse(magic), ContainsSubstring("bad magic"));

    std::string version = buf;
    version[8] = 9; // little-endian u32 version field
    REQUIRE_THROWS_WITH(parse(version),
                        ContainsSubstring("format version") && ContainsSubstring("9"));
}

TEST_CASE("serialization validates digests and layout") {
    model m = init_model(tiny_config(), 4);
    checkpoint ck = to_checkpoint(m);
    ck.prov.base_digest = "abc"; // not 64 hex chars
    REQUIRE_THROWS_WITH(serialize_checkpoint(ck), ContainsSubstring("64 hex"));

    checkpoint shaped = to_checkpoint(m);
    shaped.weights[0].second.pop_back();
    REQUIRE_THROWS_AS(serialize_checkpoint(shaped), validation_error);
    REQUIRE_THROWS_AS(to_model(shaped), validation_error);
}
