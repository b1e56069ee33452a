#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include <coop/rng.hpp>
#include <coop/tensor.hpp>

using namespace coop;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

tensor random_tensor(std::vector<int> shape, rng& r, double scale = 1.0) {
    tensor t = tensor::zeros(std::move(shape));
    for (auto& v : t.data()) v = scale * r.normal();
    return t;
}

// contract a 2-d output to a scalar with fixed random weights so any op can
// feed backward(); w_l and w_r carry no grad
tensor to_scalar(const tensor& out, const tensor& w_l, const tensor& w_r) {
    return matmul(matmul(w_l, out), w_r);
}

// central finite differences against the analytic gradient, relative error
// <= 1e-4 per element (the library-wide gradient-check contract)
void gradcheck(std::vector<tensor> inputs, const std::vector<bool>& diff,
               const std::function<tensor(std::vector<tensor>&)>& f) {
    REQUIRE(inputs.size() == diff.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        inputs[i].requires_grad = diff[i];
        // copies share grad storage, so clear anything a previous check left
        if (inputs[i].has_grad()) inputs[i].zero_grad();
    }

    tensor loss = f(inputs);
    REQUIRE(loss.is_scalar());
    backward(loss);

    std::vector<std::vector<double>> analytic(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!diff[i]) continue;
        REQUIRE(inputs[i].has_grad());
        analytic[i] = inputs[i].grad();
    }

    const double h = 1e-5;
    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!diff[i]) continue;
        for (size_t j = 0; j < inputs[i].data().size(); ++j) {
            const double saved = inputs[i].data()[j];
            inputs[i].data()[j] = saved + h;
            const double lp = f(inputs).item();
            inputs[i].data()[j] = saved - h;
            const double lm = f(inputs).item();
            inputs[i].data()[j] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double ana = analytic[i][j];
            const double rel = std::abs(ana - numeric) / std::max(1e-4, std::abs(ana) + std::abs(numeric));
            INFO("input " << i << " element " << j << ": analytic " << ana << " numeric "
                          << numeric);
            REQUIRE(rel <= 1e-4);
        }
    }
}

} // namespace

TEST_CASE("matmul forward: all-ones 2x3 by 3x2 gives 3.0 everywhere") {
    tensor a({2, 3}, std::vector<double>(6, 1.0));
    tensor b({3, 2}, std::vector<double>(6, 1.0));
    tensor c = forward_op(op_kind::matmul, {a, b});
    REQUIRE(c.shape == std::vector<int>{2, 2});
    for (double v : c.data()) CHECK(v == 3.0);
}

TEST_CASE("matmul gradient") {
    rng r(1);
    tensor a = random_tensor({2, 3}, r);
    tensor b = random_tensor({3, 4}, r);
    tensor wl = random_tensor({1, 2}, r);
    tensor wr = random_tensor({4, 1}, r);
    gradcheck({a, b}, {true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::matmul, {in[0], in[1]}), wl, wr);
    });
}

TEST_CASE("add gradient, same shape and bias broadcast") {
    rng r(2);
    tensor wl = random_tensor({1, 3}, r);
    tensor wr = random_tensor({4, 1}, r);

    tensor a = random_tensor({3, 4}, r);
    tensor b = random_tensor({3, 4}, r);
    gradcheck({a, b}, {true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::add, {in[0], in[1]}), wl, wr);
    });

    tensor bias = random_tensor({4}, r);
    gradcheck({a, bias}, {true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::add, {in[0], in[1]}), wl, wr);
    });
}

TEST_CASE("layernorm gradient") {
    rng r(3);
    tensor x = random_tensor({3, 8}, r, 2.0);
    tensor gain = random_tensor({8}, r);
    tensor bias = random_tensor({8}, r);
    tensor wl = random_tensor({1, 3}, r);
    tensor wr = random_tensor({8, 1}, r);
    gradcheck({x, gain, bias}, {true, true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::layernorm, {in[0], in[1], in[2]}), wl, wr);
    });
}

TEST_CASE("layernorm rows are standardized before the affine map") {
    rng r(4);
    tensor x = random_tensor({5, 32}, r, 3.0);
    tensor gain({32}, std::vector<double>(32, 1.0));
    tensor bias({32}, std::vector<double>(32, 0.0));
    tensor y = layernorm(x, gain, bias);
    for (int row = 0; row < 5; ++row) {
        double mu = 0.0, var = 0.0;
        for (int c = 0; c < 32; ++c) mu += y.data()[size_t(row) * 32 + c];
        mu /= 32;
        for (int c = 0; c < 32; ++c) {
            const double d = y.data()[size_t(row) * 32 + c] - mu;
            var += d * d;
        }
        var /= 32;
        CHECK(std::abs(mu) <= 1e-9);
        CHECK(std::abs(var - 1.0) <= 1e-6);
    }
}

TEST_CASE("embedding_lookup gradient accumulates over repeated ids") {
    rng r(5);
    tensor table = random_tensor({10, 4}, r);
    tensor ids({5}, {1.0, 3.0, 1.0, 0.0, 9.0});
    tensor wl = random_tensor({1, 5}, r);
    tensor wr = random_tensor({4, 1}, r);
    gradcheck({table, ids}, {true, false}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::embedding_lookup, {in[0], in[1]}), wl, wr);
    });
}

TEST_CASE("softmax rows sum to one and stay in (0,1)") {
    rng r(6);
    tensor x = random_tensor({7, 11}, r, 5.0);
    tensor y = forward_op(op_kind::softmax, {x});
    for (int row = 0; row < 7; ++row) {
        double s = 0.0;
        for (int c = 0; c < 11; ++c) {
            const double v = y.data()[size_t(row) * 11 + c];
            REQUIRE(v > 0.0);
            REQUIRE(v < 1.0);
            s += v;
        }
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax of zeros is exactly uniform") {
    tensor x({1, 3}, {0.0, 0.0, 0.0});
    tensor y = softmax(x);
    for (double v : y.data()) CHECK(v == 1.0 / 3.0);
}

TEST_CASE("softmax gradient") {
    rng r(7);
    tensor x = random_tensor({3, 5}, r, 2.0);
    tensor wl = random_tensor({1, 3}, r);
    tensor wr = random_tensor({5, 1}, r);
    gradcheck({x}, {true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::softmax, {in[0]}), wl, wr);
    });
}

TEST_CASE("gelu gradient across sign changes") {
    tensor x({2, 6}, {-3.0, -1.0, -0.1, 0.0, 0.2, 1.5, 2.5, -2.0, 0.7, -0.4, 3.0, 0.05});
    rng r(8);
    tensor wl = random_tensor({1, 2}, r);
    tensor wr = random_tensor({6, 1}, r);
    gradcheck({x}, {true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::gelu, {in[0]}), wl, wr);
    });
}

TEST_CASE("attention gradient, single head") {
    rng r(9);
    tensor q = random_tensor({5, 4}, r);
    tensor k = random_tensor({5, 4}, r);
    tensor v = random_tensor({5, 4}, r);
    tensor wl = random_tensor({1, 5}, r);
    tensor wr = random_tensor({4, 1}, r);
    gradcheck({q, k, v}, {true, true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(forward_op(op_kind::scaled_dot_attention, {in[0], in[1], in[2]}), wl,
                         wr);
    });
}

TEST_CASE("attention gradient, multi-head batched") {
    rng r(10);
    tensor q = random_tensor({6, 4}, r); // batch 2, seq 3, heads 2
    tensor k = random_tensor({6, 4}, r);
    tensor v = random_tensor({6, 4}, r);
    tensor wl = random_tensor({1, 6}, r);
    tensor wr = random_tensor({4, 1}, r);
    gradcheck({q, k, v}, {true, true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(scaled_dot_attention(in[0], in[1], in[2], 2, 2), wl, wr);
    });
}

TEST_CASE("attention is causal") {
    rng r(11);
    tensor q = random_tensor({4, 2}, r);
    tensor k = random_tensor({4, 2}, r);
    tensor v = random_tensor({4, 2}, r);
    tensor out1 = scaled_dot_attention(q, k, v);

    // changing the last position's k/v must not affect earlier outputs
    tensor k2 = tensor(k.shape, k.data());
    tensor v2 = tensor(v.shape, v.data());
    k2.data()[6] += 10.0;
    k2.data()[7] -= 3.0;
    v2.data()[6] += 5.0;
    tensor out2 = scaled_dot_attention(q, k2, v2);
    for (int i = 0; i < 6; ++i) REQUIRE(out1.data()[size_t(i)] == out2.data()[size_t(i)]);
    REQUIRE(out1.data()[7] != out2.data()[7]);
}

TEST_CASE("cross_entropy of uniform logits is log vocab") {
    tensor logits = tensor::zeros({3, 128});
    tensor ids({3}, {0.0, 64.0, 127.0});
    tensor loss = forward_op(op_kind::cross_entropy, {logits, ids});
    CHECK_THAT(loss.item(), WithinAbs(std::log(128.0), 1e-12));
}

TEST_CASE("cross_entropy matches a hand summation") {
    rng r(12);
    tensor logits = random_tensor({4, 7}, r, 2.0);
    std::vector<int> targets = {2, 0, 6, 3};
    tensor ids({4}, {2.0, 0.0, 6.0, 3.0});
    tensor loss = forward_op(op_kind::cross_entropy, {logits, ids});

    double expect = 0.0;
    for (int row = 0; row < 4; ++row) {
        double s = 0.0;
        for (int c = 0; c < 7; ++c) s += std::exp(logits.data()[size_t(row) * 7 + c]);
        expect += std::log(s) - logits.data()[size_t(row) * 7 + targets[size_t(row)]];
    }
    expect /= 4.0;
    CHECK_THAT(loss.item(), WithinAbs(expect, 1e-12));
}

TEST_CASE("cross_entropy gradient") {
    rng r(13);
    tensor logits = random_tensor({6, 7}, r, 2.0);
    tensor ids({6}, {0.0, 6.0, 3.0, 3.0, 1.0, 5.0});
    gradcheck({logits, ids}, {true, false}, [&](std::vector<tensor>& in) {
        return forward_op(op_kind::cross_entropy, {in[0], in[1]});
    });
}

TEST_CASE("mix_logits gradient for gates and experts") {
    rng r(14);
    tensor gates = random_tensor({4, 3}, r);
    for (auto& g : gates.data()) g = 0.2 + std::abs(g); // keep away from the zero fast path
    tensor e0 = random_tensor({4, 5}, r);
    tensor e1 = random_tensor({4, 5}, r);
    tensor e2 = random_tensor({4, 5}, r);
    tensor wl = random_tensor({1, 4}, r);
    tensor wr = random_tensor({5, 1}, r);
    gradcheck({gates, e0, e1, e2}, {true, true, true, true}, [&](std::vector<tensor>& in) {
        return to_scalar(mix_logits(in[0], {in[1], in[2], in[3]}), wl, wr);
    });
}

TEST_CASE("mix_logits with one-hot gates selects bit-exactly") {
    rng r(15);
    tensor e0 = random_tensor({3, 4}, r);
    tensor e1 = random_tensor({3, 4}, r);
    tensor gates({3, 2}, {1.0, 0.0, 0.0, 1.0, 1.0, 0.0});
    tensor out = mix_logits(gates, {e0, e1});
    for (int c = 0; c < 4; ++c) {
        REQUIRE(out.data()[size_t(c)] == e0.data()[size_t(c)]);
        REQUIRE(out.data()[4 + size_t(c)] == e1.data()[4 + size_t(c)]);
        REQUIRE(out.data()[8 + size_t(c)] == e0.data()[8 + size_t(c)]);
    }
}

TEST_CASE("backward fundamentals") {
    SECTION("sum of a vector gives unit gradients") {
        tensor x({1, 4}, {1.0, 2.0, 3.0, 4.0}, true);
        tensor ones({4, 1}, std::vector<double>(4, 1.0));
        tensor loss = matmul(x, ones);
        backward(loss);
        for (double g : x.grad()) CHECK(g == 1.0);
    }
    SECTION("x times x gives 2x through fan-out accumulation") {
        tensor x({1, 1}, {3.0}, true);
        tensor loss = matmul(x, x);
        backward(loss);
        CHECK(x.grad()[0] == 6.0);
    }
    SECTION("non-scalar loss is rejected") {
        tensor x({2, 2}, {1.0, 2.0, 3.0, 4.0}, true);
        tensor y = gelu(x);
        REQUIRE_THROWS_AS(backward(y), validation_error);
    }
}

TEST_CASE("no tape is built when no input requires grad") {
    rng r(16);
    tensor a = random_tensor({3, 3}, r);
    tensor b = random_tensor({3, 3}, r);
    tensor c = matmul(a, b);
    CHECK_FALSE(c.requires_grad);
    CHECK(c.src == nullptr);

    a.requires_grad = true;
    tensor d = matmul(a, b);
    CHECK(d.requires_grad);
    CHECK(d.src != nullptr);
}

TEST_CASE("shape diagnostics name the op and shapes") {
    tensor a = tensor::zeros({2, 3});
    tensor b = tensor::zeros({2, 3});
    REQUIRE_THROWS_WITH(matmul(a, b),
                        ContainsSubstring("matmul") && ContainsSubstring("[2x3]"));
    REQUIRE_THROWS_WITH(add(a, tensor::zeros({3, 2})),
                        ContainsSubstring("add") && ContainsSubstring("[3x2]"));
    REQUIRE_THROWS_WITH(layernorm(a, tensor::zeros({5}), tensor::zeros({3})),
                        ContainsSubstring("layernorm"));
    REQUIRE_THROWS_WITH(scaled_dot_attention(a, a, a, 2),
                        ContainsSubstring("scaled_dot_attention") &&
                            ContainsSubstring("n_heads"));
    REQUIRE_THROWS_WITH(cross_entropy(a, {0, 1, 2}), ContainsSubstring("cross_entropy"));
    REQUIRE_THROWS_WITH(cross_entropy(a, {0, 9}), ContainsSubstring("outside vocab"));
    REQUIRE_THROWS_WITH(embedding_lookup(a, {0, 2}), ContainsSubstring("outside vocab"));
}

TEST_CASE("forward_op rejects non-finite inputs") {
    tensor a({2, 2}, {1.0, std::nan(""), 0.0, 2.0});
    tensor b = tensor::zeros({2, 2});
    REQUIRE_THROWS_WITH(forward_op(op_kind::matmul, {a, b}),
                        ContainsSubstring("matmul") && ContainsSubstring("non-finite"));
    REQUIRE_THROWS_WITH(forward_op(op_kind::gelu, {a}), ContainsSubstring("non-finite"));
}

TEST_CASE("forward_op validates id tensors") {
    tensor table = tensor::zeros({4, 2});
    tensor bad_ids({2}, {1.5, 0.0});
    REQUIRE_THROWS_WITH(forward_op(op_kind::embedding_lookup, {table, bad_ids}),
                        ContainsSubstring("non-integer"));
}

TEST_CASE("op pipelines are bit-deterministic") {
    auto run = [] {
        rng r(99);
        tensor x = random_tensor({6, 8}, r);
        tensor w = random_tensor({8, 8}, r);
        tensor g({8}, std::vector<double>(8, 1.0));
        tensor b = tensor::zeros({8});
        tensor h = gelu(matmul(layernorm(x, g, b), w));
        tensor a = scaled_dot_attention(h, h, h, 2, 2);
        return softmax(a).data();
    };
    REQUIRE(run() == run());
}
