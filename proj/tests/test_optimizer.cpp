#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include <coop/optimizer.hpp>
#include <coop/tensor.hpp>

using namespace coop;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

TEST_CASE("linear warmup schedule") {
    adamw_opts o;
    o.lr = 2e-4;
    o.warmup_fraction = 0.1;
    o.total_steps = 100;
    adamw opt(o);
    CHECK_THAT(opt.effective_lr(1), WithinAbs(0.1 * 2e-4, 1e-18));
    CHECK_THAT(opt.effective_lr(5), WithinAbs(0.5 * 2e-4, 1e-18));
    CHECK_THAT(opt.effective_lr(10), WithinAbs(2e-4, 1e-18));
    CHECK_THAT(opt.effective_lr(100), WithinAbs(2e-4, 1e-18));
}

TEST_CASE("zero gradients and zero decay are a fixed point") {
    tensor w({2, 2}, {1.0, -2.0, 3.0, 0.5}, true);
    w.ensure_grad();
    std::vector<param_ref> params = {{"w", &w, true}};
    adamw_opts o;
    o.weight_decay = 0.0;
    o.total_steps = 10;
    adamw opt(o);
    opt.step(params);
    CHECK(w.data() == std::vector<double>{1.0, -2.0, 3.0, 0.5});
    CHECK(opt.step_count() == 1);
}

TEST_CASE("three steps of a scalar match a hand-rolled reference") {
    adamw_opts o;
    o.lr = 1e-2;
    o.weight_decay = 0.1; // ignored: parameter is 1-d
    o.warmup_fraction = 0.5;
    o.total_steps = 4;

    tensor x({1}, {1.0}, true);
    std::vector<param_ref> params = {{"x", &x, true}};
    adamw opt(o);

    // independent reference of the same update rule
    double rx = 1.0, m = 0.0, v = 0.0;
    for (long t = 1; t <= 3; ++t) {
        x.ensure_grad();
        x.grad()[0] = 1.0;
        opt.step(params);

        const double g = 1.0;
        m = o.beta1 * m + (1.0 - o.beta1) * g;
        v = o.beta2 * v + (1.0 - o.beta2) * g * g;
        const double lr_t = o.lr * std::min(1.0, double(t) / (o.warmup_fraction * 4));
        const double mhat = m / (1.0 - std::pow(o.beta1, double(t)));
        const double vhat = v / (1.0 - std::pow(o.beta2, double(t)));
        rx -= lr_t * mhat / (std::sqrt(vhat) + o.eps);

        REQUIRE_THAT(x.data()[0], WithinAbs(rx, 1e-15));
    }
}

TEST_CASE("weight decay is decoupled and skipped for 1-d arrays") {
    tensor w({2, 2}, {1.0, 1.0, 1.0, 1.0}, true);
    tensor b({2}, {1.0, 1.0}, true);
    w.ensure_grad();
    b.ensure_grad();
    std::vector<param_ref> params = {{"w", &w, true}, {"b", &b, true}};
    adamw_opts o;
    o.lr = 1e-2;
    o.weight_decay = 0.1;
    o.warmup_fraction = 0.0;
    o.total_steps = 10;
    adamw opt(o);
    opt.step(params);
    // zero grads: the only movement is the decay on the matrix
    for (double v : w.data()) CHECK_THAT(v, WithinAbs(1.0 - 1e-2 * 0.1, 1e-15));
    for (double v : b.data()) CHECK(v == 1.0);
}

TEST_CASE("frozen parameters are never touched") {
    tensor w({2, 2}, {1.0, 2.0, 3.0, 4.0}, false);
    w.ensure_grad();
    for (auto& g : w.grad()) g = 5.0;
    std::vector<param_ref> params = {{"w", &w, true}, {"frozen", &w, false}};
    params[0].trainable = false;
    adamw_opts o;
    o.total_steps = 10;
    adamw opt(o);
    opt.step(params);
    CHECK(w.data() == std::vector<double>{1.0, 2.0, 3.0, 4.0});
}

TEST_CASE("non-finite gradient aborts before mutating anything") {
    tensor a({2}, {1.0, 2.0}, true);
    tensor b({2}, {3.0, 4.0}, true);
    a.ensure_grad();
    b.ensure_grad();
    a.grad() = {0.5, 0.5};
    b.grad() = {0.5, std::nan("")};
    std::vector<param_ref> params = {{"alpha", &a, true}, {"beta", &b, true}};
    adamw_opts o;
    o.total_steps = 10;
    adamw opt(o);
    REQUIRE_THROWS_WITH(opt.step(params),
                        ContainsSubstring("beta") && ContainsSubstring("step 1"));
    // the abort happened before any parameter moved, including earlier ones
    CHECK(a.data() == std::vector<double>{1.0, 2.0});
    CHECK(b.data() == std::vector<double>{3.0, 4.0});
    CHECK(opt.step_count() == 0);
}

TEST_CASE("gradients are zeroed after a successful step") {
    tensor w({2}, {1.0, 1.0}, true);
    w.ensure_grad();
    w.grad() = {1.0, -1.0};
    std::vector<param_ref> params = {{"w", &w, true}};
    adamw_opts o;
    o.total_steps = 10;
    adamw opt(o);
    opt.step(params);
    CHECK(w.grad() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("configuration is validated") {
    adamw_opts o;
    o.total_steps = 0;
    REQUIRE_THROWS_AS(adamw(o), validation_error);
    o.total_steps = 1;
    o.lr = 0.0;
    REQUIRE_THROWS_AS(adamw(o), validation_error);
}
