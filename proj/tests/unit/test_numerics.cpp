// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "histost/common/errors.hpp"
#include "histost/numerics/autodiff.hpp"
#include "histost/numerics/grad_check.hpp"
#include "histost/numerics/optim.hpp"
#include "support/primitive_cases.hpp"

using namespace histost;
using namespace histost::ad;

TEST_CASE("constant-only graph yields zero gradients") {
    Parameter p{"w", Tensor::matrix({{1.0, 2.0}}), true, 0};
    Tape t;
    Var w = t.param(p);
    Var c = t.constant(Tensor::matrix({{3.0, 4.0}}));
    (void)w;
    Gradients g = t.backward(sum(square(c)));
    REQUIRE(g.size() == 1);
    for (double v : g.at(p).data()) CHECK(v == 0.0);
}

TEST_CASE("gradient of sum(A x) w.r.t. x is the column sums of A") {
    const Tensor a = Tensor::matrix({{1.5, -2.0}, {0.25, 4.0}});
    Tape t;
    Var x = t.input(Tensor::matrix({{0.3}, {-0.7}}));
    t.backward(sum(matmul(t.constant(a), x)));
    CHECK(x.grad()[0] == doctest::Approx(1.75));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("broadcast bias gradient equals the upstream sum over rows") {
    Rng rng(11);
    const Tensor xs = testing::random_tensor({4, 3}, rng);
    const Tensor up = testing::random_tensor({4, 3}, rng);
    Tensor bias = testing::random_tensor({3}, rng);

    Tape t;
    Var b = t.input(bias);
    t.backward(testing::readout(add_rowvec(t.constant(xs), b), up));

    // Independent oracle: perturb each bias element, recompute the loss by
    // plain loops.
    auto loss = [&](const Tensor& bb) {
        double s = 0.0;
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) s += up.at(i, j) * (xs.at(i, j) + bb[j]);
        return s;
    };
    for (std::size_t j = 0; j < 3; ++j) {
        Tensor plus = bias, minus = bias;
        plus[j] += 1e-6;
        minus[j] -= 1e-6;
        const double fd = (loss(plus) - loss(minus)) / 2e-6;
        CHECK(b.grad()[j] == doctest::Approx(fd).epsilon(1e-8));
    }
}

TEST_CASE("non-scalar loss is a contract violation") {
    Tape t;
    Var x = t.input(Tensor::matrix({{1.0, 2.0}}));
    CHECK_THROWS_AS(t.backward(x), ContractViolation);
}

TEST_CASE("NaN in the forward pass names the offending node") {
    Tape t;
    Var x = t.input(Tensor::matrix({{-1.0, 2.0}}));
    Var y = sum(ad::log(x));
    try {
        t.backward(y);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("log") != std::string::npos);
    }
}

TEST_CASE("grad_check: x^2 at 3") {
    auto r = grad_check([](Tape&, Var x) { return sum(square(x)); }, Tensor::scalar(3.0), 1e-5);
    CHECK(r.analytic[0] == doctest::Approx(6.0));
    CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("grad_check: every primitive over three seeds") {
    for (const auto& c : testing::primitive_cases()) {
        for (std::uint64_t seed : {1u, 2u, 3u}) {
            Rng rng(derive_seed(seed, c.name));
            ScalarFn f = c.make(rng);
            Tensor x = testing::random_tensor(c.input_shape, rng);
            for (auto& v : x.data()) v = c.shape_input(v);
            auto r = grad_check(f, x, 1e-5);
            INFO(c.name << " seed " << seed << " err " << r.max_rel_error);
            CHECK(r.kinks.empty());
            CHECK(r.max_rel_error < 1e-5);
        }
    }
}

TEST_CASE("grad_check flags a kink and excludes it") {
    auto r = grad_check([](Tape&, Var x) { return sum(ad::abs(x)); }, Tensor::vector({0.0, 2.0, -1.0}), 1e-5);
    REQUIRE(r.kinks.size() == 1);
    CHECK(r.kinks[0] == 0);
    CHECK(r.checked == 2);
    CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("grad_check rejects a non-deterministic function") {
    int calls = 0;
    ScalarFn f = [&calls](Tape& t, Var x) { return add(sum(x), t.constant(Tensor::scalar(++calls))); };
    CHECK_THROWS_AS(grad_check(f, Tensor::scalar(1.0)), NumericalError);
}

TEST_CASE("replaying a tape gives bit-identical values and gradients") {
    Rng rng(5);
    const Tensor x0 = testing::random_tensor({5, 6}, rng);
    const Tensor w = testing::random_tensor({6, 6}, rng);
    auto run = [&] {
        Tape t;
        Var x = t.input(x0);
        Var y = softmax_rows(matmul(gelu(x), t.constant(w)));
        t.backward(sum(square(y)));
        return std::make_pair(y.value(), x.grad());
    };
    auto a = run();
    auto b = run();
    CHECK(a.first == b.first);
    CHECK(a.second == b.second);
}

TEST_CASE("frozen parameters are bound as constants") {
    Parameter frozen{"f", Tensor::matrix({{2.0}}), false, 0};
    Parameter live{"l", Tensor::matrix({{3.0}}), true, 0};
    Tape t;
    Var y = sum(matmul(t.param(frozen), t.param(live)));
    Gradients g = t.backward(y);
    CHECK(g.find(frozen) == nullptr);
    CHECK(g.at(live)[0] == doctest::Approx(2.0));
}

// ---------------------------------------------------------------------------

TEST_CASE("adamw: zero gradient and zero decay leaves parameters unchanged") {
    Parameter p{"p", Tensor::vector({1.0, -2.0}), true, 0};
    Gradients g;
    g.add(&p, Tensor::vector({0.0, 0.0}));
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    OptimizerState st;
    Parameter* ps[] = {&p};
    adamw_step(ps, g, st, cfg, 1e-4);
    CHECK(p.value[0] == 1.0);
    CHECK(p.value[1] == -2.0);
}

TEST_CASE("adamw: zero gradient applies decoupled decay") {
    Parameter p{"p", Tensor::vector({1.0, -2.0}), true, 0};
    Gradients g;
    g.add(&p, Tensor::vector({0.0, 0.0}));
    OptimizerConfig cfg;  // weight_decay 0.05
    OptimizerState st;
    Parameter* ps[] = {&p};
    adamw_step(ps, g, st, cfg, 1e-4);
    const double factor = 1.0 - 1e-4 * 0.05;
    CHECK(p.value[0] == doctest::Approx(1.0 * factor).epsilon(1e-15));
    CHECK(p.value[1] == doctest::Approx(-2.0 * factor).epsilon(1e-15));
}

TEST_CASE("adamw: first step with unit gradient moves by lr/(1+eps)") {
    Parameter p{"p", Tensor::scalar(0.5), true, 0};
    Gradients g;
    g.add(&p, Tensor::scalar(1.0));
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    OptimizerState st;
    Parameter* ps[] = {&p};
    adamw_step(ps, g, st, cfg, 1e-3);
    CHECK(p.value[0] == doctest::Approx(0.5 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(st.step == 1);
}

TEST_CASE("adamw: identical consecutive gradients move in the same direction") {
    Parameter p{"p", Tensor::vector({0.0, 0.0}), true, 0};
    OptimizerConfig cfg;
    cfg.weight_decay = 0.0;
    OptimizerState st;
    Parameter* ps[] = {&p};
    Gradients g;
    g.add(&p, Tensor::vector({0.3, -2.0}));
    adamw_step(ps, g, st, cfg, 1e-2);
    const Tensor after1 = p.value;
    adamw_step(ps, g, st, cfg, 1e-2);
    for (std::size_t i = 0; i < 2; ++i) {
        const double d1 = after1[i];
        const double d2 = p.value[i] - after1[i];
        CHECK(d1 * d2 > 0.0);
    }
}

TEST_CASE("adamw: shape mismatch is a contract violation") {
    Parameter p{"p", Tensor::vector({0.0, 0.0}), true, 0};
    Gradients g;
    g.add(&p, Tensor::vector({1.0}));
    OptimizerState st;
    Parameter* ps[] = {&p};
    CHECK_THROWS_AS(adamw_step(ps, g, st, OptimizerConfig{}, 1e-3), ContractViolation);
}

TEST_CASE("lr_at: warmup, cosine midpoint and endpoint") {
    OptimizerConfig cfg;
    CHECK(lr_at(cfg, 0) == 0.0);
    CHECK(lr_at(cfg, 40) == doctest::Approx(1e-4).epsilon(1e-15));
    CHECK(lr_at(cfg, 1000) == doctest::Approx(0.0).epsilon(1e-20));
    CHECK(std::fabs(lr_at(cfg, 520) - 0.5e-4) < 1e-18);
    CHECK_THROWS_AS(lr_at(cfg, 1001), ContractViolation);
    CHECK_THROWS_AS(lr_at(cfg, -1), ContractViolation);
}

TEST_CASE("lr_at is continuous at the warmup boundary and non-increasing after") {
    OptimizerConfig cfg;
    CHECK(std::fabs(lr_at(cfg, 40.0 - 1e-9) - lr_at(cfg, 40.0 + 1e-9)) < 1e-12);
    double prev = lr_at(cfg, 40);
    for (double e = 40.5; e <= 1000; e += 0.5) {
        const double cur = lr_at(cfg, e);
        CHECK(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("layerwise_scale") {
    CHECK(layerwise_scale(4, 4, 0.7) == 1.0);
    CHECK(layerwise_scale(3, 4, 0.7) == doctest::Approx(0.7));
    CHECK(layerwise_scale(0, 4, 0.7) == doctest::Approx(0.7 * 0.7 * 0.7 * 0.7));
    CHECK_THROWS_AS(layerwise_scale(0, 4, 0.0), ContractViolation);
    CHECK_THROWS_AS(layerwise_scale(0, 4, 1.5), ContractViolation);
}

TEST_CASE("optimizer config validation") {
    OptimizerConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.warmup_epochs = 1000;
    CHECK_THROWS_AS(cfg.validate(), ContractViolation);
}
