#include <doctest.h>

#include <cmath>
#include <random>

#include "hess/lif.hpp"
#include "hess/ops.hpp"
#include "test_util.hpp"

using namespace hess;
using hess::testing::random_tensor;

TEST_CASE("lif_step hand cases") {
    LIFConfig cfg;
    auto rest = lif_step({}, Tensor::zeros({3}), cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rest.spikes[i] == 0.0);
        CHECK(rest.state.v[i] == 0.0);
    }
    auto fire = lif_step(LIFState{{0.0}}, Tensor::full({1}, 2.0), cfg);
    CHECK(fire.spikes[0] == 1.0);
    CHECK(fire.state.v[0] == 0.0);

    CHECK_THROWS_AS(lif_step({}, Tensor::full({1}, std::nan("")), cfg), std::domain_error);
    CHECK_THROWS(lif_step(LIFState{{0.0, 0.0}}, Tensor::zeros({3}), cfg));
    LIFConfig bad;
    bad.tau = 1.0;
    CHECK_THROWS(lif_step({}, Tensor::zeros({1}), bad));
}

TEST_CASE("constant input follows the closed-form membrane trajectory") {
    LIFConfig cfg;
    for (double c : {0.3, 0.9, 1.0, 1.7}) {
        LIFState state;
        for (int t = 1; t <= 60; ++t) {
            auto r = lif_step(state, Tensor::full({1}, c), cfg);
            const double closed = c * (1.0 - std::pow(1.0 - 1.0 / cfg.tau, t));
            if (r.spikes[0] == 1.0) {
                CHECK(closed >= cfg.v_threshold);
                break;
            }
            CHECK(std::abs(r.state.v[0] - closed) <= 1e-12);
            state = r.state;
        }
    }
}

TEST_CASE("X = 1 never spikes, X = 2 spikes every step") {
    LIFConfig cfg;
    LIFState state;
    for (int t = 0; t < 1000; ++t) {
        auto r = lif_step(state, Tensor::full({1}, 1.0), cfg);
        REQUIRE(r.spikes[0] == 0.0);
        state = r.state;
    }
    std::vector<Tensor> twos(6, Tensor::full({1, 2}, 2.0));
    auto spikes = lif_forward_seq(twos, cfg);
    CHECK(spikes.shape() == Shape{1, 6, 2});
    for (auto v : spikes.data()) CHECK(v == 1.0);

    std::vector<Tensor> zeros(4, Tensor::zeros({2, 3}));
    auto silent = lif_forward_seq(zeros, cfg);
    for (auto v : silent.data()) CHECK(v == 0.0);
    CHECK_THROWS(lif_forward_seq({}, cfg));
}

TEST_CASE("sequence output is binary and matches repeated lif_step") {
    std::mt19937_64 rng(21);
    LIFConfig cfg;
    auto x = random_tensor(rng, {2, 5, 3, 4}, -1, 4);
    auto s = lif_sequence(x, cfg);
    for (auto v : s.data()) CHECK((v == 0.0 || v == 1.0));
    for (std::size_t b = 0; b < 2; ++b) {
        LIFState state;
        for (std::size_t t = 0; t < 5; ++t) {
            auto xt = select0(select0(x, b), t);
            auto r = lif_step(state, xt, cfg);
            auto st = select0(select0(s, b), t);
            for (std::size_t i = 0; i < r.spikes.size(); ++i) CHECK(r.spikes[i] == st[i]);
            state = r.state;
        }
    }
}

TEST_CASE("sub-threshold inputs stay silent under scaling") {
    LIFConfig cfg;
    std::mt19937_64 rng(22);
    auto x = random_tensor(rng, {1, 8, 10}, -0.9, 0.95);
    for (double k : {0.1, 0.5, 1.0}) {
        auto s = lif_sequence(scale(x, k), cfg);
        for (auto v : s.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("surrogate gradient values") {
    LIFConfig cfg;
    CHECK(surrogate_grad(cfg.v_threshold, cfg) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(surrogate_grad(cfg.v_threshold + 10.0, cfg) <= 1e-15);
    CHECK(surrogate_grad(cfg.v_threshold - 12.0, cfg) <= 1e-15);
    for (double d : {0.01, 0.3, 1.7, 5.0}) CHECK(surrogate_grad(cfg.v_threshold + d, cfg) == doctest::Approx(surrogate_grad(cfg.v_threshold - d, cfg)).epsilon(1e-14));
}

TEST_CASE("spike_rate") {
    CHECK(spike_rate(Tensor::zeros({4})) == 0.0);
    CHECK(spike_rate(Tensor::full({4}, 1.0)) == 1.0);
    CHECK(spike_rate(Tensor::from({4}, {1, 0, 1, 0})) == 0.5);
    CHECK_THROWS(spike_rate(Tensor::from({2}, {0.5, 1})));
}

// Hand-written BPTT oracle with dS/dH := surrogate_grad and a detached reset.
TEST_CASE("surrogate backward equals the chain rule with detached reset") {
    std::mt19937_64 rng(23);
    LIFConfig cfg;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t T = 6, W = 5;
        auto x = random_tensor(rng, {1, T, W}, -0.5, 3.0).set_requires_grad();
        auto probe = random_tensor(rng, {1, T, W});
        sum(mul(lif_sequence(x, cfg), probe)).backward();

        for (std::size_t i = 0; i < W; ++i) {
            std::vector<double> h(T);
            std::vector<bool> fired(T);
            double v = 0.0;
            for (std::size_t t = 0; t < T; ++t) {
                h[t] = v + (x[t * W + i] - v) / cfg.tau;
                fired[t] = h[t] >= cfg.v_threshold;
                v = fired[t] ? cfg.v_reset : h[t];
            }
            double dv = 0.0;
            for (std::size_t t = T; t-- > 0;) {
                const double dh = probe[t * W + i] * surrogate_grad(h[t], cfg) + (fired[t] ? 0.0 : dv);
                CHECK(std::abs(x.grad()[t * W + i] - dh / cfg.tau) <= 1e-10);
                dv = dh * (1.0 - 1.0 / cfg.tau);
            }
        }

        // The sigmoid-forward reference has the same gradient for a loss that
        // is linear in the spikes.
        auto xs = x.detach().set_requires_grad();
        sum(mul(lif_sequence(xs, cfg, SpikeFunction::Sigmoid), probe)).backward();
        for (std::size_t k = 0; k < x.size(); ++k) CHECK(std::abs(xs.grad()[k] - x.grad()[k]) <= 1e-10);
    }
}

TEST_CASE("sigmoid-forward LIF passes finite differences") {
    std::mt19937_64 rng(24);
    LIFConfig cfg;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_tensor(rng, {2, 4, 3}, -0.5, 3.0);
        auto probe = random_tensor(rng, {2, 4, 3});
        LIFTrace trace;
        lif_sequence(x, cfg, SpikeFunction::Sigmoid, &trace);
        if (trace.min_margin < 1e-3) continue;  // too close to a reset crossing
        auto r = grad_check([&] { return sum(mul(lif_sequence(x, cfg, SpikeFunction::Sigmoid), probe)); }, {x});
        worst = std::max(worst, r.max_rel_error);
    }
    CHECK(worst <= 1e-4);
}
