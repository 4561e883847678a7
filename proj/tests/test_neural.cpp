#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <thread>
#include <vector>

#include "pricer/neural.hpp"
#include "pricer/rng.hpp"

using namespace pricer;

namespace {

// Central finite differences of upstream * forward(x) w.r.t. every parameter;
// the independent oracle for accumulate_grad / grad_params.
std::vector<double> fd_grad(MlpModel model, std::span<const double> x, double upstream) {
    constexpr double h = 1e-5;
    std::vector<double> grad(model.params.size());
    for (std::size_t k = 0; k < grad.size(); ++k) {
        const double saved = model.params[k];
        model.params[k] = saved + h;
        const double up = forward(model, x);
        model.params[k] = saved - h;
        const double down = forward(model, x);
        model.params[k] = saved;
        grad[k] = upstream * (up - down) / (2.0 * h);
    }
    return grad;
}

// Per-coordinate relative error with the denominator floored at a fraction of
// the gradient's max magnitude: coordinates far below that are beyond what
// double-precision central differences can resolve at h=1e-5.
double max_rel_error(std::span<const double> a, std::span<const double> b) {
    double linf = 0.0;
    for (double v : a) linf = std::max(linf, std::abs(v));
    double worst = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double scale = std::max({std::abs(a[k]), std::abs(b[k]), 1e-3 * linf, 1e-8});
        worst = std::max(worst, std::abs(a[k] - b[k]) / scale);
    }
    return worst;
}

// Draws (params, x) pairs whose pre-activations are all safely away from the
// activation kink, so finite differences do not straddle it.
struct GradCase {
    MlpModel model;
    std::vector<double> x;
};

GradCase draw_case(const MlpSpec& spec, std::uint64_t seed) {
    NormalSampler normal(derive_seed(seed, 7));
    MlpWorkspace ws(spec);
    for (int attempt = 0; attempt < 200; ++attempt) {
        MlpModel model = init(spec, seed + static_cast<std::uint64_t>(attempt));
        // He init leaves biases zero; nudge them so no pre-activation is 0.
        NormalSampler bias_noise(derive_seed(seed, 100 + attempt));
        for (double& p : model.params) {
            if (p == 0.0) p = 0.3 * bias_noise();
        }
        std::vector<double> x(spec.input_dim);
        for (double& xi : x) xi = normal();
        forward(model, x, ws);
        double min_pre = 1e300;
        for (const auto& layer : ws.pre_) {
            for (double p : layer) min_pre = std::min(min_pre, std::abs(p));
        }
        if (min_pre > 1e-3) return {std::move(model), std::move(x)};
    }
    FAIL("could not draw a kink-safe gradient case");
    return {init(spec, seed), std::vector<double>(spec.input_dim, 0.0)};
}

MlpModel zero_model(const MlpSpec& spec) {
    MlpModel m = init(spec, 1);
    for (double& p : m.params) p = 0.0;
    return m;
}

} // namespace

TEST_CASE("init is deterministic with zero biases") {
    MlpSpec spec{1, {8, 8, 8}, Activation::relu, 0.01, false};
    const MlpModel a = init(spec, 42);
    const MlpModel b = init(spec, 42);
    const MlpModel c = init(spec, 43);
    CHECK(a.params == b.params);
    CHECK(a.params != c.params);

    // Biases sit after each weight block; spot-check the first hidden layer.
    for (std::size_t i = 0; i < 8; ++i) CHECK(a.params[8 + i] == 0.0);

    // Zero input with zero biases: every pre-activation vanishes.
    const double x = 0.0;
    CHECK(forward(a, std::span<const double>(&x, 1)) == 0.0);
}

TEST_CASE("forward on constructed nets") {
    MlpSpec spec{1, {4, 4}, Activation::relu, 0.01, false};
    MlpModel constant = zero_model(spec);
    constant.params.back() = 0.7; // output bias
    for (double x : {-2.0, 0.0, 3.5}) {
        CHECK(forward(constant, std::span<const double>(&x, 1)) == 0.7);
    }

    MlpSpec tiny{1, {1}, Activation::relu, 0.01, false};
    MlpModel identity = zero_model(tiny);
    identity.params[0] = 1.0; // hidden weight
    identity.params[2] = 1.0; // output weight
    const double x = 0.5;
    CHECK(forward(identity, std::span<const double>(&x, 1)) == doctest::Approx(0.5));

    const double bad[2] = {1.0, 2.0};
    CHECK_THROWS_AS(forward(identity, std::span<const double>(bad, 2)), ShapeError);
}

TEST_CASE("residual net with zero hidden weights reduces to the skip path") {
    MlpSpec spec{1, {1, 1}, Activation::relu, 0.01, true};
    MlpModel m = zero_model(spec);
    m.params[m.params.size() - 2] = 1.0; // output weight
    const double x = 0.5;
    CHECK(forward(m, std::span<const double>(&x, 1)) == doctest::Approx(0.5));
    const double neg = -0.5; // ReLU kills the skipped value
    CHECK(forward(m, std::span<const double>(&neg, 1)) == 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
    const std::vector<MlpSpec> specs = {
        {1, {8, 8, 8}, Activation::relu, 0.01, false},
        {1, {8, 8, 8, 8}, Activation::leaky_relu, 0.01, false},
        {1, std::vector<std::size_t>(13, 8), Activation::relu, 0.01, true},
        {2, {8, 8, 8}, Activation::leaky_relu, 0.01, false},
    };
    for (std::size_t si = 0; si < specs.size(); ++si) {
        for (int draw = 0; draw < 3; ++draw) {
            const GradCase c = draw_case(specs[si], 1000 * (si + 1) + draw);
            const double upstream = 0.7 + 0.1 * draw;
            const auto analytic = grad_params(c.model, c.x, upstream);
            const auto numeric = fd_grad(c.model, c.x, upstream);
            CHECK(max_rel_error(analytic, numeric) < 1e-5);
        }
    }
}

TEST_CASE("gradient edge cases") {
    MlpSpec spec{1, {4, 4}, Activation::relu, 0.01, false};
    const MlpModel m = init(spec, 5);
    const double x = 0.8;

    const auto zero_up = grad_params(m, std::span<const double>(&x, 1), 0.0);
    for (double g : zero_up) CHECK(g == 0.0);

    const auto g1 = grad_params(m, std::span<const double>(&x, 1), 1.0);
    const auto g2 = grad_params(m, std::span<const double>(&x, 1), 2.5);
    for (std::size_t k = 0; k < g1.size(); ++k) CHECK(g2[k] == doctest::Approx(2.5 * g1[k]));

    // Dead network: zero weights => every hidden activation is 0 and ReLU
    // blocks the path; only the output bias sees gradient.
    const MlpModel dead = zero_model(spec);
    const auto g = grad_params(dead, std::span<const double>(&x, 1), 1.0);
    for (std::size_t k = 0; k + 1 < g.size(); ++k) CHECK(g[k] == 0.0);
    CHECK(g.back() == 1.0);
}

TEST_CASE("sgd and adam steps") {
    MlpSpec spec{1, {1}, Activation::relu, 0.01, false};
    MlpModel m = zero_model(spec);
    m.params = {1.0, 0.0, 0.0, 0.0};

    OptState sgd = OptState::sgd_state(0.1);
    std::vector<double> grad{2.0, 0.0, 0.0, 0.0};
    step(sgd, m, grad, 0);
    CHECK(m.params[0] == doctest::Approx(0.8).epsilon(1e-15));

    std::vector<double> zero(4, 0.0);
    step(sgd, m, zero, 1);
    CHECK(m.params[0] == doctest::Approx(0.8).epsilon(1e-15));

    MlpModel a = zero_model(spec);
    a.params = {1.0, 0.0, 0.0, 0.0};
    OptState adam = OptState::adam_state(0.1);
    step(adam, a, grad, 0);
    // Bias correction makes the first step ~ -alpha * sign(g).
    CHECK(a.params[0] == doctest::Approx(0.9).epsilon(1e-8));
    step(adam, a, zero, 1);
    // Zero grad decays moments but cannot flip the sign of the update.
    CHECK(a.params[0] < 0.9);

    MlpModel b = zero_model(spec);
    b.params = {1.0, 0.0, 0.0, 0.0};
    OptState adam_fixed = OptState::adam_state(0.1);
    std::vector<double> g0{0.0, 0.0, 0.0, 0.0};
    step(adam_fixed, b, g0, 0);
    CHECK(b.params[0] == 1.0); // zero grad is a fixed point from fresh state
}

TEST_CASE("adam update is invariant to loss scaling") {
    MlpSpec spec{1, {4}, Activation::relu, 0.01, false};
    const MlpModel base = init(spec, 9);
    std::vector<double> grad(base.params.size());
    NormalSampler normal(17);
    for (double& g : grad) g = normal();

    for (double scale : {10.0, 1000.0}) {
        MlpModel m1 = base;
        MlpModel m2 = base;
        OptState o1 = OptState::adam_state(0.05);
        OptState o2 = OptState::adam_state(0.05);
        std::vector<double> scaled(grad);
        for (double& g : scaled) g *= scale;
        step(o1, m1, grad, 0);
        step(o2, m2, scaled, 0);
        for (std::size_t k = 0; k < m1.params.size(); ++k) {
            const double d1 = m1.params[k] - base.params[k];
            const double d2 = m2.params[k] - base.params[k];
            CHECK(d2 == doctest::Approx(d1).epsilon(1e-6));
        }
    }
}

TEST_CASE("learning rate schedule") {
    LrSchedule constant;
    CHECK(constant.multiplier(0) == 1.0);
    CHECK(constant.multiplier(100000) == 1.0);

    LrSchedule decay{LrSchedule::Kind::step_decay, 0.5, 2000};
    CHECK(decay.multiplier(0) == 1.0);
    CHECK(decay.multiplier(1999) == 1.0);
    CHECK(decay.multiplier(2000) == 0.5);
    CHECK(decay.multiplier(4001) == 0.25);

    MlpSpec spec{1, {1}, Activation::relu, 0.01, false};
    MlpModel m = zero_model(spec);
    m.params = {1.0, 0.0, 0.0, 0.0};
    OptState sgd = OptState::sgd_state(0.1, decay);
    std::vector<double> grad{2.0, 0.0, 0.0, 0.0};
    step(sgd, m, grad, 2000);
    CHECK(m.params[0] == doctest::Approx(0.9).epsilon(1e-15));
}

TEST_CASE("concurrent evaluation is bitwise identical to serial") {
    MlpSpec spec{1, {16, 16, 16}, Activation::leaky_relu, 0.01, false};
    const MlpModel m = init(spec, 21);
    std::vector<double> xs(200);
    NormalSampler normal(3);
    for (double& x : xs) x = normal();

    std::vector<double> serial(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        serial[i] = forward(m, std::span<const double>(&xs[i], 1));

    std::vector<double> half_a(xs.size(), 0.0), half_b(xs.size(), 0.0);
    std::thread ta([&] {
        MlpWorkspace ws(spec);
        for (std::size_t i = 0; i < xs.size(); i += 2)
            half_a[i] = forward(m, std::span<const double>(&xs[i], 1), ws);
    });
    std::thread tb([&] {
        MlpWorkspace ws(spec);
        for (std::size_t i = 1; i < xs.size(); i += 2)
            half_b[i] = forward(m, std::span<const double>(&xs[i], 1), ws);
    });
    ta.join();
    tb.join();
    for (std::size_t i = 0; i < xs.size(); ++i) {
        CHECK((i % 2 == 0 ? half_a[i] : half_b[i]) == serial[i]);
    }
}

TEST_CASE("spec validation") {
    const MlpSpec no_hidden{1, {}, Activation::relu, 0.01, false};
    const MlpSpec wide_input{3, {8}, Activation::relu, 0.01, false};
    const MlpSpec zero_width{1, {8, 0}, Activation::relu, 0.01, false};
    const MlpSpec ragged_residual{1, {8, 16}, Activation::relu, 0.01, true};
    const MlpSpec flat_leaky{1, {8}, Activation::leaky_relu, 0.0, false};
    const MlpSpec good{2, {8, 8}, Activation::leaky_relu, 0.01, true};
    CHECK_THROWS_AS(no_hidden.validate(), std::invalid_argument);
    CHECK_THROWS_AS(wide_input.validate(), std::invalid_argument);
    CHECK_THROWS_AS(zero_width.validate(), std::invalid_argument);
    CHECK_THROWS_AS(ragged_residual.validate(), std::invalid_argument);
    CHECK_THROWS_AS(flat_leaky.validate(), std::invalid_argument);
    CHECK_NOTHROW(good.validate());

    const MlpModel bad{MlpSpec{1, {8}, Activation::relu, 0.01, false},
                       std::vector<double>(5, 0.0)};
    CHECK_THROWS_AS(bad.validate(), ShapeError);
}
