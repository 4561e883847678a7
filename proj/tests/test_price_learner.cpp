#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "pricer/price_learner.hpp"

using namespace pricer;

namespace {

MlpModel constant_net(double c, std::size_t input_dim = 1) {
    MlpSpec spec{input_dim, {4}, Activation::relu, 0.01, false};
    MlpModel m = init(spec, 1);
    for (double& p : m.params) p = 0.0;
    m.params.back() = c;
    return m;
}

// Heads/targets supplied directly; prices/kernels only where a test needs them.
std::vector<PricedWindow> synthetic_batch(const std::vector<double>& heads,
                                          const std::vector<double>& targets) {
    std::vector<PricedWindow> out(heads.size());
    for (std::size_t j = 0; j < heads.size(); ++j) {
        out[j].head = heads[j];
        out[j].terminal_payoff = targets[j];
        out[j].terminal_kernel = 1.0;
    }
    return out;
}

WindowSet gbm_windows(double s0, double mu, double sigma, std::size_t n_steps, double dt,
                      std::size_t trajectories, std::size_t traj_steps, std::uint64_t seed) {
    const SdeModel gbm = GbmModel(mu, sigma);
    WindowSetBuilder builder(n_steps, dt);
    for (std::size_t i = 0; i < trajectories; ++i) {
        builder.add_trajectory(simulate_trajectory(gbm, s0, dt, traj_steps, seed + i), 1);
    }
    return std::move(builder).build();
}

} // namespace

TEST_CASE("payoff definitions") {
    const OptionSpec call(OptionKind::call, 1.0, 0.1);
    const OptionSpec put(OptionKind::put, 1.0, 0.1);
    CHECK(payoff(call, 1.2) == doctest::Approx(0.2));
    CHECK(payoff(put, 1.2) == 0.0);
    CHECK(payoff(call, 1.0) == 0.0);
    CHECK(payoff(put, 0.7) == doctest::Approx(0.3));
}

TEST_CASE("v0 loss on constructed batches") {
    const auto perfect = synthetic_batch({0.9, 1.0, 1.1}, {0.4, 0.4, 0.4});
    CHECK(v0_loss(constant_net(0.4), perfect) == 0.0);

    const auto single = synthetic_batch({1.0}, {0.3});
    CHECK(v0_loss(constant_net(0.5), single) == doctest::Approx(0.04).epsilon(1e-14));

    auto doubled = synthetic_batch({1.0, 1.0}, {0.3, 0.3});
    CHECK(v0_loss(constant_net(0.5), doubled) == doctest::Approx(0.04).epsilon(1e-14));

    CHECK_THROWS_AS(v0_loss(constant_net(0.5), std::span<const PricedWindow>{}), SizeError);
}

TEST_CASE("minimizing constant of v0 loss is the sample mean") {
    const std::vector<double> targets{0.1, 0.5, 0.2, 0.35, 0.15};
    const auto batch = synthetic_batch(std::vector<double>(5, 1.0), targets);
    double mean = 0.0;
    for (double t : targets) mean += t;
    mean /= double(targets.size());

    const double at_mean = v0_loss(constant_net(mean), batch);
    for (double delta : {-0.07, 0.02, 0.11}) {
        const double shifted = v0_loss(constant_net(mean + delta), batch);
        // Exact least-squares identity: Q(c) - Q(mean) = (c - mean)^2.
        CHECK(shifted - at_mean == doctest::Approx(delta * delta).epsilon(1e-12));
    }
}

TEST_CASE("priced windows are deterministic plumbing") {
    const WindowSet ws = gbm_windows(1.0, 0.1, 0.2, 10, 0.01, 3, 30, 7);
    const OptionSpec call(OptionKind::call, 1.0, 10 * 0.01);
    const MlpModel policy = init(MlpSpec{1, {8}, Activation::relu, 0.01, false}, 3);

    const auto a = build_priced_windows(policy, ws, call, 0.019);
    const auto b = build_priced_windows(policy, ws, call, 0.019);
    REQUIRE(a.size() == ws.count());
    for (std::size_t j = 0; j < a.size(); ++j) {
        CHECK(a[j].head == ws.window(j).front());
        CHECK(a[j].terminal_payoff == b[j].terminal_payoff);
        CHECK(a[j].terminal_kernel == b[j].terminal_kernel);
        CHECK(a[j].target() == b[j].target());
        CHECK(a[j].terminal_payoff >= 0.0);
        CHECK(a[j].terminal_kernel > 0.0);
    }
}

TEST_CASE("kernel degeneracy propagates the window index") {
    WindowSetBuilder builder(2, 3e-3);
    const std::vector<double> fine{1.0, 1.001, 1.002};
    const std::vector<double> crash{1.0, 0.4, 0.4};
    builder.add_window(fine);
    builder.add_window(crash);
    const WindowSet ws = std::move(builder).build();

    MlpModel aggressive = constant_net(2.0);
    const OptionSpec call(OptionKind::call, 1.0, 2 * 3e-3);
    CHECK_THROWS_WITH_AS(build_priced_windows(aggressive, ws, call, 0.019),
                         doctest::Contains("window 1"), KernelDegeneracyError);
}

TEST_CASE("bond-only kernel gives discounted constant surface targets") {
    const double r = 0.019, dt = 3e-3;
    const std::size_t n = 33;
    const WindowSet ws = gbm_windows(1.0, 0.05, 0.2, n, dt, 2, 80, 11);
    const MlpModel f0 = constant_net(0.0);
    const OptionSpec call(OptionKind::call, 1.0, double(n) * dt);
    const auto priced = build_priced_windows(f0, ws, call, r, /*keep_kernel_paths=*/true);

    const double c = 0.7; // pretend the payoff were the constant c
    for (const PricedWindow& pw : priced) {
        REQUIRE(pw.kernel.size() == n + 1);
        for (std::size_t k = 0; k < n; ++k) {
            const double target = c * pw.kernel.back() / pw.kernel[k];
            const double expected = c * std::pow(1.0 + r * dt, -double(n - k));
            CHECK(target == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("surface loss with N=1 reduces to dt * v0 loss") {
    const double dt = 0.01;
    std::vector<PricedWindow> priced(3);
    const double heads[3] = {0.9, 1.0, 1.1};
    const double targets[3] = {0.2, 0.5, 0.1};
    std::vector<std::vector<double>> price_rows(3);
    for (std::size_t j = 0; j < 3; ++j) {
        priced[j].head = heads[j];
        priced[j].terminal_payoff = targets[j];
        priced[j].terminal_kernel = 1.0;
        priced[j].kernel = {1.0, 1.0};
        price_rows[j] = {heads[j], heads[j]};
        priced[j].prices = price_rows[j];
    }

    const double c = 0.3;
    SurfaceModel surface{constant_net(c, 2), dt};
    const double direct = v0_loss(constant_net(c), priced);
    CHECK(surface_ml_loss(surface, priced, dt) == doctest::Approx(dt * direct).epsilon(1e-14));

    SurfaceModel perfect{constant_net(0.0, 2), dt};
    std::vector<PricedWindow> zero_batch = priced;
    for (auto& pw : zero_batch) pw.terminal_payoff = 0.0;
    CHECK(surface_ml_loss(perfect, zero_batch, dt) == 0.0);
}

TEST_CASE("zero-episode value training returns the initialized model") {
    const WindowSet ws = gbm_windows(1.0, 0.05, 0.2, 10, 0.01, 2, 40, 13);
    const OptionSpec call(OptionKind::call, 1.0, 10 * 0.01);
    TrainConfig cfg;
    cfg.arch = MlpSpec{1, {8}, Activation::relu, 0.01, false};
    cfg.episodes = 0;
    cfg.batch_size = 8;
    cfg.r = 0.019;
    cfg.dt = 0.01;
    cfg.n_steps = 10;
    cfg.seed = 19;
    const ValueTrainResult result = train_v0(constant_net(1.0), ws, call, cfg);
    CHECK(result.model.params == init(cfg.arch, 19).params);

    TrainConfig scfg = cfg;
    scfg.arch = MlpSpec{2, {8}, Activation::relu, 0.01, false};
    const SurfaceTrainResult sresult = train_surface(constant_net(1.0), ws, call, scfg);
    CHECK(sresult.model.net.params == init(scfg.arch, 19).params);
    CHECK(sresult.model.time_scale == doctest::Approx(0.1));
}

TEST_CASE("value training recovers the discounted deterministic payoff when sigma -> 0") {
    // mu = r and vanishing noise: every target is h(s0 G)/G with G = (1+r dt)^N.
    const double r = 0.019, dt = 3e-3;
    const std::size_t n = 33;
    const SdeModel calm = GbmModel(r, 1e-12);
    WindowSetBuilder builder(n, dt);
    for (std::size_t i = 0; i < 60; ++i) {
        const double s0 = 0.8 + 0.4 * double(i) / 59.0;
        builder.add_trajectory(simulate_trajectory(calm, s0, dt, n + 20, 100 + i), 1);
    }
    const WindowSet ws = std::move(builder).build();
    const OptionSpec call(OptionKind::call, 1.0, double(n) * dt);

    TrainConfig cfg;
    cfg.arch = MlpSpec{1, {32, 32}, Activation::leaky_relu, 0.01, false};
    cfg.episodes = 8000;
    cfg.batch_size = 128;
    cfg.r = r;
    cfg.dt = dt;
    cfg.n_steps = n;
    cfg.seed = 23;
    cfg.optimizer = OptState::adam_state(1e-2, {LrSchedule::Kind::step_decay, 0.5, 2700});

    const ValueTrainResult result = train_v0(constant_net(0.5), ws, call, cfg);
    const double growth = std::pow(1.0 + r * dt, double(n));
    MlpWorkspace eval_ws(cfg.arch);
    for (double s0 : {0.85, 0.95, 1.05, 1.15}) {
        const double expected = payoff(call, s0 * growth) / growth;
        const double learned = forward(result.model, std::span<const double>(&s0, 1), eval_ws);
        CHECK(std::abs(learned - expected) < 5e-3);
    }
}

TEST_CASE("surface agrees with independently trained v0 at t=0 and near expiry") {
    const double r = 0.019, dt = 0.0125;
    const std::size_t n = 8;
    const WindowSet ws = gbm_windows(1.0, 0.1, 0.2, n, dt, 300, 40, 500);
    const OptionSpec call(OptionKind::call, 1.0, double(n) * dt);
    const MlpModel policy = constant_net(2.025); // theoretical GBM policy

    TrainConfig vcfg;
    vcfg.arch = MlpSpec{1, {24, 24}, Activation::leaky_relu, 0.01, false};
    vcfg.episodes = 4000;
    vcfg.batch_size = 128;
    vcfg.r = r;
    vcfg.dt = dt;
    vcfg.n_steps = n;
    vcfg.seed = 29;
    vcfg.optimizer = OptState::adam_state(3e-3, {LrSchedule::Kind::step_decay, 0.5, 1500});
    const ValueTrainResult v0 = train_v0(policy, ws, call, vcfg);

    TrainConfig scfg = vcfg;
    scfg.arch = MlpSpec{2, {24, 24}, Activation::leaky_relu, 0.01, false};
    scfg.seed = 31;
    const SurfaceTrainResult surface = train_surface(policy, ws, call, scfg);

    // Cross-method consistency at t = 0 over the well-sampled price range.
    MlpWorkspace eval_ws(vcfg.arch);
    for (double s : {0.92, 1.0, 1.08}) {
        const double from_v0 = forward(v0.model, std::span<const double>(&s, 1), eval_ws);
        const double from_surface = surface.model.value(0.0, s);
        CHECK(std::abs(from_surface - from_v0) < 0.02);
    }

    // One step from expiry the surface sits near the payoff away from the kink.
    for (double s : {0.90, 1.12}) {
        const double near_expiry = surface.model.value(double(n - 1) * dt, s);
        CHECK(std::abs(near_expiry - payoff(call, s)) < 0.025);
    }
}

TEST_CASE("maturity must match the window horizon") {
    const WindowSet ws = gbm_windows(1.0, 0.05, 0.2, 10, 0.01, 2, 40, 17);
    const OptionSpec wrong(OptionKind::call, 1.0, 0.2);
    TrainConfig cfg;
    cfg.arch = MlpSpec{1, {8}, Activation::relu, 0.01, false};
    cfg.episodes = 1;
    cfg.batch_size = 8;
    cfg.r = 0.019;
    cfg.dt = 0.01;
    cfg.n_steps = 10;
    CHECK_THROWS_AS(train_v0(constant_net(1.0), ws, wrong, cfg), std::invalid_argument);
}
