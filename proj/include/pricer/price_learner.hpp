#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pricer/errors.hpp"
#include "pricer/kernel_learner.hpp"
#include "pricer/market_data.hpp"
#include "pricer/neural.hpp"

namespace pricer {

inline double payoff(const OptionSpec& option, double s) {
    if (option.kind == OptionKind::call) return s > option.strike ? s - option.strike : 0.0;
    return s < option.strike ? option.strike - s : 0.0;
}

/// One window reduced to its pricing ingredients: head price, terminal payoff,
/// terminal kernel, and (only when surface training needs it) the full kernel
/// path. `prices` views the originating WindowSet and must not outlive it.
struct PricedWindow {
    double head = 0.0;
    double terminal_payoff = 0.0;
    double terminal_kernel = 0.0;
    std::vector<double> kernel;       // rho_0..rho_N, empty unless requested
    std::span<const double> prices;   // S_0..S_N

    double target() const { return terminal_payoff * terminal_kernel; }
};

/// Precomputes regression targets xi_N * rho_N once per (policy, windows,
/// option); the policy is frozen during price learning so the targets are
/// pure data. Kernel degeneracy in window j is reported with j attached.
inline std::vector<PricedWindow> build_priced_windows(const MlpModel& policy,
                                                      const WindowSet& windows,
                                                      const OptionSpec& option, double r,
                                                      bool keep_kernel_paths = false) {
    MlpWorkspace ws(policy.spec);
    std::vector<PricedWindow> out;
    out.reserve(windows.count());
    for (std::size_t j = 0; j < windows.count(); ++j) {
        const std::span<const double> w = windows.window(j);
        try {
            KernelPath path = wealth_and_kernel_fn(
                [&](double s) { return forward(policy, std::span<const double>(&s, 1), ws); }, w,
                r, windows.dt());
            PricedWindow pw;
            pw.head = w.front();
            pw.terminal_payoff = payoff(option, w.back());
            pw.terminal_kernel = path.terminal_kernel();
            if (keep_kernel_paths) pw.kernel = path.kernel();
            pw.prices = w;
            out.push_back(std::move(pw));
        } catch (const KernelDegeneracyError& e) {
            throw KernelDegeneracyError(
                "window " + std::to_string(j) + ": " + std::string(e.what()), e.step());
        }
    }
    return out;
}

/// Mean squared error between V0(S_0) and the terminal target xi_N * rho_N.
inline double v0_loss(const MlpModel& value, std::span<const PricedWindow> priced) {
    if (priced.empty()) throw SizeError("v0_loss: empty batch");
    MlpWorkspace ws(value.spec);
    double acc = 0.0;
    for (const PricedWindow& pw : priced) {
        const double v = forward(value, std::span<const double>(&pw.head, 1), ws);
        const double err = v - pw.target();
        acc += err * err;
    }
    return acc / static_cast<double>(priced.size());
}

struct ValueTrainResult {
    MlpModel model;
    LossHistory history;
};

/// Learns the time-0 price function by mini-batch descent on v0_loss.
/// Requires option.maturity == N * dt of the windows (the caller passes the
/// effective maturity).
inline ValueTrainResult train_v0(const MlpModel& policy, const WindowSet& windows,
                                 const OptionSpec& option, const TrainConfig& cfg) {
    cfg.validate_against(windows);
    if (cfg.arch.input_dim != 1)
        throw std::invalid_argument("train_v0: value network must have input_dim 1");
    const double t_eff = static_cast<double>(windows.n_steps()) * windows.dt();
    if (std::abs(option.maturity - t_eff) > 1e-12 * std::max(1.0, t_eff))
        throw std::invalid_argument("train_v0: option maturity must equal n_steps * dt");

    const std::vector<PricedWindow> priced = build_priced_windows(policy, windows, option, cfg.r);
    std::vector<PricedWindow> val_priced;
    if (cfg.validation)
        val_priced = build_priced_windows(policy, *cfg.validation, option, cfg.r);

    MlpModel model = init(cfg.arch, cfg.seed);
    OptState opt = cfg.optimizer;
    LossHistory history;
    history.train.reserve(cfg.episodes);
    history.validation.reserve(cfg.episodes);

    detail::BatchSampler sampler(priced.size(), cfg.batch_size, derive_seed(cfg.seed, 1));
    MlpWorkspace ws(cfg.arch);
    std::vector<double> grad(model.params.size(), 0.0);

    for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
        const auto batch = sampler.next_batch();
        std::fill(grad.begin(), grad.end(), 0.0);
        const double weight = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (std::size_t j : batch) {
            const PricedWindow& pw = priced[j];
            const double v = forward(model, std::span<const double>(&pw.head, 1), ws);
            const double err = v - pw.target();
            loss += weight * err * err;
            accumulate_grad(model, ws, weight * 2.0 * err, grad);
        }
        if (!std::isfinite(loss))
            throw TrainingDivergedError("train_v0: non-finite loss", episode + 1, batch[0]);
        step(opt, model, grad, episode);
        history.train.push_back(loss);

        double val = LossHistory::absent;
        if (cfg.validation &&
            ((episode + 1) % cfg.validation_every == 0 || episode + 1 == cfg.episodes)) {
            val = v0_loss(model, val_priced);
        }
        history.validation.push_back(val);
    }
    return {std::move(model), std::move(history)};
}

/// Price surface V(t, s): a 2-input network evaluated on (t / time_scale, s);
/// the scaling is undone here so callers work in natural time units.
struct SurfaceModel {
    MlpModel net;
    double time_scale = 1.0;

    double value(double t, double s) const {
        const double x[2] = {t / time_scale, s};
        return forward(net, std::span<const double>(x, 2));
    }

    double value(double t, double s, MlpWorkspace& ws) const {
        const double x[2] = {t / time_scale, s};
        return forward(net, std::span<const double>(x, 2), ws);
    }
};

/// Discrete martingale loss over full kernel paths:
///   (1/J) sum_j sum_{n<N} (V(n dt, S_{n,j}) - xi_N rho_N / rho_n)^2 dt.
inline double surface_ml_loss(const SurfaceModel& surface, std::span<const PricedWindow> priced,
                              double dt) {
    if (priced.empty()) throw SizeError("surface_ml_loss: empty batch");
    MlpWorkspace ws(surface.net.spec);
    double acc = 0.0;
    for (const PricedWindow& pw : priced) {
        if (pw.kernel.empty())
            throw std::invalid_argument("surface_ml_loss: priced windows lack kernel paths");
        const double terminal = pw.terminal_payoff * pw.terminal_kernel;
        for (std::size_t n = 0; n + 1 < pw.kernel.size(); ++n) {
            const double target = terminal / pw.kernel[n];
            const double v = surface.value(static_cast<double>(n) * dt, pw.prices[n], ws);
            const double err = v - target;
            acc += err * err * dt;
        }
    }
    return acc / static_cast<double>(priced.size());
}

struct SurfaceTrainResult {
    SurfaceModel model;
    LossHistory history;
};

/// Learns the full surface by mini-batch descent on the discrete martingale
/// loss; each sampled window contributes all of its N time slices.
inline SurfaceTrainResult train_surface(const MlpModel& policy, const WindowSet& windows,
                                        const OptionSpec& option, const TrainConfig& cfg) {
    cfg.validate_against(windows);
    if (cfg.arch.input_dim != 2)
        throw std::invalid_argument("train_surface: surface network must have input_dim 2");
    const double t_eff = static_cast<double>(windows.n_steps()) * windows.dt();
    if (std::abs(option.maturity - t_eff) > 1e-12 * std::max(1.0, t_eff))
        throw std::invalid_argument("train_surface: option maturity must equal n_steps * dt");

    const std::vector<PricedWindow> priced =
        build_priced_windows(policy, windows, option, cfg.r, /*keep_kernel_paths=*/true);

    SurfaceModel surface{init(cfg.arch, cfg.seed), t_eff};
    OptState opt = cfg.optimizer;
    LossHistory history;
    history.train.reserve(cfg.episodes);
    history.validation.reserve(cfg.episodes);

    detail::BatchSampler sampler(priced.size(), cfg.batch_size, derive_seed(cfg.seed, 1));
    MlpWorkspace ws(cfg.arch);
    std::vector<double> grad(surface.net.params.size(), 0.0);
    const double dt = windows.dt();

    for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
        const auto batch = sampler.next_batch();
        std::fill(grad.begin(), grad.end(), 0.0);
        const double weight = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (std::size_t j : batch) {
            const PricedWindow& pw = priced[j];
            const double terminal = pw.terminal_payoff * pw.terminal_kernel;
            for (std::size_t n = 0; n + 1 < pw.kernel.size(); ++n) {
                const double target = terminal / pw.kernel[n];
                const double v = surface.value(static_cast<double>(n) * dt, pw.prices[n], ws);
                const double err = v - target;
                loss += weight * err * err * dt;
                accumulate_grad(surface.net, ws, weight * 2.0 * err * dt, grad);
            }
        }
        if (!std::isfinite(loss))
            throw TrainingDivergedError("train_surface: non-finite loss", episode + 1, batch[0]);
        step(opt, surface.net, grad, episode);
        history.train.push_back(loss);
        history.validation.push_back(LossHistory::absent);
    }
    return {std::move(surface), std::move(history)};
}

/// Price-curve CSV: header "s,price", '.' decimal separator.
inline void write_price_curve_csv(const std::string& path, std::span<const double> s,
                                  std::span<const double> price) {
    if (s.size() != price.size())
        throw std::invalid_argument("write_price_curve_csv: length mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_price_curve_csv: cannot open " + path);
    out << "s,price\n";
    char buf[64];
    for (std::size_t i = 0; i < s.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.12g", s[i]);
        out << buf << ',';
        std::snprintf(buf, sizeof(buf), "%.12g", price[i]);
        out << buf << '\n';
    }
}

} // namespace pricer
