#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pricer/errors.hpp"
#include "pricer/market_data.hpp"
#include "pricer/neural.hpp"

namespace pricer {

// Wealth positivity floor: the kernel rho = 1/X degenerates when the discrete
// recursion crosses it.
inline constexpr double kWealthFloor = 1e-10;

/// Settings for one mini-batch training phase. One episode = one mini-batch
/// update; the same convention is recorded in checkpoint metadata.
struct TrainConfig {
    MlpSpec arch;
    std::size_t episodes = 0;
    std::size_t batch_size = 128;
    double r = 0.0;
    double dt = 0.0;
    std::size_t n_steps = 0;
    std::uint64_t seed = 0;
    OptState optimizer = OptState::adam_state(1e-3);
    std::optional<WindowSet> validation;
    std::size_t validation_every = 1;

    void validate_against(const WindowSet& windows) const {
        arch.validate();
        if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
        if (!std::isfinite(r)) throw std::invalid_argument("TrainConfig: r must be finite");
        if (windows.n_steps() != n_steps || windows.dt() != dt)
            throw std::invalid_argument("TrainConfig: window grid does not match n_steps/dt");
        if (validation && (validation->n_steps() != n_steps || validation->dt() != dt))
            throw std::invalid_argument("TrainConfig: validation grid does not match n_steps/dt");
        if (validation_every < 1)
            throw std::invalid_argument("TrainConfig: validation_every must be >= 1");
    }
};

/// Per-window wealth path X_0..X_N (X_0 = 1) and kernel path rho_n = 1/X_n.
class KernelPath {
public:
    explicit KernelPath(std::vector<double> wealth) : wealth_(std::move(wealth)) {
        if (wealth_.size() < 2) throw SizeError("KernelPath: need at least X_0, X_1");
        if (wealth_.front() != 1.0) throw std::invalid_argument("KernelPath: X_0 must be 1");
        kernel_.resize(wealth_.size());
        for (std::size_t n = 0; n < wealth_.size(); ++n) {
            if (!(wealth_[n] > 0.0))
                throw KernelDegeneracyError("KernelPath: non-positive wealth", n);
            kernel_[n] = 1.0 / wealth_[n];
        }
    }

    const std::vector<double>& wealth() const { return wealth_; }
    const std::vector<double>& kernel() const { return kernel_; }
    double terminal_wealth() const { return wealth_.back(); }
    double terminal_kernel() const { return kernel_.back(); }
    std::size_t steps() const { return wealth_.size() - 1; }

private:
    std::vector<double> wealth_;
    std::vector<double> kernel_;
};

/// Discrete log-utility loss of one window for a generic policy s -> f(s):
///   -sum_n [ r(1-f)dt + f*(S_{n+1}-S_n)/S_n - f^2 (S_{n+1}-S_n)^2 / (2 S_n^2) ].
/// Negative values mean positive expected log growth; training minimizes this.
template <class Policy>
double path_loss_fn(Policy&& policy, std::span<const double> window, double r, double dt) {
    if (window.size() < 2) throw SizeError("path_loss: window needs at least 2 prices");
    double acc = 0.0;
    for (std::size_t n = 0; n + 1 < window.size(); ++n) {
        const double s = window[n];
        if (!(s > 0.0) || !(window[n + 1] > 0.0))
            throw std::domain_error("path_loss: non-positive price");
        const double ret = (window[n + 1] - s) / s;
        const double f = policy(s);
        acc += r * (1.0 - f) * dt + f * ret - 0.5 * f * f * ret * ret;
    }
    return -acc;
}

inline double path_loss(const MlpModel& policy, std::span<const double> window, double r,
                        double dt) {
    MlpWorkspace ws(policy.spec);
    return path_loss_fn(
        [&](double s) { return forward(policy, std::span<const double>(&s, 1), ws); }, window, r,
        dt);
}

/// Wealth recursion of one window under a generic policy:
///   X_{n+1} = X_n [1 + r dt + f(S_n) ((S_{n+1}-S_n)/S_n - r dt)],  X_0 = 1.
template <class Policy>
KernelPath wealth_and_kernel_fn(Policy&& policy, std::span<const double> window, double r,
                                double dt) {
    if (window.size() < 2) throw SizeError("wealth_and_kernel: window needs at least 2 prices");
    std::vector<double> wealth(window.size());
    wealth[0] = 1.0;
    for (std::size_t n = 0; n + 1 < window.size(); ++n) {
        const double s = window[n];
        if (!(s > 0.0) || !(window[n + 1] > 0.0))
            throw std::domain_error("wealth_and_kernel: non-positive price");
        const double ret = (window[n + 1] - s) / s;
        const double f = policy(s);
        wealth[n + 1] = wealth[n] * (1.0 + r * dt + f * (ret - r * dt));
        if (!(wealth[n + 1] > kWealthFloor))
            throw KernelDegeneracyError("wealth_and_kernel: wealth crossed positivity floor",
                                        n + 1);
    }
    return KernelPath(std::move(wealth));
}

inline KernelPath wealth_and_kernel(const MlpModel& policy, std::span<const double> window,
                                    double r, double dt) {
    MlpWorkspace ws(policy.spec);
    return wealth_and_kernel_fn(
        [&](double s) { return forward(policy, std::span<const double>(&s, 1), ws); }, window, r,
        dt);
}

/// Closed-form optimal policy f*(s) = (mu(s) - r) / sigma(s)^2 for a known
/// model; the oracle side of policy training.
inline std::function<double(double)> theoretical_policy(const SdeModel& model, double r) {
    return [model, r](double s) {
        const double vol = vol_rate(model, s);
        if (vol == 0.0) throw SingularityError("theoretical_policy: zero volatility", s);
        return (drift_rate(model, s) - r) / (vol * vol);
    };
}

/// Mean path loss over a window set; no parameter updates.
inline double validation_loss(const MlpModel& policy, const WindowSet& windows, double r,
                              double dt) {
    MlpWorkspace ws(policy.spec);
    double acc = 0.0;
    for (std::size_t j = 0; j < windows.count(); ++j) {
        acc += path_loss_fn(
            [&](double s) { return forward(policy, std::span<const double>(&s, 1), ws); },
            windows.window(j), r, dt);
    }
    return acc / static_cast<double>(windows.count());
}

/// Per-episode losses; validation entries are NaN on episodes where the
/// validation set was not evaluated.
struct LossHistory {
    std::vector<double> train;
    std::vector<double> validation;

    static constexpr double absent = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline std::size_t bounded_index(std::uint64_t raw, std::size_t bound) {
    return static_cast<std::size_t>((static_cast<unsigned __int128>(raw) * bound) >> 64);
}

/// Seeded epoch shuffling: a fresh Fisher-Yates permutation whenever the
/// remaining windows cannot fill a batch (partial tail batches are dropped).
class BatchSampler {
public:
    BatchSampler(std::size_t count, std::size_t batch, std::uint64_t seed)
        : perm_(count), batch_(std::min(batch, count)), engine_(seed) {
        for (std::size_t i = 0; i < count; ++i) perm_[i] = i;
        cursor_ = count; // force shuffle on first use
    }

    std::span<const std::size_t> next_batch() {
        if (cursor_ + batch_ > perm_.size()) {
            for (std::size_t i = perm_.size() - 1; i > 0; --i) {
                std::swap(perm_[i], perm_[bounded_index(engine_(), i + 1)]);
            }
            cursor_ = 0;
        }
        const std::size_t begin = cursor_;
        cursor_ += batch_;
        return {perm_.data() + begin, batch_};
    }

    std::size_t batch_size() const { return batch_; }

private:
    std::vector<std::size_t> perm_;
    std::size_t batch_;
    std::size_t cursor_ = 0;
    std::mt19937_64 engine_;
};

/// Fused loss + gradient of one window's path loss; adds weight * d(loss)/d(params).
inline double path_loss_grad(const MlpModel& policy, MlpWorkspace& ws,
                             std::span<const double> window, double r, double dt, double weight,
                             std::span<double> grad) {
    double acc = 0.0;
    for (std::size_t n = 0; n + 1 < window.size(); ++n) {
        const double s = window[n];
        const double ret = (window[n + 1] - s) / s;
        const double f = forward(policy, std::span<const double>(&s, 1), ws);
        acc += r * (1.0 - f) * dt + f * ret - 0.5 * f * f * ret * ret;
        // d(-summand)/df
        const double upstream = weight * (r * dt - ret + f * ret * ret);
        accumulate_grad(policy, ws, upstream, grad);
    }
    return -acc;
}

} // namespace detail

struct PolicyTrainResult {
    MlpModel model;
    LossHistory history;
};

/// Mini-batch descent on the mean path loss (Algorithm-style episodes over
/// shuffled windows). Records per-episode training loss and, when a
/// validation set is configured, validation loss every `validation_every`
/// episodes and on the final one.
inline PolicyTrainResult train_policy(const WindowSet& windows, const TrainConfig& cfg) {
    cfg.validate_against(windows);
    if (cfg.arch.input_dim != 1)
        throw std::invalid_argument("train_policy: policy network must have input_dim 1");

    MlpModel model = init(cfg.arch, cfg.seed);
    OptState opt = cfg.optimizer;
    LossHistory history;
    history.train.reserve(cfg.episodes);
    history.validation.reserve(cfg.episodes);

    detail::BatchSampler sampler(windows.count(), cfg.batch_size, derive_seed(cfg.seed, 1));
    MlpWorkspace ws(cfg.arch);
    std::vector<double> grad(model.params.size(), 0.0);

    for (std::size_t episode = 0; episode < cfg.episodes; ++episode) {
        const auto batch = sampler.next_batch();
        std::fill(grad.begin(), grad.end(), 0.0);
        const double weight = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (std::size_t j : batch) {
            loss += weight * detail::path_loss_grad(model, ws, windows.window(j), cfg.r, cfg.dt,
                                                    weight, grad);
        }
        if (!std::isfinite(loss)) {
            std::size_t bad = batch[0];
            for (std::size_t j : batch) {
                if (!std::isfinite(path_loss(model, windows.window(j), cfg.r, cfg.dt))) {
                    bad = j;
                    break;
                }
            }
            throw TrainingDivergedError("train_policy: non-finite loss", episode + 1, bad);
        }
        step(opt, model, grad, episode);
        history.train.push_back(loss);

        double val = LossHistory::absent;
        if (cfg.validation &&
            ((episode + 1) % cfg.validation_every == 0 || episode + 1 == cfg.episodes)) {
            val = validation_loss(model, *cfg.validation, cfg.r, cfg.dt);
        }
        history.validation.push_back(val);
    }
    return {std::move(model), std::move(history)};
}

/// Loss-history CSV: header row, 1-based episodes, '.' decimal separator,
/// empty validation cell on episodes without a validation evaluation.
inline void write_loss_csv(const std::string& path, const LossHistory& history) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_loss_csv: cannot open " + path);
    out << "episode,train_loss,validation_loss\n";
    char buf[64];
    for (std::size_t e = 0; e < history.train.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%.12g", history.train[e]);
        out << (e + 1) << ',' << buf << ',';
        if (e < history.validation.size() && std::isfinite(history.validation[e])) {
            std::snprintf(buf, sizeof(buf), "%.12g", history.validation[e]);
            out << buf;
        }
        out << '\n';
    }
}

} // namespace pricer
