#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pricer/errors.hpp"
#include "pricer/kernel_learner.hpp"
#include "pricer/market_data.hpp"
#include "pricer/neural.hpp"
#include "pricer/price_learner.hpp"

namespace pricer {

/// Standard normal CDF via erfc; max error below 1e-14 over the real line.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

/// Black-Scholes value of a European vanilla with continuous dividend yield q.
/// The sigma->0 (or tau->0) limit returns the discounted-forward intrinsic.
inline double bs_price(const OptionSpec& option, double s, double r, double q, double sigma,
                       double tau) {
    if (s <= 0.0) throw std::domain_error("bs_price: s must be positive");
    const double df_r = std::exp(-r * tau);
    const double df_q = std::exp(-q * tau);
    const double vol_sqrt_tau = sigma * std::sqrt(std::max(tau, 0.0));
    if (vol_sqrt_tau < 1e-14) {
        const double fwd_gap = s * df_q - option.strike * df_r;
        if (option.kind == OptionKind::call) return fwd_gap > 0.0 ? fwd_gap : 0.0;
        return fwd_gap < 0.0 ? -fwd_gap : 0.0;
    }
    const double d1 =
        (std::log(s / option.strike) + (r - q + 0.5 * sigma * sigma) * tau) / vol_sqrt_tau;
    const double d2 = d1 - vol_sqrt_tau;
    if (option.kind == OptionKind::call)
        return s * df_q * norm_cdf(d1) - option.strike * df_r * norm_cdf(d2);
    return option.strike * df_r * norm_cdf(-d2) - s * df_q * norm_cdf(-d1);
}

namespace detail {

inline double bs_vega(const OptionSpec& option, double s, double r, double q, double sigma,
                      double tau) {
    const double vol_sqrt_tau = sigma * std::sqrt(tau);
    const double d1 =
        (std::log(s / option.strike) + (r - q + 0.5 * sigma * sigma) * tau) / vol_sqrt_tau;
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    return s * std::exp(-q * tau) * inv_sqrt_2pi * std::exp(-0.5 * d1 * d1) * std::sqrt(tau);
}

} // namespace detail

/// Inverts bs_price in sigma by safeguarded Newton on the bracket
/// [1e-4, 5.0], to |price error| < 1e-10. Prices at or outside the
/// no-arbitrage bounds have no solution and throw.
inline double implied_vol(const OptionSpec& option, double price, double s, double r, double q,
                          double tau) {
    if (s <= 0.0 || tau <= 0.0) throw std::domain_error("implied_vol: s and tau must be positive");
    const double df_r = std::exp(-r * tau);
    const double df_q = std::exp(-q * tau);
    const double fwd_gap = s * df_q - option.strike * df_r;
    const double lower =
        option.kind == OptionKind::call ? std::max(fwd_gap, 0.0) : std::max(-fwd_gap, 0.0);
    const double upper = option.kind == OptionKind::call ? s * df_q : option.strike * df_r;
    if (!(price > lower))
        throw NoSolutionError("implied_vol: price at or below discounted intrinsic");
    if (!(price < upper)) throw NoSolutionError("implied_vol: price at or above upper bound");

    double lo = 1e-4;
    double hi = 5.0;
    constexpr double tol = 1e-10;
    const double f_lo = bs_price(option, s, r, q, lo, tau) - price;
    const double f_hi = bs_price(option, s, r, q, hi, tau) - price;
    if (f_lo > 0.0) throw NoSolutionError("implied_vol: price below bracket at sigma=1e-4");
    if (f_hi < 0.0) throw NoSolutionError("implied_vol: price above bracket at sigma=5.0");

    double sigma = 0.5 * (lo + hi);
    for (int it = 0; it < 120; ++it) {
        const double diff = bs_price(option, s, r, q, sigma, tau) - price;
        const double vega = detail::bs_vega(option, s, r, q, sigma, tau);
        // Price tolerance alone is not enough where vega underflows (deep OTM,
        // low vol); demand sigma-resolution through vega or bracket width.
        if (std::abs(diff) < tol) {
            if (vega > 0.0 && std::abs(diff) / vega < 1e-9) return sigma;
            if (hi - lo < 1e-12) return sigma;
        }
        if (diff > 0.0) hi = sigma; else lo = sigma;
        if (hi - lo < 1e-14) return 0.5 * (lo + hi);
        double next = vega > 1e-300 ? sigma - diff / vega : sigma;
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi); // bisection safeguard
        sigma = next;
    }
    throw NoSolutionError("implied_vol: no convergence within iteration budget");
}

/// Finite-difference grid for the pricing PDE; theta = 0.5 is Crank-Nicolson.
struct PdeGrid {
    double s_min = 0.2;
    double s_max = 3.0;
    std::size_t n_space = 600; // intervals; nodes = n_space + 1
    std::size_t n_time = 300;
    double theta = 0.5;

    void validate(double strike) const {
        if (!(s_min > 0.0) || !(s_min < s_max))
            throw std::invalid_argument("PdeGrid: need 0 < s_min < s_max");
        if (!(s_min < strike && strike < s_max))
            throw std::invalid_argument("PdeGrid: strike must lie inside (s_min, s_max)");
        if (n_space < 2 || n_time < 2)
            throw std::invalid_argument("PdeGrid: n_space and n_time must be >= 2");
        if (theta < 0.0 || theta > 1.0)
            throw std::invalid_argument("PdeGrid: theta must be in [0,1]");
    }
};

/// Time-0 PDE slice with linear interpolation between grid nodes.
class PdeSlice {
public:
    PdeSlice(std::vector<double> s, std::vector<double> v) : s_(std::move(s)), v_(std::move(v)) {
        if (s_.size() != v_.size() || s_.size() < 2)
            throw std::invalid_argument("PdeSlice: inconsistent grid");
    }

    double operator()(double s) const {
        if (s < s_.front() || s > s_.back())
            throw std::domain_error("PdeSlice: query outside grid");
        const double h = s_[1] - s_[0];
        std::size_t i = static_cast<std::size_t>((s - s_.front()) / h);
        if (i + 1 >= s_.size()) i = s_.size() - 2;
        const double w = (s - s_[i]) / (s_[i + 1] - s_[i]);
        return v_[i] + w * (v_[i + 1] - v_[i]);
    }

    const std::vector<double>& grid() const { return s_; }
    const std::vector<double>& values() const { return v_; }

private:
    std::vector<double> s_;
    std::vector<double> v_;
};

/// Solves the risk-neutral pricing PDE
///   V_t + r s V_s + 1/2 sigma(s)^2 s^2 V_ss - r V = 0,  V(T, s) = h(s)
/// backward with a theta-scheme on a uniform grid and Dirichlet far-field
/// boundaries (call: 0 at s_min, s_max - K e^{-r tau} at s_max; put mirrored).
/// Returns the time-0 slice.
inline PdeSlice fd_pde_price(const SdeModel& model, const OptionSpec& option, double r,
                             const PdeGrid& grid) {
    grid.validate(option.strike);
    const std::size_t nodes = grid.n_space + 1;
    const double h = (grid.s_max - grid.s_min) / static_cast<double>(grid.n_space);
    const double dtau = option.maturity / static_cast<double>(grid.n_time);

    std::vector<double> s(nodes);
    std::vector<double> diffusion(nodes); // A_i = sigma^2 s^2 / (2 h^2)
    std::vector<double> advection(nodes); // B_i = r s / (2 h)
    for (std::size_t i = 0; i < nodes; ++i) {
        s[i] = grid.s_min + static_cast<double>(i) * h;
        const double vol = vol_rate(model, s[i]);
        if (!(vol > 0.0)) throw SingularityError("fd_pde_price: degenerate volatility", s[i]);
        diffusion[i] = 0.5 * vol * vol * s[i] * s[i] / (h * h);
        advection[i] = 0.5 * r * s[i] / h;
    }

    std::vector<double> v(nodes);
    for (std::size_t i = 0; i < nodes; ++i) v[i] = payoff(option, s[i]);

    const std::size_t m = nodes - 2; // interior unknowns
    std::vector<double> sub(m), diag(m), sup(m), rhs(m), scratch(m), next(nodes);
    const double th = grid.theta;
    for (std::size_t i = 0; i < m; ++i) {
        const double a = diffusion[i + 1];
        const double b = advection[i + 1];
        sub[i] = -th * dtau * (a - b);
        diag[i] = 1.0 + th * dtau * (2.0 * a + r);
        sup[i] = -th * dtau * (a + b);
    }

    for (std::size_t k = 0; k < grid.n_time; ++k) {
        const double tau_next = static_cast<double>(k + 1) * dtau;
        const double df = std::exp(-r * tau_next);
        double lo_bound, hi_bound;
        if (option.kind == OptionKind::call) {
            lo_bound = 0.0;
            hi_bound = grid.s_max - option.strike * df;
        } else {
            lo_bound = option.strike * df - grid.s_min;
            hi_bound = 0.0;
        }

        for (std::size_t i = 0; i < m; ++i) {
            const double a = diffusion[i + 1];
            const double b = advection[i + 1];
            const double explicit_part =
                a * (v[i + 2] - 2.0 * v[i + 1] + v[i]) + b * (v[i + 2] - v[i]) - r * v[i + 1];
            rhs[i] = v[i + 1] + (1.0 - th) * dtau * explicit_part;
        }
        rhs[0] -= sub[0] * lo_bound;
        rhs[m - 1] -= sup[m - 1] * hi_bound;

        // Thomas algorithm.
        scratch[0] = sup[0] / diag[0];
        next[1] = rhs[0] / diag[0];
        for (std::size_t i = 1; i < m; ++i) {
            const double denom = diag[i] - sub[i] * scratch[i - 1];
            scratch[i] = sup[i] / denom;
            next[i + 1] = (rhs[i] - sub[i] * next[i]) / denom;
        }
        for (std::size_t i = m - 1; i-- > 0;) next[i + 1] -= scratch[i] * next[i + 2];

        next[0] = lo_bound;
        next[nodes - 1] = hi_bound;
        v = next;
    }
    return PdeSlice(std::move(s), std::move(v));
}

/// Monte-Carlo estimate with standard error of the sample mean.
struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
};

/// Prices by simulating fresh objective-measure paths from s0 (path i uses
/// seed + i), discounting each payoff with the terminal kernel produced by the
/// supplied policy, and averaging. This is the direct estimate of the pricing
/// identity V_0 = E[xi_N rho_N].
template <class Policy>
McEstimate mc_price_with_kernel_fn(const SdeModel& model, Policy&& policy, double s0,
                                   const OptionSpec& option, double r, double dt,
                                   std::size_t n_paths, std::uint64_t seed) {
    if (n_paths < 2) throw std::invalid_argument("mc_price_with_kernel: need n_paths >= 2");
    const double steps_real = option.maturity / dt;
    const auto n_steps = static_cast<std::size_t>(std::llround(steps_real));
    if (n_steps < 1 || std::abs(steps_real - static_cast<double>(n_steps)) > 1e-6)
        throw std::invalid_argument("mc_price_with_kernel: maturity must be a multiple of dt");

    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) {
        const PriceTrajectory traj = simulate_trajectory(model, s0, dt, n_steps, seed + i);
        const KernelPath path = wealth_and_kernel_fn(policy, traj.prices(), r, dt);
        const double sample = payoff(option, traj.prices().back()) * path.terminal_kernel();
        sum += sample;
        sum_sq += sample * sample;
    }
    const double n = static_cast<double>(n_paths);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    return {mean, std::sqrt(var / n), n_paths};
}

inline McEstimate mc_price_with_kernel(const SdeModel& model, const MlpModel& policy, double s0,
                                       const OptionSpec& option, double r, double dt,
                                       std::size_t n_paths, std::uint64_t seed) {
    MlpWorkspace ws(policy.spec);
    return mc_price_with_kernel_fn(
        model, [&](double s) { return forward(policy, std::span<const double>(&s, 1), ws); }, s0,
        option, r, dt, n_paths, seed);
}

/// Monte-Carlo estimate of the maximal expected log growth
///   r T + E[ sum_n theta(S_n)^2 / 2 * dt ],  theta = (mu - r) / sigma,
/// over objective-measure paths from s0. Its negation is the level a policy
/// loss curve converges to.
inline McEstimate theoretical_log_value(const SdeModel& model, double r, double s0, double dt,
                                        std::size_t n_steps, std::size_t n_paths,
                                        std::uint64_t seed) {
    if (n_paths < 2) throw std::invalid_argument("theoretical_log_value: need n_paths >= 2");
    if (n_steps < 1) throw std::invalid_argument("theoretical_log_value: need n_steps >= 1");
    const double horizon = static_cast<double>(n_steps) * dt;

    double sum = 0.0;
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < n_paths; ++i) {
        const PriceTrajectory traj = simulate_trajectory(model, s0, dt, n_steps, seed + i);
        double acc = 0.0;
        for (std::size_t n = 0; n < n_steps; ++n) {
            const double s = traj.prices()[n];
            const double vol = vol_rate(model, s);
            if (vol == 0.0)
                throw SingularityError("theoretical_log_value: zero volatility", s);
            const double theta = (drift_rate(model, s) - r) / vol;
            acc += 0.5 * theta * theta * dt;
        }
        sum += acc;
        sum_sq += acc * acc;
    }
    const double n = static_cast<double>(n_paths);
    const double mean = sum / n;
    const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
    return {r * horizon + mean, std::sqrt(var / n), n_paths};
}

/// Implied-vol-by-moneyness curve from one pricing source. Failed inversions
/// are explicit gaps, never interpolated.
struct IvCurve {
    std::vector<double> moneyness;
    std::vector<double> vol;  // meaningless where gap is set
    std::vector<bool> gap;
    std::string source; // "learned" | "pde_benchmark" | "mc_kernel"
};

/// Per-point implied-vol inversion of an arbitrary price function evaluated at
/// s = moneyness * strike; out-of-bounds prices become gaps.
inline IvCurve iv_curve(const std::function<double(double)>& price_fn, const OptionSpec& option,
                        double r, std::span<const double> moneyness_grid,
                        const std::string& source) {
    IvCurve curve;
    curve.source = source;
    curve.moneyness.assign(moneyness_grid.begin(), moneyness_grid.end());
    curve.vol.resize(curve.moneyness.size(), 0.0);
    curve.gap.resize(curve.moneyness.size(), false);
    for (std::size_t i = 0; i < curve.moneyness.size(); ++i) {
        const double s = curve.moneyness[i] * option.strike;
        double price;
        try {
            price = price_fn(s);
            if (!std::isfinite(price)) throw NoSolutionError("non-finite price");
            curve.vol[i] = implied_vol(option, price, s, r, 0.0, option.maturity);
        } catch (const NoSolutionError&) {
            curve.gap[i] = true;
        }
    }
    return curve;
}

/// IvCurve CSV: one row per (curve, point), schema
/// moneyness,implied_vol,source,gap_flag with an empty vol cell on gaps.
inline void write_iv_csv(const std::string& path, std::span<const IvCurve> curves) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_iv_csv: cannot open " + path);
    out << "moneyness,implied_vol,source,gap_flag\n";
    char buf[64];
    for (const IvCurve& curve : curves) {
        for (std::size_t i = 0; i < curve.moneyness.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.12g", curve.moneyness[i]);
            out << buf << ',';
            if (!curve.gap[i]) {
                std::snprintf(buf, sizeof(buf), "%.12g", curve.vol[i]);
                out << buf;
            }
            out << ',' << curve.source << ',' << (curve.gap[i] ? 1 : 0) << '\n';
        }
    }
}

/// PDE slice CSV: header "s,price".
inline void write_slice_csv(const std::string& path, const PdeSlice& slice) {
    write_price_curve_csv(path, slice.grid(), slice.values());
}

} // namespace pricer
