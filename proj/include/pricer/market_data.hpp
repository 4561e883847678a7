#pragma once

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pricer/errors.hpp"
#include "pricer/rng.hpp"

namespace pricer {

// Floor used by the full-truncation Euler scheme: drift/vol are evaluated at
// max(s, kEulerFloor) and emitted prices are clamped there, so trajectories
// stay strictly positive even under extreme discrete noise.
inline constexpr double kEulerFloor = 1e-8;

/// Piecewise implied-vol-by-strike curve: a quadratic c2*K^2 + c1*K + c0 on
/// (k_lo, k_hi), constant wings outside. Flat levels default to the quadratic
/// evaluated at the knees, which makes the curve continuous by construction.
class ImpliedVolFn {
public:
    ImpliedVolFn(double c2, double c1, double c0, double k_lo, double k_hi)
        : ImpliedVolFn(c2, c1, c0, k_lo, k_hi,
                       quad_value(c2, c1, c0, k_lo), quad_value(c2, c1, c0, k_hi)) {}

    ImpliedVolFn(double c2, double c1, double c0, double k_lo, double k_hi,
                 double v_lo, double v_hi)
        : c2_(c2), c1_(c1), c0_(c0), k_lo_(k_lo), k_hi_(k_hi), v_lo_(v_lo), v_hi_(v_hi) {
        if (!(k_lo < k_hi)) throw std::invalid_argument("ImpliedVolFn: k_lo must be < k_hi");
        if (std::abs(quad_value(c2, c1, c0, k_lo) - v_lo) > 1e-6 ||
            std::abs(quad_value(c2, c1, c0, k_hi) - v_hi) > 1e-6) {
            throw std::invalid_argument("ImpliedVolFn: discontinuous at a knee");
        }
        if (v_lo <= 0.0 || v_hi <= 0.0 || min_on_quad_segment() <= 0.0) {
            throw std::invalid_argument("ImpliedVolFn: curve must be strictly positive");
        }
    }

    /// Vol level; quadratic branch on [k_lo, k_hi], flat wings strictly outside.
    double operator()(double k) const {
        if (k < k_lo_) return v_lo_;
        if (k > k_hi_) return v_hi_;
        return quad_value(c2_, c1_, c0_, k);
    }

    /// d(vol)/dK. At the knees this is the one-sided derivative taken from the
    /// quadratic side; strictly inside the wings it is zero.
    double slope(double k) const {
        if (k < k_lo_ || k > k_hi_) return 0.0;
        return 2.0 * c2_ * k + c1_;
    }

    /// d^2(vol)/dK^2, same knee convention as slope().
    double curvature(double k) const {
        if (k < k_lo_ || k > k_hi_) return 0.0;
        return 2.0 * c2_;
    }

    double c2() const { return c2_; }
    double c1() const { return c1_; }
    double c0() const { return c0_; }
    double knee_lo() const { return k_lo_; }
    double knee_hi() const { return k_hi_; }
    double level_lo() const { return v_lo_; }
    double level_hi() const { return v_hi_; }

private:
    static double quad_value(double c2, double c1, double c0, double k) {
        return (c2 * k + c1) * k + c0;
    }

    double min_on_quad_segment() const {
        double lo = std::min(quad_value(c2_, c1_, c0_, k_lo_), quad_value(c2_, c1_, c0_, k_hi_));
        if (c2_ > 0.0) {
            const double vertex = -c1_ / (2.0 * c2_);
            if (vertex > k_lo_ && vertex < k_hi_) {
                lo = std::min(lo, quad_value(c2_, c1_, c0_, vertex));
            }
        }
        return lo;
    }

    double c2_, c1_, c0_;
    double k_lo_, k_hi_;
    double v_lo_, v_hi_;
};

/// dS = a(b - S)dt + (sigma0/sqrt(S)) S dB. Construction enforces the Feller
/// condition 2ab > sigma0^2 so the true process stays positive.
struct CirModel {
    CirModel(double a_, double b_, double sigma0_) : a(a_), b(b_), sigma0(sigma0_) {
        if (a <= 0.0 || b <= 0.0 || sigma0 <= 0.0)
            throw std::invalid_argument("CirModel: a, b, sigma0 must be positive");
        if (2.0 * a * b <= sigma0 * sigma0)
            throw std::invalid_argument("CirModel: Feller condition 2ab > sigma0^2 violated");
    }

    double a;
    double b;
    double sigma0;
};

/// Mean-reverting drift a(b - S) with a local-vol diffusion reconstructed from
/// an implied-vol curve via the Dupire relation at calibration maturity t_star.
struct GlvModel {
    GlvModel(double a_, double b_, ImpliedVolFn iv_, double t_star_, double r_star_)
        : a(a_), b(b_), iv(std::move(iv_)), t_star(t_star_), r_star(r_star_) {
        if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("GlvModel: a, b must be positive");
        if (t_star <= 0.0) throw std::invalid_argument("GlvModel: t_star must be positive");
    }

    double a;
    double b;
    ImpliedVolFn iv;
    double t_star;
    double r_star;
};

/// dS/S = mu dt + sigma dB.
struct GbmModel {
    GbmModel(double mu_, double sigma_) : mu(mu_), sigma(sigma_) {
        if (sigma <= 0.0) throw std::invalid_argument("GbmModel: sigma must be positive");
    }

    double mu;
    double sigma;
};

using SdeModel = std::variant<CirModel, GlvModel, GbmModel>;

enum class OptionKind { call, put };

inline std::string to_string(OptionKind kind) { return kind == OptionKind::call ? "call" : "put"; }

/// European vanilla contract: kind, strike, maturity in years.
struct OptionSpec {
    OptionSpec(OptionKind kind_, double strike_, double maturity_)
        : kind(kind_), strike(strike_), maturity(maturity_) {
        if (strike <= 0.0) throw std::invalid_argument("OptionSpec: strike must be positive");
        if (maturity <= 0.0) throw std::invalid_argument("OptionSpec: maturity must be positive");
    }

    OptionKind kind;
    double strike;
    double maturity;
};

/// Relative drift mu(s): E[dS/S] = mu(s) dt under the objective measure.
inline double drift_rate(const SdeModel& model, double s) {
    if (s <= 0.0) throw std::domain_error("drift_rate: price must be positive");
    return std::visit(
        [s](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, GbmModel>) {
                return m.mu;
            } else {
                return m.a * (m.b - s) / s;
            }
        },
        model);
}

/// Relative diffusion sigma(s): dS/S = mu dt + sigma(s) dB. For the GLV
/// variant this is the Dupire local vol with analytic smile derivatives.
inline double vol_rate(const SdeModel& model, double s) {
    if (s <= 0.0) throw std::domain_error("vol_rate: price must be positive");
    return std::visit(
        [s](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, CirModel>) {
                return m.sigma0 / std::sqrt(s);
            } else if constexpr (std::is_same_v<T, GbmModel>) {
                return m.sigma;
            } else {
                const double vol = m.iv(s);
                const double vol_k = m.iv.slope(s);
                const double vol_kk = m.iv.curvature(s);
                const double sqrt_t = std::sqrt(m.t_star);
                const double d1 =
                    (-std::log(s) + m.t_star * (m.r_star + 0.5 * vol * vol)) / (vol * sqrt_t);
                const double num = vol * vol + 2.0 * m.r_star * vol * s * m.t_star * vol_k;
                const double lin = 1.0 + s * d1 * sqrt_t * vol_k;
                const double den =
                    lin * lin + vol * m.t_star * s * s * (vol_kk - d1 * vol_k * vol_k * sqrt_t);
                if (den <= 0.0)
                    throw SingularityError("vol_rate: Dupire denominator non-positive", s);
                const double local_var = num / den;
                if (local_var <= 0.0)
                    throw SingularityError("vol_rate: Dupire local variance non-positive", s);
                return std::sqrt(local_var);
            }
        },
        model);
}

/// One observed price path on a fixed grid; strictly positive, at least two
/// points.
class PriceTrajectory {
public:
    PriceTrajectory(std::vector<double> prices, double dt)
        : prices_(std::move(prices)), dt_(dt) {
        if (prices_.size() < 2) throw SizeError("PriceTrajectory: need at least 2 prices");
        if (dt_ <= 0.0) throw std::invalid_argument("PriceTrajectory: dt must be positive");
        for (double p : prices_) {
            if (!(p > 0.0)) throw std::invalid_argument("PriceTrajectory: prices must be positive");
        }
    }

    const std::vector<double>& prices() const { return prices_; }
    double dt() const { return dt_; }
    double s0() const { return prices_.front(); }
    std::size_t size() const { return prices_.size(); }

private:
    std::vector<double> prices_;
    double dt_;
};

/// Euler-Maruyama path of the model dynamics with an injectable noise source
/// (tests use a zero generator to strip the diffusion term).
template <class Noise>
PriceTrajectory simulate_trajectory_with(const SdeModel& model, double s0, double dt,
                                         std::size_t steps, Noise&& noise) {
    if (s0 <= 0.0) throw std::domain_error("simulate_trajectory: s0 must be positive");
    if (dt <= 0.0) throw std::invalid_argument("simulate_trajectory: dt must be positive");
    if (steps < 1) throw std::invalid_argument("simulate_trajectory: steps must be >= 1");

    std::vector<double> prices;
    prices.reserve(steps + 1);
    prices.push_back(s0);
    const double sqrt_dt = std::sqrt(dt);
    double s = s0;
    for (std::size_t k = 0; k < steps; ++k) {
        const double s_eff = std::max(s, kEulerFloor);
        const double incr =
            s_eff * (drift_rate(model, s_eff) * dt + vol_rate(model, s_eff) * sqrt_dt * noise());
        s = std::max(s + incr, kEulerFloor);
        prices.push_back(s);
    }
    return PriceTrajectory(std::move(prices), dt);
}

/// Seeded objective-measure path; identical seeds give identical trajectories.
inline PriceTrajectory simulate_trajectory(const SdeModel& model, double s0, double dt,
                                           std::size_t steps, std::uint64_t seed) {
    NormalSampler normal(seed);
    return simulate_trajectory_with(model, s0, dt, steps, normal);
}

/// J fixed-length windows of N+1 prices sharing one dt. Windows are views into
/// a shared buffer, so heavily overlapping extractions cost no extra memory.
class WindowSet {
public:
    WindowSet(std::shared_ptr<const std::vector<double>> buffer,
              std::vector<std::size_t> offsets, std::size_t n_steps, double dt)
        : buffer_(std::move(buffer)), offsets_(std::move(offsets)), n_steps_(n_steps), dt_(dt) {
        if (!buffer_) throw std::invalid_argument("WindowSet: null buffer");
        if (n_steps_ < 1) throw std::invalid_argument("WindowSet: n_steps must be >= 1");
        if (dt_ <= 0.0) throw std::invalid_argument("WindowSet: dt must be positive");
        if (offsets_.empty()) throw SizeError("WindowSet: no windows");
        for (std::size_t off : offsets_) {
            if (off + n_steps_ + 1 > buffer_->size())
                throw SizeError("WindowSet: window exceeds buffer");
        }
    }

    std::size_t count() const { return offsets_.size(); }
    std::size_t n_steps() const { return n_steps_; }
    double dt() const { return dt_; }
    double horizon() const { return static_cast<double>(n_steps_) * dt_; }

    std::span<const double> window(std::size_t j) const {
        return {buffer_->data() + offsets_[j], n_steps_ + 1};
    }

    double head(std::size_t j) const { return (*buffer_)[offsets_[j]]; }

    std::vector<double> heads() const {
        std::vector<double> out(count());
        for (std::size_t j = 0; j < count(); ++j) out[j] = head(j);
        return out;
    }

    /// All prices appearing in some window (with multiplicity by buffer, not
    /// by window overlap).
    const std::vector<double>& buffer() const { return *buffer_; }

    std::shared_ptr<const std::vector<double>> shared_buffer() const { return buffer_; }

private:
    std::shared_ptr<const std::vector<double>> buffer_;
    std::vector<std::size_t> offsets_;
    std::size_t n_steps_;
    double dt_;
};

/// Windows starting at 0, stride, 2*stride, ...; J = floor((len-N-1)/stride)+1.
inline WindowSet extract_windows(const PriceTrajectory& traj, std::size_t n_steps,
                                 std::size_t stride) {
    if (stride < 1) throw std::invalid_argument("extract_windows: stride must be >= 1");
    if (traj.size() < n_steps + 1)
        throw SizeError("extract_windows: trajectory shorter than one window");
    const std::size_t last_start = traj.size() - n_steps - 1;
    std::vector<std::size_t> offsets;
    offsets.reserve(last_start / stride + 1);
    for (std::size_t off = 0; off <= last_start; off += stride) offsets.push_back(off);
    auto buffer = std::make_shared<const std::vector<double>>(traj.prices());
    return WindowSet(std::move(buffer), std::move(offsets), n_steps, traj.dt());
}

/// Incremental construction of a WindowSet from several trajectories or
/// explicit windows (copies into one flat buffer).
class WindowSetBuilder {
public:
    WindowSetBuilder(std::size_t n_steps, double dt) : n_steps_(n_steps), dt_(dt) {}

    void add_window(std::span<const double> prices) {
        if (prices.size() != n_steps_ + 1)
            throw SizeError("WindowSetBuilder: window must have n_steps+1 prices");
        for (double p : prices) {
            if (!(p > 0.0))
                throw std::invalid_argument("WindowSetBuilder: prices must be positive");
        }
        offsets_.push_back(buffer_.size());
        buffer_.insert(buffer_.end(), prices.begin(), prices.end());
    }

    void add_trajectory(const PriceTrajectory& traj, std::size_t stride) {
        if (traj.dt() != dt_) throw std::invalid_argument("WindowSetBuilder: dt mismatch");
        if (stride < 1) throw std::invalid_argument("WindowSetBuilder: stride must be >= 1");
        if (traj.size() < n_steps_ + 1)
            throw SizeError("WindowSetBuilder: trajectory shorter than one window");
        // The trajectory is stored once; windows are offsets into it, so
        // stride-1 extraction costs no extra memory.
        const std::size_t base = buffer_.size();
        buffer_.insert(buffer_.end(), traj.prices().begin(), traj.prices().end());
        const std::size_t last_start = traj.size() - n_steps_ - 1;
        for (std::size_t off = 0; off <= last_start; off += stride) {
            offsets_.push_back(base + off);
        }
    }

    WindowSet build() && {
        auto buffer = std::make_shared<const std::vector<double>>(std::move(buffer_));
        return WindowSet(std::move(buffer), std::move(offsets_), n_steps_, dt_);
    }

private:
    std::size_t n_steps_;
    double dt_;
    std::vector<double> buffer_;
    std::vector<std::size_t> offsets_;
};

/// `count` independent windows simulated from the same initial price; window i
/// uses seed + i, matching the batch-simulation seeding contract.
inline WindowSet simulate_windows(const SdeModel& model, double s0, double dt,
                                  std::size_t n_steps, std::size_t count, std::uint64_t seed) {
    if (count < 1) throw SizeError("simulate_windows: count must be >= 1");
    WindowSetBuilder builder(n_steps, dt);
    for (std::size_t i = 0; i < count; ++i) {
        builder.add_window(simulate_trajectory(model, s0, dt, n_steps, seed + i).prices());
    }
    return std::move(builder).build();
}

/// Linear-interpolated empirical quantile, q in [0,1].
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw SizeError("quantile: empty sample");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q must be in [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

/// Parse a plain-text price file: one positive decimal per line, an optional
/// single header line whose first character is not part of a number.
inline PriceTrajectory load_prices(const std::string& path, double dt) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_prices: cannot open " + path);

    std::vector<double> prices;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        std::size_t begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) {
            if (first) first = false;
            continue;
        }
        const char c = line[begin];
        const bool numeric_start = std::isdigit(static_cast<unsigned char>(c)) != 0 ||
                                   c == '+' || c == '-' || c == '.';
        if (first && !numeric_start) {
            first = false; // header line
            continue;
        }
        first = false;
        errno = 0;
        char* end = nullptr;
        const double value = std::strtod(line.c_str() + begin, &end);
        if (end == line.c_str() + begin || errno != 0)
            throw IngestionError("unparsable price '" + line + "'", line_no);
        for (const char* p = end; *p != '\0'; ++p) {
            if (*p != ' ' && *p != '\t' && *p != '\r')
                throw IngestionError("trailing garbage in '" + line + "'", line_no);
        }
        if (!(value > 0.0)) throw IngestionError("non-positive price", line_no);
        prices.push_back(value);
    }
    if (prices.size() < 2) throw SizeError("load_prices: need at least 2 prices");
    return PriceTrajectory(std::move(prices), dt);
}

} // namespace pricer
