#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pricer/errors.hpp"
#include "pricer/rng.hpp"

namespace pricer {

enum class Activation { relu, leaky_relu };

/// Scalar-output MLP architecture. Hidden layers use the configured
/// activation, the output layer is linear. With `residual` set, a skip
/// connection is added into the pre-activation of every even hidden layer
/// from the activation two layers back, wherever the widths match (the first
/// block usually has no skip because the input dimension differs).
struct MlpSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden;
    Activation activation = Activation::relu;
    double leaky_slope = 0.01;
    bool residual = false;

    void validate() const {
        if (input_dim != 1 && input_dim != 2)
            throw std::invalid_argument("MlpSpec: input_dim must be 1 or 2");
        if (hidden.empty()) throw std::invalid_argument("MlpSpec: need at least one hidden layer");
        for (std::size_t w : hidden) {
            if (w == 0) throw std::invalid_argument("MlpSpec: hidden widths must be positive");
        }
        if (residual) {
            for (std::size_t w : hidden) {
                if (w != hidden.front())
                    throw std::invalid_argument(
                        "MlpSpec: residual requires equal consecutive hidden widths");
            }
        }
        if (activation == Activation::leaky_relu && leaky_slope <= 0.0)
            throw std::invalid_argument("MlpSpec: leaky_slope must be positive");
    }

    /// Width of the input feeding hidden layer l (1-based); l=1 sees the input.
    std::size_t fan_in(std::size_t l) const { return l == 1 ? input_dim : hidden[l - 2]; }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 1; l <= hidden.size(); ++l) n += hidden[l - 1] * (fan_in(l) + 1);
        return n + hidden.back() + 1;
    }

    bool skip_into(std::size_t l) const {
        return residual && l >= 2 && l % 2 == 0 && fan_in(l - 1) == hidden[l - 1];
    }

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Parameters are a single flat vector in a fixed, documented order:
/// layer-major from the first hidden layer to the output layer; within a
/// layer the weight matrix first (row-major, rows = output units), then the
/// biases. Checkpoints rely on this order.
struct MlpModel {
    MlpSpec spec;
    std::vector<double> params;

    void validate() const {
        spec.validate();
        if (params.size() != spec.param_count())
            throw ShapeError("MlpModel: params length does not match spec");
    }
};

/// He-style init: weights ~ N(0, 2/fan_in), biases zero; deterministic per seed.
inline MlpModel init(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    MlpModel model{spec, std::vector<double>(spec.param_count(), 0.0)};
    NormalSampler normal(seed);
    std::size_t offset = 0;
    const std::size_t n_hidden = spec.hidden.size();
    for (std::size_t l = 1; l <= n_hidden + 1; ++l) {
        const std::size_t in_w = (l <= n_hidden) ? spec.fan_in(l) : spec.hidden.back();
        const std::size_t out_w = (l <= n_hidden) ? spec.hidden[l - 1] : 1;
        const double scale = std::sqrt(2.0 / static_cast<double>(in_w));
        for (std::size_t k = 0; k < out_w * in_w; ++k) model.params[offset + k] = scale * normal();
        offset += out_w * in_w + out_w; // biases stay zero
    }
    return model;
}

/// Reusable per-thread scratch for forward/backward passes.
class MlpWorkspace {
public:
    MlpWorkspace() = default;
    explicit MlpWorkspace(const MlpSpec& spec) { prepare(spec); }

    void prepare(const MlpSpec& spec) {
        if (ready_for_ == spec) return;
        const std::size_t n = spec.hidden.size();
        act_.assign(n + 1, {});
        pre_.assign(n + 1, {});
        delta_.assign(n + 1, {});
        act_[0].resize(spec.input_dim);
        delta_[0].resize(spec.input_dim);
        for (std::size_t l = 1; l <= n; ++l) {
            act_[l].resize(spec.hidden[l - 1]);
            pre_[l].resize(spec.hidden[l - 1]);
            delta_[l].resize(spec.hidden[l - 1]);
        }
        ready_for_ = spec;
    }

    std::vector<std::vector<double>> act_;
    std::vector<std::vector<double>> pre_;
    std::vector<std::vector<double>> delta_;

private:
    MlpSpec ready_for_;
};

namespace detail {

inline double activate(double s, Activation kind, double slope) {
    if (kind == Activation::relu) return s > 0.0 ? s : 0.0;
    return s > 0.0 ? s : slope * s;
}

inline double activate_grad(double s, Activation kind, double slope) {
    if (kind == Activation::relu) return s > 0.0 ? 1.0 : 0.0;
    return s > 0.0 ? 1.0 : slope;
}

} // namespace detail

/// Pure scalar forward pass; activations are left in the workspace for a
/// subsequent accumulate_grad call on the same input.
inline double forward(const MlpModel& model, std::span<const double> x, MlpWorkspace& ws) {
    const MlpSpec& spec = model.spec;
    if (x.size() != spec.input_dim) throw ShapeError("forward: input dimension mismatch");
    ws.prepare(spec);

    for (std::size_t i = 0; i < x.size(); ++i) ws.act_[0][i] = x[i];

    const double* p = model.params.data();
    std::size_t offset = 0;
    const std::size_t n_hidden = spec.hidden.size();
    for (std::size_t l = 1; l <= n_hidden; ++l) {
        const std::size_t in_w = spec.fan_in(l);
        const std::size_t out_w = spec.hidden[l - 1];
        const double* weights = p + offset;
        const double* bias = weights + out_w * in_w;
        const std::vector<double>& prev = ws.act_[l - 1];
        const bool skip = spec.skip_into(l);
        const std::vector<double>* skip_src = skip ? &ws.act_[l - 2] : nullptr;
        for (std::size_t i = 0; i < out_w; ++i) {
            const double* row = weights + i * in_w;
            double sum = bias[i];
            for (std::size_t j = 0; j < in_w; ++j) sum += row[j] * prev[j];
            if (skip) sum += (*skip_src)[i];
            ws.pre_[l][i] = sum;
            ws.act_[l][i] = detail::activate(sum, spec.activation, spec.leaky_slope);
        }
        offset += out_w * in_w + out_w;
    }

    const std::size_t in_w = spec.hidden.back();
    const double* weights = p + offset;
    double out = weights[in_w]; // output bias
    const std::vector<double>& last = ws.act_[n_hidden];
    for (std::size_t j = 0; j < in_w; ++j) out += weights[j] * last[j];
    return out;
}

inline double forward(const MlpModel& model, std::span<const double> x) {
    MlpWorkspace ws(model.spec);
    return forward(model, x, ws);
}

/// Adds upstream * d(forward)/d(params) into `grad`, reusing the activations
/// of the most recent forward() on this workspace. Exact reverse mode.
inline void accumulate_grad(const MlpModel& model, MlpWorkspace& ws, double upstream,
                            std::span<double> grad) {
    const MlpSpec& spec = model.spec;
    if (grad.size() != model.params.size()) throw ShapeError("accumulate_grad: grad length mismatch");
    if (upstream == 0.0) return;

    const std::size_t n_hidden = spec.hidden.size();
    for (auto& d : ws.delta_) std::fill(d.begin(), d.end(), 0.0);

    // Output layer.
    std::size_t out_offset = model.params.size() - (spec.hidden.back() + 1);
    {
        const std::size_t in_w = spec.hidden.back();
        const double* weights = model.params.data() + out_offset;
        const std::vector<double>& last = ws.act_[n_hidden];
        for (std::size_t j = 0; j < in_w; ++j) {
            grad[out_offset + j] += upstream * last[j];
            ws.delta_[n_hidden][j] = upstream * weights[j];
        }
        grad[out_offset + in_w] += upstream; // output bias
    }

    // Hidden layers, last to first. delta_[l] holds dLoss/d(act_[l]) and is
    // complete once layers l+1 (dense path) and l+2 (skip path) have run.
    std::size_t offset = out_offset;
    for (std::size_t l = n_hidden; l >= 1; --l) {
        const std::size_t in_w = spec.fan_in(l);
        const std::size_t out_w = spec.hidden[l - 1];
        offset -= out_w * in_w + out_w;
        const double* weights = model.params.data() + offset;
        double* grad_w = grad.data() + offset;
        const std::vector<double>& prev = ws.act_[l - 1];
        std::vector<double>& delta_prev = ws.delta_[l - 1];
        const bool skip = spec.skip_into(l);
        for (std::size_t i = 0; i < out_w; ++i) {
            const double ds = ws.delta_[l][i] *
                              detail::activate_grad(ws.pre_[l][i], spec.activation, spec.leaky_slope);
            if (ds == 0.0) continue;
            grad_w[out_w * in_w + i] += ds; // bias
            double* grow = grad_w + i * in_w;
            const double* wrow = weights + i * in_w;
            for (std::size_t j = 0; j < in_w; ++j) {
                grow[j] += ds * prev[j];
                delta_prev[j] += ds * wrow[j];
            }
            if (skip) ws.delta_[l - 2][i] += ds;
        }
    }
}

/// Fresh gradient vector of upstream * forward(x) w.r.t. params.
inline std::vector<double> grad_params(const MlpModel& model, std::span<const double> x,
                                       double upstream) {
    MlpWorkspace ws(model.spec);
    forward(model, x, ws);
    std::vector<double> grad(model.params.size(), 0.0);
    accumulate_grad(model, ws, upstream, grad);
    return grad;
}

/// Learning-rate multiplier as a function of the episode index (Algorithm-
/// style gamma(j)); step_decay multiplies by `factor` every `every` episodes.
struct LrSchedule {
    enum class Kind { constant, step_decay };

    Kind kind = Kind::constant;
    double factor = 0.5;
    std::size_t every = 2000;

    double multiplier(std::size_t episode) const {
        if (kind == Kind::constant) return 1.0;
        return std::pow(factor, static_cast<double>(episode / every));
    }
};

/// First-order optimizer state. Moment vectors are sized on first use and
/// must then match the parameter count.
struct OptState {
    enum class Kind { sgd, adam };

    Kind kind = Kind::adam;
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    LrSchedule schedule;

    std::vector<double> m;
    std::vector<double> v;
    std::size_t steps = 0;

    static OptState sgd_state(double alpha, LrSchedule schedule = {}) {
        OptState s;
        s.kind = Kind::sgd;
        s.alpha = alpha;
        s.schedule = schedule;
        return s;
    }

    static OptState adam_state(double alpha, LrSchedule schedule = {}, double beta1 = 0.9,
                               double beta2 = 0.999, double eps = 1e-8) {
        OptState s;
        s.kind = Kind::adam;
        s.alpha = alpha;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.eps = eps;
        s.schedule = schedule;
        return s;
    }
};

/// One descent update with effective rate schedule(episode) * alpha.
inline void step(OptState& opt, MlpModel& model, std::span<const double> grad,
                 std::size_t episode) {
    if (grad.size() != model.params.size()) throw ShapeError("step: grad length mismatch");
    if (opt.alpha <= 0.0) throw std::invalid_argument("step: alpha must be positive");
    const double rate = opt.schedule.multiplier(episode) * opt.alpha;

    if (opt.kind == OptState::Kind::sgd) {
        for (std::size_t k = 0; k < grad.size(); ++k) model.params[k] -= rate * grad[k];
        return;
    }

    if (opt.m.empty()) {
        opt.m.assign(grad.size(), 0.0);
        opt.v.assign(grad.size(), 0.0);
    }
    if (opt.m.size() != grad.size()) throw ShapeError("step: moment vectors length mismatch");

    ++opt.steps;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.steps));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.steps));
    for (std::size_t k = 0; k < grad.size(); ++k) {
        opt.m[k] = opt.beta1 * opt.m[k] + (1.0 - opt.beta1) * grad[k];
        opt.v[k] = opt.beta2 * opt.v[k] + (1.0 - opt.beta2) * grad[k] * grad[k];
        const double m_hat = opt.m[k] / bc1;
        const double v_hat = opt.v[k] / bc2;
        model.params[k] -= rate * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
}

} // namespace pricer
