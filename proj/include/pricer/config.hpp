#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pricer/benchmark.hpp"
#include "pricer/kernel_learner.hpp"
#include "pricer/market_data.hpp"
#include "pricer/neural.hpp"

namespace pricer::cli {

/// One validation complaint: a config path like "train.policy.batch" plus a
/// human-readable message. validate() reports every violation at once.
struct Finding {
    std::string path;
    std::string message;
};

struct DataSection {
    std::optional<std::string> price_file;
    double s0 = 1.0;
    double dt = 3e-3;
    std::size_t steps = 0;
    std::size_t stride = 1;
    std::uint64_t seed = 1;
};

struct ValidationSection {
    std::size_t count = 0;
    std::size_t every = 1;
    std::uint64_t seed = 0;
    double s0 = 1.0;
};

struct PhaseSection {
    MlpSpec arch;
    std::size_t episodes = 0;
    std::size_t batch = 128;
    std::uint64_t seed = 0;
    OptState optimizer = OptState::adam_state(1e-3);
    std::optional<ValidationSection> validation;
};

struct MoneynessRange {
    double lo = 0.85;
    double hi = 1.0;
    std::size_t points = 31;

    std::vector<double> grid() const {
        std::vector<double> out(points);
        for (std::size_t i = 0; i < points; ++i) {
            out[i] = points == 1 ? lo
                                 : lo + (hi - lo) * static_cast<double>(i) /
                                            static_cast<double>(points - 1);
        }
        return out;
    }
};

struct BenchmarkSection {
    PdeGrid grid;
    MoneynessRange moneyness_call{0.85, 1.0, 31};
    MoneynessRange moneyness_put{1.0, 1.15, 31};
    std::size_t mc_paths = 20000;
    std::uint64_t mc_seed = 4242;
};

struct ExperimentConfig {
    std::optional<SdeModel> model;
    double rate = 0.0;
    DataSection data;
    std::vector<OptionSpec> options;
    PhaseSection policy;
    PhaseSection value_call;
    PhaseSection value_put;
    BenchmarkSection benchmark;
    std::string out_dir = "out";

    /// Shared time grid: N = round(T / dt), T_eff = N * dt. Every downstream
    /// consumer (training, PDE, MC, implied vol) uses T_eff.
    std::size_t n_steps() const {
        return static_cast<std::size_t>(std::llround(options.front().maturity / data.dt));
    }
    double t_eff() const { return static_cast<double>(n_steps()) * data.dt; }
    bool maturity_rounded() const {
        return std::abs(options.front().maturity - t_eff()) > 1e-12;
    }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& where,
                       std::initializer_list<const char*> allowed, std::vector<Finding>& findings) {
    if (!j.is_object()) return;
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed) {
            if (key == a) {
                known = true;
                break;
            }
        }
        if (!known) findings.push_back({where, "unknown key '" + key + "'"});
    }
}

template <class T>
std::optional<T> take(const nlohmann::json& j, const std::string& where, const char* key,
                      std::vector<Finding>& findings, bool required,
                      std::optional<T> fallback = std::nullopt) {
    if (!j.is_object() || !j.contains(key) || j.at(key).is_null()) {
        if (required) findings.push_back({where + "." + key, "missing"});
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        findings.push_back({where + "." + key, "wrong type"});
        return fallback;
    }
}

inline std::optional<SdeModel> parse_model(const nlohmann::json& j,
                                           std::vector<Finding>& findings) {
    const std::string where = "model";
    const auto kind = take<std::string>(j, where, "kind", findings, true);
    if (!kind) return std::nullopt;

    if (*kind == "cir") {
        check_keys(j, where, {"kind", "a", "b", "sigma0"}, findings);
        const auto a = take<double>(j, where, "a", findings, true);
        const auto b = take<double>(j, where, "b", findings, true);
        const auto sigma0 = take<double>(j, where, "sigma0", findings, true);
        if (!a || !b || !sigma0) return std::nullopt;
        if (*a <= 0.0) findings.push_back({where + ".a", "must be positive"});
        if (*b <= 0.0) findings.push_back({where + ".b", "must be positive"});
        if (*sigma0 <= 0.0) findings.push_back({where + ".sigma0", "must be positive"});
        if (*a > 0.0 && *b > 0.0 && 2.0 * *a * *b <= *sigma0 * *sigma0) {
            findings.push_back(
                {where + ".sigma0", "Feller condition 2ab > sigma0^2 violated"});
        }
        try {
            return SdeModel(CirModel(*a, *b, *sigma0));
        } catch (const std::exception&) {
            return std::nullopt; // findings already recorded
        }
    }
    if (*kind == "gbm") {
        check_keys(j, where, {"kind", "mu", "sigma"}, findings);
        const auto mu = take<double>(j, where, "mu", findings, true);
        const auto sigma = take<double>(j, where, "sigma", findings, true);
        if (!mu || !sigma) return std::nullopt;
        if (*sigma <= 0.0) {
            findings.push_back({where + ".sigma", "must be positive"});
            return std::nullopt;
        }
        return SdeModel(GbmModel(*mu, *sigma));
    }
    if (*kind == "glv") {
        check_keys(j, where, {"kind", "a", "b", "t_star", "r_star", "smile"}, findings);
        const auto a = take<double>(j, where, "a", findings, true);
        const auto b = take<double>(j, where, "b", findings, true);
        const auto t_star = take<double>(j, where, "t_star", findings, true);
        const auto r_star = take<double>(j, where, "r_star", findings, true);
        if (!j.contains("smile")) {
            findings.push_back({where + ".smile", "missing"});
            return std::nullopt;
        }
        const nlohmann::json& s = j.at("smile");
        const std::string swhere = where + ".smile";
        check_keys(s, swhere, {"c2", "c1", "c0", "k_lo", "k_hi"}, findings);
        const auto c2 = take<double>(s, swhere, "c2", findings, true);
        const auto c1 = take<double>(s, swhere, "c1", findings, true);
        const auto c0 = take<double>(s, swhere, "c0", findings, true);
        const auto k_lo = take<double>(s, swhere, "k_lo", findings, true);
        const auto k_hi = take<double>(s, swhere, "k_hi", findings, true);
        if (!a || !b || !t_star || !r_star || !c2 || !c1 || !c0 || !k_lo || !k_hi)
            return std::nullopt;
        try {
            ImpliedVolFn smile(*c2, *c1, *c0, *k_lo, *k_hi);
            return SdeModel(GlvModel(*a, *b, std::move(smile), *t_star, *r_star));
        } catch (const std::exception& e) {
            findings.push_back({swhere, e.what()});
            return std::nullopt;
        }
    }
    findings.push_back({where + ".kind", "unknown model kind '" + *kind + "'"});
    return std::nullopt;
}

inline MlpSpec parse_arch(const nlohmann::json& j, const std::string& where,
                          std::size_t input_dim, std::vector<Finding>& findings) {
    MlpSpec spec;
    spec.input_dim = input_dim;
    spec.hidden = take<std::vector<std::size_t>>(j, where, "hidden", findings, true,
                                                 std::vector<std::size_t>{8})
                      .value();
    const std::string act =
        take<std::string>(j, where, "activation", findings, false, std::string("relu")).value();
    if (act == "relu") {
        spec.activation = Activation::relu;
    } else if (act == "leaky_relu") {
        spec.activation = Activation::leaky_relu;
    } else {
        findings.push_back({where + ".activation", "unknown activation '" + act + "'"});
    }
    spec.leaky_slope = take<double>(j, where, "leaky_slope", findings, false, 0.01).value();
    spec.residual = take<bool>(j, where, "residual", findings, false, false).value();
    try {
        spec.validate();
    } catch (const std::exception& e) {
        findings.push_back({where, e.what()});
    }
    return spec;
}

inline OptState parse_optimizer(const nlohmann::json& phase, const std::string& where,
                                std::vector<Finding>& findings) {
    LrSchedule schedule;
    if (phase.contains("schedule")) {
        const nlohmann::json& s = phase.at("schedule");
        const std::string swhere = where + ".schedule";
        check_keys(s, swhere, {"kind", "factor", "every"}, findings);
        const std::string kind =
            take<std::string>(s, swhere, "kind", findings, false, std::string("constant")).value();
        if (kind == "constant") {
            schedule.kind = LrSchedule::Kind::constant;
        } else if (kind == "step") {
            schedule.kind = LrSchedule::Kind::step_decay;
        } else {
            findings.push_back({swhere + ".kind", "unknown schedule '" + kind + "'"});
        }
        schedule.factor = take<double>(s, swhere, "factor", findings, false, 0.5).value();
        schedule.every = take<std::size_t>(s, swhere, "every", findings, false,
                                           std::size_t(2000)).value();
        if (schedule.factor <= 0.0) findings.push_back({swhere + ".factor", "must be positive"});
        if (schedule.every == 0) findings.push_back({swhere + ".every", "must be >= 1"});
    }

    if (!phase.contains("optimizer")) return OptState::adam_state(1e-3, schedule);
    const nlohmann::json& o = phase.at("optimizer");
    const std::string owhere = where + ".optimizer";
    check_keys(o, owhere, {"kind", "lr", "beta1", "beta2", "eps"}, findings);
    const std::string kind =
        take<std::string>(o, owhere, "kind", findings, false, std::string("adam")).value();
    const double lr = take<double>(o, owhere, "lr", findings, false, 1e-3).value();
    if (lr <= 0.0) findings.push_back({owhere + ".lr", "must be positive"});
    if (kind == "sgd") return OptState::sgd_state(lr, schedule);
    if (kind != "adam") findings.push_back({owhere + ".kind", "unknown optimizer '" + kind + "'"});
    const double beta1 = take<double>(o, owhere, "beta1", findings, false, 0.9).value();
    const double beta2 = take<double>(o, owhere, "beta2", findings, false, 0.999).value();
    const double eps = take<double>(o, owhere, "eps", findings, false, 1e-8).value();
    if (beta1 <= 0.0 || beta1 >= 1.0) findings.push_back({owhere + ".beta1", "must be in (0,1)"});
    if (beta2 <= 0.0 || beta2 >= 1.0) findings.push_back({owhere + ".beta2", "must be in (0,1)"});
    if (eps <= 0.0) findings.push_back({owhere + ".eps", "must be positive"});
    return OptState::adam_state(lr, schedule, beta1, beta2, eps);
}

inline PhaseSection parse_phase(const nlohmann::json& j, const std::string& where,
                                std::size_t input_dim, bool allow_validation,
                                std::vector<Finding>& findings) {
    PhaseSection phase;
    check_keys(j, where,
               {"hidden", "activation", "leaky_slope", "residual", "episodes", "batch", "seed",
                "optimizer", "schedule", "validation"},
               findings);
    phase.arch = parse_arch(j, where, input_dim, findings);
    phase.episodes = take<std::size_t>(j, where, "episodes", findings, true).value_or(0);
    phase.batch = take<std::size_t>(j, where, "batch", findings, false, std::size_t(128)).value();
    if (phase.batch == 0) findings.push_back({where + ".batch", "must be >= 1"});
    phase.seed = take<std::uint64_t>(j, where, "seed", findings, false, std::uint64_t(1)).value();
    phase.optimizer = parse_optimizer(j, where, findings);

    if (j.contains("validation") && !j.at("validation").is_null()) {
        if (!allow_validation) {
            findings.push_back({where + ".validation", "only supported for the policy phase"});
        } else {
            const nlohmann::json& v = j.at("validation");
            const std::string vwhere = where + ".validation";
            check_keys(v, vwhere, {"count", "every", "seed", "s0"}, findings);
            ValidationSection val;
            val.count = take<std::size_t>(v, vwhere, "count", findings, true).value_or(0);
            val.every =
                take<std::size_t>(v, vwhere, "every", findings, false, std::size_t(1)).value();
            val.seed = take<std::uint64_t>(v, vwhere, "seed", findings, false,
                                           std::uint64_t(9)).value();
            val.s0 = take<double>(v, vwhere, "s0", findings, false, 1.0).value();
            if (val.count == 0) findings.push_back({vwhere + ".count", "must be >= 1"});
            if (val.every == 0) findings.push_back({vwhere + ".every", "must be >= 1"});
            if (val.s0 <= 0.0) findings.push_back({vwhere + ".s0", "must be positive"});
            phase.validation = val;
        }
    }
    return phase;
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace detail

/// Parses + validates a config document. On success `config` is set; findings
/// list every violation found either way.
struct ParseResult {
    std::optional<ExperimentConfig> config;
    std::vector<Finding> findings;
};

inline ParseResult parse_config(const nlohmann::json& root) {
    ParseResult result;
    auto& findings = result.findings;
    ExperimentConfig cfg;

    detail::check_keys(root, "", {"model", "rate", "data", "options", "train", "benchmark",
                                  "output"},
                       findings);

    if (root.contains("model") && !root.at("model").is_null())
        cfg.model = detail::parse_model(root.at("model"), findings);

    cfg.rate = detail::take<double>(root, "", "rate", findings, true, 0.0).value();
    if (!std::isfinite(cfg.rate)) findings.push_back({"rate", "must be finite"});

    if (root.contains("data")) {
        const nlohmann::json& d = root.at("data");
        detail::check_keys(d, "data", {"price_file", "s0", "dt", "steps", "stride", "seed"},
                           findings);
        cfg.data.price_file = detail::take<std::string>(d, "data", "price_file", findings, false);
        cfg.data.s0 = detail::take<double>(d, "data", "s0", findings, false, 1.0).value();
        cfg.data.dt = detail::take<double>(d, "data", "dt", findings, true, 3e-3).value();
        cfg.data.steps =
            detail::take<std::size_t>(d, "data", "steps", findings, false, std::size_t(0)).value();
        cfg.data.stride =
            detail::take<std::size_t>(d, "data", "stride", findings, false, std::size_t(1)).value();
        cfg.data.seed = detail::take<std::uint64_t>(d, "data", "seed", findings, false,
                                                    std::uint64_t(1)).value();
    } else {
        findings.push_back({"data", "missing"});
    }
    if (cfg.data.dt <= 0.0) findings.push_back({"data.dt", "must be positive"});
    if (cfg.data.s0 <= 0.0) findings.push_back({"data.s0", "must be positive"});
    if (cfg.data.stride == 0) findings.push_back({"data.stride", "must be >= 1"});
    if (cfg.data.price_file) {
        if (!std::filesystem::exists(*cfg.data.price_file))
            findings.push_back({"data.price_file", "file does not exist: " + *cfg.data.price_file});
    } else if (cfg.data.steps == 0) {
        findings.push_back({"data.steps", "must be >= 1 when no price_file is given"});
    }
    if (!cfg.data.price_file && cfg.data.steps > 0 && !cfg.model) {
        findings.push_back({"model", "required to simulate data"});
    }

    if (root.contains("options") && root.at("options").is_array() &&
        !root.at("options").empty()) {
        std::size_t idx = 0;
        for (const nlohmann::json& o : root.at("options")) {
            const std::string where = "options." + std::to_string(idx);
            detail::check_keys(o, where, {"kind", "strike", "maturity"}, findings);
            const auto kind = detail::take<std::string>(o, where, "kind", findings, true);
            const auto strike = detail::take<double>(o, where, "strike", findings, true);
            const auto maturity = detail::take<double>(o, where, "maturity", findings, true);
            bool ok = kind && strike && maturity;
            if (kind && *kind != "call" && *kind != "put") {
                findings.push_back({where + ".kind", "must be 'call' or 'put'"});
                ok = false;
            }
            if (strike && *strike <= 0.0) {
                findings.push_back({where + ".strike", "must be positive"});
                ok = false;
            }
            if (maturity && *maturity <= 0.0) {
                findings.push_back({where + ".maturity", "must be positive"});
                ok = false;
            }
            if (ok) {
                cfg.options.emplace_back(*kind == "call" ? OptionKind::call : OptionKind::put,
                                         *strike, *maturity);
            }
            ++idx;
        }
    } else {
        findings.push_back({"options", "need a non-empty option list"});
    }
    if (cfg.options.size() > 1) {
        for (const OptionSpec& o : cfg.options) {
            if (o.maturity != cfg.options.front().maturity) {
                findings.push_back(
                    {"options", "all options must share one maturity (one training grid)"});
                break;
            }
        }
    }
    if (!cfg.options.empty() && cfg.data.dt > 0.0) {
        if (std::llround(cfg.options.front().maturity / cfg.data.dt) < 1)
            findings.push_back({"options", "maturity shorter than half a time step"});
    }

    if (root.contains("train")) {
        const nlohmann::json& t = root.at("train");
        detail::check_keys(t, "train", {"policy", "value_call", "value_put"}, findings);
        if (t.contains("policy")) {
            cfg.policy = detail::parse_phase(t.at("policy"), "train.policy", 1, true, findings);
        } else {
            findings.push_back({"train.policy", "missing"});
        }
        if (t.contains("value_call")) {
            cfg.value_call =
                detail::parse_phase(t.at("value_call"), "train.value_call", 1, false, findings);
        }
        if (t.contains("value_put")) {
            cfg.value_put =
                detail::parse_phase(t.at("value_put"), "train.value_put", 1, false, findings);
        }
    } else {
        findings.push_back({"train", "missing"});
    }

    if (root.contains("benchmark")) {
        const nlohmann::json& b = root.at("benchmark");
        detail::check_keys(b, "benchmark",
                           {"grid", "moneyness_call", "moneyness_put", "mc"}, findings);
        if (b.contains("grid")) {
            const nlohmann::json& g = b.at("grid");
            const std::string gwhere = "benchmark.grid";
            detail::check_keys(g, gwhere, {"s_min", "s_max", "n_space", "n_time", "theta"},
                               findings);
            cfg.benchmark.grid.s_min =
                detail::take<double>(g, gwhere, "s_min", findings, false, 0.2).value();
            cfg.benchmark.grid.s_max =
                detail::take<double>(g, gwhere, "s_max", findings, false, 3.0).value();
            cfg.benchmark.grid.n_space = detail::take<std::size_t>(g, gwhere, "n_space", findings,
                                                                   false, std::size_t(600)).value();
            cfg.benchmark.grid.n_time = detail::take<std::size_t>(g, gwhere, "n_time", findings,
                                                                  false, std::size_t(300)).value();
            cfg.benchmark.grid.theta =
                detail::take<double>(g, gwhere, "theta", findings, false, 0.5).value();
        }
        auto parse_range = [&](const char* key, MoneynessRange& range) {
            if (!b.contains(key)) return;
            const nlohmann::json& m = b.at(key);
            const std::string mwhere = std::string("benchmark.") + key;
            detail::check_keys(m, mwhere, {"lo", "hi", "points"}, findings);
            range.lo = detail::take<double>(m, mwhere, "lo", findings, false, range.lo).value();
            range.hi = detail::take<double>(m, mwhere, "hi", findings, false, range.hi).value();
            range.points = detail::take<std::size_t>(m, mwhere, "points", findings, false,
                                                     range.points).value();
            if (!(range.lo > 0.0) || !(range.lo <= range.hi))
                findings.push_back({mwhere, "need 0 < lo <= hi"});
            if (range.points == 0) findings.push_back({mwhere + ".points", "must be >= 1"});
        };
        parse_range("moneyness_call", cfg.benchmark.moneyness_call);
        parse_range("moneyness_put", cfg.benchmark.moneyness_put);
        if (b.contains("mc")) {
            const nlohmann::json& m = b.at("mc");
            detail::check_keys(m, "benchmark.mc", {"paths", "seed"}, findings);
            cfg.benchmark.mc_paths = detail::take<std::size_t>(m, "benchmark.mc", "paths",
                                                               findings, false,
                                                               std::size_t(20000)).value();
            cfg.benchmark.mc_seed = detail::take<std::uint64_t>(m, "benchmark.mc", "seed",
                                                                findings, false,
                                                                std::uint64_t(4242)).value();
            if (cfg.benchmark.mc_paths < 2)
                findings.push_back({"benchmark.mc.paths", "must be >= 2"});
        }
        for (const OptionSpec& o : cfg.options) {
            if (!(cfg.benchmark.grid.s_min < o.strike && o.strike < cfg.benchmark.grid.s_max)) {
                findings.push_back({"benchmark.grid", "strike outside [s_min, s_max]"});
                break;
            }
        }
        if (cfg.benchmark.grid.s_min <= 0.0 ||
            cfg.benchmark.grid.s_min >= cfg.benchmark.grid.s_max)
            findings.push_back({"benchmark.grid", "need 0 < s_min < s_max"});
        if (cfg.benchmark.grid.n_space < 2 || cfg.benchmark.grid.n_time < 2)
            findings.push_back({"benchmark.grid", "n_space and n_time must be >= 2"});
        if (cfg.benchmark.grid.theta < 0.0 || cfg.benchmark.grid.theta > 1.0)
            findings.push_back({"benchmark.grid.theta", "must be in [0,1]"});
    }

    if (root.contains("output")) {
        const nlohmann::json& o = root.at("output");
        detail::check_keys(o, "output", {"dir"}, findings);
        cfg.out_dir = detail::take<std::string>(o, "output", "dir", findings, false,
                                                std::string("out")).value();
        if (cfg.out_dir.empty()) findings.push_back({"output.dir", "must not be empty"});
    }

    if (findings.empty()) result.config = std::move(cfg);
    return result;
}

/// Applies one `--set path=value` override: dotted path, numeric tokens index
/// arrays, value parsed as JSON when possible (else taken as a string).
inline void apply_override(nlohmann::json& root, const std::string& spec) {
    const std::size_t eq = spec.find('=');
    if (eq == std::string::npos || eq == 0)
        throw std::invalid_argument("override must look like path.to.key=value: " + spec);
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }

    nlohmann::json* node = &root;
    std::size_t begin = 0;
    std::vector<std::string> tokens;
    while (begin <= path.size()) {
        const std::size_t dot = path.find('.', begin);
        tokens.push_back(path.substr(begin, dot == std::string::npos ? dot : dot - begin));
        if (dot == std::string::npos) break;
        begin = dot + 1;
    }
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
        const std::string& tok = tokens[i];
        const bool numeric = !tok.empty() && tok.find_first_not_of("0123456789") == std::string::npos;
        if (numeric && node->is_array()) {
            node = &(*node)[std::stoul(tok)];
        } else {
            node = &(*node)[tok];
        }
    }
    const std::string& last = tokens.back();
    const bool numeric = !last.empty() && last.find_first_not_of("0123456789") == std::string::npos;
    if (numeric && node->is_array()) {
        (*node)[std::stoul(last)] = value;
    } else {
        (*node)[last] = value;
    }
}

inline nlohmann::json load_config_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config file " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

} // namespace pricer::cli
