#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pricer/benchmark.hpp"
#include "pricer/checkpoint.hpp"
#include "pricer/config.hpp"
#include "pricer/kernel_learner.hpp"
#include "pricer/market_data.hpp"
#include "pricer/price_learner.hpp"

namespace pricer::cli {

/// A required artifact from an earlier phase is missing; exit code 3.
class DependencyError : public std::runtime_error {
public:
    DependencyError(const std::string& what, std::string required_command)
        : std::runtime_error(what + " (run '" + required_command + "' first)"),
          required_command_(std::move(required_command)) {}

    const std::string& required_command() const { return required_command_; }

private:
    std::string required_command_;
};

/// Command cannot run under this configuration; exit code 2.
class CommandError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string hex64(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline std::string hash_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot hash " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return hex64(fnv1a64(buffer.str()));
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

/// One experiment directory: artifact paths plus the manifest that records
/// the resolved config hash, effective grid, seeds, and per-artifact hashes.
class ExperimentDir {
public:
    ExperimentDir(std::filesystem::path dir, const nlohmann::json& resolved_config,
                  const ExperimentConfig& cfg)
        : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
        config_hash_ = detail::hex64(pricer::cli::detail::fnv1a64(resolved_config.dump()));
        if (std::filesystem::exists(manifest_path())) {
            std::ifstream in(manifest_path());
            in >> manifest_;
        }
        manifest_["config_hash"] = config_hash_;
        manifest_["n_steps"] = cfg.n_steps();
        manifest_["t_eff"] = cfg.t_eff();
        manifest_["rate"] = cfg.rate;
        manifest_["seeds"] = {
            {"data", cfg.data.seed},
            {"policy", cfg.policy.seed},
            {"value_call", cfg.value_call.seed},
            {"value_put", cfg.value_put.seed},
            {"mc", cfg.benchmark.mc_seed},
        };
        if (cfg.policy.validation) manifest_["seeds"]["validation"] = cfg.policy.validation->seed;
        if (!manifest_.contains("artifacts")) manifest_["artifacts"] = nlohmann::json::object();
    }

    std::filesystem::path path(const std::string& name) const { return dir_ / name; }
    std::filesystem::path manifest_path() const { return dir_ / "manifest.json"; }

    bool has(const std::string& name) const { return std::filesystem::exists(path(name)); }

    void record(const std::string& name) {
        manifest_["artifacts"][name] = detail::hash_file(path(name));
    }

    void write_manifest() const {
        std::ofstream out(manifest_path());
        out << manifest_.dump(2) << '\n';
    }

private:
    std::filesystem::path dir_;
    std::string config_hash_;
    nlohmann::json manifest_;
};

namespace detail {

inline PriceTrajectory training_trajectory(const ExperimentConfig& cfg) {
    if (cfg.data.price_file) return load_prices(*cfg.data.price_file, cfg.data.dt);
    if (!cfg.model) throw CommandError("simulating data requires a model section");
    return simulate_trajectory(*cfg.model, cfg.data.s0, cfg.data.dt, cfg.data.steps,
                               cfg.data.seed);
}

inline TrainConfig to_train_config(const PhaseSection& phase, const ExperimentConfig& cfg) {
    TrainConfig tc;
    tc.arch = phase.arch;
    tc.episodes = phase.episodes;
    tc.batch_size = phase.batch;
    tc.r = cfg.rate;
    tc.dt = cfg.data.dt;
    tc.n_steps = cfg.n_steps();
    tc.seed = phase.seed;
    tc.optimizer = phase.optimizer;
    if (phase.validation) {
        if (!cfg.model)
            throw CommandError("validation windows are simulated and require a model section");
        tc.validation = simulate_windows(*cfg.model, phase.validation->s0, cfg.data.dt,
                                         cfg.n_steps(), phase.validation->count,
                                         phase.validation->seed);
        tc.validation_every = phase.validation->every;
    }
    return tc;
}

inline void note_rounding(const ExperimentConfig& cfg, std::ostream& log) {
    if (cfg.maturity_rounded()) {
        log << "note: maturity " << cfg.options.front().maturity << " rounded to effective "
            << cfg.t_eff() << " (N=" << cfg.n_steps() << ")\n";
    }
}

inline OptionSpec effective_option(const ExperimentConfig& cfg, const OptionSpec& option) {
    return OptionSpec(option.kind, option.strike, cfg.t_eff());
}

inline Checkpoint load_required_checkpoint(const ExperimentDir& dir, const std::string& name,
                                           const std::string& producing_command) {
    if (!dir.has(name))
        throw DependencyError("missing artifact " + name, producing_command);
    return load_checkpoint(dir.path(name).string());
}

inline const PhaseSection& value_phase(const ExperimentConfig& cfg, OptionKind kind) {
    return kind == OptionKind::call ? cfg.value_call : cfg.value_put;
}

inline std::vector<double> policy_eval_grid(const PriceTrajectory& traj, std::size_t points) {
    // Central 98% of observed prices, evenly sampled.
    const double lo = quantile(traj.prices(), 0.01);
    const double hi = quantile(traj.prices(), 0.99);
    std::vector<double> grid(points);
    for (std::size_t i = 0; i < points; ++i) {
        grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    }
    return grid;
}

} // namespace detail

inline void cmd_gen_data(const ExperimentConfig& cfg, ExperimentDir& dir, std::ostream& log) {
    if (cfg.data.price_file)
        throw CommandError("gen-data generates synthetic prices; config already names a price_file");
    const PriceTrajectory traj = detail::training_trajectory(cfg);
    std::ofstream out(dir.path("prices.txt"));
    for (double p : traj.prices()) out << detail::format_double(p) << '\n';
    out.close();
    dir.record("prices.txt");
    log << "gen-data: wrote " << traj.size() << " prices\n";
}

inline void cmd_train_kernel(const ExperimentConfig& cfg, ExperimentDir& dir, std::ostream& log) {
    detail::note_rounding(cfg, log);
    const PriceTrajectory traj = detail::training_trajectory(cfg);
    const WindowSet windows = extract_windows(traj, cfg.n_steps(), cfg.data.stride);
    const TrainConfig tc = detail::to_train_config(cfg.policy, cfg);
    const PolicyTrainResult result = train_policy(windows, tc);

    Checkpoint ckpt;
    ckpt.role = "policy";
    ckpt.model = result.model;
    ckpt.training = {cfg.policy.episodes,
                     result.history.train.empty() ? LossHistory::absent
                                                  : result.history.train.back(),
                     cfg.policy.seed};
    save_checkpoint(dir.path("policy.ckpt.json").string(), ckpt);
    write_loss_csv(dir.path("policy_loss.csv").string(), result.history);
    dir.record("policy.ckpt.json");
    dir.record("policy_loss.csv");
    log << "train-kernel: " << windows.count() << " windows, " << cfg.policy.episodes
        << " episodes\n";
}

inline void cmd_train_price(const ExperimentConfig& cfg, ExperimentDir& dir, std::ostream& log) {
    detail::note_rounding(cfg, log);
    const Checkpoint policy =
        detail::load_required_checkpoint(dir, "policy.ckpt.json", "train-kernel");

    const PriceTrajectory traj = detail::training_trajectory(cfg);
    const WindowSet windows = extract_windows(traj, cfg.n_steps(), cfg.data.stride);

    for (const OptionSpec& option : cfg.options) {
        const std::string kind = to_string(option.kind);
        const OptionSpec effective = detail::effective_option(cfg, option);
        const TrainConfig tc = detail::to_train_config(detail::value_phase(cfg, option.kind), cfg);
        const ValueTrainResult result = train_v0(policy.model, windows, effective, tc);

        Checkpoint ckpt;
        ckpt.role = "value_v0";
        ckpt.model = result.model;
        ckpt.training = {tc.episodes,
                         result.history.train.empty() ? LossHistory::absent
                                                      : result.history.train.back(),
                         tc.seed};
        ckpt.option = effective;
        save_checkpoint(dir.path("value_" + kind + ".ckpt.json").string(), ckpt);
        write_loss_csv(dir.path("value_" + kind + "_loss.csv").string(), result.history);
        dir.record("value_" + kind + ".ckpt.json");
        dir.record("value_" + kind + "_loss.csv");

        const MoneynessRange& range = option.kind == OptionKind::call
                                          ? cfg.benchmark.moneyness_call
                                          : cfg.benchmark.moneyness_put;
        const std::vector<double> moneyness = range.grid();
        std::vector<double> s_grid(moneyness.size()), prices(moneyness.size());
        MlpWorkspace ws(result.model.spec);
        for (std::size_t i = 0; i < moneyness.size(); ++i) {
            s_grid[i] = moneyness[i] * option.strike;
            prices[i] = forward(result.model, std::span<const double>(&s_grid[i], 1), ws);
        }
        write_price_curve_csv(dir.path("price_curve_" + kind + ".csv").string(), s_grid, prices);
        dir.record("price_curve_" + kind + ".csv");
        log << "train-price: " << kind << " value trained (" << tc.episodes << " episodes)\n";
    }
}

inline void cmd_evaluate(const ExperimentConfig& cfg, ExperimentDir& dir, std::ostream& log) {
    const Checkpoint policy =
        detail::load_required_checkpoint(dir, "policy.ckpt.json", "train-kernel");
    const PriceTrajectory traj = detail::training_trajectory(cfg);

    const std::vector<double> grid = detail::policy_eval_grid(traj, 201);
    std::ofstream out(dir.path("policy_curve.csv"));
    out << "s,f_learned\n";
    MlpWorkspace ws(policy.model.spec);
    for (double s : grid) {
        out << detail::format_double(s) << ','
            << detail::format_double(
                   forward(policy.model, std::span<const double>(&s, 1), ws))
            << '\n';
    }
    out.close();
    dir.record("policy_curve.csv");

    for (const OptionSpec& option : cfg.options) {
        const std::string kind = to_string(option.kind);
        const Checkpoint value = detail::load_required_checkpoint(
            dir, "value_" + kind + ".ckpt.json", "train-price");
        const MoneynessRange& range = option.kind == OptionKind::call
                                          ? cfg.benchmark.moneyness_call
                                          : cfg.benchmark.moneyness_put;
        const std::vector<double> moneyness = range.grid();
        std::vector<double> s_grid(moneyness.size()), prices(moneyness.size());
        MlpWorkspace vws(value.model.spec);
        for (std::size_t i = 0; i < moneyness.size(); ++i) {
            s_grid[i] = moneyness[i] * option.strike;
            prices[i] = forward(value.model, std::span<const double>(&s_grid[i], 1), vws);
        }
        write_price_curve_csv(dir.path("price_curve_" + kind + ".csv").string(), s_grid, prices);
        dir.record("price_curve_" + kind + ".csv");
    }
    log << "evaluate: wrote policy and price curves\n";
}

inline void cmd_benchmark(const ExperimentConfig& cfg, ExperimentDir& dir, std::ostream& log) {
    if (!cfg.model)
        throw CommandError("benchmark requires a synthetic model section (PDE/MC oracles)");
    detail::note_rounding(cfg, log);
    const Checkpoint policy =
        detail::load_required_checkpoint(dir, "policy.ckpt.json", "train-kernel");

    for (const OptionSpec& option : cfg.options) {
        const std::string kind = to_string(option.kind);
        const Checkpoint value = detail::load_required_checkpoint(
            dir, "value_" + kind + ".ckpt.json", "train-price");
        const OptionSpec effective = detail::effective_option(cfg, option);

        const PdeSlice slice = fd_pde_price(*cfg.model, effective, cfg.rate, cfg.benchmark.grid);
        write_slice_csv(dir.path("pde_slice_" + kind + ".csv").string(), slice);
        dir.record("pde_slice_" + kind + ".csv");

        const MoneynessRange& range = option.kind == OptionKind::call
                                          ? cfg.benchmark.moneyness_call
                                          : cfg.benchmark.moneyness_put;
        const std::vector<double> moneyness = range.grid();

        MlpWorkspace vws(value.model.spec);
        const IvCurve learned = iv_curve(
            [&](double s) { return forward(value.model, std::span<const double>(&s, 1), vws); },
            effective, cfg.rate, moneyness, "learned");
        const IvCurve pde = iv_curve([&](double s) { return slice(s); }, effective, cfg.rate,
                                     moneyness, "pde_benchmark");
        std::size_t point = 0;
        const IvCurve mc = iv_curve(
            [&](double s) {
                const McEstimate est = mc_price_with_kernel(
                    *cfg.model, policy.model, s, effective, cfg.rate, cfg.data.dt,
                    cfg.benchmark.mc_paths,
                    cfg.benchmark.mc_seed + (point++) * cfg.benchmark.mc_paths);
                return est.value;
            },
            effective, cfg.rate, moneyness, "mc_kernel");

        const std::vector<IvCurve> curves{learned, pde, mc};
        write_iv_csv(dir.path("iv_" + kind + ".csv").string(), curves);
        dir.record("iv_" + kind + ".csv");
        log << "benchmark: " << kind << " iv curves written\n";
    }
}

inline void cmd_report(const ExperimentConfig& cfg, ExperimentDir& dir, std::ostream& log) {
    if (!cfg.model) throw CommandError("report requires a synthetic model section");
    const Checkpoint policy =
        detail::load_required_checkpoint(dir, "policy.ckpt.json", "train-kernel");
    if (!dir.has("policy_loss.csv"))
        throw DependencyError("missing artifact policy_loss.csv", "train-kernel");

    // Policy comparison table: learned f vs the closed-form optimum.
    const PriceTrajectory traj = detail::training_trajectory(cfg);
    const std::vector<double> grid = detail::policy_eval_grid(traj, 201);
    const auto f_star = theoretical_policy(*cfg.model, cfg.rate);
    {
        std::ofstream out(dir.path("report_policy.csv"));
        out << "s,f_learned,f_theoretical\n";
        MlpWorkspace ws(policy.model.spec);
        for (double s : grid) {
            out << detail::format_double(s) << ','
                << detail::format_double(
                       forward(policy.model, std::span<const double>(&s, 1), ws))
                << ',' << detail::format_double(f_star(s)) << '\n';
        }
    }
    dir.record("report_policy.csv");

    // Loss-curve table: copy of the training history.
    std::filesystem::copy_file(dir.path("policy_loss.csv"), dir.path("report_loss.csv"),
                               std::filesystem::copy_options::overwrite_existing);
    dir.record("report_loss.csv");

    // Implied-vol comparison tables from the benchmark stage.
    for (const OptionSpec& option : cfg.options) {
        const std::string kind = to_string(option.kind);
        if (!dir.has("iv_" + kind + ".csv"))
            throw DependencyError("missing artifact iv_" + kind + ".csv", "benchmark");
        std::filesystem::copy_file(dir.path("iv_" + kind + ".csv"),
                                   dir.path("report_iv_" + kind + ".csv"),
                                   std::filesystem::copy_options::overwrite_existing);
        dir.record("report_iv_" + kind + ".csv");
    }

    const McEstimate log_value =
        theoretical_log_value(*cfg.model, cfg.rate, cfg.data.s0, cfg.data.dt, cfg.n_steps(),
                              cfg.benchmark.mc_paths, cfg.benchmark.mc_seed);
    {
        std::ofstream out(dir.path("report_summary.csv"));
        out << "key,value\n";
        out << "n_steps," << cfg.n_steps() << '\n';
        out << "t_eff," << detail::format_double(cfg.t_eff()) << '\n';
        out << "rate," << detail::format_double(cfg.rate) << '\n';
        out << "theoretical_log_value," << detail::format_double(log_value.value) << '\n';
        out << "negative_theoretical_log_value," << detail::format_double(-log_value.value)
            << '\n';
        out << "theoretical_log_value_se," << detail::format_double(log_value.std_error) << '\n';
    }
    dir.record("report_summary.csv");
    log << "report: tables written\n";
}

/// Entry point shared by the binary and the tests. Exit codes: 0 success,
/// 2 validation failure, 3 missing dependency artifact, 4 numerical failure.
inline int run(const std::string& command, const std::string& config_path,
               const std::vector<std::string>& overrides, const std::string& out_override,
               std::ostream& log) {
    nlohmann::json root;
    try {
        root = load_config_json(config_path);
        for (const std::string& o : overrides) apply_override(root, o);
    } catch (const std::exception& e) {
        log << "config error: " << e.what() << '\n';
        return 2;
    }

    const ParseResult parsed = parse_config(root);
    if (command == "validate") {
        for (const Finding& f : parsed.findings) log << f.path << ": " << f.message << '\n';
        if (parsed.findings.empty()) log << "config ok\n";
        return parsed.findings.empty() ? 0 : 2;
    }
    if (!parsed.config) {
        for (const Finding& f : parsed.findings) log << f.path << ": " << f.message << '\n';
        return 2;
    }

    ExperimentConfig cfg = *parsed.config;
    if (!out_override.empty()) cfg.out_dir = out_override;

    try {
        ExperimentDir dir(cfg.out_dir, root, cfg);
        if (command == "gen-data") {
            cmd_gen_data(cfg, dir, log);
        } else if (command == "train-kernel") {
            cmd_train_kernel(cfg, dir, log);
        } else if (command == "train-price") {
            cmd_train_price(cfg, dir, log);
        } else if (command == "evaluate") {
            cmd_evaluate(cfg, dir, log);
        } else if (command == "benchmark") {
            cmd_benchmark(cfg, dir, log);
        } else if (command == "report") {
            cmd_report(cfg, dir, log);
        } else {
            log << "unknown command '" << command << "'\n";
            return 2;
        }
        dir.write_manifest();
        return 0;
    } catch (const DependencyError& e) {
        log << "dependency error: " << e.what() << '\n';
        return 3;
    } catch (const CommandError& e) {
        log << "config error: " << e.what() << '\n';
        return 2;
    } catch (const TrainingDivergedError& e) {
        log << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const KernelDegeneracyError& e) {
        log << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const SingularityError& e) {
        log << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const NoSolutionError& e) {
        log << "numerical failure: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        log << "error: " << e.what() << '\n';
        return 1;
    }
}

} // namespace pricer::cli
