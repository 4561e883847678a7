#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "json.hpp"
#include "pricer/market_data.hpp"
#include "pricer/neural.hpp"

namespace pricer {

struct TrainingMeta {
    std::size_t episodes = 0;
    double final_loss = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
};

/// Versioned network checkpoint. Parameters are stored as a decimal array in
/// the flat layer-major order documented in neural.hpp; nlohmann/json emits
/// shortest round-trip decimals, so save/load reproduces them exactly.
struct Checkpoint {
    int format_version = 1;
    std::string role; // "policy" | "value_v0" | "value_surface"
    MlpModel model;
    TrainingMeta training;
    std::optional<OptionSpec> option;  // value checkpoints carry their contract
    std::optional<double> time_scale;  // surface checkpoints carry T_eff
};

namespace detail {

inline nlohmann::json spec_to_json(const MlpSpec& spec) {
    nlohmann::json j;
    j["input_dim"] = spec.input_dim;
    j["hidden"] = spec.hidden;
    j["activation"] = spec.activation == Activation::relu ? "relu" : "leaky_relu";
    j["leaky_slope"] = spec.leaky_slope;
    j["residual"] = spec.residual;
    return j;
}

inline MlpSpec spec_from_json(const nlohmann::json& j) {
    MlpSpec spec;
    spec.input_dim = j.at("input_dim").get<std::size_t>();
    spec.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    const std::string act = j.at("activation").get<std::string>();
    if (act == "relu") {
        spec.activation = Activation::relu;
    } else if (act == "leaky_relu") {
        spec.activation = Activation::leaky_relu;
    } else {
        throw std::runtime_error("checkpoint: unknown activation '" + act + "'");
    }
    spec.leaky_slope = j.at("leaky_slope").get<double>();
    spec.residual = j.at("residual").get<bool>();
    spec.validate();
    return spec;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ckpt.model.validate();
    nlohmann::json j;
    j["format_version"] = ckpt.format_version;
    j["role"] = ckpt.role;
    j["spec"] = detail::spec_to_json(ckpt.model.spec);
    j["params"] = ckpt.model.params;
    j["training"] = {
        {"episodes", ckpt.training.episodes},
        {"final_loss", ckpt.training.final_loss}, // NaN serializes as null
        {"seed", ckpt.training.seed},
        {"episode_semantics", "one mini-batch update per episode"},
    };
    if (ckpt.option) {
        j["option"] = {
            {"kind", to_string(ckpt.option->kind)},
            {"strike", ckpt.option->strike},
            {"maturity", ckpt.option->maturity},
        };
    }
    if (ckpt.time_scale) j["time_scale"] = *ckpt.time_scale;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << j.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    in >> j;

    Checkpoint ckpt;
    ckpt.format_version = j.at("format_version").get<int>();
    if (ckpt.format_version != 1)
        throw std::runtime_error("load_checkpoint: unsupported format_version");
    ckpt.role = j.at("role").get<std::string>();
    ckpt.model.spec = detail::spec_from_json(j.at("spec"));
    ckpt.model.params = j.at("params").get<std::vector<double>>();
    ckpt.model.validate();

    const nlohmann::json& t = j.at("training");
    ckpt.training.episodes = t.at("episodes").get<std::size_t>();
    ckpt.training.final_loss = t.at("final_loss").is_null()
                                   ? std::numeric_limits<double>::quiet_NaN()
                                   : t.at("final_loss").get<double>();
    ckpt.training.seed = t.at("seed").get<std::uint64_t>();

    if (j.contains("option")) {
        const nlohmann::json& o = j.at("option");
        const std::string kind = o.at("kind").get<std::string>();
        ckpt.option.emplace(kind == "call" ? OptionKind::call : OptionKind::put,
                            o.at("strike").get<double>(), o.at("maturity").get<double>());
    }
    if (j.contains("time_scale")) ckpt.time_scale = j.at("time_scale").get<double>();
    return ckpt;
}

} // namespace pricer
