#pragma once

// JSON form of ConditionalModel:
//   {"type":"gaussian","weights":[..],"intercept":a,"sigma2":s}
//   {"type":"discrete","support":[..],"table":[{"z":[..],"probs":[..]}, ..]}
//   {"type":"misspecified","base":{gaussian},"kind":"cubic|quadratic|tanh","xi":x}
//   {"type":"plugin","mean_index":i,"sd_index":j}
// Doubles are written with shortest round-trip formatting, so decimal
// values survive a write/read cycle exactly.

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mxci/modelx.hpp"

namespace mxci {

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const char* key) {
    if (!j.is_object() || !j.contains(key))
        throw Error(ErrorKind::ConfigError, std::string("model: missing field '") + key + "'");
    return j.at(key);
}

inline nlohmann::json gaussian_to_json(const GaussianConditionalSpec& g) {
    return {{"type", "gaussian"}, {"weights", g.weights}, {"intercept", g.intercept}, {"sigma2", g.sigma2}};
}

inline GaussianConditionalSpec gaussian_from_json(const nlohmann::json& j) {
    GaussianConditionalSpec g;
    try {
        g.weights = require(j, "weights").get<std::vector<double>>();
        g.intercept = j.value("intercept", 0.0);
        g.sigma2 = require(j, "sigma2").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("model: ") + e.what());
    }
    return g;
}

}  // namespace detail

inline nlohmann::json to_json(const ConditionalModel& m) {
    return std::visit(
        [](const auto& v) -> nlohmann::json {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GaussianConditionalSpec>) {
                return detail::gaussian_to_json(v);
            } else if constexpr (std::is_same_v<T, DiscreteConditional>) {
                nlohmann::json table = nlohmann::json::array();
                for (const auto& [z, probs] : v.table()) table.push_back({{"z", z}, {"probs", probs}});
                return {{"type", "discrete"}, {"support", v.support()}, {"table", table}};
            } else if constexpr (std::is_same_v<T, MisspecifiedGaussian>) {
                return {{"type", "misspecified"},
                        {"base", detail::gaussian_to_json(v.base)},
                        {"kind", to_string(v.kind)},
                        {"xi", v.xi}};
            } else {
                return {{"type", "plugin"}, {"mean_index", v.mean_index}, {"sd_index", v.sd_index}};
            }
        },
        m.variant());
}

inline ConditionalModel model_from_json(const nlohmann::json& j) {
    const std::string type = detail::require(j, "type").get<std::string>();
    try {
        if (type == "gaussian") return ConditionalModel(detail::gaussian_from_json(j));
        if (type == "misspecified") {
            return ConditionalModel(MisspecifiedGaussian{detail::gaussian_from_json(detail::require(j, "base")),
                                                         distortion_from_string(detail::require(j, "kind")),
                                                         detail::require(j, "xi").get<double>()});
        }
        if (type == "plugin")
            return ConditionalModel(PlugInGaussian{detail::require(j, "mean_index").get<std::size_t>(),
                                                   detail::require(j, "sd_index").get<std::size_t>()});
        if (type == "discrete") {
            std::map<std::vector<double>, std::vector<double>> table;
            for (const auto& row : detail::require(j, "table"))
                table[detail::require(row, "z").get<std::vector<double>>()] =
                    detail::require(row, "probs").get<std::vector<double>>();
            return ConditionalModel(
                DiscreteConditional(detail::require(j, "support").get<std::vector<double>>(), std::move(table)));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, std::string("model: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::ConfigError) throw;
        throw Error(ErrorKind::ConfigError, std::string("model: ") + e.what());
    }
    throw Error(ErrorKind::ConfigError, "model: unknown type '" + type + "'");
}

inline ConditionalModel load_model(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ConfigError, "model file '" + path + "': " + e.what());
    }
    return model_from_json(j);
}

}  // namespace mxci
