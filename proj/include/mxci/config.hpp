#pragma once

// JSON configuration for the command-line tool. Every object is checked for
// unknown keys and wrong types before any work starts; errors are
// ConfigError with the dotted field path in the message. Schema: README.md.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mxci/error.hpp"
#include "mxci/logistic.hpp"
#include "mxci/modelx.hpp"
#include "mxci/modelx_io.hpp"
#include "mxci/simharness.hpp"

namespace mxci::config {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

[[noreturn]] inline void fail(const std::string& field, const std::string& what) {
    throw Error(ErrorKind::ConfigError, field + ": " + what);
}

namespace detail {

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
    if (!j.is_object()) fail(where.empty() ? "<root>" : where, "expected an object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k)) fail(where.empty() ? k : where + "." + k, "unknown field");
}

inline std::string path_of(const std::string& where, const char* key) {
    return where.empty() ? key : where + "." + key;
}

template <class T>
T get(const json& j, const std::string& where, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(path_of(where, key), "wrong type");
    }
}

template <class T>
T need(const json& j, const std::string& where, const char* key) {
    if (!j.contains(key)) fail(path_of(where, key), "required field missing");
    return get<T>(j, where, key, T{});
}

inline std::size_t get_count(const json& j, const std::string& where, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) fail(path_of(where, key), "expected a nonnegative integer");
    return v.get<std::size_t>();
}

}  // namespace detail

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) fail("--config", "cannot open '" + p.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail("--config", std::string("parse error: ") + e.what());
    }
}

inline void check_version(const json& j) {
    if (j.contains("schema_version") && detail::get<int>(j, "", "schema_version", 0) != kSchemaVersion)
        fail("schema_version", "unsupported version");
}

inline sim::ScenarioSpec parse_scenario(const json& j, const std::string& where = "scenario") {
    using namespace detail;
    allow_keys(j, where,
               {"q", "alternating", "beta", "gamma_fixed", "misspec", "q_source", "unlabeled_n", "n_max",
                "replications", "alpha", "m_draws", "eps_trunc", "seed", "crt_draws", "n_grid", "stop_on_cross",
                "threads"});
    sim::ScenarioSpec s;
    s.q = get<int>(j, where, "q", s.q);
    s.alternating = get<bool>(j, where, "alternating", s.alternating);
    s.beta = get<double>(j, where, "beta", s.beta);
    s.gamma_fixed = get<bool>(j, where, "gamma_fixed", s.gamma_fixed);
    if (j.contains("misspec")) {
        const json& m = j.at("misspec");
        const std::string mw = where + ".misspec";
        allow_keys(m, mw, {"kind", "xi"});
        sim::Misspec ms;
        try {
            ms.kind = distortion_from_string(need<std::string>(m, mw, "kind"));
        } catch (const Error&) {
            fail(mw + ".kind", "expected cubic | quadratic | tanh");
        }
        ms.xi = get<double>(m, mw, "xi", 0.0);
        s.misspec = ms;
    }
    if (j.contains("q_source")) {
        try {
            s.q_source = sim::qsource_from_string(get<std::string>(j, where, "q_source", "exact"));
        } catch (const Error&) {
            fail(where + ".q_source", "expected exact | fitted | shared");
        }
    }
    s.unlabeled_n = get_count(j, where, "unlabeled_n", s.unlabeled_n);
    s.n_max = get_count(j, where, "n_max", s.n_max);
    s.replications = get_count(j, where, "replications", s.replications);
    s.alpha = get<double>(j, where, "alpha", s.alpha);
    s.m_draws = get_count(j, where, "m_draws", s.m_draws);
    s.eps_trunc = get<double>(j, where, "eps_trunc", s.eps_trunc);
    s.master_seed = get<std::uint64_t>(j, where, "seed", s.master_seed);
    s.crt_draws = get_count(j, where, "crt_draws", s.crt_draws);
    s.n_grid = get<std::vector<std::size_t>>(j, where, "n_grid", {});
    s.stop_on_cross = get<bool>(j, where, "stop_on_cross", s.stop_on_cross);
    s.threads = get_count(j, where, "threads", s.threads);
    s.validate();
    return s;
}

inline std::vector<sim::Method> parse_methods(const json& j, const char* key = "methods") {
    if (!j.contains(key)) fail(key, "required field missing");
    if (!j.at(key).is_array()) fail(key, "expected an array of method names");
    std::vector<sim::Method> out;
    for (const auto& v : j.at(key)) {
        if (!v.is_string()) fail(key, "expected an array of method names");
        try {
            out.push_back(sim::method_from_string(v.get<std::string>()));
        } catch (const Error&) {
            fail(key, "unknown method '" + v.get<std::string>() +
                          "' (expected ecrt | ecrt-oracle | rmle | crt | crt-cor | lrt)");
        }
    }
    return out;
}

inline std::vector<double> parse_probabilities(const json& j, const char* key, std::vector<double> fallback) {
    auto v = detail::get<std::vector<double>>(j, "", key, std::move(fallback));
    for (double a : v)
        if (!(a > 0.0 && a < 1.0)) fail(key, "entries must lie in (0, 1)");
    return v;
}

struct SimulateConfig {
    sim::ScenarioSpec scenario;
    std::vector<sim::Method> methods;
    std::vector<double> alphas;
};

inline SimulateConfig parse_simulate(const json& j) {
    detail::allow_keys(j, "", {"schema_version", "command", "scenario", "methods", "alphas"});
    check_version(j);
    SimulateConfig c;
    c.scenario = parse_scenario(j.contains("scenario") ? j.at("scenario") : json::object());
    c.methods = parse_methods(j);
    c.alphas = parse_probabilities(j, "alphas", {0.01, 0.05});
    return c;
}

struct PowerConfig {
    sim::ScenarioSpec scenario;
    std::vector<sim::Method> methods;
    std::vector<double> betas;
    std::vector<double> etas;
};

inline PowerConfig parse_power(const json& j) {
    detail::allow_keys(j, "", {"schema_version", "command", "scenario", "methods", "betas", "etas"});
    check_version(j);
    PowerConfig c;
    c.scenario = parse_scenario(j.contains("scenario") ? j.at("scenario") : json::object());
    c.methods = parse_methods(j);
    c.betas = detail::get<std::vector<double>>(j, "", "betas", {0.4, 0.7, 1.0});
    for (double b : c.betas)
        if (!(b >= 0.0 && b <= 1.0)) fail("betas", "entries must lie in [0, 1]");
    c.etas = parse_probabilities(j, "etas", {0.2});
    return c;
}

struct RobustnessConfig {
    sim::ScenarioSpec scenario;
    std::vector<sim::Method> methods;
    sim::RobustnessParam param = sim::RobustnessParam::xi;
    std::vector<double> values;
};

inline RobustnessConfig parse_robustness(const json& j) {
    detail::allow_keys(j, "", {"schema_version", "command", "scenario", "methods", "sweep"});
    check_version(j);
    RobustnessConfig c;
    c.scenario = parse_scenario(j.contains("scenario") ? j.at("scenario") : json::object());
    c.methods = parse_methods(j);
    if (!j.contains("sweep")) fail("sweep", "required field missing");
    const json& s = j.at("sweep");
    detail::allow_keys(s, "sweep", {"param", "values"});
    const auto param = detail::need<std::string>(s, "sweep", "param");
    if (param == "xi")
        c.param = sim::RobustnessParam::xi;
    else if (param == "unlabeled_n")
        c.param = sim::RobustnessParam::unlabeled_n;
    else
        fail("sweep.param", "expected xi | unlabeled_n");
    c.values = detail::need<std::vector<double>>(s, "sweep", "values");
    for (double v : c.values)
        if (!(v >= 0.0)) fail("sweep.values", "entries must be nonnegative");
    if (c.scenario.beta != 0.0) fail("scenario.beta", "robustness experiments run under the null (beta = 0)");
    if (c.param == sim::RobustnessParam::xi && !c.scenario.misspec)
        fail("scenario.misspec", "a misspecification kind is required for a xi sweep");
    if (c.param == sim::RobustnessParam::unlabeled_n)
        for (double v : c.values)
            if (v <= c.scenario.q) fail("sweep.values", "unlabeled_n must exceed q");
    return c;
}

// ---------------------------------------------------------------------------
// Stream mode

struct StreamConfig {
    std::filesystem::path csv;
    std::string y_col, x_col;
    std::vector<std::string> z_cols;  ///< with a model
    std::optional<ConditionalModel> model;
    std::string mu_col, sigma_col;  ///< plug-in mode
    bool oracle = false;
    std::optional<LogisticParams> theta;
    FitConfig fit;
    TestConfig test;

    bool plugin() const { return !mu_col.empty(); }
};

inline StreamConfig parse_stream(const json& j, const std::filesystem::path& base_dir) {
    using namespace detail;
    allow_keys(j, "", {"schema_version", "command", "csv", "columns", "model", "method", "theta", "fit", "test"});
    check_version(j);
    StreamConfig c;
    c.csv = need<std::string>(j, "", "csv");
    if (c.csv.is_relative()) c.csv = base_dir / c.csv;

    if (!j.contains("columns")) fail("columns", "required field missing");
    const json& cols = j.at("columns");
    allow_keys(cols, "columns", {"y", "x", "z", "mu_z", "sigma_z"});
    c.y_col = need<std::string>(cols, "columns", "y");
    c.x_col = need<std::string>(cols, "columns", "x");
    const bool has_z = cols.contains("z");
    const bool has_mu = cols.contains("mu_z") || cols.contains("sigma_z");
    if (has_z == has_mu) fail("columns", "give exactly one of z (with a model) or mu_z and sigma_z");
    if (has_z) {
        c.z_cols = need<std::vector<std::string>>(cols, "columns", "z");
        if (!j.contains("model")) fail("model", "required when columns.z is given");
        const json& m = j.at("model");
        if (m.is_string()) {
            std::filesystem::path mp = m.get<std::string>();
            if (mp.is_relative()) mp = base_dir / mp;
            c.model = load_model(mp.string());
        } else {
            c.model = model_from_json(m);
        }
    } else {
        c.mu_col = need<std::string>(cols, "columns", "mu_z");
        c.sigma_col = need<std::string>(cols, "columns", "sigma_z");
        if (j.contains("model")) fail("model", "not allowed together with mu_z and sigma_z columns");
    }

    const auto method = get<std::string>(j, "", "method", "ecrt");
    if (method == "ecrt-oracle")
        c.oracle = true;
    else if (method != "ecrt")
        fail("method", "unknown method '" + method + "' (expected ecrt | ecrt-oracle)");
    if (j.contains("theta")) {
        const json& t = j.at("theta");
        allow_keys(t, "theta", {"beta", "gamma"});
        LogisticParams th;
        th.beta = need<std::vector<double>>(t, "theta", "beta");
        th.gamma = need<std::vector<double>>(t, "theta", "gamma");
        if (th.beta.size() != 1) fail("theta.beta", "expected one coefficient");
        const std::size_t qd = c.plugin() ? 3 : c.z_cols.size() + 1;
        if (th.gamma.size() != qd) fail("theta.gamma", "expected " + std::to_string(qd) + " coefficients (intercept first)");
        c.theta = th;
    }
    if (c.oracle && !c.theta) fail("theta", "required for method ecrt-oracle");

    if (j.contains("fit")) {
        const json& f = j.at("fit");
        allow_keys(f, "fit", {"eps_trunc", "ridge", "max_iter", "tol", "min_fit_n"});
        c.fit.eps_trunc = get<double>(f, "fit", "eps_trunc", c.fit.eps_trunc);
        c.fit.ridge = get<double>(f, "fit", "ridge", c.fit.ridge);
        c.fit.max_iter = get_count(f, "fit", "max_iter", c.fit.max_iter);
        c.fit.tol = get<double>(f, "fit", "tol", c.fit.tol);
        c.fit.min_fit_n = get_count(f, "fit", "min_fit_n", c.fit.min_fit_n);
        if (!(c.fit.eps_trunc >= 0.0 && c.fit.eps_trunc < 0.5)) fail("fit.eps_trunc", "must lie in [0, 0.5)");
        if (!(c.fit.ridge >= 0.0)) fail("fit.ridge", "must be nonnegative");
    }
    if (j.contains("test")) {
        const json& t = j.at("test");
        allow_keys(t, "test", {"alpha", "m_draws", "seed", "stop_on_cross"});
        c.test.alpha = get<double>(t, "test", "alpha", c.test.alpha);
        c.test.m_draws = get_count(t, "test", "m_draws", c.test.m_draws);
        c.test.rng_seed = get<std::uint64_t>(t, "test", "seed", c.test.rng_seed);
        c.test.stop_on_cross = get<bool>(t, "test", "stop_on_cross", c.test.stop_on_cross);
        try {
            c.test.validate();
        } catch (const Error& e) {
            fail("test", e.what());
        }
    }
    return c;
}

}  // namespace mxci::config
