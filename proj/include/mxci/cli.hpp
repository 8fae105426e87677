#pragma once

// Subcommands of the mxci tool. Each returns the process exit code:
// 0 success, 1 runtime failure, 2 configuration error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mxci/config.hpp"
#include "mxci/evalue.hpp"
#include "mxci/logistic.hpp"
#include "mxci/simharness.hpp"

namespace mxci::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct Options {
    fs::path config;
    fs::path out = ".";
    std::optional<std::uint64_t> seed;
    bool quiet = false;
    std::ostream* out_stream = &std::cout;
    std::ostream* err_stream = &std::cerr;
};

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error(ErrorKind::InvalidArgument, "cannot write '" + p.string() + "'");
    return f;
}

inline void write_json(const fs::path& p, const json& j) {
    auto f = open_out(p);
    f << j.dump(2) << '\n';
}

inline json scenario_json(const sim::ScenarioSpec& s) {
    json j = {{"q", s.q},
              {"alternating", s.alternating},
              {"beta", s.beta},
              {"gamma_fixed", s.gamma_fixed},
              {"q_source", sim::to_string(s.q_source)},
              {"unlabeled_n", s.unlabeled_n},
              {"n_max", s.n_max},
              {"replications", s.replications},
              {"alpha", s.alpha},
              {"m_draws", s.m_draws},
              {"eps_trunc", s.eps_trunc},
              {"seed", s.master_seed},
              {"crt_draws", s.crt_draws},
              {"n_grid", s.grid()},
              {"stop_on_cross", s.stop_on_cross}};
    if (s.misspec) j["misspec"] = {{"kind", to_string(s.misspec->kind)}, {"xi", s.misspec->xi}};
    return j;
}

inline std::vector<std::string> method_names(const std::vector<sim::Method>& ms) {
    std::vector<std::string> out;
    for (auto m : ms) out.push_back(sim::to_string(m));
    return out;
}

inline std::string short_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

inline void write_records_file(const fs::path& p, const std::vector<sim::RunRecord>& records) {
    auto f = open_out(p);
    sim::write_records(f, records);
}

}  // namespace detail

inline int cmd_simulate(const Options& opt) {
    auto cfg = config::parse_simulate(config::read_json_file(opt.config));
    if (opt.seed) cfg.scenario.master_seed = *opt.seed;
    fs::create_directories(opt.out);
    if (!opt.quiet)
        *opt.err_stream << "simulate: " << cfg.scenario.replications << " replications, n_max "
                        << cfg.scenario.n_max << "\n";
    const auto records = sim::run_replications(cfg.scenario, cfg.methods);
    detail::write_records_file(opt.out / "records.csv", records);

    const auto table = sim::calibration_table(records, cfg.alphas);
    json rows = json::array();
    {
        auto f = detail::open_out(opt.out / "summary.csv");
        f << "method,alpha,rate,se,replications\n";
        for (const auto& r : table) {
            f << r.method << ',' << format_double(r.alpha) << ',' << format_double(r.rate.rate) << ','
              << format_double(r.rate.se) << ',' << r.rate.replications << '\n';
            rows.push_back({{"method", r.method},
                            {"alpha", r.alpha},
                            {"rate", r.rate.rate},
                            {"se", r.rate.se},
                            {"replications", r.rate.replications}});
        }
    }
    detail::write_json(opt.out / "summary.json", {{"schema_version", config::kSchemaVersion},
                                                  {"command", "simulate"},
                                                  {"scenario", detail::scenario_json(cfg.scenario)},
                                                  {"methods", detail::method_names(cfg.methods)},
                                                  {"rows", rows}});
    if (!opt.quiet) {
        auto& os = *opt.out_stream;
        for (const auto& r : table) {
            char line[128];
            std::snprintf(line, sizeof line, "%-12s alpha=%-5g rate=%.4f (%.4f)\n", r.method.c_str(), r.alpha,
                          r.rate.rate, r.rate.se);
            os << line;
        }
    }
    return 0;
}

inline int cmd_power(const Options& opt) {
    auto cfg = config::parse_power(config::read_json_file(opt.config));
    if (opt.seed) cfg.scenario.master_seed = *opt.seed;
    fs::create_directories(opt.out);
    const auto grid = cfg.scenario.grid();
    auto pf = detail::open_out(opt.out / "power.csv");
    auto nf = detail::open_out(opt.out / "nhat.csv");
    pf << "method,beta,n,power,se,replications\n";
    nf << "method,beta,eta,n_hat,n_av\n";
    json per_beta = json::array();
    for (double beta : cfg.betas) {
        sim::ScenarioSpec spec = cfg.scenario;
        spec.beta = beta;
        if (!opt.quiet) *opt.err_stream << "power: beta " << beta << "\n";
        const auto records = sim::run_replications(spec, cfg.methods);
        detail::write_records_file(opt.out / ("records_beta_" + detail::short_double(beta) + ".csv"), records);
        const auto summary = sim::power_curve(records, cfg.etas, grid, spec.alpha, beta);
        json methods = json::array();
        for (const auto& mp : summary.methods) {
            json curve = json::array();
            for (std::size_t k = 0; k < mp.grid.size(); ++k) {
                pf << mp.method << ',' << format_double(beta) << ',' << mp.grid[k] << ','
                   << format_double(mp.power[k].rate) << ',' << format_double(mp.power[k].se) << ','
                   << mp.power[k].replications << '\n';
                curve.push_back({{"n", mp.grid[k]}, {"power", mp.power[k].rate}, {"se", mp.power[k].se}});
            }
            json etas = json::array();
            for (const auto& e : mp.etas) {
                nf << mp.method << ',' << format_double(beta) << ',' << format_double(e.eta) << ','
                   << (e.n_hat ? std::to_string(*e.n_hat) : "NA") << ','
                   << (e.n_av ? format_double(*e.n_av) : "NA") << '\n';
                etas.push_back({{"eta", e.eta},
                                {"n_hat", e.n_hat ? json(*e.n_hat) : json("not reached")},
                                {"n_av", e.n_av ? json(*e.n_av) : json(nullptr)}});
                if (!opt.quiet)
                    *opt.out_stream << mp.method << " beta=" << beta << " eta=" << e.eta << " N_hat="
                                    << (e.n_hat ? std::to_string(*e.n_hat) : "not reached")
                                    << (e.n_av ? " N_av=" + format_double(*e.n_av) : "") << '\n';
            }
            methods.push_back({{"method", mp.method}, {"sequential", mp.sequential}, {"power", curve}, {"etas", etas}});
        }
        per_beta.push_back({{"beta", beta}, {"methods", methods}});
    }
    detail::write_json(opt.out / "power.json", {{"schema_version", config::kSchemaVersion},
                                                {"command", "power"},
                                                {"scenario", detail::scenario_json(cfg.scenario)},
                                                {"results", per_beta}});
    return 0;
}

inline int cmd_robustness(const Options& opt) {
    auto cfg = config::parse_robustness(config::read_json_file(opt.config));
    if (opt.seed) cfg.scenario.master_seed = *opt.seed;
    fs::create_directories(opt.out);
    if (!opt.quiet) *opt.err_stream << "robustness: " << cfg.values.size() << " sweep values\n";
    const auto rows = sim::robustness_experiment(cfg.scenario, cfg.param, cfg.values, cfg.methods);
    const std::string param = cfg.param == sim::RobustnessParam::xi ? "xi" : "unlabeled_n";
    auto f = detail::open_out(opt.out / "robustness.csv");
    f << "method,param,value,n,rate,se,replications\n";
    json out = json::array();
    for (const auto& r : rows) {
        f << r.method << ',' << param << ',' << format_double(r.value) << ',' << r.n << ','
          << format_double(r.rate.rate) << ',' << format_double(r.rate.se) << ',' << r.rate.replications << '\n';
        out.push_back({{"method", r.method},
                       {"value", r.value},
                       {"n", r.n},
                       {"rate", r.rate.rate},
                       {"se", r.rate.se},
                       {"replications", r.rate.replications}});
        if (!opt.quiet)
            *opt.out_stream << r.method << ' ' << param << '=' << r.value << " n=" << r.n << " rate=" << r.rate.rate
                            << " (" << r.rate.se << ")\n";
    }
    detail::write_json(opt.out / "robustness.json", {{"schema_version", config::kSchemaVersion},
                                                     {"command", "robustness"},
                                                     {"param", param},
                                                     {"scenario", detail::scenario_json(cfg.scenario)},
                                                     {"rows", out}});
    return 0;
}

// ---------------------------------------------------------------------------
// Stream mode

namespace detail {

inline std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline double parse_cell(const std::string& s, std::size_t row, const std::string& col) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
        throw Error(ErrorKind::InvalidArgument,
                    "row " + std::to_string(row) + ": column '" + col + "' is not a finite number ('" + s + "')");
    return v;
}

}  // namespace detail

/// Observations from the CSV in file order. Row numbers in errors count data
/// rows from 1. Missing columns and nonpositive sigma_z are configuration
/// errors; anything else wrong with a row is a runtime error.
inline std::vector<Observation> read_stream(const config::StreamConfig& cfg) {
    std::ifstream in(cfg.csv);
    if (!in) throw Error(ErrorKind::ConfigError, "csv: cannot open '" + cfg.csv.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::ConfigError, "csv: missing header row");
    const auto header = detail::split_csv(line);
    auto col = [&](const std::string& name, const std::string& field) {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        throw Error(ErrorKind::ConfigError, field + ": column '" + name + "' not found in CSV header");
    };
    const std::size_t iy = col(cfg.y_col, "columns.y"), ix = col(cfg.x_col, "columns.x");
    std::vector<std::size_t> iz;
    std::size_t imu = 0, isd = 0;
    if (cfg.plugin()) {
        imu = col(cfg.mu_col, "columns.mu_z");
        isd = col(cfg.sigma_col, "columns.sigma_z");
    } else {
        for (const auto& z : cfg.z_cols) iz.push_back(col(z, "columns.z"));
    }

    std::vector<Observation> out;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (detail::trim(line).empty()) continue;
        ++row;
        const auto cells = detail::split_csv(line);
        if (cells.size() != header.size())
            throw Error(ErrorKind::InvalidArgument, "row " + std::to_string(row) + ": expected " +
                                                        std::to_string(header.size()) + " fields, found " +
                                                        std::to_string(cells.size()));
        Observation o;
        o.y = detail::parse_cell(cells[iy], row, cfg.y_col);
        if (o.y != 0.0 && o.y != 1.0)
            throw Error(ErrorKind::InvalidArgument, "row " + std::to_string(row) + ": y must be 0 or 1");
        o.x = {detail::parse_cell(cells[ix], row, cfg.x_col)};
        o.z.push_back(1.0);
        if (cfg.plugin()) {
            const double mu = detail::parse_cell(cells[imu], row, cfg.mu_col);
            const double sd = detail::parse_cell(cells[isd], row, cfg.sigma_col);
            if (!(sd > 0.0) || sd * sd < kMinVariance)
                throw Error(ErrorKind::ConfigError, "columns.sigma_z: row " + std::to_string(row) +
                                                        " has sigma_z below the minimum variance");
            o.z.push_back(mu);
            o.z.push_back(sd);
        } else {
            for (std::size_t k = 0; k < iz.size(); ++k) o.z.push_back(detail::parse_cell(cells[iz[k]], row, cfg.z_cols[k]));
        }
        out.push_back(std::move(o));
    }
    return out;
}

inline int cmd_stream(const Options& opt) {
    const auto j = config::read_json_file(opt.config);
    auto cfg = config::parse_stream(j, opt.config.parent_path());
    if (opt.seed) cfg.test.rng_seed = *opt.seed;
    const auto stream = read_stream(cfg);
    fs::create_directories(opt.out);

    const ConditionalModel q = cfg.plugin() ? ConditionalModel(PlugInGaussian{1, 2}) : *cfg.model;
    std::optional<LogisticParams> oracle;
    if (cfg.oracle) oracle = cfg.theta;
    const auto res = run_ecrt(stream, q, cfg.fit, cfg.test, oracle);
    {
        auto f = detail::open_out(opt.out / "trace.csv");
        write_trace(f, res.trace);
    }
    std::string verdict;
    if (res.state.stopped_at)
        verdict = "reject at n=" + std::to_string(*res.state.stopped_at) + " (alpha=" + detail::short_double(cfg.test.alpha) +
                  ", max log S=" + format_double(res.state.max_log_s) + ")";
    else
        verdict = "no rejection at level alpha=" + detail::short_double(cfg.test.alpha) + " after n=" +
                  std::to_string(res.state.n) + " (max log S=" + format_double(res.state.max_log_s) + ")";
    {
        auto f = detail::open_out(opt.out / "verdict.txt");
        f << verdict << '\n';
    }
    *opt.out_stream << verdict << '\n';
    if (res.error) {
        *opt.err_stream << "error at row " << res.state.n + 1 << ": " << res.error->what() << '\n';
        return 1;
    }
    return 0;
}

/// Dispatch with the exit-code contract applied to escaping exceptions.
inline int run(const std::string& command, const Options& opt) {
    try {
        if (command == "simulate") return cmd_simulate(opt);
        if (command == "power") return cmd_power(opt);
        if (command == "robustness") return cmd_robustness(opt);
        if (command == "stream") return cmd_stream(opt);
        *opt.err_stream << "unknown command '" << command << "'\n";
        return 2;
    } catch (const Error& e) {
        *opt.err_stream << "error: " << e.what() << '\n';
        return e.kind() == ErrorKind::ConfigError ? 2 : 1;
    } catch (const std::exception& e) {
        *opt.err_stream << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace mxci::cli
