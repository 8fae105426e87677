#pragma once

// Synthetic conditional-independence experiments: Gaussian covariates with
// Toeplitz covariance, logistic response, and paired evaluation of every
// registered method on the same replicated datasets.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "mxci/baselines.hpp"
#include "mxci/evalue.hpp"
#include "mxci/logistic.hpp"
#include "mxci/modelx.hpp"
#include "mxci/rng.hpp"

namespace mxci::sim {

enum class QSource { exact, fitted, shared };

inline std::string to_string(QSource s) {
    switch (s) {
    case QSource::exact: return "exact";
    case QSource::fitted: return "fitted";
    case QSource::shared: return "shared";
    }
    return "?";
}

inline QSource qsource_from_string(const std::string& s) {
    if (s == "exact") return QSource::exact;
    if (s == "fitted") return QSource::fitted;
    if (s == "shared") return QSource::shared;
    throw Error(ErrorKind::ConfigError, "q_source: unknown value '" + s + "'");
}

struct Misspec {
    Distortion kind = Distortion::cubic;
    double xi = 0.0;
};

inline std::vector<std::size_t> default_grid(std::size_t n_max) {
    std::vector<std::size_t> g;
    for (std::size_t n = 100; n <= std::min<std::size_t>(n_max, 2000); n += 100) g.push_back(n);
    if (g.empty() || g.back() != n_max) g.push_back(n_max);
    return g;
}

struct ScenarioSpec {
    int q = 4;
    bool alternating = false;
    double beta = 0.0;
    bool gamma_fixed = false;  ///< draw gamma once per experiment instead of per replication
    std::optional<Misspec> misspec;  ///< distorts the law used by the tests, never the data
    QSource q_source = QSource::exact;
    std::size_t unlabeled_n = 0;
    std::size_t n_max = 2000;
    std::size_t replications = 100;
    double alpha = 0.05;
    std::size_t m_draws = 500;
    double eps_trunc = 0.05;
    std::uint64_t master_seed = 1;
    std::size_t crt_draws = 500;
    std::vector<std::size_t> n_grid;  ///< fixed-sample methods; empty -> {100, 200, ..} up to n_max
    bool stop_on_cross = false;
    std::size_t threads = 0;  ///< 0 -> hardware concurrency

    std::size_t warmup() const { return 5 * static_cast<std::size_t>(q); }

    std::vector<std::size_t> grid() const { return n_grid.empty() ? default_grid(n_max) : n_grid; }

    void validate() const {
        auto bad = [](const std::string& m) { throw Error(ErrorKind::ConfigError, m); };
        if (q < 2) bad("scenario.q must be >= 2");
        if (!(beta >= 0.0 && beta <= 1.0)) bad("scenario.beta must lie in [0, 1]");
        if (n_max < warmup() + 1) bad("scenario.n_max must be >= 5q + 1");
        if (!(alpha > 0.0 && alpha < 1.0)) bad("scenario.alpha must lie in (0, 1)");
        if (m_draws < 1) bad("scenario.m_draws must be >= 1");
        if (crt_draws < 1) bad("scenario.crt_draws must be >= 1");
        if (!(eps_trunc >= 0.0 && eps_trunc < 0.5)) bad("scenario.eps_trunc must lie in [0, 0.5)");
        if (misspec && !(misspec->xi >= 0.0)) bad("scenario.misspec.xi must be >= 0");
        if (q_source != QSource::exact && unlabeled_n <= static_cast<std::size_t>(q) && q_source == QSource::fitted)
            bad("scenario.unlabeled_n must exceed q for a fitted conditional law");
        for (std::size_t n : grid())
            if (n < static_cast<std::size_t>(q) + 2 || n > n_max) bad("scenario.n_grid entries must lie in [q+2, n_max]");
    }
};

// ---------------------------------------------------------------------------
// Data generation

struct Truth {
    LogisticParams theta;
    GaussianConditionalSpec conditional;
};

struct Dataset {
    std::vector<Observation> obs;
    Truth truth;
};

class CovariateSampler {
public:
    CovariateSampler(int q, bool alternating) : sigma_(toeplitz_joint(q, alternating)), chol_(sigma_.llt().matrixL()) {}

    /// (x, z) with z = (1, z_1, .., z_{q-1}).
    void draw(Rng& rng, double& x, std::vector<double>& z) const {
        const auto q = sigma_.rows();
        Eigen::VectorXd u(q);
        for (Eigen::Index k = 0; k < q; ++k) u(k) = rng.normal();
        const Eigen::VectorXd v = chol_ * u;
        x = v(0);
        z.resize(static_cast<std::size_t>(q));
        z[0] = 1.0;
        for (Eigen::Index k = 1; k < q; ++k) z[static_cast<std::size_t>(k)] = v(k);
    }

    const Eigen::MatrixXd& sigma() const noexcept { return sigma_; }

private:
    Eigen::MatrixXd sigma_;
    Eigen::MatrixXd chol_;
};

inline std::vector<double> draw_gamma(const ScenarioSpec& spec, Rng& rng) {
    std::vector<double> gamma(static_cast<std::size_t>(spec.q));
    if (spec.gamma_fixed) {
        Rng g(substream_seed(spec.master_seed, 0, "gamma"));
        for (double& v : gamma) v = 2.0 * g.uniform() - 1.0;
    } else {
        for (double& v : gamma) v = 2.0 * rng.uniform() - 1.0;
    }
    return gamma;
}

/// n observations from the scenario; gamma is drawn first from rng (unless
/// fixed), then (X, Z) ~ N(0, Sigma) and Y ~ Bernoulli(sigmoid(beta X + gamma'Z)).
inline Dataset gen_dataset(const ScenarioSpec& spec, std::size_t rep, std::size_t n, Rng& rng) {
    (void)rep;  // replication identity enters through rng's substream seed
    Dataset ds;
    ds.truth.theta.beta = {spec.beta};
    ds.truth.theta.gamma = draw_gamma(spec, rng);
    const CovariateSampler sampler(spec.q, spec.alternating);
    ds.truth.conditional = gaussian_conditional_from_joint(sampler.sigma());
    ds.obs.resize(n);
    for (auto& o : ds.obs) {
        double x;
        sampler.draw(rng, x, o.z);
        o.x = {x};
        const double p1 = predict_prob(ds.truth.theta, o.x, o.z);
        o.y = rng.uniform() < p1 ? 1.0 : 0.0;
    }
    return ds;
}

inline std::uint64_t hash_dataset(std::span<const Observation> obs) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](double v) {
        unsigned char b[sizeof(double)];
        std::memcpy(b, &v, sizeof v);
        for (unsigned char c : b) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& o : obs) {
        for (double v : o.x) feed(v);
        feed(o.y);
        for (double v : o.z) feed(v);
    }
    return h;
}

// ---------------------------------------------------------------------------
// Conditional laws used by the tests

inline ConditionalModel apply_misspec(const GaussianConditionalSpec& g, const std::optional<Misspec>& m) {
    if (!m) return ConditionalModel(g);
    return distort_mean(g, m->kind, m->xi);
}

/// Q_z re-estimated from an initial unlabeled sample plus every (x, z) seen
/// on the stream; observe() runs after the factor for that point.
class SharedGaussianSource {
public:
    SharedGaussianSource(GaussianConditionalAccumulator acc, std::optional<Misspec> m)
        : acc_(std::move(acc)), misspec_(m), model_(apply_misspec(acc_.fit(), misspec_)) {}

    const ConditionalModel& current() const noexcept { return model_; }

    void observe(const Observation& o) {
        acc_.add(o.x[0], o.z);
        model_ = apply_misspec(acc_.fit(), misspec_);
    }

private:
    GaussianConditionalAccumulator acc_;
    std::optional<Misspec> misspec_;
    ConditionalModel model_;
};

// ---------------------------------------------------------------------------
// Methods and records

enum class Method { ecrt, ecrt_oracle, rmle, crt, crt_cor, lrt };

inline std::string to_string(Method m) {
    switch (m) {
    case Method::ecrt: return "ecrt";
    case Method::ecrt_oracle: return "ecrt-oracle";
    case Method::rmle: return "rmle";
    case Method::crt: return "crt";
    case Method::crt_cor: return "crt-cor";
    case Method::lrt: return "lrt";
    }
    return "?";
}

inline Method method_from_string(const std::string& s) {
    for (Method m : {Method::ecrt, Method::ecrt_oracle, Method::rmle, Method::crt, Method::crt_cor, Method::lrt})
        if (to_string(m) == s) return m;
    throw Error(ErrorKind::ConfigError, "methods: unknown method '" + s + "'");
}

inline bool is_sequential(Method m) { return m == Method::ecrt || m == Method::ecrt_oracle || m == Method::rmle; }
inline bool is_sequential(const std::string& m) { return is_sequential(method_from_string(m)); }

/// Sequential methods: one record per replication with n = budget,
/// stop = first crossing of 1/alpha, stat = max log S_n (or max log e).
/// Fixed-sample methods: one record per grid size with stat = p-value.
struct RunRecord {
    std::string method;
    std::size_t rep = 0;
    std::size_t n = 0;
    std::optional<std::size_t> stop;
    double stat = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t data_hash = 0;
    std::string error;

    friend bool operator==(const RunRecord&, const RunRecord&) = default;
};

inline constexpr int kRecordSchemaVersion = 1;

inline void write_records(std::ostream& os, std::span<const RunRecord> records) {
    os << "method,rep,n,stop,stat,seed,data_hash,error\n";
    for (const auto& r : records) {
        os << r.method << ',' << r.rep << ',' << r.n << ',';
        if (r.stop)
            os << *r.stop;
        else
            os << "NA";
        os << ',' << format_double(r.stat) << ',' << r.seed << ',' << r.data_hash << ',';
        for (char c : r.error) os << (c == ',' || c == '\n' ? ';' : c);
        os << '\n';
    }
}

inline std::vector<RunRecord> read_records(std::istream& is) {
    std::vector<RunRecord> out;
    std::string line;
    if (!std::getline(is, line)) return out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) f.push_back(cell);
        if (line.back() == ',') f.emplace_back();
        if (f.size() != 8) throw Error(ErrorKind::InvalidArgument, "malformed record line: " + line);
        RunRecord r;
        r.method = f[0];
        r.rep = std::stoull(f[1]);
        r.n = std::stoull(f[2]);
        if (f[3] != "NA") r.stop = std::stoull(f[3]);
        r.stat = f[4] == "-inf" ? -INFINITY : f[4] == "inf" ? INFINITY : std::stod(f[4]);
        r.seed = std::stoull(f[5]);
        r.data_hash = std::stoull(f[6]);
        r.error = f[7];
        out.push_back(std::move(r));
    }
    return out;
}

namespace detail {

inline std::vector<std::pair<double, std::vector<double>>> unlabeled_sample(const ScenarioSpec& spec, std::size_t rep,
                                                                            std::size_t n) {
    Rng rng(substream_seed(spec.master_seed, rep, "unlabeled"));
    const CovariateSampler sampler(spec.q, spec.alternating);
    std::vector<std::pair<double, std::vector<double>>> out(n);
    for (auto& [x, z] : out) sampler.draw(rng, x, z);
    return out;
}

inline GaussianConditionalAccumulator accumulate(const std::vector<std::pair<double, std::vector<double>>>& s,
                                                 std::size_t q) {
    GaussianConditionalAccumulator acc(q);
    for (const auto& [x, z] : s) acc.add(x, z);
    return acc;
}

struct RepContext {
    const ScenarioSpec& spec;
    std::size_t rep;
    Dataset data;
    std::uint64_t hash;
    std::vector<std::pair<double, std::vector<double>>> unlabeled;
};

// Q used by a batch test on the first n observations.
inline ConditionalModel batch_model(const RepContext& c, std::size_t n) {
    switch (c.spec.q_source) {
    case QSource::exact: return apply_misspec(c.data.truth.conditional, c.spec.misspec);
    case QSource::fitted:
        return apply_misspec(fit_gaussian_conditional(c.unlabeled), c.spec.misspec);
    case QSource::shared: {
        auto acc = accumulate(c.unlabeled, static_cast<std::size_t>(c.spec.q));
        for (std::size_t i = 0; i < n; ++i) acc.add(c.data.obs[i].x[0], c.data.obs[i].z);
        return apply_misspec(acc.fit(), c.spec.misspec);
    }
    }
    return ConditionalModel(c.data.truth.conditional);
}

inline RunRecord sequential_record(const RepContext& c, Method m, std::uint64_t seed) {
    RunRecord r{to_string(m), c.rep, c.spec.n_max, std::nullopt, 0.0, seed, c.hash, {}};
    const std::span<const Observation> stream(c.data.obs.data(), c.spec.n_max);
    if (m == Method::rmle) {
        FitConfig fc;
        fc.eps_trunc = c.spec.eps_trunc;
        RmleProcess proc(1, static_cast<std::size_t>(c.spec.q), fc);
        const double thr = -std::log(c.spec.alpha);
        double best = 0.0;
        for (const auto& o : stream) {
            const RmleState& s = proc.step(o);
            best = std::max(best, s.log_e_value);
            if (!r.stop && s.log_e_value >= thr) {
                r.stop = s.n;
                if (c.spec.stop_on_cross) break;
            }
        }
        r.stat = best;
        return r;
    }
    TestConfig tc;
    tc.alpha = c.spec.alpha;
    tc.m_draws = c.spec.m_draws;
    tc.rng_seed = seed;
    tc.stop_on_cross = c.spec.stop_on_cross;
    FitConfig fc;
    fc.eps_trunc = c.spec.eps_trunc;
    SequentialResult res;
    std::optional<LogisticParams> oracle;
    if (m == Method::ecrt_oracle) oracle = c.data.truth.theta;
    if (c.spec.q_source == QSource::shared) {
        SharedGaussianSource src(accumulate(c.unlabeled, static_cast<std::size_t>(c.spec.q)), c.spec.misspec);
        res = run_ecrt(stream, src, fc, tc, oracle);
    } else {
        const ConditionalModel model = batch_model(c, 0);
        res = run_ecrt(stream, model, fc, tc, oracle);
    }
    if (res.error) r.error = res.error->what();
    r.stop = res.state.stopped_at;
    r.stat = res.state.max_log_s;
    return r;
}

inline std::vector<RunRecord> fixed_records(const RepContext& c, Method m, std::uint64_t seed) {
    std::vector<RunRecord> out;
    Rng rng(seed);
    for (std::size_t n : c.spec.grid()) {
        RunRecord r{to_string(m), c.rep, n, std::nullopt, 1.0, seed, c.hash, {}};
        const std::span<const Observation> batch(c.data.obs.data(), n);
        try {
            if (m == Method::lrt) {
                r.stat = lrt_pvalue(batch).p_value;
            } else {
                FitConfig fc;
                fc.eps_trunc = c.spec.eps_trunc;
                const auto stat = m == Method::crt ? CrtStatistic::logistic_likelihood : CrtStatistic::abs_correlation;
                r.stat = crt_pvalue(batch, batch_model(c, n), c.spec.crt_draws, stat, rng, fc).p_value;
            }
        } catch (const Error& e) {
            r.stat = 1.0;
            r.error = e.what();
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace detail

/// All methods on one replication's dataset.
inline std::vector<RunRecord> run_replication(const ScenarioSpec& spec, std::size_t rep,
                                              std::span<const Method> methods) {
    Rng data_rng(substream_seed(spec.master_seed, rep, "data"));
    detail::RepContext c{spec, rep, gen_dataset(spec, rep, spec.n_max, data_rng), 0, {}};
    c.hash = hash_dataset(c.data.obs);
    if (spec.q_source != QSource::exact) c.unlabeled = detail::unlabeled_sample(spec, rep, spec.unlabeled_n);

    std::vector<RunRecord> out;
    for (Method m : methods) {
        const std::uint64_t seed = substream_seed(spec.master_seed, rep, to_string(m));
        try {
            if (is_sequential(m)) {
                out.push_back(detail::sequential_record(c, m, seed));
            } else {
                auto rs = detail::fixed_records(c, m, seed);
                out.insert(out.end(), rs.begin(), rs.end());
            }
        } catch (const Error& e) {
            out.push_back({to_string(m), rep, spec.n_max, std::nullopt, 0.0, seed, c.hash, e.what()});
        }
    }
    return out;
}

/// Every replication, in replication order. Replications run in parallel;
/// the output does not depend on the thread count.
inline std::vector<RunRecord> run_replications(const ScenarioSpec& spec, std::span<const Method> methods) {
    spec.validate();
    std::vector<std::vector<RunRecord>> per_rep(spec.replications);
    std::size_t threads = spec.threads ? spec.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(1, spec.replications));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t r; (r = next.fetch_add(1)) < spec.replications;) per_rep[r] = run_replication(spec, r, methods);
    };
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    std::vector<RunRecord> out;
    for (auto& v : per_rep) out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct Rate {
    double rate = 0.0;
    double se = 0.0;
    std::size_t replications = 0;
};

inline Rate binomial_rate(std::size_t hits, std::size_t total) {
    if (total == 0) return {};
    const double r = static_cast<double>(hits) / static_cast<double>(total);
    return {r, std::sqrt(r * (1.0 - r) / static_cast<double>(total)), total};
}

struct CalibrationRow {
    std::string method;
    double alpha = 0.0;
    Rate rate;
};

/// Rejection rates at the largest sample size. Sequential methods reject when
/// the running maximum reached 1/alpha; fixed methods when p <= alpha.
inline std::vector<CalibrationRow> calibration_table(std::span<const RunRecord> records, std::span<const double> alphas) {
    std::map<std::string, std::vector<const RunRecord*>> by_method;
    std::vector<std::string> order;
    for (const auto& r : records) {
        if (!by_method.count(r.method)) order.push_back(r.method);
        by_method[r.method].push_back(&r);
    }
    std::vector<CalibrationRow> out;
    for (const auto& m : order) {
        const auto& rs = by_method[m];
        std::size_t n_top = 0;
        for (const auto* r : rs) n_top = std::max(n_top, r->n);
        for (double a : alphas) {
            std::size_t hits = 0, total = 0;
            for (const auto* r : rs) {
                if (r->n != n_top) continue;
                ++total;
                const bool rej = is_sequential(m) ? r->stat >= -std::log(a) : r->stat <= a;
                if (rej) ++hits;
            }
            out.push_back({m, a, binomial_rate(hits, total)});
        }
    }
    return out;
}

struct EtaSummary {
    double eta = 0.0;
    std::optional<std::size_t> n_hat;  ///< nullopt: power 1 - eta not reached on the grid
    std::optional<double> n_av;        ///< sequential methods only
};

struct MethodPower {
    std::string method;
    bool sequential = false;
    std::vector<std::size_t> grid;
    std::vector<Rate> power;
    std::vector<EtaSummary> etas;
};

struct PowerSummary {
    double beta = 0.0;
    double alpha = 0.05;
    std::vector<MethodPower> methods;
};

/// Power on the grid, N_hat(beta, eta) = smallest grid n with power >= 1 - eta,
/// and for sequential methods N_av = mean of min(N_hat, first crossing).
/// Sequential crossings are those recorded at the scenario's alpha.
inline PowerSummary power_curve(std::span<const RunRecord> records, std::span<const double> etas,
                                std::span<const std::size_t> grid, double alpha, double beta = 0.0) {
    PowerSummary out;
    out.beta = beta;
    out.alpha = alpha;
    std::vector<std::string> order;
    std::map<std::string, std::vector<const RunRecord*>> by_method;
    for (const auto& r : records) {
        if (!by_method.count(r.method)) order.push_back(r.method);
        by_method[r.method].push_back(&r);
    }
    for (const auto& m : order) {
        MethodPower mp;
        mp.method = m;
        mp.sequential = is_sequential(m);
        mp.grid.assign(grid.begin(), grid.end());
        const auto& rs = by_method[m];
        std::vector<std::size_t> reps;
        for (const auto* r : rs) reps.push_back(r->rep);
        std::sort(reps.begin(), reps.end());
        reps.erase(std::unique(reps.begin(), reps.end()), reps.end());
        const std::size_t total = reps.size();
        for (std::size_t n : grid) {
            std::size_t hits = 0;
            if (mp.sequential) {
                for (const auto* r : rs)
                    if (r->stop && *r->stop <= n) ++hits;
                mp.power.push_back(binomial_rate(hits, total));
            } else {
                std::size_t cnt = 0;
                for (const auto* r : rs)
                    if (r->n == n) {
                        ++cnt;
                        if (r->stat <= alpha) ++hits;
                    }
                mp.power.push_back(binomial_rate(hits, cnt));
            }
        }
        for (double eta : etas) {
            EtaSummary es;
            es.eta = eta;
            for (std::size_t k = 0; k < grid.size(); ++k) {
                if (mp.power[k].replications > 0 && mp.power[k].rate >= 1.0 - eta) {
                    if (mp.power[k].se > 0.05)
                        throw Error(ErrorKind::InsufficientReplications,
                                    "power SE above 0.05 at the decision boundary for method " + m);
                    es.n_hat = grid[k];
                    break;
                }
            }
            if (mp.sequential && es.n_hat) {
                double s = 0.0;
                for (const auto* r : rs)
                    s += static_cast<double>(r->stop ? std::min(*es.n_hat, *r->stop) : *es.n_hat);
                es.n_av = s / static_cast<double>(rs.size());
            }
            mp.etas.push_back(es);
        }
        out.methods.push_back(std::move(mp));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Robustness

enum class RobustnessParam { xi, unlabeled_n };

struct RobustnessRow {
    std::string method;
    double value = 0.0;  ///< xi or unlabeled_n
    std::size_t n = 0;   ///< sample size (budget for sequential methods)
    Rate rate;
};

/// Null-only sweep over the misspecification strength (spec.misspec kind) or
/// the unlabeled sample size used to estimate Q_z.
inline std::vector<RobustnessRow> robustness_experiment(const ScenarioSpec& base, RobustnessParam param,
                                                        std::span<const double> values,
                                                        std::span<const Method> methods) {
    if (base.beta != 0.0)
        throw Error(ErrorKind::ConfigError, "scenario.beta: robustness experiments run under the null (beta = 0)");
    if (param == RobustnessParam::xi && !base.misspec)
        throw Error(ErrorKind::ConfigError, "scenario.misspec: a misspecification kind is required for a xi sweep");
    std::vector<RobustnessRow> out;
    for (double v : values) {
        ScenarioSpec spec = base;
        if (param == RobustnessParam::xi) {
            spec.misspec->xi = v;
        } else {
            spec.unlabeled_n = static_cast<std::size_t>(v);
            if (spec.q_source == QSource::exact) spec.q_source = QSource::fitted;
        }
        const auto records = run_replications(spec, methods);
        for (Method m : methods) {
            const std::string name = to_string(m);
            std::vector<std::size_t> sizes = is_sequential(m) ? std::vector<std::size_t>{spec.n_max} : spec.grid();
            for (std::size_t n : sizes) {
                std::size_t hits = 0, total = 0;
                for (const auto& r : records) {
                    if (r.method != name || r.n != n) continue;
                    ++total;
                    if (is_sequential(m) ? r.stop.has_value() : r.stat <= spec.alpha) ++hits;
                }
                out.push_back({name, v, n, binomial_rate(hits, total)});
            }
        }
    }
    return out;
}

/// Likelihood ratio of Bernoulli(p_true) to Bernoulli(p_hat) in x: the most
/// powerful way to exploit a wrong conditional law.
struct BernoulliRatio {
    double p_true, p_hat;
    double operator()(std::span<const double> x, double, std::span<const double>) const {
        return x[0] > 0.5 ? p_true / p_hat : (1.0 - p_true) / (1.0 - p_hat);
    }
};

struct DiscreteRobustnessResult {
    ProductTv tv;
    Rate rate;
};

/// X_i ~ Bernoulli(p_true) i.i.d., Y independent of X, while the test
/// integrates against Bernoulli(p_hat). Returns the product-measure TV over
/// n_steps and the rate of crossing 1/alpha within n_steps.
inline DiscreteRobustnessResult discrete_robustness_experiment(double p_true, double p_hat, std::size_t n_steps,
                                                               std::size_t reps, double alpha, std::uint64_t seed) {
    const std::vector<double> truth{1.0 - p_true, p_true}, assumed{1.0 - p_hat, p_hat};
    std::vector<std::pair<std::vector<double>, std::vector<double>>> factors(n_steps, {truth, assumed});
    DiscreteRobustnessResult out;
    out.tv = tv_distance_product(factors);

    const ConditionalModel qhat(DiscreteConditional({0.0, 1.0}, {{{1.0}, assumed}}));
    const BernoulliRatio h{p_true, p_hat};
    TestConfig tc;
    tc.alpha = alpha;
    tc.stop_on_cross = true;
    std::size_t hits = 0;
    std::vector<Observation> stream(n_steps);
    for (std::size_t r = 0; r < reps; ++r) {
        Rng rng(substream_seed(seed, r, "discrete"));
        for (auto& o : stream) {
            o.x = {rng.uniform() < p_true ? 1.0 : 0.0};
            o.y = rng.uniform() < 0.5 ? 1.0 : 0.0;
            o.z = {1.0};
        }
        const auto res = run_sequential_test(stream, h, qhat, tc);
        if (res.state.crossed()) ++hits;
    }
    out.rate = binomial_rate(hits, reps);
    return out;
}

/// p_hat < p_true with product TV over n_steps equal to target (bisection).
inline double bernoulli_for_product_tv(double p_true, std::size_t n_steps, double target) {
    const std::vector<double> truth{1.0 - p_true, p_true};
    auto tv = [&](double ph) {
        std::vector<std::pair<std::vector<double>, std::vector<double>>> f(n_steps, {truth, {1.0 - ph, ph}});
        return tv_distance_product(f).value;
    };
    double lo = 0.0, hi = p_true;  // tv decreasing in ph on [0, p_true]
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (tv(mid) > target)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace mxci::sim
