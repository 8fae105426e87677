#pragma once

// Conditional e-factors built from a nonnegative test function h and the
// Model-X law Q_z, and the test martingale that multiplies them.
//
// For an observation (x, y, z) the factor is
//     h(x, y, z) / E_{X' ~ Q_z}[h(X', y, z)]
// with the expectation either summed exactly over an enumerable support or
// replaced by the average of h over {x, x'_1, .., x'_M} (observed point
// included, x'_i drawn from Q_z). Under conditional independence each factor
// has conditional mean one, so the running product is a test martingale and
// crossing 1/alpha at any time has probability at most alpha.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mxci/error.hpp"
#include "mxci/modelx.hpp"
#include "mxci/observation.hpp"
#include "mxci/rng.hpp"

namespace mxci {

/// h(x, y, z) >= 0. Evaluation must not mutate observable state.
template <class H>
concept TestFunction = requires(const H& h, std::span<const double> x, double y, std::span<const double> z) {
    { h(x, y, z) } -> std::convertible_to<double>;
};

/// A test function that learns from the stream. update() is called by the
/// driver only after the factor for that observation has been produced.
template <class H>
concept SequentialTestFunction = TestFunction<H> && requires(H& h, const Observation& obs) { h.update(obs); };

/// Optional hook: a test function reporting constant_in_x() == true yields
/// factor 1 without integration.
template <class H>
concept ReportsConstancy = requires(const H& h) {
    { h.constant_in_x() } -> std::convertible_to<bool>;
};

enum class FactorMethod { exact, monte_carlo, trivial };

struct EFactor {
    double value = 1.0;
    double numerator = 1.0;
    double denominator = 1.0;
    FactorMethod method = FactorMethod::trivial;
    std::size_t m_draws = 0;
    bool degenerate = false;  ///< 0/0 case: h vanished everywhere it was evaluated
};

struct TestConfig {
    double alpha = 0.05;
    std::size_t m_draws = 500;
    std::uint64_t rng_seed = 0;
    bool stop_on_cross = false;
    bool prefer_exact = true;  ///< integrate exactly whenever Q_z is enumerable

    void validate() const {
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0,1)");
        if (m_draws < 1) throw Error(ErrorKind::InvalidArgument, "m_draws must be >= 1");
    }
};

namespace detail {

inline double checked_h(double v) {
    if (!(v >= 0.0) || std::isinf(v))
        throw Error(ErrorKind::InvalidArgument, "test function returned a negative or non-finite value");
    return v;
}

}  // namespace detail

/// Factor with the exact integral over an enumerable Q_z.
template <TestFunction H>
EFactor e_factor_exact(const H& h, const Observation& obs, const ConditionalModel& q) {
    const auto support = q.enumerate(obs.z);
    if (!support) throw Error(ErrorKind::UnsupportedModel, "no exact integrator for this conditional model");
    if (obs.x.size() != 1) throw Error(ErrorKind::DimensionMismatch, "conditional models are univariate in x");
    const double num = detail::checked_h(h(obs.x, obs.y, obs.z));
    double den = 0.0;
    for (const auto& [value, prob] : *support) {
        if (prob == 0.0) continue;
        const double xv[1] = {value};
        den += prob * detail::checked_h(h(std::span<const double>(xv), obs.y, obs.z));
    }
    if (!(den > 0.0)) throw Error(ErrorKind::ZeroDenominator, "integral of h under Q_z is zero");
    return {num / den, num, den, FactorMethod::exact, 0, false};
}

/// Factor against explicit draws x'_1..x'_M: h(x) over the average of h on
/// {x, x'_1, .., x'_M}. Bounded above by M + 1; a 0/0 yields 1, flagged.
template <TestFunction H>
EFactor e_factor_from_draws(const H& h, const Observation& obs, std::span<const double> draws) {
    const std::size_t m = draws.size();
    if (m < 1) throw Error(ErrorKind::InvalidArgument, "m must be >= 1");
    if (obs.x.size() != 1) throw Error(ErrorKind::DimensionMismatch, "conditional models are univariate in x");
    const double num = detail::checked_h(h(obs.x, obs.y, obs.z));
    double sum = num;
    for (std::size_t i = 0; i < m; ++i)
        sum += detail::checked_h(h(draws.subspan(i, 1), obs.y, obs.z));
    const double den = sum / static_cast<double>(m + 1);
    if (!(den > 0.0)) return {1.0, 0.0, 0.0, FactorMethod::monte_carlo, m, true};
    // num <= sum, so the ratio never exceeds m + 1 in exact arithmetic
    return {std::min(num / den, static_cast<double>(m + 1)), num, den, FactorMethod::monte_carlo, m, false};
}

/// Monte-Carlo factor with M draws from Q_z; mean-one under the null.
template <TestFunction H>
EFactor e_factor_mc(const H& h, const Observation& obs, const ConditionalModel& q, std::size_t m, Rng& rng) {
    if (m < 1) throw Error(ErrorKind::InvalidArgument, "m must be >= 1");
    std::vector<double> draws(m);
    for (double& d : draws) d = q.sample(obs.z, rng);
    return e_factor_from_draws(h, obs, draws);
}

namespace testing_hooks {

/// The anti-conservative variant that omits the observed point from the
/// denominator. Not a valid e-statistic; exposed for negative-control tests.
template <TestFunction H>
double naive_e_factor_mc(const H& h, const Observation& obs, const ConditionalModel& q, std::size_t m, Rng& rng) {
    const double num = detail::checked_h(h(obs.x, obs.y, obs.z));
    double sum = 0.0;
    double xv[1];
    for (std::size_t i = 0; i < m; ++i) {
        xv[0] = q.sample(obs.z, rng);
        sum += detail::checked_h(h(std::span<const double>(xv), obs.y, obs.z));
    }
    return num / (sum / static_cast<double>(m));
}

}  // namespace testing_hooks

/// 2 e^{l d} / (e^{l d} + e^{-l d}) = 2 / (1 + e^{-2 l d}), evaluated without overflow.
inline double symmetry_e_factor(double d, double lambda) {
    const double t = 2.0 * lambda * d;
    if (t >= 0.0) return 2.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return 2.0 * e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Martingale

struct MartingaleState {
    std::size_t n = 0;
    double log_s = 0.0;
    double max_log_s = 0.0;
    double threshold_log = std::log(20.0);
    std::optional<std::size_t> stopped_at;

    static MartingaleState start(double alpha) {
        if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0,1)");
        MartingaleState s;
        s.threshold_log = -std::log(alpha);
        return s;
    }

    bool crossed() const noexcept { return stopped_at.has_value(); }
};

/// Pure update: returns the state after multiplying in one factor.
[[nodiscard]] inline MartingaleState update_martingale(MartingaleState state, const EFactor& factor) {
    if (!(factor.value >= 0.0)) throw Error(ErrorKind::InvalidArgument, "negative e-factor");
    ++state.n;
    // a zero factor sends log_s to -inf, where it stays
    state.log_s += std::log(factor.value);
    state.max_log_s = std::max(state.max_log_s, state.log_s);
    if (!state.stopped_at && state.log_s >= state.threshold_log) state.stopped_at = state.n;
    return state;
}

struct TraceRow {
    std::size_t n = 0;
    double factor = 1.0;
    double log_s = 0.0;
    bool crossed = false;
};

struct SequentialResult {
    MartingaleState state;
    std::vector<TraceRow> trace;
    std::optional<Error> error;  ///< set when a factor computation aborted the run
};

/// A fixed Q_z, or a source whose Q_z is re-estimated from the stream.
template <class S>
concept ModelSource = requires(const S& s) {
    { s.current() } -> std::convertible_to<const ConditionalModel&>;
};

namespace detail {

inline const ConditionalModel& current_model(const ConditionalModel& q) { return q; }
template <ModelSource S>
const ConditionalModel& current_model(const S& s) {
    return s.current();
}

template <class S>
void observe_model(S& s, const Observation& obs) {
    if constexpr (requires { s.observe(obs); }) s.observe(obs);
}

}  // namespace detail

/// One factor for obs: trivial if h declares itself constant in x, exact if
/// Q_z is enumerable (and cfg.prefer_exact), Monte-Carlo otherwise.
template <TestFunction H>
EFactor compute_factor(const H& h, const Observation& obs, const ConditionalModel& q, const TestConfig& cfg,
                       Rng& rng) {
    if constexpr (ReportsConstancy<H>) {
        if (h.constant_in_x()) return {};
    }
    if (cfg.prefer_exact && q.enumerable()) return e_factor_exact(h, obs, q);
    return e_factor_mc(h, obs, q, cfg.m_draws, rng);
}

/// Runs the sequential test over a stream. For each observation the factor
/// is computed first, then the martingale is updated, and only then does h
/// (and a re-estimated Q source) see the observation.
template <class Stream, TestFunction H, class Q>
SequentialResult run_sequential_test(const Stream& stream, H& h, Q& q, const TestConfig& cfg) {
    cfg.validate();
    SequentialResult out;
    out.state = MartingaleState::start(cfg.alpha);
    Rng rng(cfg.rng_seed);
    std::optional<std::pair<std::size_t, std::size_t>> dims;
    for (const Observation& obs : stream) {
        if (!dims) dims.emplace(obs.x.size(), obs.z.size());
        try {
            check_observation(obs, dims->first, dims->second);
            const EFactor f = compute_factor(h, obs, detail::current_model(q), cfg, rng);
            out.state = update_martingale(out.state, f);
            out.trace.push_back({out.state.n, f.value, out.state.log_s, out.state.crossed()});
        } catch (const Error& e) {
            out.error = e;
            return out;
        }
        if constexpr (SequentialTestFunction<H>) h.update(obs);
        detail::observe_model(q, obs);
        if (cfg.stop_on_cross && out.state.crossed()) break;
    }
    return out;
}

/// First index at which log S_n reaches log(1/alpha) in a trace.
inline std::optional<std::size_t> first_crossing(std::span<const TraceRow> trace, double alpha) {
    const double thr = -std::log(alpha);
    for (const auto& r : trace)
        if (r.log_s >= thr) return r.n;
    return std::nullopt;
}

inline std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Columns: n,factor,log_s,crossed
inline void write_trace(std::ostream& os, std::span<const TraceRow> trace) {
    os << "n,factor,log_s,crossed\n";
    for (const auto& r : trace)
        os << r.n << ',' << format_double(r.factor) << ',' << format_double(r.log_s) << ','
           << (r.crossed ? 1 : 0) << '\n';
}

}  // namespace mxci
