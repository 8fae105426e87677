#pragma once

// Comparators for the sequential test: the batch conditional randomization
// test (CRT), the fixed-sample likelihood-ratio test, and the running-MLE
// universal-inference e-process.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mxci/error.hpp"
#include "mxci/logistic.hpp"
#include "mxci/modelx.hpp"
#include "mxci/observation.hpp"
#include "mxci/rng.hpp"

namespace mxci {

// ---------------------------------------------------------------------------
// Chi-square tail via the regularized incomplete gamma function

namespace detail {

// P(a, x) by its power series; converges quickly for x < a + 1.
inline double gamma_p_series(double a, double x) {
    double term = 1.0 / a, sum = term, ap = a;
    for (int n = 0; n < 10000; ++n) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Q(a, x) by the Legendre continued fraction (modified Lentz); x >= a + 1.
inline double gamma_q_cf(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-17) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

/// Regularized upper incomplete gamma Q(a, x).
inline double gamma_q(double a, double x) {
    if (!(a > 0.0)) throw Error(ErrorKind::InvalidArgument, "gamma_q needs a > 0");
    if (x <= 0.0) return 1.0;
    if (std::isinf(x)) return 0.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_cf(a, x);
}

/// P(chi2_dof > stat).
inline double chi2_upper_tail(double stat, double dof) { return gamma_q(0.5 * dof, 0.5 * std::max(stat, 0.0)); }

// ---------------------------------------------------------------------------
// CRT

enum class CrtStatistic { logistic_likelihood, abs_correlation };

struct CrtResult {
    double p_value = 1.0;
    double observed_stat = 0.0;
    std::vector<double> resample_stats;
};

/// Monte-Carlo p-value (1 + #{resampled >= observed}) / (m + 1); ties count against rejection.
inline double crt_pvalue_from_stats(double observed, std::span<const double> resampled) {
    std::size_t ge = 0;
    for (double t : resampled)
        if (t >= observed) ++ge;
    return (1.0 + static_cast<double>(ge)) / (static_cast<double>(resampled.size()) + 1.0);
}

namespace detail {

inline double abs_correlation(std::span<const double> a, std::span<const double> b) {
    const auto n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return std::abs(sab) / std::sqrt(saa * sbb);
}

}  // namespace detail

/// Conditional randomization test on a batch. For the likelihood statistic
/// the logistic model is refit on every resampled design; a failed refit
/// scores -inf. For abs-correlation the statistic is |cor(Y, X - E_Q[X|Z])|.
/// Resample j draws from its own substream derived from one draw of rng.
inline CrtResult crt_pvalue(std::span<const Observation> data, const ConditionalModel& q, std::size_t m,
                            CrtStatistic statistic, Rng& rng, const FitConfig& fit_cfg = {}) {
    if (m < 1) throw Error(ErrorKind::InvalidArgument, "m must be >= 1");
    if (data.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    const std::size_t n = data.size();
    const std::size_t qd = data.front().z.size();
    for (const auto& o : data)
        if (o.x.size() != 1 || o.z.size() != qd) throw Error(ErrorKind::DimensionMismatch, "inconsistent batch dims");

    CrtResult out;
    out.resample_stats.resize(m);
    const std::uint64_t base = rng.next_u64();

    if (statistic == CrtStatistic::abs_correlation) {
        std::vector<double> y(n), centred(n), mu(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = data[i].y;
            mu[i] = q.mean(data[i].z);
            centred[i] = data[i].x[0] - mu[i];
        }
        out.observed_stat = detail::abs_correlation(y, centred);
        for (std::size_t j = 0; j < m; ++j) {
            Rng sub(mix64(base ^ mix64(j)));
            for (std::size_t i = 0; i < n; ++i) centred[i] = q.sample(data[i].z, sub) - mu[i];
            out.resample_stats[j] = detail::abs_correlation(y, centred);
        }
    } else {
        if (n < qd + 2) throw Error(ErrorKind::InvalidArgument, "likelihood statistic needs n >= q + 2");
        Eigen::MatrixXd X;
        Eigen::VectorXd y;
        build_design(data, true, X, y);
        auto stat = [&](const Eigen::VectorXd* warm) -> std::pair<double, Eigen::VectorXd> {
            try {
                const IrlsResult r = fit_logistic_design(X, y, fit_cfg, warm);
                return {r.loglik, r.coef};
            } catch (const Error&) {
                return {-std::numeric_limits<double>::infinity(), Eigen::VectorXd()};
            }
        };
        const auto [obs_stat, obs_coef] = stat(nullptr);
        out.observed_stat = obs_stat;
        for (std::size_t j = 0; j < m; ++j) {
            Rng sub(mix64(base ^ mix64(j)));
            for (std::size_t i = 0; i < n; ++i) X(static_cast<Eigen::Index>(i), 0) = q.sample(data[i].z, sub);
            out.resample_stats[j] = stat(obs_coef.size() ? &obs_coef : nullptr).first;
        }
    }
    out.p_value = crt_pvalue_from_stats(out.observed_stat, out.resample_stats);
    return out;
}

// ---------------------------------------------------------------------------
// Likelihood-ratio test

struct LrtResult {
    double statistic = 0.0;
    double p_value = 1.0;
    std::size_t dof = 0;
    double loglik_full = 0.0;
    double loglik_null = 0.0;
};

inline LrtResult lrt_from_logliks(double loglik_full, double loglik_null, std::size_t dof) {
    LrtResult r;
    r.loglik_full = loglik_full;
    r.loglik_null = loglik_null;
    r.dof = dof;
    r.statistic = std::max(0.0, 2.0 * (loglik_full - loglik_null));
    r.p_value = chi2_upper_tail(r.statistic, static_cast<double>(dof));
    return r;
}

/// Asymptotic LRT of beta = 0 with p = dim(x) degrees of freedom.
inline LrtResult lrt_pvalue(std::span<const Observation> data, const FitConfig& cfg = {}) {
    if (data.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    FitConfig strict = cfg;
    strict.ridge = 0.0;
    const LogisticFit full = fit_mle(data, strict, true);
    const LogisticFit null = fit_mle(data, strict, false);
    if (!full.diag.converged || !null.diag.converged || full.diag.fallback_used || null.diag.fallback_used)
        throw Error(ErrorKind::FitFailure, "likelihood-ratio fits did not converge");
    if (full.diag.separation_suspected || null.diag.separation_suspected)
        throw Error(ErrorKind::FitFailure, "likelihood-ratio fit on separated data");
    return lrt_from_logliks(full.loglik, null.loglik, data.front().x.size());
}

// ---------------------------------------------------------------------------
// Running MLE (universal inference)

struct RmleState {
    std::size_t n = 0;
    double log_numerator = 0.0;    ///< sum of log p_{theta_{i-1}}(y_i | x_i, z_i) after warmup
    double null_loglik = 0.0;      ///< sup over beta = 0 of the post-warmup log-likelihood
    double log_e_value = 0.0;
    double e_value() const { return std::exp(log_e_value); }
};

/// e_n = prod_{i>w} p_{theta_{i-1}}(Y_i | X_i, Z_i) / sup_{beta=0} prod_{i>w} p(Y_i | Z_i),
/// where theta_{i-1} is the full-model MLE on the first i-1 observations and w
/// the warmup count. Warmup steps contribute factor 1. A failed refit keeps
/// the previous predictive parameters. When the null fit does not converge
/// cleanly the denominator falls back to its upper bound 1.
class RmleProcess {
public:
    RmleProcess(std::size_t p, std::size_t q, FitConfig cfg, std::size_t refit_every = 1)
        : cfg_(cfg), p_(p), q_(q), refit_every_(std::max<std::size_t>(1, refit_every)), full_(p + q),
          null_(q) {
        cfg_.validate();
        theta_.beta.assign(p, 0.0);
        theta_.gamma.assign(q, 0.0);
    }

    /// Processes one observation and returns the updated state.
    const RmleState& step(const Observation& obs) {
        check_observation(obs, p_, q_);
        const std::size_t w = cfg_.warmup(q_);
        ++state_.n;
        if (state_.n > w) {
            // theta_ is the last successful fit (all zeros before the first one)
            const double p1 = predict_prob(theta_, obs.x, obs.z);
            state_.log_numerator += std::log(truncated_label_prob(p1, obs.y, cfg_.eps_trunc));
            null_.add({}, obs.z, obs.y);
            if ((state_.n - w) % refit_every_ == 0) {
                state_.null_loglik = null_sup_loglik();
                state_.log_e_value = state_.log_numerator - state_.null_loglik;
            }
        }
        full_.add(obs.x, obs.z, obs.y);
        if (full_.rows() >= w) refit_full();
        return state_;
    }

    const RmleState& state() const noexcept { return state_; }

private:
    double null_sup_loglik() {
        if (null_.labels_constant()) return 0.0;
        try {
            FitConfig c = cfg_;
            c.ridge = 0.0;
            c.ridge_fallback = false;
            const Eigen::VectorXd y = null_.labels();
            const IrlsResult r = fit_logistic_design(null_.matrix(), y, c, null_warm_.size() ? &null_warm_ : nullptr);
            if (!r.diag.converged) return 0.0;
            null_warm_ = r.coef;
            return std::min(0.0, r.loglik);
        } catch (const Error&) {
            return 0.0;
        }
    }

    void refit_full() {
        if (full_.labels_constant()) return;
        try {
            Eigen::VectorXd warm(static_cast<Eigen::Index>(p_ + q_));
            for (std::size_t k = 0; k < p_; ++k) warm(static_cast<Eigen::Index>(k)) = theta_.beta[k];
            for (std::size_t k = 0; k < q_; ++k) warm(static_cast<Eigen::Index>(p_ + k)) = theta_.gamma[k];
            const Eigen::VectorXd y = full_.labels();
            const IrlsResult r = fit_logistic_design(full_.matrix(), y, cfg_, &warm);
            if (!r.coef.allFinite()) return;
            for (std::size_t k = 0; k < p_; ++k) theta_.beta[k] = r.coef(static_cast<Eigen::Index>(k));
            for (std::size_t k = 0; k < q_; ++k) theta_.gamma[k] = r.coef(static_cast<Eigen::Index>(p_ + k));
        } catch (const Error&) {
        }
    }

    FitConfig cfg_;
    std::size_t p_, q_;
    std::size_t refit_every_;
    DesignBuffer full_;
    DesignBuffer null_;
    LogisticParams theta_;
    Eigen::VectorXd null_warm_;
    RmleState state_;
};

/// R-MLE e-process evaluated on a stream prefix.
inline RmleState rmle_evalue(std::span<const Observation> prefix, const FitConfig& cfg = {}) {
    if (prefix.empty()) return {};
    RmleProcess proc(prefix.front().x.size(), prefix.front().z.size(), cfg);
    for (const auto& o : prefix) proc.step(o);
    return proc.state();
}

}  // namespace mxci
