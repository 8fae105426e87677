#pragma once

// Working logistic model P(Y=1 | x, z) = sigmoid(beta'x + gamma'z), its
// maximum-likelihood fit by iteratively reweighted least squares, and the
// sequential E-CRT test function that refits after every observation.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mxci/error.hpp"
#include "mxci/evalue.hpp"
#include "mxci/modelx.hpp"
#include "mxci/observation.hpp"

namespace mxci {

struct LogisticParams {
    std::vector<double> beta;   ///< coefficients of x
    std::vector<double> gamma;  ///< coefficients of z (intercept slot included)

    double linear_predictor(std::span<const double> x, std::span<const double> z) const {
        if (x.size() != beta.size() || z.size() != gamma.size())
            throw Error(ErrorKind::DimensionMismatch, "logistic parameters do not match (x, z) dims");
        double eta = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) eta += beta[k] * x[k];
        for (std::size_t k = 0; k < z.size(); ++k) eta += gamma[k] * z[k];
        return eta;
    }

    bool finite() const { return all_finite(beta) && all_finite(gamma); }
};

/// sigmoid(eta) without overflow for any finite eta.
inline double sigmoid(double eta) {
    if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
    const double e = std::exp(eta);
    return e / (1.0 + e);
}

/// log(1 + e^eta), stable in both tails.
inline double log1p_exp(double eta) {
    return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

inline double predict_prob(const LogisticParams& theta, std::span<const double> x, std::span<const double> z) {
    return sigmoid(theta.linear_predictor(x, z));
}

struct FitConfig {
    double eps_trunc = 0.05;
    std::size_t min_fit_n = 0;  ///< stored observations needed before the first fit; 0 -> 5q
    double ridge = 0.0;
    std::size_t max_iter = 100;
    double tol = 1e-8;
    bool ridge_fallback = true;
    double fallback_ridge = 1e-6;

    std::size_t warmup(std::size_t q) const { return min_fit_n ? min_fit_n : 5 * q; }

    void validate() const {
        if (!(eps_trunc >= 0.0 && eps_trunc < 0.5))
            throw Error(ErrorKind::InvalidArgument, "eps_trunc must lie in [0, 0.5)");
        if (!(ridge >= 0.0)) throw Error(ErrorKind::InvalidArgument, "ridge must be >= 0");
        if (!(tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "tol must be > 0");
    }
};

struct FitDiagnostics {
    bool converged = false;
    std::size_t iterations = 0;
    double ridge_used = 0.0;
    bool fallback_used = false;
    bool separation_suspected = false;
    double gradient_norm = 0.0;
};

struct IrlsResult {
    Eigen::VectorXd coef;
    double loglik = 0.0;  ///< unpenalized log-likelihood at coef
    FitDiagnostics diag;
};

namespace detail {

template <class Design>
double logistic_loglik(const Eigen::MatrixBase<Design>& X, const Eigen::VectorXd& y, const Eigen::VectorXd& coef) {
    const Eigen::VectorXd eta = X * coef;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) ll += y(i) * eta(i) - log1p_exp(eta(i));
    return ll;
}

template <class Design>
IrlsResult irls_once(const Eigen::MatrixBase<Design>& X, const Eigen::VectorXd& y, double ridge,
                     const FitConfig& cfg, Eigen::VectorXd coef) {
    IrlsResult r;
    r.diag.ridge_used = ridge;
    auto objective = [&](const Eigen::VectorXd& c) {
        return logistic_loglik(X, y, c) - 0.5 * ridge * c.squaredNorm();
    };
    double obj = objective(coef);
    Eigen::VectorXd p(X.rows()), w(X.rows());
    for (std::size_t it = 0;; ++it) {
        const Eigen::VectorXd eta = X * coef;
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            p(i) = sigmoid(eta(i));
            w(i) = p(i) * (1.0 - p(i));
        }
        const Eigen::VectorXd grad = X.transpose() * (y - p) - ridge * coef;
        r.diag.gradient_norm = grad.lpNorm<Eigen::Infinity>();
        r.diag.iterations = it;
        if (r.diag.gradient_norm < cfg.tol) {
            r.diag.converged = true;
            break;
        }
        if (it >= cfg.max_iter) break;
        Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
        H.diagonal().array() += ridge;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
        const double scale = std::max(1e-300, H.diagonal().maxCoeff());
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-14 * scale)) break;
        const Eigen::VectorXd step = ldlt.solve(grad);
        if (!step.allFinite()) break;
        // Newton step with halving until the penalized likelihood does not drop
        double t = 1.0;
        bool moved = false;
        for (int h = 0; h < 40; ++h, t *= 0.5) {
            const Eigen::VectorXd cand = coef + t * step;
            const double o = objective(cand);
            if (o >= obj - 1e-12 * std::abs(obj)) {
                coef = cand;
                obj = o;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    r.coef = std::move(coef);
    r.loglik = logistic_loglik(X, y, r.coef);
    const Eigen::VectorXd eta = X * r.coef;
    r.diag.separation_suspected = eta.size() > 0 && eta.cwiseAbs().maxCoeff() > 30.0;
    return r;
}

template <class Design>
bool design_rank_deficient(const Eigen::MatrixBase<Design>& X) {
    const Eigen::MatrixXd G = X.transpose() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    const double scale = std::max(1e-300, G.diagonal().maxCoeff());
    return ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-10 * scale);
}

}  // namespace detail

/// IRLS maximum likelihood on an explicit design matrix. On non-convergence
/// (or a singular unpenalized design) the fit is retried once with the
/// fallback ridge when enabled; the diagnostics record which fit is returned.
template <class Design>
IrlsResult fit_logistic_design(const Eigen::MatrixBase<Design>& X, const Eigen::VectorXd& y, const FitConfig& cfg,
                               const Eigen::VectorXd* warm_start = nullptr) {
    cfg.validate();
    if (X.rows() < 1) throw Error(ErrorKind::InvalidArgument, "fit needs at least one observation");
    if (y.size() != X.rows()) throw Error(ErrorKind::DimensionMismatch, "labels and design differ in length");
    Eigen::VectorXd start = Eigen::VectorXd::Zero(X.cols());
    if (warm_start && warm_start->size() == X.cols() && warm_start->allFinite()) start = *warm_start;

    const bool singular = cfg.ridge == 0.0 && detail::design_rank_deficient(X);
    if (!singular) {
        IrlsResult r = detail::irls_once(X, y, cfg.ridge, cfg, start);
        if (r.diag.converged || !cfg.ridge_fallback) return r;
    } else if (!cfg.ridge_fallback) {
        throw Error(ErrorKind::RankDeficient, "logistic design matrix is rank deficient");
    }
    const double lam = std::max(cfg.ridge, cfg.fallback_ridge);
    IrlsResult r = detail::irls_once(X, y, lam, cfg, start);
    r.diag.fallback_used = true;
    if (!r.coef.allFinite()) throw Error(ErrorKind::RankDeficient, "ridge fallback failed");
    return r;
}

struct LogisticFit {
    LogisticParams params;
    double loglik = 0.0;
    FitDiagnostics diag;
};

/// Design rows are (x..., z...) when include_x, else (z...) for the null model.
inline void build_design(std::span<const Observation> data, bool include_x, Eigen::MatrixXd& X, Eigen::VectorXd& y) {
    const std::size_t p = include_x ? data.front().x.size() : 0;
    const std::size_t q = data.front().z.size();
    X.resize(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(p + q));
    y.resize(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& o = data[i];
        if ((include_x && o.x.size() != p) || o.z.size() != q)
            throw Error(ErrorKind::DimensionMismatch, "inconsistent observation dims");
        const auto r = static_cast<Eigen::Index>(i);
        for (std::size_t k = 0; k < p; ++k) X(r, static_cast<Eigen::Index>(k)) = o.x[k];
        for (std::size_t k = 0; k < q; ++k) X(r, static_cast<Eigen::Index>(p + k)) = o.z[k];
        y(r) = o.y;
    }
}

inline LogisticFit fit_mle(std::span<const Observation> data, const FitConfig& cfg, bool include_x = true,
                           const LogisticParams* warm = nullptr) {
    if (data.empty()) throw Error(ErrorKind::InvalidArgument, "fit_mle needs at least one observation");
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    build_design(data, include_x, X, y);
    Eigen::VectorXd start;
    const Eigen::VectorXd* sp = nullptr;
    if (warm) {
        std::vector<double> flat = include_x ? warm->beta : std::vector<double>{};
        flat.insert(flat.end(), warm->gamma.begin(), warm->gamma.end());
        start = Eigen::Map<const Eigen::VectorXd>(flat.data(), static_cast<Eigen::Index>(flat.size()));
        sp = &start;
    }
    const IrlsResult r = fit_logistic_design(X, y, cfg, sp);
    const std::size_t p = include_x ? data.front().x.size() : 0;
    LogisticFit out;
    out.params.beta.assign(r.coef.data(), r.coef.data() + p);
    out.params.gamma.assign(r.coef.data() + p, r.coef.data() + r.coef.size());
    out.loglik = r.loglik;
    out.diag = r.diag;
    return out;
}

/// Log-likelihood of binary labels under theta.
inline double logistic_loglik(const LogisticParams& theta, std::span<const Observation> data) {
    double ll = 0.0;
    for (const auto& o : data) {
        const double eta = theta.linear_predictor(o.x, o.z);
        ll += o.y * eta - log1p_exp(eta);
    }
    return ll;
}

/// P(Y = y) with P(Y = 1) clamped to [eps, 1 - eps]; still a proper pmf in y.
inline double truncated_label_prob(double p1, double y, double eps) {
    return std::clamp(y > 0.5 ? p1 : 1.0 - p1, eps, 1.0 - eps);
}

// ---------------------------------------------------------------------------
// E-CRT engine

/// Growing row-major design buffer for refits on an expanding sample.
class DesignBuffer {
public:
    using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    explicit DesignBuffer(std::size_t cols = 0) : cols_(cols) {}

    void add(std::span<const double> x, std::span<const double> z, double y) {
        if (x.size() + z.size() != cols_) throw Error(ErrorKind::DimensionMismatch, "row width mismatch");
        data_.insert(data_.end(), x.begin(), x.end());
        data_.insert(data_.end(), z.begin(), z.end());
        labels_.push_back(y);
    }

    std::size_t rows() const noexcept { return labels_.size(); }
    std::size_t cols() const noexcept { return cols_; }

    Eigen::Map<const RowMatrix> matrix() const {
        return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols_)};
    }
    Eigen::Map<const Eigen::VectorXd> labels() const {
        return {labels_.data(), static_cast<Eigen::Index>(rows())};
    }
    bool labels_constant() const {
        return std::all_of(labels_.begin(), labels_.end(), [&](double v) { return v == labels_.front(); });
    }

private:
    std::size_t cols_;
    std::vector<double> data_;
    std::vector<double> labels_;
};

enum class EngineStatus { warmup, fitted, fit_failed, oracle };

/// Test function h(x, y, z) = clamp(p_theta(y | x, z), eps, 1 - eps) with
/// theta refit by maximum likelihood on all previously seen observations.
/// Reports constant h (factor 1) during warmup and after a failed fit.
class EcrtEngine {
public:
    EcrtEngine(std::size_t p, std::size_t q, FitConfig cfg)
        : cfg_(cfg), p_(p), q_(q), buffer_(p + q), status_(EngineStatus::warmup) {
        cfg_.validate();
        theta_.beta.assign(p, 0.0);
        theta_.gamma.assign(q, 0.0);
    }

    /// Fixed true theta from the first observation on; no fitting, no warmup.
    static EcrtEngine oracle(LogisticParams truth, double eps_trunc) {
        FitConfig cfg;
        cfg.eps_trunc = eps_trunc;
        EcrtEngine e(truth.beta.size(), truth.gamma.size(), cfg);
        e.theta_ = std::move(truth);
        e.status_ = EngineStatus::oracle;
        return e;
    }

    double operator()(std::span<const double> x, double y, std::span<const double> z) const {
        if (constant_in_x()) return 1.0;
        return truncated_label_prob(predict_prob(theta_, x, z), y, cfg_.eps_trunc);
    }

    bool constant_in_x() const noexcept {
        if (status_ == EngineStatus::warmup || status_ == EngineStatus::fit_failed) return true;
        return std::all_of(theta_.beta.begin(), theta_.beta.end(), [](double b) { return b == 0.0; });
    }

    void update(const Observation& obs) {
        if (status_ == EngineStatus::oracle) return;
        buffer_.add(obs.x, obs.z, obs.y);
        if (buffer_.rows() < cfg_.warmup(q_)) return;
        refit();
    }

    EngineStatus status() const noexcept { return status_; }
    const LogisticParams& params() const noexcept { return theta_; }
    const FitDiagnostics& last_diagnostics() const noexcept { return diag_; }
    std::size_t fit_failures() const noexcept { return failures_; }
    const FitConfig& config() const noexcept { return cfg_; }

private:
    void refit() {
        if (buffer_.labels_constant()) {
            // no MLE exists and any finite surrogate carries no information about x
            mark_failed();
            return;
        }
        try {
            Eigen::VectorXd warm(static_cast<Eigen::Index>(p_ + q_));
            for (std::size_t k = 0; k < p_; ++k) warm(static_cast<Eigen::Index>(k)) = theta_.beta[k];
            for (std::size_t k = 0; k < q_; ++k) warm(static_cast<Eigen::Index>(p_ + k)) = theta_.gamma[k];
            const Eigen::VectorXd y = buffer_.labels();
            const IrlsResult r = fit_logistic_design(buffer_.matrix(), y, cfg_, &warm);
            if (!r.coef.allFinite()) {
                mark_failed();
                return;
            }
            for (std::size_t k = 0; k < p_; ++k) theta_.beta[k] = r.coef(static_cast<Eigen::Index>(k));
            for (std::size_t k = 0; k < q_; ++k) theta_.gamma[k] = r.coef(static_cast<Eigen::Index>(p_ + k));
            diag_ = r.diag;
            status_ = EngineStatus::fitted;
        } catch (const Error&) {
            mark_failed();
        }
    }

    void mark_failed() {
        status_ = EngineStatus::fit_failed;
        ++failures_;
    }

    FitConfig cfg_;
    std::size_t p_, q_;
    DesignBuffer buffer_;
    LogisticParams theta_;
    EngineStatus status_;
    FitDiagnostics diag_;
    std::size_t failures_ = 0;
};

/// One E-CRT factor followed by the engine update (factor first, then refit).
inline EFactor ecrt_factor(EcrtEngine& engine, const Observation& obs, const ConditionalModel& q, std::size_t m,
                           Rng& rng) {
    TestConfig tc;
    tc.m_draws = m;
    const EFactor f = compute_factor(engine, obs, q, tc, rng);
    engine.update(obs);
    return f;
}

template <class Stream, class Q>
SequentialResult run_ecrt(const Stream& stream, Q& q, const FitConfig& fit_cfg, const TestConfig& test_cfg,
                          const std::optional<LogisticParams>& oracle_theta = std::nullopt) {
    std::size_t p = 1, qd = 1;
    for (const Observation& o : stream) {
        p = o.x.size();
        qd = o.z.size();
        break;
    }
    EcrtEngine engine = oracle_theta ? EcrtEngine::oracle(*oracle_theta, fit_cfg.eps_trunc)
                                     : EcrtEngine(p, qd, fit_cfg);
    return run_sequential_test(stream, engine, q, test_cfg);
}

}  // namespace mxci
