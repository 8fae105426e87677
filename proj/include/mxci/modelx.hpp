#pragma once

// Model-X conditional laws Q_z of X given Z = z (univariate X), plus the
// linear algebra and total-variation helpers used by robustness experiments.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mxci/error.hpp"
#include "mxci/rng.hpp"

namespace mxci {

inline constexpr double kMinVariance = 1e-8;
inline constexpr double kMinPivot = 1e-10;

/// X | Z ~ Normal(intercept + sum_k weights[k] * z[k+1], sigma2).
struct GaussianConditionalSpec {
    std::vector<double> weights;
    double intercept = 0.0;
    double sigma2 = 1.0;

    double mean(std::span<const double> z) const {
        if (z.size() != weights.size() + 1)
            throw Error(ErrorKind::DimensionMismatch,
                        "gaussian conditional expects z of length " +
                            std::to_string(weights.size() + 1));
        double m = intercept;
        for (std::size_t k = 0; k < weights.size(); ++k) m += weights[k] * z[k + 1];
        return m;
    }

    void validate() const {
        if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
            throw Error(ErrorKind::InvalidArgument, "sigma2 must be positive and finite");
        if (!std::isfinite(intercept)) throw Error(ErrorKind::InvalidArgument, "intercept not finite");
        for (double w : weights)
            if (!std::isfinite(w)) throw Error(ErrorKind::InvalidArgument, "weights not finite");
    }

    friend bool operator==(const GaussianConditionalSpec&, const GaussianConditionalSpec&) = default;
};

enum class Distortion { cubic, quadratic, tanh };

inline std::string to_string(Distortion d) {
    switch (d) {
    case Distortion::cubic: return "cubic";
    case Distortion::quadratic: return "quadratic";
    case Distortion::tanh: return "tanh";
    }
    return "?";
}

inline Distortion distortion_from_string(const std::string& s) {
    if (s == "cubic") return Distortion::cubic;
    if (s == "quadratic") return Distortion::quadratic;
    if (s == "tanh") return Distortion::tanh;
    throw Error(ErrorKind::ConfigError, "unknown misspecification kind '" + s + "'");
}

/// Distorted conditional mean. tanh uses its analytic limit at xi = 0.
inline double distorted_mean(double mu, Distortion kind, double xi) {
    switch (kind) {
    case Distortion::cubic: return mu - xi * mu * mu * mu;
    case Distortion::quadratic: return mu + xi * mu * mu;
    case Distortion::tanh: return xi == 0.0 ? mu : std::tanh(xi * mu) / xi;
    }
    return mu;
}

struct MisspecifiedGaussian {
    GaussianConditionalSpec base;
    Distortion kind = Distortion::cubic;
    double xi = 0.0;

    double mean(std::span<const double> z) const { return distorted_mean(base.mean(z), kind, xi); }

    friend bool operator==(const MisspecifiedGaussian&, const MisspecifiedGaussian&) = default;
};

/// X | z ~ Normal(z[mean_index], z[sd_index]^2): the conditional law is
/// supplied per row, e.g. from an externally estimated (mu_z, sigma_z).
struct PlugInGaussian {
    std::size_t mean_index = 1;
    std::size_t sd_index = 2;

    double mean(std::span<const double> z) const {
        if (z.size() <= std::max(mean_index, sd_index))
            throw Error(ErrorKind::DimensionMismatch, "plug-in gaussian: z too short");
        return z[mean_index];
    }
    double sd(std::span<const double> z) const {
        if (z.size() <= std::max(mean_index, sd_index))
            throw Error(ErrorKind::DimensionMismatch, "plug-in gaussian: z too short");
        const double s = z[sd_index];
        if (!(s * s >= kMinVariance))
            throw Error(ErrorKind::SamplerFailure, "plug-in gaussian: sigma below the variance floor");
        return s;
    }

    friend bool operator==(const PlugInGaussian&, const PlugInGaussian&) = default;
};

/// Finite-support conditional on a declared finite z-alphabet (exact key match).
class DiscreteConditional {
public:
    DiscreteConditional() = default;
    DiscreteConditional(std::vector<double> support,
                        std::map<std::vector<double>, std::vector<double>> table)
        : support_(std::move(support)), table_(std::move(table)) {
        if (support_.empty()) throw Error(ErrorKind::InvalidArgument, "empty support");
        for (const auto& [key, probs] : table_) {
            if (probs.size() != support_.size())
                throw Error(ErrorKind::SupportMismatch, "probability vector length != support size");
            double s = 0.0;
            for (double p : probs) {
                if (!(p >= 0.0)) throw Error(ErrorKind::InvalidArgument, "negative probability");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-12)
                throw Error(ErrorKind::InvalidArgument, "probabilities do not sum to 1");
        }
    }

    const std::vector<double>& support() const noexcept { return support_; }
    const std::map<std::vector<double>, std::vector<double>>& table() const noexcept { return table_; }

    const std::vector<double>& probs(std::span<const double> z) const {
        auto it = table_.find(std::vector<double>(z.begin(), z.end()));
        if (it == table_.end())
            throw Error(ErrorKind::UnsupportedModel, "z value outside the declared alphabet");
        return it->second;
    }

    friend bool operator==(const DiscreteConditional&, const DiscreteConditional&) = default;

private:
    std::vector<double> support_;
    std::map<std::vector<double>, std::vector<double>> table_;
};

/// The Model-X object Q_z. Immutable after construction.
class ConditionalModel {
public:
    using Variant = std::variant<GaussianConditionalSpec, DiscreteConditional, MisspecifiedGaussian,
                                 PlugInGaussian>;

    ConditionalModel(GaussianConditionalSpec g) : v_(std::move(g)) { std::get<0>(v_).validate(); }
    ConditionalModel(DiscreteConditional d) : v_(std::move(d)) {}
    ConditionalModel(MisspecifiedGaussian m) : v_(std::move(m)) { std::get<2>(v_).base.validate(); }
    ConditionalModel(PlugInGaussian p) : v_(p) {}

    const Variant& variant() const noexcept { return v_; }

    bool enumerable() const noexcept { return std::holds_alternative<DiscreteConditional>(v_); }

    double sample(std::span<const double> z, Rng& rng) const {
        return std::visit(
            [&](const auto& m) -> double {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, DiscreteConditional>) {
                    const auto& pr = m.probs(z);
                    const double u = rng.uniform();
                    double acc = 0.0;
                    for (std::size_t k = 0; k < pr.size(); ++k) {
                        acc += pr[k];
                        if (u < acc) return m.support()[k];
                    }
                    // u landed in the rounding gap above the cumulative sum
                    for (std::size_t k = pr.size(); k-- > 0;)
                        if (pr[k] > 0.0) return m.support()[k];
                    throw Error(ErrorKind::SamplerFailure, "all-zero probability vector");
                } else if constexpr (std::is_same_v<T, PlugInGaussian>) {
                    return rng.normal(m.mean(z), m.sd(z));
                } else if constexpr (std::is_same_v<T, GaussianConditionalSpec>) {
                    return rng.normal(m.mean(z), std::sqrt(m.sigma2));
                } else {
                    return rng.normal(m.mean(z), std::sqrt(m.base.sigma2));
                }
            },
            v_);
    }

    /// Density (continuous models) or pmf (discrete) of x given z.
    double density(double x, std::span<const double> z) const {
        return std::visit(
            [&](const auto& m) -> double {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, DiscreteConditional>) {
                    const auto& pr = m.probs(z);
                    for (std::size_t k = 0; k < pr.size(); ++k)
                        if (m.support()[k] == x) return pr[k];
                    return 0.0;
                } else {
                    double mu, var;
                    if constexpr (std::is_same_v<T, PlugInGaussian>) {
                        mu = m.mean(z);
                        var = m.sd(z) * m.sd(z);
                    } else if constexpr (std::is_same_v<T, GaussianConditionalSpec>) {
                        mu = m.mean(z);
                        var = m.sigma2;
                    } else {
                        mu = m.mean(z);
                        var = m.base.sigma2;
                    }
                    const double d = x - mu;
                    return std::exp(-0.5 * d * d / var) / std::sqrt(2.0 * std::numbers::pi * var);
                }
            },
            v_);
    }

    double mean(std::span<const double> z) const {
        return std::visit(
            [&](const auto& m) -> double {
                using T = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<T, DiscreteConditional>) {
                    const auto& pr = m.probs(z);
                    double s = 0.0;
                    for (std::size_t k = 0; k < pr.size(); ++k) s += pr[k] * m.support()[k];
                    return s;
                } else {
                    return m.mean(z);
                }
            },
            v_);
    }

    /// (value, probability) pairs for enumerable models, nullopt otherwise.
    std::optional<std::vector<std::pair<double, double>>> enumerate(std::span<const double> z) const {
        const auto* d = std::get_if<DiscreteConditional>(&v_);
        if (!d) return std::nullopt;
        const auto& pr = d->probs(z);
        std::vector<std::pair<double, double>> out;
        out.reserve(pr.size());
        for (std::size_t k = 0; k < pr.size(); ++k) out.emplace_back(d->support()[k], pr[k]);
        return out;
    }

    friend bool operator==(const ConditionalModel&, const ConditionalModel&) = default;

private:
    Variant v_;
};

// ---------------------------------------------------------------------------
// Gaussian joint -> conditional

/// Sigma_{ij} = 1/(1+|i-j|), or (-1)^{i-j}/(1+|i-j|) when alternating.
inline Eigen::MatrixXd toeplitz_joint(int q, bool alternating = false) {
    if (q < 2) throw Error(ErrorKind::InvalidArgument, "toeplitz_joint needs q >= 2");
    Eigen::MatrixXd s(q, q);
    for (int i = 0; i < q; ++i)
        for (int j = 0; j < q; ++j) {
            const int d = std::abs(i - j);
            const double sign = (alternating && d % 2 == 1) ? -1.0 : 1.0;
            s(i, j) = sign / (1.0 + d);
        }
    return s;
}

/// Conditional law of the first coordinate given the rest for a zero-mean
/// Gaussian with covariance sigma.
inline GaussianConditionalSpec gaussian_conditional_from_joint(const Eigen::MatrixXd& sigma) {
    const Eigen::Index q = sigma.rows();
    if (q < 2 || sigma.cols() != q)
        throw Error(ErrorKind::DimensionMismatch, "covariance must be square with q >= 2");
    if (!sigma.isApprox(sigma.transpose(), 1e-12))
        throw Error(ErrorKind::InvalidArgument, "covariance not symmetric");
    const Eigen::MatrixXd rest = sigma.bottomRightCorner(q - 1, q - 1);
    const Eigen::VectorXd cross = sigma.row(0).tail(q - 1).transpose();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(rest);
    if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > kMinPivot))
        throw Error(ErrorKind::SingularMatrix, "Sigma_{-1,-1} is not positive definite");
    const Eigen::VectorXd w = ldlt.solve(cross);
    GaussianConditionalSpec out;
    out.weights.assign(w.data(), w.data() + w.size());
    out.intercept = 0.0;
    out.sigma2 = sigma(0, 0) - cross.dot(w);
    if (!(out.sigma2 > kMinPivot))
        throw Error(ErrorKind::SingularMatrix, "joint covariance is not positive definite");
    return out;
}

inline ConditionalModel distort_mean(const GaussianConditionalSpec& spec, Distortion kind, double xi) {
    if (!(xi >= 0.0)) throw Error(ErrorKind::InvalidArgument, "xi must be nonnegative");
    return ConditionalModel(MisspecifiedGaussian{spec, kind, xi});
}

/// Least squares of x on (1, z[1..]) with the MLE residual variance
/// (divisor n), floored at kMinVariance.
inline GaussianConditionalSpec fit_gaussian_conditional(
    std::span<const std::pair<double, std::vector<double>>> unlabeled) {
    if (unlabeled.empty()) throw Error(ErrorKind::RankDeficient, "no data");
    const std::size_t q = unlabeled.front().second.size();
    if (q < 1) throw Error(ErrorKind::DimensionMismatch, "z must have at least the intercept slot");
    const auto n = static_cast<Eigen::Index>(unlabeled.size());
    const auto cols = static_cast<Eigen::Index>(q);
    if (n <= cols) throw Error(ErrorKind::RankDeficient, "need more observations than columns");
    Eigen::MatrixXd design(n, cols);
    Eigen::VectorXd target(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [x, z] = unlabeled[static_cast<std::size_t>(i)];
        if (z.size() != q) throw Error(ErrorKind::DimensionMismatch, "inconsistent z length");
        design(i, 0) = 1.0;
        for (Eigen::Index k = 1; k < cols; ++k) design(i, k) = z[static_cast<std::size_t>(k)];
        target(i) = x;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    qr.setThreshold(1e-10);
    if (qr.rank() < cols) throw Error(ErrorKind::RankDeficient, "design matrix is rank deficient");
    const Eigen::VectorXd coef = qr.solve(target);
    const Eigen::VectorXd resid = target - design * coef;
    GaussianConditionalSpec out;
    out.intercept = coef(0);
    out.weights.assign(coef.data() + 1, coef.data() + coef.size());
    out.sigma2 = std::max(resid.squaredNorm() / static_cast<double>(n), kMinVariance);
    return out;
}

/// Running least-squares fit of x on (1, z[1..]) from sufficient statistics.
/// Used where the conditional law is re-estimated after every observation.
class GaussianConditionalAccumulator {
public:
    explicit GaussianConditionalAccumulator(std::size_t q)
        : q_(q), xtx_(Eigen::MatrixXd::Zero(q, q)), xty_(Eigen::VectorXd::Zero(q)) {}

    void add(double x, std::span<const double> z) {
        if (z.size() != q_) throw Error(ErrorKind::DimensionMismatch, "inconsistent z length");
        Eigen::VectorXd row(q_);
        row(0) = 1.0;
        for (std::size_t k = 1; k < q_; ++k) row(static_cast<Eigen::Index>(k)) = z[k];
        xtx_.noalias() += row * row.transpose();
        xty_ += x * row;
        yy_ += x * x;
        ++n_;
    }

    std::size_t size() const noexcept { return n_; }

    GaussianConditionalSpec fit() const {
        if (n_ <= q_) throw Error(ErrorKind::RankDeficient, "need more observations than columns");
        Eigen::LDLT<Eigen::MatrixXd> ldlt(xtx_);
        const double scale = std::max(1.0, xtx_.diagonal().maxCoeff());
        if (ldlt.info() != Eigen::Success || !(ldlt.vectorD().minCoeff() > 1e-12 * scale))
            throw Error(ErrorKind::RankDeficient, "design matrix is rank deficient");
        const Eigen::VectorXd coef = ldlt.solve(xty_);
        const double rss = yy_ - coef.dot(xty_);
        GaussianConditionalSpec out;
        out.intercept = coef(0);
        out.weights.assign(coef.data() + 1, coef.data() + coef.size());
        out.sigma2 = std::max(rss / static_cast<double>(n_), kMinVariance);
        return out;
    }

private:
    std::size_t q_;
    Eigen::MatrixXd xtx_;
    Eigen::VectorXd xty_;
    double yy_ = 0.0;
    std::size_t n_ = 0;
};

// ---------------------------------------------------------------------------
// Total variation

inline double tv_distance_discrete(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw Error(ErrorKind::SupportMismatch, "pmfs have different support sizes");
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

inline double tv_distance_discrete(const DiscreteConditional& p, const DiscreteConditional& q,
                                   std::span<const double> z) {
    if (p.support() != q.support()) throw Error(ErrorKind::SupportMismatch, "supports differ");
    return tv_distance_discrete(p.probs(z), q.probs(z));
}

struct ProductTv {
    double value = 0.0;
    bool exact = true;  ///< false when value is the union bound sum_i d_TV(P_i, Q_i)
};

namespace detail {

inline void tv_enumerate(const std::vector<std::pair<std::vector<double>, std::vector<double>>>& f,
                         std::size_t i, double pp, double qq, double& acc) {
    if (i == f.size()) {
        acc += std::abs(pp - qq);
        return;
    }
    const auto& [p, q] = f[i];
    for (std::size_t k = 0; k < p.size(); ++k)
        if (p[k] > 0.0 || q[k] > 0.0) tv_enumerate(f, i + 1, pp * p[k], qq * q[k], acc);
}

inline double log_pow(double p, std::size_t c) {
    if (c == 0) return 0.0;
    return p > 0.0 ? static_cast<double>(c) * std::log(p) : -INFINITY;
}

inline void tv_compositions(const std::vector<double>& p, const std::vector<double>& q, std::size_t n,
                            std::size_t k, std::vector<std::size_t>& counts, std::size_t left,
                            double& acc) {
    if (k + 1 == p.size()) {
        counts[k] = left;
        double lc = std::lgamma(static_cast<double>(n) + 1.0);
        double lp = 0.0, lq = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            lc -= std::lgamma(static_cast<double>(counts[j]) + 1.0);
            lp += log_pow(p[j], counts[j]);
            lq += log_pow(q[j], counts[j]);
        }
        acc += std::abs(std::exp(lc + lp) - std::exp(lc + lq));
        return;
    }
    for (std::size_t c = 0; c <= left; ++c) {
        counts[k] = c;
        tv_compositions(p, q, n, k + 1, counts, left - c, acc);
    }
}

inline double binomial_coefficient(std::size_t n, std::size_t k) {
    return std::round(std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)));
}

}  // namespace detail

/// d_TV between the product measures prod_i P_i and prod_i Q_i.
///
/// Factor pairs with P_i == Q_i are dropped (they do not change the
/// distance). The remainder is enumerated outright when the outcome space
/// has at most `max_outcomes` points; if all remaining pairs are identical
/// the count vector is a sufficient statistic and the multinomial
/// enumeration is used instead. Otherwise the union bound is returned with
/// exact = false.
inline ProductTv tv_distance_product(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& factors,
    double max_outcomes = 1e6) {
    std::vector<std::pair<std::vector<double>, std::vector<double>>> diff;
    for (const auto& f : factors) {
        if (f.first.size() != f.second.size())
            throw Error(ErrorKind::SupportMismatch, "factor pmfs have different support sizes");
        if (f.first != f.second) diff.push_back(f);
    }
    if (diff.empty()) return {0.0, true};

    double outcomes = 1.0;
    for (const auto& f : diff) outcomes *= static_cast<double>(f.first.size());
    if (outcomes <= max_outcomes) {
        double acc = 0.0;
        detail::tv_enumerate(diff, 0, 1.0, 1.0, acc);
        return {0.5 * acc, true};
    }

    const bool iid = std::all_of(diff.begin(), diff.end(), [&](const auto& f) { return f == diff.front(); });
    const std::size_t k = diff.front().first.size();
    if (iid && detail::binomial_coefficient(diff.size() + k - 1, k - 1) <= max_outcomes) {
        std::vector<std::size_t> counts(k, 0);
        double acc = 0.0;
        detail::tv_compositions(diff.front().first, diff.front().second, diff.size(), 0, counts,
                                diff.size(), acc);
        return {std::min(1.0, 0.5 * acc), true};
    }

    double bound = 0.0;
    for (const auto& f : diff) bound += tv_distance_discrete(f.first, f.second);
    return {std::min(1.0, bound), false};
}

}  // namespace mxci
