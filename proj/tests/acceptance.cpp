// Acceptance checks, one numbered criterion per --only value. Prints one
// [PASS]/[FAIL] line per check; exit status 1 if any check failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mxci/baselines.hpp"
#include "mxci/evalue.hpp"
#include "mxci/logistic.hpp"
#include "mxci/modelx.hpp"
#include "mxci/simharness.hpp"
#include "oracles.hpp"

using namespace mxci;
using namespace mxci::sim;

namespace {

int g_failures = 0;

void report(bool ok, const std::string& id, const std::string& detail) {
    std::printf("[%s] %s: %s\n", ok ? "PASS" : "FAIL", id.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!ok) ++g_failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double binom_se(double p, std::size_t n) { return std::sqrt(p * (1 - p) / static_cast<double>(n)); }

std::string dump(const std::vector<RunRecord>& r) {
    std::ostringstream os;
    write_records(os, r);
    return os.str();
}

Rate seq_rate(const std::vector<RunRecord>& recs, const std::string& method, double alpha) {
    std::size_t hits = 0, total = 0;
    for (const auto& r : recs)
        if (r.method == method) {
            ++total;
            if (r.stat >= -std::log(alpha)) ++hits;
        }
    return binomial_rate(hits, total);
}

Rate fixed_rate(const std::vector<RunRecord>& recs, const std::string& method, std::size_t n, double alpha) {
    std::size_t hits = 0, total = 0;
    for (const auto& r : recs)
        if (r.method == method && r.n == n) {
            ++total;
            if (r.stat <= alpha) ++hits;
        }
    return binomial_rate(hits, total);
}

ScenarioSpec table1_spec() {
    ScenarioSpec s;
    s.q = 4;
    s.beta = 0.0;
    s.eps_trunc = 0.05;
    s.m_draws = 500;
    s.n_max = 1000;
    s.replications = 400;
    s.master_seed = 20240601;
    return s;
}

struct Anchor {
    double alpha, rate, se;
};

// ---------------------------------------------------------------------------

void criterion1() {
    const auto spec = table1_spec();
    const std::vector<Method> m{Method::ecrt};
    const auto recs = run_replications(spec, m);
    for (const Anchor a : {Anchor{0.01, 0.0075, 0.0031}, Anchor{0.05, 0.0438, 0.0072}}) {
        const Rate r = seq_rate(recs, "ecrt", a.alpha);
        const double valid = a.alpha + 3 * binom_se(a.alpha, r.replications);
        report(r.rate <= valid, fmt("C1 ecrt validity alpha=%.2f", a.alpha),
               fmt("rate %.4f (SE %.4f, %zu reps) <= alpha + 3 SE = %.4f", r.rate, r.se, r.replications, valid));
        const double anchor = a.rate + 3 * std::sqrt(a.se * a.se + r.se * r.se);
        report(r.rate <= anchor, fmt("C1 ecrt anchor alpha=%.2f", a.alpha),
               fmt("rate %.4f <= anchor %.4f + 3 combined SE = %.4f", r.rate, a.rate, anchor));
    }
}

// ---------------------------------------------------------------------------

struct TableH {
    std::vector<double> vals;  // indexed by support position
    std::vector<double> support;
    double operator()(std::span<const double> x, double, std::span<const double>) const {
        for (std::size_t k = 0; k < support.size(); ++k)
            if (support[k] == x[0]) return vals[k];
        return 0.0;
    }
};

void criterion2() {
    struct Pair {
        const char* name;
        std::vector<double> support, probs, h;
    };
    const std::vector<Pair> pairs{
        {"binary", {0, 1}, {0.7, 0.3}, {1.0, 9.0}},
        {"ternary", {0, 1, 2}, {0.2, 0.5, 0.3}, {1.0, std::exp(1.5), std::exp(3.0)}},
        {"heavy", {-1, 0, 1, 2}, {0.1, 0.4, 0.4, 0.1}, {0.05, 1.0, 2.0, 20.0}},
    };
    const std::size_t draws = 100000;
    const std::vector<double> z{1.0};
    for (const auto& p : pairs) {
        const ConditionalModel q(DiscreteConditional(p.support, {{z, p.probs}}));
        const TableH h{p.h, p.support};
        for (std::size_t m : {1u, 5u, 50u}) {
            Rng rng(substream_seed(2, m, p.name));
            double s = 0, ss = 0, ns = 0, nss = 0;
            for (std::size_t i = 0; i < draws; ++i) {
                const Observation o{{q.sample(z, rng)}, 1.0, z};
                Rng fork(rng.next_u64());
                Rng fork2 = fork;
                const double e = e_factor_mc(h, o, q, m, fork).value;
                const double n = testing_hooks::naive_e_factor_mc(h, o, q, m, fork2);
                s += e;
                ss += e * e;
                ns += n;
                nss += n * n;
            }
            const double mean = s / draws, se = std::sqrt((ss / draws - mean * mean) / draws);
            report(std::abs(mean - 1.0) <= 4 * se, fmt("C2 mean-one %s M=%zu", p.name, m),
                   fmt("mean %.5f, |mean-1| = %.5f <= 4 SE = %.5f", mean, std::abs(mean - 1), 4 * se));
            const double nmean = ns / draws, nse = std::sqrt((nss / draws - nmean * nmean) / draws);
            report(nmean - 1.0 > 4 * nse, fmt("C2 naive inflated %s M=%zu", p.name, m),
                   fmt("naive mean %.5f, excess %.5f > 4 SE = %.5f", nmean, nmean - 1, 4 * nse));

            // slot-sum: each of the M+1 points in turn as the observed one
            double worst = 0;
            Rng srng(substream_seed(3, m, p.name));
            for (int trial = 0; trial < 200; ++trial) {
                std::vector<double> pts(m + 1);
                for (double& v : pts) v = q.sample(z, srng);
                double total = 0;
                for (std::size_t j = 0; j <= m; ++j) {
                    std::vector<double> rest;
                    for (std::size_t k = 0; k <= m; ++k)
                        if (k != j) rest.push_back(pts[k]);
                    total += e_factor_from_draws(h, Observation{{pts[j]}, 1.0, z}, rest).value;
                }
                worst = std::max(worst, std::abs(total - static_cast<double>(m + 1)));
            }
            report(worst <= 1e-9, fmt("C2 slot-sum %s M=%zu", p.name, m),
                   fmt("max |sum - (M+1)| over 200 sets = %.3g <= 1e-9", worst));
        }
    }
}

// ---------------------------------------------------------------------------
// Binary X, Y, Z with Y | X, Z logistic and X | Z Bernoulli.

struct DiscreteSetup {
    LogisticParams theta{{5.0}, {-2.5, 0.8}};
    double px[2] = {0.5, 0.4};  // P(X=1 | Z=z)
    double pz1 = 0.5;

    oracle::Joint joint() const {
        oracle::Joint p{};
        for (int z = 0; z < 2; ++z)
            for (int x = 0; x < 2; ++x) {
                const double pxz = (z ? pz1 : 1 - pz1) * (x ? px[z] : 1 - px[z]);
                const double f1 = oracle::sigmoid_ld(theta.beta[0] * x + theta.gamma[0] + theta.gamma[1] * z);
                p[x][1][z] = pxz * f1;
                p[x][0][z] = pxz * (1 - f1);
            }
        return p;
    }

    ConditionalModel q() const {
        return ConditionalModel(DiscreteConditional(
            {0.0, 1.0}, {{{1.0, 0.0}, {1 - px[0], px[0]}}, {{1.0, 1.0}, {1 - px[1], px[1]}}}));
    }

    std::vector<Observation> stream(std::size_t n, std::uint64_t seed) const {
        Rng rng(seed);
        std::vector<Observation> out(n);
        for (auto& o : out) {
            const int z = rng.uniform() < pz1;
            const int x = rng.uniform() < px[z];
            o.z = {1.0, double(z)};
            o.x = {double(x)};
            o.y = rng.uniform() < predict_prob(theta, o.x, o.z) ? 1.0 : 0.0;
        }
        return out;
    }
};

struct Growth {
    double mean, se;
};

Growth growth_of(const SequentialResult& r) {
    double s = 0, ss = 0;
    for (const auto& row : r.trace) {
        const double l = std::log(row.factor);
        s += l;
        ss += l * l;
    }
    const double n = static_cast<double>(r.trace.size());
    return {s / n, std::sqrt((ss / n - (s / n) * (s / n)) / n)};
}

void criterion3() {
    const DiscreteSetup d;
    const double I = oracle::conditional_mi(d.joint());
    const std::size_t n = 100000;
    const auto data = d.stream(n, 303);
    const auto q = d.q();
    // eps = 0 so that h is the true conditional
    FitConfig exact;
    exact.eps_trunc = 0.0;
    const auto res0 = run_ecrt(data, q, exact, TestConfig{}, d.theta);
    const double rate = res0.state.log_s / static_cast<double>(n);
    const double rel = std::abs(rate - I) / I;
    report(rel <= 0.03 && !res0.error, "C3 growth rate vs I(X;Y|Z)",
           fmt("log S_n / n = %.5f, I = %.5f (brute force), relative gap %.4f <= 0.03", rate, I, rel));
}

void criterion4() {
    const DiscreteSetup d;
    const auto p = d.joint();
    const double I = oracle::conditional_mi(p);
    const LogisticParams g{{3.5}, {-1.5, 0.3}};
    std::array<std::array<double, 2>, 2> g1{};
    for (int x = 0; x < 2; ++x)
        for (int z = 0; z < 2; ++z) g1[x][z] = oracle::sigmoid_ld(g.beta[0] * x + g.gamma[0] + g.gamma[1] * z);
    const double kl = oracle::expected_kl(p, g1);
    const auto data = d.stream(100000, 404);
    const auto q = d.q();
    FitConfig exact;
    exact.eps_trunc = 0.0;
    const auto res = run_ecrt(data, q, exact, TestConfig{}, g);
    const Growth gr = growth_of(res);
    const double bound = I - kl - 3 * gr.se;
    report(gr.mean >= bound && !res.error, "C4 growth with misspecified g",
           fmt("growth %.5f (SE %.5f) >= I - E[KL] - 3 SE = %.5f - %.5f - %.5f = %.5f", gr.mean, gr.se, I, kl,
               3 * gr.se, bound));
}

// ---------------------------------------------------------------------------

void criterion5() {
    const double p_true = 0.5, alpha = 0.05;
    const std::size_t steps = 200, reps = 2000;
    const double p_hat = bernoulli_for_product_tv(p_true, steps, 0.1);
    const double tv_oracle = oracle::binomial_product_tv(p_true, p_hat, steps);
    const auto r = discrete_robustness_experiment(p_true, p_hat, steps, reps, alpha, 505);
    report(std::abs(tv_oracle - 0.1) <= 1e-9 && std::abs(r.tv.value - tv_oracle) <= 1e-9 && r.tv.exact,
           "C5 constructed product TV",
           fmt("p_hat %.6f: library TV %.10f, binomial oracle TV %.10f (target 0.1)", p_hat, r.tv.value, tv_oracle));
    const double bound = alpha + 0.1 + 3 * binom_se(alpha + 0.1, reps);
    report(r.rate.rate <= bound, "C5 crossing rate under wrong Q",
           fmt("rate %.4f (%zu reps) <= alpha + TV + 3 SE = %.4f", r.rate.rate, reps, bound));
}

// ---------------------------------------------------------------------------

void criterion6() {
    ScenarioSpec base;
    base.q = 4;
    base.alpha = 0.05;
    base.n_max = 2000;
    base.replications = 200;
    base.stop_on_cross = true;
    base.crt_draws = 100;
    base.master_seed = 60606;
    const std::vector<Method> methods{Method::ecrt, Method::rmle, Method::crt, Method::crt_cor, Method::lrt};
    const std::vector<double> betas{0.4, 0.7, 1.0};
    const std::vector<double> etas{0.2};
    const auto grid = base.grid();
    std::map<std::string, std::vector<std::optional<std::size_t>>> nhat;
    std::optional<double> ecrt_nav;
    std::optional<std::size_t> crt_nhat;
    for (double beta : betas) {
        auto spec = base;
        spec.beta = beta;
        const auto t0 = std::chrono::steady_clock::now();
        const auto recs = run_replications(spec, methods);
        const auto ps = power_curve(recs, etas, grid, spec.alpha, beta);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("  beta=%.1f (%.0f s):", beta, secs);
        for (const auto& mp : ps.methods) {
            const auto& e = mp.etas[0];
            nhat[mp.method].push_back(e.n_hat);
            std::printf(" %s N_hat=%s", mp.method.c_str(), e.n_hat ? std::to_string(*e.n_hat).c_str() : "none");
            if (e.n_av) std::printf(" N_av=%.1f", *e.n_av);
            if (beta == 1.0 && mp.method == "ecrt") ecrt_nav = e.n_av;
            if (beta == 1.0 && mp.method == "crt") crt_nhat = e.n_hat;
        }
        std::printf("\n");
    }
    auto as_num = [](const std::optional<std::size_t>& v) { return v ? static_cast<double>(*v) : INFINITY; };
    for (const auto& [method, v] : nhat) {
        bool mono = true;
        std::string seq;
        for (std::size_t k = 0; k < v.size(); ++k) {
            if (k && as_num(v[k]) > as_num(v[k - 1])) mono = false;
            seq += (k ? " -> " : "") + (v[k] ? std::to_string(*v[k]) : std::string("not reached"));
        }
        report(mono, "C6a N_hat nonincreasing in beta: " + method, "N_hat(0.4, 0.7, 1.0) = " + seq);
    }
    const double step = 100.0;
    const bool ok = ecrt_nav && *ecrt_nav <= as_num(crt_nhat) + step;
    report(ok, "C6b E-CRT N_av vs CRT N_hat at beta=1",
           fmt("N_av %.1f <= N_hat(CRT) %.0f + one grid step", ecrt_nav.value_or(NAN), as_num(crt_nhat)));
}

// ---------------------------------------------------------------------------

void criterion7() {
    {
        ScenarioSpec s;
        s.n_max = 200;
        s.n_grid = {200};
        s.replications = 2000;
        s.crt_draws = 500;
        s.master_seed = 707;
        const std::vector<Method> m{Method::crt_cor};
        const auto recs = run_replications(s, m);
        for (double a : {0.01, 0.05}) {
            const Rate r = fixed_rate(recs, "crt-cor", 200, a);
            const double bound = a + 3 * binom_se(a, r.replications);
            report(r.rate <= bound, fmt("C7 CRT (abs-correlation) alpha=%.2f", a),
                   fmt("P(p <= alpha) = %.4f (%zu reps, n=200) <= %.4f", r.rate, r.replications, bound));
        }
    }
    {
        auto s = table1_spec();
        s.master_seed = 717;
        const std::vector<Method> m{Method::rmle};
        const auto recs = run_replications(s, m);
        for (double a : {0.01, 0.05}) {
            const Rate r = seq_rate(recs, "rmle", a);
            const double bound = a + 3 * binom_se(a, r.replications);
            const double anchor = 0.0038 + 3 * std::sqrt(0.0022 * 0.0022 + r.se * r.se);
            report(r.rate <= bound && r.rate <= anchor, fmt("C7 R-MLE alpha=%.2f", a),
                   fmt("rate %.4f (%zu reps, n_max=1000) <= alpha + 3 SE = %.4f and <= anchor bound %.4f", r.rate,
                       r.replications, bound, anchor));
        }
    }
    {
        ScenarioSpec s;
        s.n_max = 2000;
        s.n_grid = {2000};
        s.replications = 2000;
        s.master_seed = 727;
        const std::vector<Method> m{Method::lrt};
        const auto recs = run_replications(s, m);
        std::size_t failures = 0;
        for (const auto& r : recs) failures += !r.error.empty();
        for (double a : {0.01, 0.05}) {
            const Rate r = fixed_rate(recs, "lrt", 2000, a);
            const double tol = 3 * binom_se(a, r.replications);
            report(std::abs(r.rate - a) <= tol, fmt("C7 LRT alpha=%.2f", a),
                   fmt("rate %.4f (%zu reps, n=2000, %zu fit failures), |rate - alpha| <= %.4f", r.rate,
                       r.replications, failures, tol));
        }
    }
}

// ---------------------------------------------------------------------------

void criterion8() {
    const auto base = table1_spec();
    const std::vector<Method> m{Method::ecrt};
    const auto ref = run_replications(base, m);
    for (Distortion k : {Distortion::cubic, Distortion::quadratic, Distortion::tanh}) {
        auto s = base;
        s.misspec = Misspec{k, 0.0};
        const auto recs = run_replications(s, m);
        for (double a : {0.01, 0.05}) {
            const Rate r0 = seq_rate(ref, "ecrt", a), r1 = seq_rate(recs, "ecrt", a);
            const double tol = 3 * std::sqrt(r0.se * r0.se + r1.se * r1.se);
            report(std::abs(r1.rate - r0.rate) <= tol, fmt("C8 xi=0 %s alpha=%.2f", to_string(k).c_str(), a),
                   fmt("rate %.4f vs well-specified %.4f, |diff| <= 3 SE = %.4f", r1.rate, r0.rate, tol));
        }
    }
    auto s = base;
    s.q_source = QSource::fitted;
    s.unlabeled_n = 50;
    const auto recs = run_replications(s, m);
    for (double a : {0.01, 0.05}) {
        const Rate r = seq_rate(recs, "ecrt", a);
        const double bound = a + 3 * binom_se(a, r.replications);
        report(r.rate <= bound, fmt("C8 fitted Q from 50 unlabeled alpha=%.2f", a),
               fmt("rate %.4f (%zu reps) <= alpha + 3 SE = %.4f", r.rate, r.replications, bound));
    }
}

// ---------------------------------------------------------------------------

void criterion9() {
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(substream_seed(9, seed, "mle"));
        const std::size_t n = 60 + 20 * seed;
        std::vector<Observation> d(n);
        oracle::Mat x;
        oracle::Vec y;
        const LogisticParams th{{0.7}, {-0.3, 0.5, -0.4}};
        for (auto& o : d) {
            o.z = {1.0, rng.normal(), rng.normal()};
            o.x = {0.4 * o.z[1] + rng.normal()};
            o.y = rng.uniform() < predict_prob(th, o.x, o.z) ? 1.0 : 0.0;
            x.push_back({o.x[0], o.z[0], o.z[1], o.z[2]});
            y.push_back(o.y);
        }
        FitConfig cfg;
        cfg.tol = 1e-12;
        const auto fit = fit_mle(d, cfg);
        const auto ref = oracle::logistic_newton(x, y);
        worst = std::max(worst, std::abs(fit.params.beta[0] - ref[0]));
        for (std::size_t k = 0; k < 3; ++k) worst = std::max(worst, std::abs(fit.params.gamma[k] - ref[k + 1]));
    }
    report(worst <= 1e-6, "C9 logistic MLE vs dense Newton", fmt("max |coef diff| over 5 datasets = %.3g", worst));

    double gworst = 0;
    for (int q : {2, 3, 4, 6, 8})
        for (bool alt : {false, true}) {
            const auto g = gaussian_conditional_from_joint(toeplitz_joint(q, alt));
            const auto [w, v] = oracle::gaussian_conditional(oracle::toeplitz(static_cast<std::size_t>(q), alt));
            for (std::size_t k = 0; k < w.size(); ++k) gworst = std::max(gworst, std::abs(g.weights[k] - w[k]));
            gworst = std::max(gworst, std::abs(g.sigma2 - v));
        }
    report(gworst <= 1e-10, "C9 gaussian conditional vs linear solve", fmt("max abs diff = %.3g", gworst));

    const LogisticParams th{{1.0}, {0.0}};
    const std::vector<double> z{1.0};
    const double hi = predict_prob(th, std::vector<double>{700.0}, z);
    const double lo = predict_prob(th, std::vector<double>{-700.0}, z);
    const double lo_ref = oracle::sigmoid_ld(-700.0L);
    const bool ok = std::isfinite(hi) && std::isfinite(lo) && hi == 1.0 && lo > 0.0 &&
                    std::abs(lo / lo_ref - 1.0) < 1e-12;
    report(ok, "C9 predict_prob at |eta| = 700", fmt("p(700) = %.17g, p(-700) = %.6g (oracle %.6g)", hi, lo, lo_ref));
}

// ---------------------------------------------------------------------------

void criterion10() {
    auto s = table1_spec();
    s.replications = 30;
    s.n_max = 400;
    s.n_grid = {200, 400};
    s.crt_draws = 100;
    const std::vector<Method> all{Method::ecrt, Method::ecrt_oracle, Method::rmle, Method::crt, Method::crt_cor,
                                  Method::lrt};
    const auto dir = std::filesystem::temp_directory_path() / "mxci_acceptance_c10";
    std::filesystem::create_directories(dir);
    auto write_file = [&](const std::string& name, const std::string& text) {
        std::ofstream f(dir / name, std::ios::binary);
        f << text;
    };
    auto read_file = [&](const std::string& name) {
        std::ifstream f(dir / name, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    s.threads = 1;
    write_file("a.csv", dump(run_replications(s, all)));
    s.threads = 4;
    write_file("b.csv", dump(run_replications(s, all)));
    const auto a = read_file("a.csv"), b = read_file("b.csv");
    report(!a.empty() && a == b, "C10 record files byte-identical on rerun",
           fmt("%zu bytes, 1 vs 4 worker threads, all six methods", a.size()));

    const auto r1 = discrete_robustness_experiment(0.5, 0.45, 50, 200, 0.05, 9);
    const auto r2 = discrete_robustness_experiment(0.5, 0.45, 50, 200, 0.05, 9);
    report(r1.rate.rate == r2.rate.rate, "C10 discrete experiment rerun", fmt("rate %.4f twice", r1.rate.rate));
    std::filesystem::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
    const std::vector<std::function<void()>> criteria{criterion1, criterion2, criterion3, criterion4, criterion5,
                                                      criterion6, criterion7, criterion8, criterion9, criterion10};
    for (int c = 1; c <= 10; ++c) {
        if (only && c != only) continue;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            criteria[static_cast<std::size_t>(c - 1)]();
        } catch (const std::exception& e) {
            report(false, "C" + std::to_string(c), std::string("exception: ") + e.what());
        }
        std::printf("  criterion %d took %.1f s\n",
                    c, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return g_failures ? 1 : 0;
}
