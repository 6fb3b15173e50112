#include "ebp/poisson.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <sstream>

#include "ebp/common.hpp"

namespace ebp {

namespace {
int g_max_threads = 0;
}

void set_max_threads(int k) { g_max_threads = k; }

int effective_threads(int requested) {
    int k = requested > 0 ? requested : g_max_threads;
    if (k <= 0) k = omp_get_max_threads();
    return std::max(1, k);
}

int poisson_tail_cutoff(double theta_max, double eps) {
    if (theta_max <= 0.0) return 1;
    double log_eps = std::log(eps);
    int x = static_cast<int>(std::ceil(theta_max)) + 1;
    // P[X >= x] <= (e theta)^x e^-theta / x^x for x > theta
    while (true) {
        double lb = x * (1.0 + std::log(theta_max) - std::log(static_cast<double>(x))) - theta_max;
        if (lb < log_eps) return x;
        ++x;
        if (x > 100000000) throw std::runtime_error("poisson_tail_cutoff: runaway");
    }
}

Batch sample_batch(const DiscretePrior& prior, std::size_t n, std::mt19937_64& rng) {
    std::discrete_distribution<std::size_t> pick(prior.weights.begin(), prior.weights.end());
    Batch b;
    b.prior_id = prior.id;
    b.thetas.resize(n);
    b.xs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double th = prior.atoms[pick(rng)];
        b.thetas[i] = th;
        if (th == 0.0) {
            b.xs[i] = 0;
        } else {
            std::poisson_distribution<int> poi(th);
            b.xs[i] = poi(rng);
        }
    }
    return b;
}

Batch sample_batch(const std::function<double(std::mt19937_64&)>& theta_sampler,
                   std::size_t n, std::mt19937_64& rng, const std::string& prior_id) {
    Batch b;
    b.prior_id = prior_id;
    b.thetas.resize(n);
    b.xs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double th = theta_sampler(rng);
        b.thetas[i] = th;
        if (th == 0.0) {
            b.xs[i] = 0;
        } else {
            std::poisson_distribution<int> poi(th);
            b.xs[i] = poi(rng);
        }
    }
    return b;
}

double mixture_logpmf(const DiscretePrior& prior, int x) {
    if (x < 0) throw std::invalid_argument("mixture_logpmf: x < 0");
    std::vector<double> terms(prior.size(), kNegInf);
    for (std::size_t j = 0; j < prior.size(); ++j) {
        if (prior.weights[j] <= 0.0) continue;
        terms[j] = std::log(prior.weights[j]) + poisson_logpmf(x, prior.atoms[j]);
    }
    return log_sum_exp(terms);
}

double bayes_estimate(const DiscretePrior& prior, int x) {
    // posterior-weight form: sum_j w'_j a_j with w'_j ∝ w_j Poi(x; a_j)
    double max_lp = kNegInf;
    std::vector<double> lp(prior.size(), kNegInf);
    for (std::size_t j = 0; j < prior.size(); ++j) {
        if (prior.weights[j] <= 0.0) continue;
        lp[j] = std::log(prior.weights[j]) + poisson_logpmf(x, prior.atoms[j]);
        max_lp = std::max(max_lp, lp[j]);
    }
    if (!std::isfinite(max_lp)) throw std::domain_error("bayes_estimate: x outside mixture support");
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j < prior.size(); ++j) {
        if (!std::isfinite(lp[j])) continue;
        double p = std::exp(lp[j] - max_lp);
        num += p * prior.atoms[j];
        den += p;
    }
    return num / den;
}

double bayes_estimate_ratio_form(const DiscretePrior& prior, int x) {
    double l0 = mixture_logpmf(prior, x);
    if (!std::isfinite(l0)) throw std::domain_error("bayes_estimate: x outside mixture support");
    double l1 = mixture_logpmf(prior, x + 1);
    return (x + 1.0) * std::exp(l1 - l0);
}

BayesTable::BayesTable(DiscretePrior prior) : prior_(std::move(prior)) {
    reserve(poisson_tail_cutoff(prior_.atoms.empty() ? 1.0 : prior_.atoms.back(), 1e-15) + 8);
}

void BayesTable::reserve(int x) {
    int old = static_cast<int>(table_.size());
    if (x < old) return;
    table_.resize(x + 1);
    for (int k = old; k <= x; ++k) table_[k] = bayes_estimate(prior_, k);
}

double BayesTable::operator()(int x) const {
    if (x < static_cast<int>(table_.size())) return table_[x];
    return bayes_estimate(prior_, x);
}

double mmse(const DiscretePrior& prior, int x_trunc) {
    int need = poisson_tail_cutoff(prior.atoms.back());
    if (x_trunc < need)
        throw std::invalid_argument("mmse: x_trunc " + std::to_string(x_trunc) +
                                    " below required minimum " + std::to_string(need));
    // E[theta^2] - sum_x e(x)^2/m(x), all in one pass over x
    double acc = 0.0;
    std::vector<double> lw(prior.size());
    for (std::size_t j = 0; j < prior.size(); ++j)
        lw[j] = prior.weights[j] > 0.0 ? std::log(prior.weights[j]) : kNegInf;
    for (int x = 0; x <= x_trunc; ++x) {
        double max_lp = kNegInf;
        std::vector<double> lp(prior.size(), kNegInf);
        for (std::size_t j = 0; j < prior.size(); ++j) {
            if (!std::isfinite(lw[j])) continue;
            lp[j] = lw[j] + poisson_logpmf(x, prior.atoms[j]);
            max_lp = std::max(max_lp, lp[j]);
        }
        if (!std::isfinite(max_lp)) continue;  // m(x) = 0
        double m = 0.0, e = 0.0;
        for (std::size_t j = 0; j < prior.size(); ++j) {
            if (!std::isfinite(lp[j])) continue;
            double p = std::exp(lp[j] - max_lp);
            m += p;
            e += p * prior.atoms[j];
        }
        // e(x)^2/m(x) with the shared scale exp(max_lp) reattached once
        acc += std::exp(max_lp) * e * e / m;
    }
    return prior.second_moment() - acc;
}

double mmse(const DiscretePrior& prior) {
    return mmse(prior, poisson_tail_cutoff(prior.atoms.back()));
}

double mse_at_point(const BayesTable& bayes, double theta, int x_trunc) {
    double acc = 0.0;
    if (theta == 0.0) return sqr(bayes(0));
    for (int x = 0; x <= x_trunc; ++x)
        acc += std::exp(poisson_logpmf(x, theta)) * sqr(bayes(x) - theta);
    return acc;
}

RegretReport regret_eval(const Estimator& estimator, const DiscretePrior& prior,
                         std::size_t n, std::size_t batches, const RegretEvalOptions& opt) {
    BayesTable bayes(prior);
    const double prior_mmse = mmse(prior);

    std::vector<double> batch_regret(batches, 0.0);
    std::vector<char> failed(batches, 0);
    std::atomic<long> est_ns{0};

    const int nthreads = effective_threads(opt.threads);
#pragma omp parallel for schedule(dynamic) num_threads(nthreads)
    for (long bi = 0; bi < static_cast<long>(batches); ++bi) {
        const auto b = static_cast<std::size_t>(bi);
        auto rng = make_rng(opt.seed, 0x6261746368ULL, b);
        Batch batch = sample_batch(prior, n, rng);
        std::vector<double> est;
        auto t0 = std::chrono::steady_clock::now();
        try {
            est = estimator(batch.xs);
        } catch (const std::exception&) {
            failed[b] = 1;
            continue;
        }
        auto t1 = std::chrono::steady_clock::now();
        est_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double ref = opt.rao_blackwell ? bayes(batch.xs[i]) : batch.thetas[i];
            acc += sqr(est[i] - ref);
        }
        batch_regret[b] = acc / static_cast<double>(n);
    }

    RegretReport r;
    r.n = n;
    r.mmse = prior_mmse;
    std::vector<double> ok;
    ok.reserve(batches);
    for (std::size_t b = 0; b < batches; ++b) {
        if (failed[b]) ++r.failed_batches;
        else ok.push_back(batch_regret[b]);
    }
    r.batches = ok.size();
    double m = mean_of(ok);
    r.regret = opt.rao_blackwell ? m : m - prior_mmse;
    r.mse = r.regret + r.mmse;
    if (ok.size() > 1)
        r.std_err = std::sqrt(sample_variance(ok) / static_cast<double>(ok.size()));
    r.wall_time = static_cast<double>(est_ns.load()) * 1e-9;
    return r;
}

std::string regret_csv_header() {
    return "estimator_id,prior_id,n,regret,std_err,wall_time";
}

std::string regret_csv_row(const std::string& estimator_id, const std::string& prior_id,
                           const RegretReport& r) {
    std::ostringstream ss;
    ss.precision(12);
    ss << estimator_id << ',' << prior_id << ',' << r.n << ',' << r.regret << ','
       << r.std_err << ',' << r.wall_time;
    return ss.str();
}

}  // namespace ebp
