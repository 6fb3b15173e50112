#include "ebp/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ebp/common.hpp"
#include "ebp/priors.hpp"
#include "ebp/tinyformer.hpp"

namespace ebp {

FrequencyTable FrequencyTable::from(const std::vector<int>& xs) {
    FrequencyTable t;
    t.n = xs.size();
    int mx = 0;
    for (int x : xs) {
        if (x < 0) throw std::invalid_argument("FrequencyTable: negative count");
        mx = std::max(mx, x);
    }
    t.counts.assign(xs.empty() ? 1 : mx + 2, 0);
    for (int x : xs) ++t.counts[x];
    return t;
}

std::vector<double> mle(const std::vector<int>& xs) {
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i];
    return out;
}

std::vector<double> robbins(const std::vector<int>& xs) {
    FrequencyTable t = FrequencyTable::from(xs);
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        int x = xs[i];
        out[i] = (x + 1.0) * static_cast<double>(t.at(x + 1)) / static_cast<double>(t.at(x));
    }
    return out;
}

std::vector<double> robbins_clipped(const std::vector<int>& xs, int d, double M) {
    if (d < 1 || M <= 0.0) throw std::invalid_argument("robbins_clipped: bad d or M");
    FrequencyTable t = FrequencyTable::from(xs);
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        int x = xs[i];
        if (x >= d) {
            out[i] = M;
        } else {
            double r = (x + 1.0) * static_cast<double>(t.at(x + 1)) / static_cast<double>(t.at(x));
            out[i] = std::min(r, M);
        }
    }
    return out;
}

std::vector<double> pava(const std::vector<double>& targets, const std::vector<double>& weights) {
    const std::size_t m = targets.size();
    std::vector<double> val, wt;
    std::vector<std::size_t> len;
    val.reserve(m); wt.reserve(m); len.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        val.push_back(targets[i]);
        wt.push_back(weights[i]);
        len.push_back(1);
        while (val.size() > 1 && val[val.size() - 2] >= val.back()) {
            double w = wt[wt.size() - 2] + wt.back();
            double v = (wt[wt.size() - 2] * val[val.size() - 2] + wt.back() * val.back()) / w;
            val.pop_back(); wt.pop_back();
            std::size_t l = len.back(); len.pop_back();
            val.back() = v; wt.back() = w; len.back() += l;
        }
    }
    std::vector<double> out;
    out.reserve(m);
    for (std::size_t b = 0; b < val.size(); ++b)
        for (std::size_t k = 0; k < len[b]; ++k) out.push_back(val[b]);
    return out;
}

std::vector<double> erm_monotone(const std::vector<int>& xs, double cap) {
    if (xs.empty()) throw std::invalid_argument("erm_monotone: empty input");
    FrequencyTable t = FrequencyTable::from(xs);
    const int ymax = t.max_x();

    // Surrogate risk sum_y [N(y) g(y)^2 - 2 (y+1) N(y+1) g(y)] over monotone g.
    // Zero-weight y contributes only a decreasing linear term, so g(y) rides up
    // to g(y+1); its coefficient folds into the successor's target.
    std::vector<int> active;
    std::vector<double> targets, weights;
    for (int y = 0; y <= ymax; ++y) {
        if (t.at(y) == 0) continue;
        double lin = (y + 1.0) * static_cast<double>(t.at(y + 1));
        if (y >= 1 && t.at(y - 1) == 0)
            lin += static_cast<double>(y) * static_cast<double>(t.at(y));
        active.push_back(y);
        weights.push_back(static_cast<double>(t.at(y)));
        targets.push_back(lin / static_cast<double>(t.at(y)));
    }
    std::vector<double> fit = pava(targets, weights);
    for (double& v : fit) v = std::clamp(v, 0.0, cap);

    std::vector<double> g(ymax + 1, 0.0);
    for (std::size_t k = 0; k < active.size(); ++k) g[active[k]] = fit[k];

    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = g[xs[i]];
    return out;
}

NpmleFit npmle_fit(const std::vector<int>& xs, const NpmleConfig& cfg) {
    if (xs.empty()) throw std::invalid_argument("npmle_fit: empty input");
    if (cfg.tol <= 0.0) throw std::invalid_argument("npmle_fit: tol <= 0");
    FrequencyTable t = FrequencyTable::from(xs);

    const std::size_t m = cfg.grid > 0
                              ? cfg.grid
                              : static_cast<std::size_t>(
                                    std::max(100.0, 4.0 * std::ceil(cfg.theta_max)));
    if (m < 2) throw std::invalid_argument("npmle_fit: grid size < 2");

    std::vector<double> atoms(m);
    for (std::size_t j = 0; j < m; ++j)
        atoms[j] = cfg.theta_max * static_cast<double>(j) / static_cast<double>(m - 1);

    // observed support and weights
    std::vector<int> ox;
    std::vector<double> freq;  // N(x)/n
    for (int x = 0; x <= t.max_x(); ++x) {
        if (t.at(x) > 0) {
            ox.push_back(x);
            freq.push_back(static_cast<double>(t.at(x)) / static_cast<double>(t.n));
        }
    }
    const std::size_t nx = ox.size();

    // pmf matrix, column-major over observed x
    std::vector<double> P(m * nx);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t xi = 0; xi < nx; ++xi)
            P[j * nx + xi] = std::exp(poisson_logpmf(ox[xi], atoms[j]));

    std::vector<double> w(m, 1.0 / static_cast<double>(m));
    std::vector<double> mx(nx), r(m);

    double ll_prev = -std::numeric_limits<double>::infinity();
    double gap = std::numeric_limits<double>::infinity();
    bool converged = false;
    int it = 0;
    for (; it < cfg.max_iter; ++it) {
        for (std::size_t xi = 0; xi < nx; ++xi) mx[xi] = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            if (w[j] == 0.0) continue;
            const double* row = &P[j * nx];
            for (std::size_t xi = 0; xi < nx; ++xi) mx[xi] += w[j] * row[xi];
        }
        double ll = 0.0;
        for (std::size_t xi = 0; xi < nx; ++xi)
            ll += freq[xi] * static_cast<double>(t.n) * std::log(mx[xi]);

        gap = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double* row = &P[j * nx];
            double acc = 0.0;
            for (std::size_t xi = 0; xi < nx; ++xi) acc += freq[xi] * row[xi] / mx[xi];
            r[j] = acc;
            gap = std::max(gap, acc - 1.0);
        }

        if (it > 0) {
            double rel = (ll - ll_prev) / std::max(1.0, std::abs(ll));
            if (rel < cfg.tol) {
                ll_prev = ll;
                converged = true;
                break;
            }
        }
        ll_prev = ll;
        for (std::size_t j = 0; j < m; ++j) w[j] *= r[j];
    }

    if (cfg.frank_wolfe_refine && gap > cfg.tol * 10.0) {
        // vertex blending on the best atom; keeps the EM fixed point as a base
        for (int round = 0; round < 200 && gap > cfg.tol * 10.0; ++round) {
            std::size_t jstar = 0;
            for (std::size_t j = 1; j < m; ++j)
                if (r[j] > r[jstar]) jstar = j;
            double lo = 0.0, hi = 1.0;
            auto ll_of = [&](double gm) {
                double acc = 0.0;
                const double* row = &P[jstar * nx];
                for (std::size_t xi = 0; xi < nx; ++xi)
                    acc += freq[xi] * std::log((1.0 - gm) * mx[xi] + gm * row[xi]);
                return acc;
            };
            for (int k = 0; k < 60; ++k) {
                double a = lo + (hi - lo) / 3.0, b = hi - (hi - lo) / 3.0;
                if (ll_of(a) < ll_of(b)) lo = a; else hi = b;
            }
            double gm = 0.5 * (lo + hi);
            for (std::size_t j = 0; j < m; ++j) w[j] *= (1.0 - gm);
            w[jstar] += gm;
            for (std::size_t xi = 0; xi < nx; ++xi) {
                mx[xi] = 0.0;
                for (std::size_t j = 0; j < m; ++j)
                    if (w[j] > 0.0) mx[xi] += w[j] * P[j * nx + xi];
            }
            gap = 0.0;
            for (std::size_t j = 0; j < m; ++j) {
                const double* row = &P[j * nx];
                double acc = 0.0;
                for (std::size_t xi = 0; xi < nx; ++xi) acc += freq[xi] * row[xi] / mx[xi];
                r[j] = acc;
                gap = std::max(gap, acc - 1.0);
            }
        }
    }

    NpmleFit fit;
    fit.prior.theta_max = cfg.theta_max;
    fit.prior.id = "npmle";
    fit.prior.atoms = atoms;
    fit.prior.weights = w;
    fit.prior = fit.prior.pruned(1e-12);
    fit.prior.id = "npmle";
    fit.converged = converged;
    fit.gap = gap;
    fit.iterations = it;
    fit.loglik = ll_prev;
    return fit;
}

std::vector<double> npmle_estimate(const std::vector<int>& xs, const NpmleConfig& cfg) {
    NpmleFit fit = npmle_fit(xs, cfg);
    BayesTable bayes(fit.prior);
    std::vector<double> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = bayes(xs[i]);
    return out;
}

Estimator gold_standard(double theta_max) {
    auto res = worst_case_prior_cached(theta_max);
    auto bayes = std::make_shared<BayesTable>(res.prior);
    return [bayes](const std::vector<int>& xs) {
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = (*bayes)(xs[i]);
        return out;
    };
}

Estimator make_estimator(const std::string& id, const EstimatorContext& ctx) {
    if (id == "mle") return [](const std::vector<int>& xs) { return mle(xs); };
    if (id == "robbins") return [](const std::vector<int>& xs) { return robbins(xs); };
    if (id == "robbins_clipped") {
        int d = ctx.clip_d;
        double M = ctx.clip_M;
        return [d, M](const std::vector<int>& xs) { return robbins_clipped(xs, d, M); };
    }
    if (id == "erm") {
        double cap = ctx.erm_cap.value_or(ctx.theta_max);
        return [cap](const std::vector<int>& xs) { return erm_monotone(xs, cap); };
    }
    if (id == "npmle") {
        NpmleConfig cfg = ctx.npmle;
        cfg.theta_max = ctx.npmle.theta_max > 0.0 ? ctx.npmle.theta_max : ctx.theta_max;
        return [cfg](const std::vector<int>& xs) { return npmle_estimate(xs, cfg); };
    }
    if (id == "gs") return gold_standard(ctx.theta_max);
    if (id == "tf" || id == "ltf") {
        auto it = ctx.checkpoints.find(id);
        if (it == ctx.checkpoints.end())
            throw std::invalid_argument("estimator '" + id + "' needs a checkpoint path");
        auto params = std::make_shared<tf::ModelParams>(tf::load_params(it->second));
        return [params](const std::vector<int>& xs) {
            std::vector<double> out = tf::forward(*params, xs).estimates;
            for (double& v : out) v = std::max(0.0, v);  // estimates contract: >= 0
            return out;
        };
    }
    throw std::invalid_argument("unknown estimator id: " + id);
}

std::vector<std::string> known_estimator_ids() {
    return {"mle", "robbins", "robbins_clipped", "erm", "npmle", "gs", "tf", "ltf"};
}

}  // namespace ebp
