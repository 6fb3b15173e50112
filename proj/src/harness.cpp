#include "ebp/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "ebp/common.hpp"
#include "ebp/priors.hpp"

namespace ebp::harness {

namespace {

DiscretePrior make_family_prior(const ExperimentSpec& spec, int prior_index) {
    auto rng = make_rng(spec.seed, 0x7072696f72ULL, static_cast<std::uint64_t>(prior_index));
    if (spec.prior_family == "worst_case") {
        return worst_case_prior_cached(spec.theta_max).prior;
    }
    if (spec.prior_family == "multinomial") {
        double span = spec.theta_max;
        if (spec.multinomial_random_scale) {
            std::uniform_real_distribution<double> u(0.0, 1.0);
            span = spec.theta_max * std::max(1e-6, u(rng));
        }
        DiscretePrior p = multinomial_grid_prior(spec.multinomial_grid, span, rng,
                                                 spec.multinomial_alpha);
        p.theta_max = spec.theta_max;
        p.id = "multinomial" + std::to_string(prior_index);
        return p;
    }
    if (spec.prior_family == "neural") {
        NeuralPriorSpec nps = sample_neural_prior(rng);
        DiscretePrior p = discretize_neural_prior(nps, spec.theta_max, rng, spec.neural_mc,
                                                  spec.neural_grid);
        p.id = "neural" + std::to_string(prior_index);
        return p;
    }
    throw std::invalid_argument("unknown prior family: " + spec.prior_family);
}

struct TrialLosses {
    std::vector<double> loss;  // per estimator, mean RB loss over positions
    bool ok = true;
};

}  // namespace

SyntheticOutputs run_synthetic(const ExperimentSpec& spec) {
    if (spec.estimator_ids.empty()) throw std::invalid_argument("run_synthetic: no estimators");
    const std::size_t ne = spec.estimator_ids.size();

    std::vector<Estimator> ests;
    ests.reserve(ne);
    for (const auto& id : spec.estimator_ids) ests.push_back(make_estimator(id, spec.ctx));

    const int npriors = spec.prior_family == "worst_case" ? 1 : spec.priors;

    // priors are shared across sequence lengths
    std::vector<DiscretePrior> priors(npriors);
    std::vector<std::unique_ptr<BayesTable>> tables(npriors);
    std::vector<double> prior_mmse(npriors, 0.0);
#pragma omp parallel for schedule(dynamic) num_threads(effective_threads(spec.threads))
    for (int p = 0; p < npriors; ++p) {
        priors[p] = make_family_prior(spec, p);
        tables[p] = std::make_unique<BayesTable>(priors[p]);
        prior_mmse[p] = mmse(priors[p]);
    }

    SyntheticOutputs out;
    for (int n : spec.lengths) {
        const std::size_t trials = static_cast<std::size_t>(npriors) * spec.batches;
        std::vector<TrialLosses> all(trials);
        std::vector<double> wall(ne, 0.0);

#pragma omp parallel num_threads(effective_threads(spec.threads))
        {
            std::vector<double> wall_local(ne, 0.0);
#pragma omp for schedule(dynamic)
            for (long t = 0; t < static_cast<long>(trials); ++t) {
                int p = static_cast<int>(t / spec.batches);
                int b = static_cast<int>(t % spec.batches);
                auto rng = make_rng(spec.seed, 0x6365ll + n, static_cast<std::uint64_t>(p),
                                    static_cast<std::uint64_t>(b));
                Batch batch = sample_batch(priors[p], static_cast<std::size_t>(n), rng);
                TrialLosses tl;
                tl.loss.assign(ne, 0.0);
                for (std::size_t e = 0; e < ne; ++e) {
                    auto t0 = std::chrono::steady_clock::now();
                    std::vector<double> est;
                    try {
                        est = ests[e](batch.xs);
                    } catch (const std::exception&) {
                        tl.ok = false;
                        break;
                    }
                    auto t1 = std::chrono::steady_clock::now();
                    wall_local[e] += std::chrono::duration<double>(t1 - t0).count();
                    double acc = 0.0;
                    for (int i = 0; i < n; ++i)
                        acc += sqr(est[i] - (*tables[p])(batch.xs[i]));
                    tl.loss[e] = acc / n;
                }
                all[t] = std::move(tl);
            }
#pragma omp critical
            for (std::size_t e = 0; e < ne; ++e) wall[e] += wall_local[e];
        }

        auto& losses = out.losses_by_n[n];
        std::vector<RankingRecord> records;
        std::size_t failed = 0;
        for (const auto& tl : all) {
            if (!tl.ok) { ++failed; continue; }
            for (std::size_t e = 0; e < ne; ++e)
                losses[spec.estimator_ids[e]].push_back(tl.loss[e]);
            std::vector<std::size_t> order(ne);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return tl.loss[a] < tl.loss[b]; });
            RankingRecord rec;
            for (std::size_t e : order) rec.order.push_back(spec.estimator_ids[e]);
            records.push_back(std::move(rec));
        }

        for (std::size_t e = 0; e < ne; ++e) {
            const auto& v = losses[spec.estimator_ids[e]];
            CellResult c;
            c.estimator_id = spec.estimator_ids[e];
            c.family = spec.prior_family;
            c.n = n;
            c.trials = v.size();
            c.failed = failed;
            c.regret = mean_of(v);
            if (v.size() > 1) c.std_err = std::sqrt(sample_variance(v) / v.size());
            c.wall_time = v.empty() ? 0.0 : wall[e] / static_cast<double>(v.size());
            out.cells.push_back(c);
        }

        if (ne >= 2 && !records.empty()) {
            std::string anchor = "mle";
            if (std::find(spec.estimator_ids.begin(), spec.estimator_ids.end(), anchor) ==
                spec.estimator_ids.end())
                anchor = spec.estimator_ids.front();
            out.pl_by_n[n] = plackett_luce_fit(records, anchor);
            for (std::size_t a = 0; a < ne; ++a)
                for (std::size_t b = 0; b < ne; ++b) {
                    if (a == b) continue;
                    const auto& va = losses[spec.estimator_ids[a]];
                    const auto& vb = losses[spec.estimator_ids[b]];
                    PairTest pt;
                    pt.a = spec.estimator_ids[a];
                    pt.b = spec.estimator_ids[b];
                    pt.n = n;
                    try {
                        pt.p_value = paired_t_test(va, vb);
                    } catch (const std::exception&) {
                        pt.p_value = std::numeric_limits<double>::quiet_NaN();
                    }
                    out.ttests.push_back(pt);
                }
        }
    }

    return out;
}

void write_synthetic_csvs(const SyntheticOutputs& out, const std::string& outdir) {
    std::filesystem::create_directories(outdir);
    {
        std::ofstream f(outdir + "/regret.csv");
        f << "estimator_id,prior_id,n,regret,std_err,wall_time\n";
        f.precision(12);
        for (const auto& c : out.cells)
            f << c.estimator_id << ',' << c.family << ',' << c.n << ',' << c.regret << ','
              << c.std_err << ',' << c.wall_time << "\n";
    }
    {
        std::ofstream f(outdir + "/pl.csv");
        f << "n,estimator_id,coefficient\n";
        f.precision(12);
        for (const auto& [n, fit] : out.pl_by_n)
            for (std::size_t i = 0; i < fit.ids.size(); ++i)
                f << n << ',' << fit.ids[i] << ',' << fit.coef[i] << "\n";
    }
    {
        std::ofstream f(outdir + "/ttest.csv");
        f << "n,estimator_a,estimator_b,p_value\n";
        f.precision(12);
        for (const auto& t : out.ttests)
            f << t.n << ',' << t.a << ',' << t.b << ',' << t.p_value << "\n";
    }
}

double paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("paired_t_test: need equal lengths >= 2");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    bool all_zero = true;
    for (std::size_t i = 0; i < n; ++i) {
        d[i] = a[i] - b[i];
        if (d[i] != 0.0) all_zero = false;
    }
    if (all_zero) throw std::invalid_argument("paired_t_test: degenerate input, all differences zero");
    double m = mean_of(d);
    double var = sample_variance(d);
    if (var == 0.0) return m < 0.0 ? 0.0 : 1.0;  // deterministic dominance
    double t = m / std::sqrt(var / static_cast<double>(n));
    boost::math::students_t dist(static_cast<double>(n - 1));
    return boost::math::cdf(dist, t);
}

PlFit plackett_luce_fit(const std::vector<RankingRecord>& records, const std::string& anchor_id,
                        double tol, int max_iter) {
    if (records.empty()) throw std::invalid_argument("plackett_luce_fit: no records");

    std::vector<std::string> ids = records.front().order;
    std::sort(ids.begin(), ids.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
    if (!index.count(anchor_id))
        throw std::invalid_argument("plackett_luce_fit: anchor not present");
    const std::size_t k = ids.size();

    std::vector<std::vector<std::size_t>> ranks;
    ranks.reserve(records.size());
    for (const auto& r : records) {
        if (r.order.size() != k)
            throw std::invalid_argument("plackett_luce_fit: incomplete record");
        std::vector<std::size_t> v(k);
        std::vector<char> seen(k, 0);
        for (std::size_t s = 0; s < k; ++s) {
            auto it = index.find(r.order[s]);
            if (it == index.end() || seen[it->second])
                throw std::invalid_argument("plackett_luce_fit: malformed record");
            seen[it->second] = 1;
            v[s] = it->second;
        }
        ranks.push_back(std::move(v));
    }

    // Hunter's MM updates; each ranking of k items contributes k-1 choice stages
    std::vector<double> wins(k, 0.0);
    for (const auto& r : ranks)
        for (std::size_t s = 0; s + 1 < k; ++s) wins[r[s]] += 1.0;

    std::vector<double> gamma(k, 1.0);
    PlFit fit;
    fit.ids = ids;
    double prev_ll = -std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it < max_iter; ++it) {
        std::vector<double> denom(k, 0.0);
        double ll = 0.0;
        std::vector<double> suffix(k + 1, 0.0);
        for (const auto& r : ranks) {
            suffix[k] = 0.0;
            for (std::size_t s = k; s-- > 0;) suffix[s] = suffix[s + 1] + gamma[r[s]];
            double cum = 0.0;
            for (std::size_t s = 0; s + 1 < k; ++s) {
                cum += 1.0 / suffix[s];
                denom[r[s]] += cum;
                ll += std::log(gamma[r[s]]) - std::log(suffix[s]);
            }
            // items never chosen (last stage only) still sit in earlier choice sets
            denom[r[k - 1]] += cum;
        }
        fit.loglik.push_back(ll);
        if (ll + 1e-9 * std::abs(ll) < prev_ll)
            throw std::runtime_error("plackett_luce_fit: log-likelihood decreased");
        prev_ll = ll;

        std::vector<double> next(k);
        for (std::size_t i = 0; i < k; ++i)
            next[i] = wins[i] > 0.0 ? wins[i] / denom[i] : 1e-12;
        // gauge: fix the geometric mean at 1 so convergence is well-defined
        double lg = 0.0;
        for (double v : next) lg += std::log(v);
        lg /= static_cast<double>(k);
        for (double& v : next) v = std::exp(std::log(v) - lg);
        double max_change = 0.0, lo = 0.0, hi = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            double c = std::log(next[i]);
            max_change = std::max(max_change, std::abs(c - std::log(gamma[i])));
            lo = std::min(lo, c);
            hi = std::max(hi, c);
        }
        gamma = std::move(next);
        if (max_change < tol) break;
        if (hi - lo > 60.0) {
            // an estimator dominating every record drives its strength to
            // infinity; stop before the small gammas underflow
            fit.capped = true;
            ++it;
            break;
        }
    }
    fit.iterations = it;

    double anchor = std::log(gamma[index[anchor_id]]);
    fit.coef.resize(k);
    for (std::size_t i = 0; i < k; ++i) {
        double c = std::log(gamma[i]) - anchor;
        if (c > 20.0) {
            c = 20.0;
            fit.capped = true;
        }
        fit.coef[i] = c;
    }
    return fit;
}

TimingOutputs timing_benchmark(const TimingSpec& spec) {
    TimingOutputs out;
    std::vector<Estimator> ests;
    for (const auto& id : spec.estimator_ids) ests.push_back(make_estimator(id, spec.ctx));

    // timing cells run sequentially; estimators see identical seed-derived data
    DiscretePrior prior;
    {
        auto rng = make_rng(spec.seed, 0x74696d65ULL);
        prior = multinomial_grid_prior(12, spec.theta_max, rng);
        prior.id = "timing";
    }

    for (std::size_t e = 0; e < spec.estimator_ids.size(); ++e) {
        std::vector<std::pair<double, double>> pts;  // (log n, log t)
        for (int n : spec.lengths) {
            TimingCell cell;
            cell.estimator_id = spec.estimator_ids[e];
            cell.n = n;
            std::vector<double> times;
            double spent = 0.0;
            for (int rep = 0; rep < spec.reps; ++rep) {
                auto rng = make_rng(spec.seed, 0x74626174ULL, static_cast<std::uint64_t>(n), rep);
                Batch b = sample_batch(prior, static_cast<std::size_t>(n), rng);
                auto t0 = std::chrono::steady_clock::now();
                volatile double sink = ests[e](b.xs)[0];
                (void)sink;
                auto t1 = std::chrono::steady_clock::now();
                double dt = std::chrono::duration<double>(t1 - t0).count();
                times.push_back(dt);
                spent += dt;
                if (spent > spec.timeout_s) {
                    cell.timed_out = true;
                    break;
                }
            }
            std::sort(times.begin(), times.end());
            cell.median_s = times[times.size() / 2];
            cell.reps = static_cast<int>(times.size());
            out.cells.push_back(cell);
            if (!cell.timed_out)
                pts.emplace_back(std::log(static_cast<double>(n)), std::log(cell.median_s));
            if (cell.timed_out) break;  // larger n will only be slower
        }
        if (pts.size() >= 2) {
            double mx = 0.0, my = 0.0;
            for (auto [x, y] : pts) { mx += x; my += y; }
            mx /= pts.size();
            my /= pts.size();
            double num = 0.0, den = 0.0;
            for (auto [x, y] : pts) {
                num += (x - mx) * (y - my);
                den += (x - mx) * (x - mx);
            }
            out.slopes[spec.estimator_ids[e]] = num / den;
        }
    }
    return out;
}

void write_timing_csvs(const TimingOutputs& out, const std::string& outdir) {
    std::filesystem::create_directories(outdir);
    {
        std::ofstream f(outdir + "/timing.csv");
        f << "estimator_id,n,median_time_s,reps,timed_out\n";
        f.precision(10);
        for (const auto& c : out.cells)
            f << c.estimator_id << ',' << c.n << ',' << c.median_s << ',' << c.reps << ','
              << (c.timed_out ? 1 : 0) << "\n";
    }
    {
        std::ofstream f(outdir + "/timing_slopes.csv");
        f << "estimator_id,loglog_slope\n";
        f.precision(10);
        for (const auto& [id, s] : out.slopes) f << id << ',' << s << "\n";
    }
}

}  // namespace ebp::harness
