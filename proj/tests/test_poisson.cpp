#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "doctest.h"
#include "ebp/common.hpp"
#include "ebp/poisson.hpp"

using namespace ebp;

namespace {
DiscretePrior half_zero_half_two() {
    return DiscretePrior{{0.0, 2.0}, {0.5, 0.5}, 2.0, "half02"};
}

// brute-force mmse oracle: direct posterior-variance sum, no log-space tricks
double mmse_oracle(const DiscretePrior& p, int xmax = 200) {
    double second = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) second += p.weights[j] * sqr(p.atoms[j]);
    double acc = 0.0;
    for (int x = 0; x <= xmax; ++x) {
        double m = 0.0, e = 0.0;
        for (std::size_t j = 0; j < p.size(); ++j) {
            double a = p.atoms[j];
            double pmf = a == 0.0 ? (x == 0 ? 1.0 : 0.0)
                                  : std::exp(-a + x * std::log(a) - std::lgamma(x + 1.0));
            m += p.weights[j] * pmf;
            e += p.weights[j] * pmf * a;
        }
        if (m > 0.0) acc += e * e / m;
    }
    return second - acc;
}

DiscretePrior random_prior(std::mt19937_64& rng, int atoms, double step) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DiscretePrior p;
    double acc = 0.0;
    for (int j = 0; j < atoms; ++j) {
        p.atoms.push_back(acc + 0.1 + step * u(rng));
        acc = p.atoms.back();
        p.weights.push_back(0.05 + u(rng));
    }
    p.theta_max = p.atoms.back();
    double s = 0.0;
    for (double w : p.weights) s += w;
    for (double& w : p.weights) w /= s;
    return p;
}
}  // namespace

TEST_CASE("sample_batch: point mass at zero gives all-zero observations") {
    auto rng = make_rng(1);
    Batch b = sample_batch(DiscretePrior::point_mass(0.0), 1000, rng);
    for (int x : b.xs) CHECK(x == 0);
    for (double t : b.thetas) CHECK(t == 0.0);
}

TEST_CASE("sample_batch: delta_5 sample mean within CLT band") {
    auto rng = make_rng(2);
    Batch b = sample_batch(DiscretePrior::point_mass(5.0), 1000000, rng);
    double mean = 0.0;
    for (int x : b.xs) mean += x;
    mean /= static_cast<double>(b.xs.size());
    CHECK(std::abs(mean - 5.0) < 0.01);
}

TEST_CASE("sample_batch: empirical pmf under delta_2 passes chi-square vs exact pmf") {
    auto rng = make_rng(3);
    const std::size_t n = 200000;
    Batch b = sample_batch(DiscretePrior::point_mass(2.0), n, rng);
    const int kmax = 10;  // bins 0..9 plus pooled tail
    std::vector<double> observed(kmax + 1, 0.0), expected(kmax + 1, 0.0);
    for (int x : b.xs) observed[std::min(x, kmax)] += 1.0;
    double tail = 1.0;
    for (int k = 0; k < kmax; ++k) {
        expected[k] = n * std::exp(poisson_logpmf(k, 2.0));
        tail -= std::exp(poisson_logpmf(k, 2.0));
    }
    expected[kmax] = n * tail;
    double stat = 0.0;
    for (int k = 0; k <= kmax; ++k) stat += sqr(observed[k] - expected[k]) / expected[k];
    boost::math::chi_squared dist(kmax);
    double p = 1.0 - boost::math::cdf(dist, stat);
    CHECK(p > 0.001);
}

TEST_CASE("sample_batch is reproducible") {
    auto r1 = make_rng(77), r2 = make_rng(77);
    DiscretePrior p{{0.5, 3.0, 7.0}, {0.2, 0.3, 0.5}, 7.0, "p"};
    Batch a = sample_batch(p, 512, r1);
    Batch b = sample_batch(p, 512, r2);
    CHECK(a.xs == b.xs);
    CHECK(a.thetas == b.thetas);
}

TEST_CASE("mixture_logpmf values") {
    CHECK(mixture_logpmf(DiscretePrior::point_mass(3.0), 4) ==
          doctest::Approx(poisson_logpmf(4, 3.0)).epsilon(1e-12));
    CHECK(mixture_logpmf(DiscretePrior::point_mass(0.0), 1) == kNegInf);
    CHECK(mixture_logpmf(half_zero_half_two(), 0) ==
          doctest::Approx(std::log(0.5 * (1.0 + std::exp(-2.0)))).epsilon(1e-12));
}

TEST_CASE("mixture pmf sums to one over the truncated range") {
    DiscretePrior p{{0.0, 1.5, 20.0, 49.0}, {0.1, 0.4, 0.3, 0.2}, 50.0, "p"};
    int xt = poisson_tail_cutoff(49.0);
    double total = 0.0;
    for (int x = 0; x <= xt; ++x) total += std::exp(mixture_logpmf(p, x));
    CHECK(total <= 1.0 + 1e-12);
    CHECK(total >= 1.0 - 1e-10);
}

TEST_CASE("bayes_estimate: point mass returns the atom for every x") {
    for (int x : {0, 1, 5, 40})
        CHECK(bayes_estimate(DiscretePrior::point_mass(3.5), x) ==
              doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("bayes_estimate: two-atom prior at x=0") {
    double expect = 2.0 / (std::exp(2.0) + 1.0);  // = 0.23840...
    CHECK(bayes_estimate(half_zero_half_two(), 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("bayes_estimate: error outside mixture support") {
    CHECK_THROWS_AS(bayes_estimate(DiscretePrior::point_mass(0.0), 1), std::domain_error);
}

TEST_CASE("bayes_estimate: ratio form agrees with posterior-weight form") {
    auto rng = make_rng(11);
    for (int rep = 0; rep < 50; ++rep) {
        DiscretePrior p = random_prior(rng, 5, 10.0);
        for (int x = 0; x <= 50; ++x) {
            double a = bayes_estimate(p, x);
            double b = bayes_estimate_ratio_form(p, x);
            CHECK(std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(a)));
        }
    }
}

TEST_CASE("bayes_estimate is nondecreasing in x for random atomic priors") {
    auto rng = make_rng(12);
    for (int rep = 0; rep < 30; ++rep) {
        DiscretePrior p = random_prior(rng, 5, 8.0);
        double prev = -1.0;
        for (int x = 0; x <= 50; ++x) {
            double v = bayes_estimate(p, x);
            CHECK(v >= prev - 1e-10);
            prev = v;
        }
    }
}

TEST_CASE("mmse: point mass has zero risk") {
    CHECK(mmse(DiscretePrior::point_mass(4.0)) == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("mmse matches the brute-force oracle") {
    DiscretePrior p = half_zero_half_two();
    CHECK(mmse(p) == doctest::Approx(mmse_oracle(p)).epsilon(1e-10));
    DiscretePrior q{{0.7, 5.0, 23.0}, {0.3, 0.45, 0.25}, 25.0, "q"};
    CHECK(mmse(q) == doctest::Approx(mmse_oracle(q)).epsilon(1e-10));
}

TEST_CASE("mmse never exceeds the MLE risk E[theta]") {
    auto rng = make_rng(13);
    for (int rep = 0; rep < 40; ++rep) {
        DiscretePrior p = random_prior(rng, 4, 12.0);
        CHECK(mmse(p) <= p.mean() + 1e-9);
    }
}

TEST_CASE("mmse rejects too-small truncation with the required minimum") {
    DiscretePrior p = half_zero_half_two();
    try {
        mmse(p, 3);
        FAIL("expected invalid_argument");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("required minimum") != std::string::npos);
    }
}

TEST_CASE("regret_eval: the Bayes oracle has exactly zero regret") {
    DiscretePrior p = half_zero_half_two();
    BayesTable bayes(p);
    Estimator oracle = [&](const std::vector<int>& xs) {
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = bayes(xs[i]);
        return out;
    };
    RegretReport r = regret_eval(oracle, p, 256, 50, {.seed = 5});
    CHECK(r.regret == 0.0);
    CHECK(r.mse == doctest::Approx(r.mmse).epsilon(1e-12));
    CHECK(r.batches == 50);
    CHECK(r.failed_batches == 0);
}

TEST_CASE("regret_eval: MLE regret matches E[theta] - mmse") {
    DiscretePrior p = half_zero_half_two();
    Estimator mle_est = [](const std::vector<int>& xs) {
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i];
        return out;
    };
    RegretReport r = regret_eval(mle_est, p, 512, 400, {.seed = 6});
    double analytic = p.mean() - mmse(p);
    CHECK(p.mean() == doctest::Approx(1.0));
    CHECK(std::abs(r.regret - analytic) <= 3.0 * r.std_err);
}

TEST_CASE("tower identity: RB regret agrees with plain MSE minus mmse") {
    DiscretePrior p{{0.5, 4.0, 11.0}, {0.25, 0.5, 0.25}, 11.0, "p"};
    Estimator shrink = [](const std::vector<int>& xs) {
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = 0.8 * xs[i] + 0.3;
        return out;
    };
    RegretReport a = regret_eval(shrink, p, 512, 600, {.seed = 9, .rao_blackwell = true});
    RegretReport b = regret_eval(shrink, p, 512, 600, {.seed = 9, .rao_blackwell = false});
    double se = std::sqrt(sqr(a.std_err) + sqr(b.std_err));
    CHECK(std::abs(a.regret - b.regret) <= 4.0 * se);
}

TEST_CASE("regret_eval counts estimator failures per batch") {
    DiscretePrior p = half_zero_half_two();
    int calls = 0;
    Estimator flaky = [&](const std::vector<int>& xs) -> std::vector<double> {
        if (++calls % 3 == 0) throw std::runtime_error("boom");
        return std::vector<double>(xs.size(), 1.0);
    };
    RegretReport r = regret_eval(flaky, p, 64, 30, {.seed = 10, .threads = 1});
    CHECK(r.failed_batches == 10);
    CHECK(r.batches == 20);
}

TEST_CASE("regret_eval is thread-count independent") {
    DiscretePrior p{{0.0, 3.0, 9.0}, {0.2, 0.5, 0.3}, 9.0, "p"};
    Estimator est = [](const std::vector<int>& xs) {
        std::vector<double> out(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) out[i] = 0.5 * xs[i];
        return out;
    };
    CHECK(regret_eval(est, p, 128, 64, {.seed = 3, .threads = 1}).regret ==
          regret_eval(est, p, 128, 64, {.seed = 3, .threads = 2}).regret);
}

TEST_CASE("regret CSV row shape") {
    RegretReport r;
    r.n = 128;
    r.regret = 1.5;
    r.std_err = 0.25;
    r.wall_time = 2.0;
    CHECK(regret_csv_header() == "estimator_id,prior_id,n,regret,std_err,wall_time");
    CHECK(regret_csv_row("mle", "wc", r) == "mle,wc,128,1.5,0.25,2");
}
