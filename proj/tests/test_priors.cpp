#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "ebp/common.hpp"
#include "ebp/poisson.hpp"
#include "ebp/priors.hpp"

using namespace ebp;

TEST_CASE("neural prior pushforward stays in [0,1]") {
    auto rng = make_rng(42);
    for (int rep = 0; rep < 20; ++rep) {
        NeuralPriorSpec spec = sample_neural_prior(rng);
        auto draws = sample_theta_base_batch(spec, 2000, rng);
        for (double v : draws) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("neural prior with zero second layer collapses to 0.5") {
    auto rng = make_rng(1);
    NeuralPriorSpec spec = sample_neural_prior(rng);
    for (auto& c : spec.components) std::fill(c.w2.begin(), c.w2.end(), 0.0);
    auto draws = sample_theta_base_batch(spec, 100, rng);
    for (double v : draws) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("empty theta_base batch") {
    auto rng = make_rng(2);
    NeuralPriorSpec spec = sample_neural_prior(rng);
    CHECK(sample_theta_base_batch(spec, 0, rng).empty());
}

TEST_CASE("neural prior sampler matches its own large-sample law (K-S)") {
    auto rng = make_rng(7);
    NeuralPriorSpec spec = sample_neural_prior(rng);

    // oracle: brute-force 1e7 draws define the reference CDF
    auto oracle_rng = make_rng(1234);
    std::vector<double> oracle(10000000);
    for (double& v : oracle) v = spec.sample(oracle_rng);
    std::sort(oracle.begin(), oracle.end());

    auto test_rng = make_rng(777);
    std::vector<double> sample(100000);
    for (double& v : sample) v = spec.sample(test_rng);
    std::sort(sample.begin(), sample.end());

    // two-sample Kolmogorov distance on a grid of sample points
    double ks = 0.0;
    for (std::size_t k = 0; k < sample.size(); k += 97) {
        double x = sample[k];
        double f1 = static_cast<double>(k + 1) / sample.size();
        auto it = std::upper_bound(oracle.begin(), oracle.end(), x);
        double f2 = static_cast<double>(it - oracle.begin()) / oracle.size();
        ks = std::max(ks, std::abs(f1 - f2));
    }
    CHECK(ks < 0.01);
}

TEST_CASE("neural prior sample mean near oracle mean") {
    auto rng = make_rng(13);
    NeuralPriorSpec spec = sample_neural_prior(rng);
    auto oracle_rng = make_rng(99);
    std::vector<double> big = sample_theta_base_batch(spec, 1000000, oracle_rng);
    double mu = mean_of(big);
    double sd = std::sqrt(sample_variance(big));

    auto test_rng = make_rng(5);
    std::vector<double> small = sample_theta_base_batch(spec, 20000, test_rng);
    double err = std::abs(mean_of(small) - mu);
    CHECK(err <= 4.0 * sd / std::sqrt(20000.0) + 4.0 * sd / std::sqrt(1000000.0));
}

TEST_CASE("dirichlet process: first draw fresh, values in [0,1]") {
    DirichletProcessSpec spec;
    std::map<double, int> firsts;
    for (int rep = 0; rep < 100; ++rep) {
        auto rng = make_rng(rep);
        auto b = sample_dirichlet_batch(spec, 16, rng);
        REQUIRE(b.size() == 16);
        for (double v : b) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        firsts[b[0]]++;
    }
    CHECK(firsts.size() == 100);  // fresh Unif[0,1] draws never collide
}

TEST_CASE("dirichlet process: expected distinct count matches harmonic sum") {
    DirichletProcessSpec spec{50.0};
    const int n = 512;
    double expected = 0.0;
    for (int j = 1; j <= n; ++j) expected += 50.0 / (50.0 + j - 1.0);

    double total = 0.0;
    const int reps = 10000;
    for (int rep = 0; rep < reps; ++rep) {
        auto rng = make_rng(1000 + rep);
        auto b = sample_dirichlet_batch(spec, n, rng);
        std::sort(b.begin(), b.end());
        total += std::unique(b.begin(), b.end()) - b.begin();
    }
    CHECK(std::abs(total / reps - expected) < 2.0);
}

TEST_CASE("dirichlet process: alpha -> infinity is iid") {
    DirichletProcessSpec spec{1e9};
    auto rng = make_rng(3);
    auto b = sample_dirichlet_batch(spec, 100, rng);
    std::sort(b.begin(), b.end());
    CHECK(std::unique(b.begin(), b.end()) - b.begin() == 100);
}

TEST_CASE("dirichlet process batches are exchangeable (marginals agree)") {
    // position 1 and position n must have the same marginal law
    DirichletProcessSpec spec{50.0};
    const int reps = 10000, n = 64;
    std::vector<double> first, last;
    for (int rep = 0; rep < reps; ++rep) {
        auto rng = make_rng(555, rep);
        auto b = sample_dirichlet_batch(spec, n, rng);
        first.push_back(b.front());
        last.push_back(b.back());
    }
    std::sort(first.begin(), first.end());
    std::sort(last.begin(), last.end());
    double ks = 0.0;
    for (std::size_t k = 0; k < first.size(); ++k) {
        double x = first[k];
        auto it = std::upper_bound(last.begin(), last.end(), x);
        ks = std::max(ks, std::abs(static_cast<double>(k + 1) - (it - last.begin())) / reps);
    }
    CHECK(ks < 0.03);  // K-S acceptance region at ~1e-4 level for 1e4 samples
}

TEST_CASE("theta_max draws live in [0,500] and branch mix is 3/4 uniform") {
    ThetaMaxLaw law;
    auto rng = make_rng(21);
    long uniform_branch = 0;
    const long reps = 1000000;
    for (long i = 0; i < reps; ++i) {
        auto d = sample_theta_max_branch(law, rng);
        CHECK(d.value >= 0.0);
        CHECK(d.value <= 500.0);
        if (d.branch == 0) ++uniform_branch;
    }
    double frac = static_cast<double>(uniform_branch) / reps;
    CHECK(std::abs(frac - 0.75) < 0.002);
}

TEST_CASE("theta_max with cauchy branch disabled matches reduced-mixture oracle") {
    ThetaMaxLaw law;
    law.w_cauchy = 0.0;  // renormalizes to 6/7 uniform + 1/7 exponential

    // oracle: direct Monte Carlo of the reduced mixture with its own stream
    auto orng = make_rng(1001);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::exponential_distribution<double> ex(1.0 / 50.0);
    double oracle = 0.0;
    const long reps = 1000000;
    for (long i = 0; i < reps; ++i) {
        double v = unif(orng) < 6.0 / 7.0 ? unif(orng) * 200.0 : ex(orng);
        oracle += std::clamp(v, 0.0, 500.0);
    }
    oracle /= reps;

    auto rng = make_rng(31);
    double mean = 0.0;
    for (long i = 0; i < reps; ++i) mean += sample_theta_max(law, rng);
    mean /= reps;
    CHECK(std::abs(mean - oracle) < 1.0);
}

TEST_CASE("multinomial grid prior") {
    auto rng = make_rng(4);
    SUBCASE("grid_size 1 is a point mass") {
        DiscretePrior p = multinomial_grid_prior(1, 50.0, rng);
        REQUIRE(p.size() == 1);
        CHECK(p.atoms[0] == 50.0);
        CHECK(p.weights[0] == 1.0);
    }
    SUBCASE("weights normalize and atoms are evenly spaced") {
        DiscretePrior p = multinomial_grid_prior(11, 50.0, rng);
        p.validate();
        for (int j = 0; j <= 10; ++j) CHECK(p.atoms[j] == doctest::Approx(5.0 * j));
        double s = 0.0;
        for (double w : p.weights) s += w;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("discretized neural prior is a valid atomic prior") {
    auto rng = make_rng(17);
    NeuralPriorSpec spec = sample_neural_prior(rng);
    DiscretePrior p = discretize_neural_prior(spec, 50.0, rng, 20000, 500);
    p.validate();
    CHECK(p.atoms.back() <= 50.0);
    CHECK(p.atoms.front() >= 0.0);
}

TEST_CASE("prior JSON round-trip") {
    DiscretePrior p{{0.0, 2.5, 50.0}, {0.25, 0.5, 0.25}, 50.0, "test"};
    DiscretePrior q = prior_from_json(to_json(p));
    REQUIRE(q.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(q.atoms[j] == p.atoms[j]);
        CHECK(q.weights[j] == p.weights[j]);
    }
    CHECK(q.theta_max == 50.0);
}

TEST_CASE("worst-case prior: degenerate interval") {
    auto res = worst_case_prior(1e-9, 0.05, 1e-10, 1000);
    CHECK(res.mmse <= 1e-18);
    CHECK(res.prior.mean() <= 1e-9);
}

TEST_CASE("worst-case prior: equalization on support and determinism") {
    auto a = worst_case_prior(5.0, 0.05, 1e-6, 100000);
    auto b = worst_case_prior(5.0, 0.05, 1e-6, 100000);
    REQUIRE(a.prior.size() == b.prior.size());
    for (std::size_t j = 0; j < a.prior.size(); ++j) {
        CHECK(std::abs(a.prior.atoms[j] - b.prior.atoms[j]) < 1e-9);
        CHECK(std::abs(a.prior.weights[j] - b.prior.weights[j]) < 1e-9);
    }

    // Every support atom's pointwise MSE equals the mmse within the gap
    BayesTable bayes(a.prior);
    int xt = poisson_tail_cutoff(5.0, 1e-15);
    double m = mmse(a.prior);
    CHECK(std::abs(m - a.mmse) < 1e-6);
    for (std::size_t j = 0; j < a.prior.size(); ++j) {
        if (a.prior.weights[j] < 1e-6) continue;
        double mse_j = mse_at_point(bayes, a.prior.atoms[j], xt);
        CHECK(mse_j <= m + 1e-6);
        CHECK(mse_j >= m - 20 * 1e-6);  // support atoms sit at the max
    }
}

TEST_CASE("worst-case prior mmse is nondecreasing in theta_max") {
    double prev = -1.0;
    for (double tmax : {1.0, 5.0, 10.0, 50.0}) {
        auto res = worst_case_prior_cached(tmax, 0.05, 1e-4, 200000, ".ebp-test-cache");
        CHECK(res.mmse > prev);
        prev = res.mmse;
    }
}

TEST_CASE("worst-case prior solver reports residual gap on failure") {
    CHECK_THROWS_AS(worst_case_prior(50.0, 0.05, 1e-12, 3), SolverError);
}
