#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "ebp/common.hpp"
#include "ebp/estimators.hpp"
#include "ebp/robbins_net.hpp"

using namespace ebp;
using namespace ebp::robnet;

namespace {
std::vector<int> random_xs(std::mt19937_64& rng, int n, int vmax) {
    std::uniform_int_distribution<int> val(0, vmax);
    std::vector<int> xs(n);
    for (int& x : xs) x = val(rng);
    return xs;
}
}  // namespace

TEST_CASE("built weights have the documented structure") {
    RobbinsNetSpec spec{2, 5.0, 100.0};
    RobbinsNetWeights w = build_robbins_net(spec);
    CHECK(w.wq.isApprox(Eigen::MatrixXd::Identity(3, 3)));
    CHECK(w.wv(0, 0) == 1.0);
    CHECK(w.wv(1, 1) == 1.0);
    CHECK(w.wv(2, 2) == 0.0);  // trailing zero diagonal entry
    for (int i = 0; i < 3; ++i) CHECK(w.wk(i, i) == 100.0);
    CHECK(w.wk(1, 0) == doctest::Approx(100.0 + std::log(1.0)));
    CHECK(w.wk(2, 1) == doctest::Approx(100.0 + std::log(2.0)));
    CHECK(w.wk(0, 1) == 0.0);
    CHECK(w.wk(0, 2) == 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::isfinite(w.wk(i, j)));
}

TEST_CASE("default logit constant is max(100, (d+1)^2)") {
    CHECK(RobbinsNetSpec{2, 5.0}.logit() == 100.0);
    CHECK(RobbinsNetSpec{30, 50.0}.logit() == 961.0);
    CHECK(RobbinsNetSpec{30, 50.0, 120.0}.logit() == 120.0);
}

TEST_CASE("softmax net reproduces clipped Robbins on the hand example") {
    RobbinsNetSpec spec{5, 10.0, 100.0};
    auto est = robbins_net_forward(spec, {0, 0, 1, 2});
    auto oracle = robbins_clipped({0, 0, 1, 2}, 5, 10.0);
    REQUIRE(est.size() == 4);
    CHECK(oracle == std::vector<double>{0.5, 0.5, 2.0, 0.0});
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(est[i] - oracle[i]) <= 1e-6);
}

TEST_CASE("all inputs at or above the cutoff decode to M") {
    RobbinsNetSpec spec{4, 7.5, 100.0};
    for (double v : robbins_net_forward(spec, {4, 5, 9, 4}))
        CHECK(v == doctest::Approx(7.5).epsilon(1e-9));
    for (double v : robbins_net_linear_forward(spec, {4, 5, 9, 4}))
        CHECK(v == 7.5);
}

TEST_CASE("softmax net sweep: tight at D=100, visibly off at D=5") {
    auto rng = make_rng(1);
    RobbinsNetSpec tight{30, 50.0, 100.0};
    RobbinsNetSpec loose{30, 50.0, 5.0};
    double dev_tight = 0.0, dev_loose = 0.0;
    std::uniform_int_distribution<int> nlen(1, 512);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<int> xs = random_xs(rng, nlen(rng), 30);
        auto oracle = robbins_clipped(xs, 30, 50.0);
        auto est = robbins_net_forward(tight, xs);
        auto est2 = robbins_net_forward(loose, xs);
        for (std::size_t i = 0; i < xs.size(); ++i) {
            dev_tight = std::max(dev_tight, std::abs(est[i] - oracle[i]));
            dev_loose = std::max(dev_loose, std::abs(est2[i] - oracle[i]));
        }
    }
    CHECK(dev_tight <= 1e-6);
    CHECK(dev_loose > 1e-2);  // leakage ~ n e^{-D} is visible at D=5
}

TEST_CASE("softmax leakage shrinks with D and obeys the envelope bound") {
    auto rng = make_rng(2);
    const int d = 12;
    const double M = 20.0;
    std::vector<double> devs;
    for (double D : {20.0, 50.0, 100.0}) {
        RobbinsNetSpec spec{d, M, D};
        double dev = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            std::vector<int> xs = random_xs(rng, 128, d);
            auto oracle = robbins_clipped(xs, d, M);
            auto est = robbins_net_forward(spec, xs);
            for (std::size_t i = 0; i < xs.size(); ++i)
                dev = std::max(dev, std::abs(est[i] - oracle[i]));
        }
        devs.push_back(dev);
        double envelope = 128.0 * std::exp(-D / 2.0) * (d + 1.0) * (d + 1.0);
        CHECK(dev <= envelope);
    }
    CHECK(devs[0] >= devs[1]);
    CHECK(devs[1] >= devs[2]);
}

TEST_CASE("linear variant is exact, including values at the cutoff boundary") {
    RobbinsNetSpec spec{5, 10.0, 100.0};
    auto est = robbins_net_linear_forward(spec, {0, 0, 1, 2});
    auto oracle = robbins_clipped({0, 0, 1, 2}, 5, 10.0);
    for (std::size_t i = 0; i < 4; ++i) CHECK(est[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

    // boundary: values d-1 and d interact through the key construction
    std::vector<int> edge = {4, 4, 5, 5, 5, 3, 6, 9};
    auto le = robbins_net_linear_forward(spec, edge);
    auto lo = robbins_clipped(edge, 5, 10.0);
    for (std::size_t i = 0; i < edge.size(); ++i)
        CHECK(std::abs(le[i] - lo[i]) <= 1e-12);
}

TEST_CASE("linear variant matches clipped Robbins to 1e-9 on random batches") {
    auto rng = make_rng(3);
    RobbinsNetSpec spec{30, 50.0, 100.0};
    std::uniform_int_distribution<int> nlen(1, 512);
    double dev = 0.0;
    for (int rep = 0; rep < 300; ++rep) {
        std::vector<int> xs = random_xs(rng, nlen(rng), 34);  // some overflow values
        auto oracle = robbins_clipped(xs, 30, 50.0);
        auto est = robbins_net_linear_forward(spec, xs);
        for (std::size_t i = 0; i < xs.size(); ++i)
            dev = std::max(dev, std::abs(est[i] - oracle[i]));
    }
    CHECK(dev <= 1e-9);
}

TEST_CASE("softmax and linear variants agree at D=100") {
    auto rng = make_rng(4);
    RobbinsNetSpec spec{20, 30.0, 100.0};
    double dev = 0.0;
    for (int rep = 0; rep < 100; ++rep) {
        std::vector<int> xs = random_xs(rng, 256, 20);
        auto a = robbins_net_forward(spec, xs);
        auto b = robbins_net_linear_forward(spec, xs);
        for (std::size_t i = 0; i < xs.size(); ++i)
            dev = std::max(dev, std::abs(a[i] - b[i]));
    }
    CHECK(dev <= 1e-5);
}

TEST_CASE("both variants are exactly permutation-equivariant") {
    auto rng = make_rng(5);
    RobbinsNetSpec spec{10, 15.0, 100.0};
    std::vector<int> xs = random_xs(rng, 80, 12);
    std::vector<std::size_t> perm(xs.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pxs(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) pxs[i] = xs[perm[i]];

    auto a = robbins_net_forward(spec, xs);
    auto pa = robbins_net_forward(spec, pxs);
    auto b = robbins_net_linear_forward(spec, xs);
    auto pb = robbins_net_linear_forward(spec, pxs);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        CHECK(pa[i] == a[perm[i]]);
        CHECK(pb[i] == b[perm[i]]);
    }
}

TEST_CASE("decoder mlp: sup error within eps and exact plateau") {
    DecoderMlp mlp = decoder_mlp_approx(5.0, 0.1);
    auto f = [](double x) { return std::min(1.0 / x - 1.0, 5.0); };
    double sup = 0.0;
    for (int k = 0; k <= 100000; ++k) {
        double x = 1.0 / 6.0 + (1.0 - 1.0 / 6.0) * k / 100000.0;
        sup = std::max(sup, std::abs(mlp.eval(x) - f(x)));
    }
    CHECK(sup <= 0.1);
    CHECK(std::abs(mlp.eval(1.0) - 0.0) <= 0.1);  // f(1) = 0
    for (double x : {0.0, 0.05, 1.0 / 6.0}) CHECK(mlp.eval(x) == doctest::Approx(5.0));
}

TEST_CASE("decoder mlp: unit count grows at most linearly in 1/eps") {
    int prev_units = 0;
    double prev_eps = 0.0;
    for (double eps : {0.1, 0.05, 0.025}) {
        DecoderMlp mlp = decoder_mlp_approx(5.0, eps);
        if (prev_units > 0) {
            double growth = static_cast<double>(mlp.hidden_units()) / prev_units;
            CHECK(growth <= prev_eps / eps + 0.5);
        }
        prev_units = mlp.hidden_units();
        prev_eps = eps;
    }
}

TEST_CASE("decoder mlp error is monotone nonincreasing in the unit budget") {
    auto f = [](double x) { return std::min(1.0 / x - 1.0, 8.0); };
    double prev = 1e300;
    for (double eps : {0.2, 0.1, 0.05, 0.025, 0.0125}) {
        DecoderMlp mlp = decoder_mlp_approx(8.0, eps);
        double sup = 0.0;
        for (int k = 0; k <= 20000; ++k) {
            double x = 1.0 / 9.0 + (1.0 - 1.0 / 9.0) * k / 20000.0;
            sup = std::max(sup, std::abs(mlp.eval(x) - f(x)));
        }
        CHECK(sup <= prev + 1e-12);
        prev = sup;
    }
}
