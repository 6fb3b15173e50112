#include "ebp/robbins_net.hpp"

#include <cmath>
#include <stdexcept>

namespace ebp::robnet {

void RobbinsNetSpec::validate() const {
    if (d < 1) throw std::invalid_argument("RobbinsNetSpec: d < 1");
    if (M <= 0.0) throw std::invalid_argument("RobbinsNetSpec: M <= 0");
    if (D < 0.0) throw std::invalid_argument("RobbinsNetSpec: D < 0");
}

RobbinsNetWeights build_robbins_net(const RobbinsNetSpec& spec) {
    spec.validate();
    const int m = spec.d + 1;
    const double D = spec.logit();
    RobbinsNetWeights w;
    w.wq = Eigen::MatrixXd::Identity(m, m);
    w.wv = Eigen::MatrixXd::Identity(m, m);
    w.wv(m - 1, m - 1) = 0.0;
    // K = Y W_K, scores S = Q K^T, so S_ij = (W_K^T)_{x_i, x_j}: the
    // log-count coupling sits on the subdiagonal of W_K.
    w.wk = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) w.wk(i, i) = D;
    for (int c = 0; c + 1 < m; ++c) w.wk(c + 1, c) = D + std::log(c + 1.0);
    return w;
}

std::vector<double> robbins_net_forward(const RobbinsNetSpec& spec,
                                        const std::vector<int>& xs) {
    spec.validate();
    if (xs.empty()) throw std::invalid_argument("robbins_net_forward: empty input");
    const int m = spec.d + 1;
    const auto n = static_cast<Eigen::Index>(xs.size());
    RobbinsNetWeights w = build_robbins_net(spec);

    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
        if (xs[i] <= spec.d) y(i, xs[i]) = 1.0;

    Eigen::MatrixXd q = y * w.wq;
    Eigen::MatrixXd k = y * w.wk;
    Eigen::MatrixXd s = q * k.transpose();
    // softmax rows; logits are raw couplings (no sqrt(d_k) division), so the
    // off-pattern leakage is n * e^{-D}
    for (Eigen::Index i = 0; i < n; ++i) {
        double mx = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - mx).exp();
        s.row(i) /= s.row(i).sum();
    }
    Eigen::MatrixXd z = s * (y * w.wv);

    std::vector<double> out(xs.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        double z1 = 0.0;
        for (int c = 0; c < m; ++c) z1 += std::max(0.0, y(i, c) + z(i, c) - 1.0);
        out[i] = z1 > 0.0 ? std::min(1.0 / z1 - 1.0, spec.M) : spec.M;
    }
    return out;
}

std::vector<double> robbins_net_linear_forward(const RobbinsNetSpec& spec,
                                               const std::vector<int>& xs) {
    spec.validate();
    if (xs.empty()) throw std::invalid_argument("robbins_net_linear_forward: empty input");
    const int d = spec.d;
    const int m = d + 2;  // one-hot 0..d plus overflow bucket
    const auto n = static_cast<Eigen::Index>(xs.size());

    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, m);
    for (Eigen::Index i = 0; i < n; ++i) y(i, std::min(xs[i], d + 1)) = 1.0;

    // W_Q: identity on 0..d-1; the value-d token queries the bucket so that it
    // decodes to M rather than a Robbins ratio.
    Eigen::MatrixXd wq = Eigen::MatrixXd::Zero(m, m);
    for (int c = 0; c < d; ++c) wq(c, c) = 1.0;
    wq(d, d + 1) = 1.0;
    wq(d + 1, d + 1) = 1.0;

    // K_j = e_{x} + x e_{x-1} for x <= d; value-d keys also raise the bucket
    // coordinate so bucket queries never normalize by zero.
    Eigen::MatrixXd wk = Eigen::MatrixXd::Zero(m, m);
    for (int c = 0; c <= d; ++c) {
        wk(c, c) = 1.0;
        if (c >= 1) wk(c, c - 1) = c;
    }
    wk(d, d + 1) = 1.0;
    wk(d + 1, d + 1) = 1.0;

    Eigen::MatrixXd wv = Eigen::MatrixXd::Zero(m, m);
    for (int c = 0; c < d; ++c) wv(c, c) = 1.0;

    Eigen::MatrixXd q = y * wq;
    Eigen::MatrixXd k = y * wk;
    Eigen::MatrixXd v = y * wv;

    // phi = identity with post-normalization: Z_i = (Q_i K^T V) / (Q_i sum K)
    Eigen::MatrixXd ktv = k.transpose() * v;     // m x m
    Eigen::VectorXd ksum = k.colwise().sum();    // m
    Eigen::MatrixXd num = q * ktv;               // n x m
    Eigen::VectorXd den = q * ksum;              // n

    std::vector<double> out(xs.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        double z1 = 0.0;
        for (int c = 0; c < m; ++c) {
            double zc = den(i) > 0.0 ? num(i, c) / den(i) : 0.0;
            z1 += std::max(0.0, y(i, c) + zc - 1.0);
        }
        out[i] = z1 > 0.0 ? std::min(1.0 / z1 - 1.0, spec.M) : spec.M;
    }
    return out;
}

double DecoderMlp::eval(double x) const {
    double acc = base;
    for (std::size_t k = 0; k < knots.size(); ++k)
        acc += coeffs[k] * std::max(0.0, x - knots[k]);
    return acc;
}

DecoderMlp decoder_mlp_approx(double M, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("decoder_mlp_approx: eps <= 0");
    if (M <= 0.0) throw std::invalid_argument("decoder_mlp_approx: M <= 0");
    // knots uniform in t = 1/x over [1, 1+M]: the chord error of the convex
    // branch 1/x - 1 on a segment ending at t1 is <= dt^2 (t1+dt)/(4 t1^2),
    // so dt = sqrt(eps) keeps the sup error under eps
    const double dt = std::sqrt(eps);
    const int segments = std::max(1, static_cast<int>(std::ceil(M / dt)));

    std::vector<double> xs;  // knot locations, descending in t => ascending in x
    xs.push_back(1.0 / (1.0 + M));
    for (int k = segments - 1; k >= 0; --k)
        xs.push_back(1.0 / (1.0 + M * k / static_cast<double>(segments)));

    DecoderMlp mlp;
    mlp.base = M;  // value on [0, 1/(1+M)]
    double prev_slope = 0.0;
    for (std::size_t k = 0; k + 1 < xs.size(); ++k) {
        double x0 = xs[k], x1 = xs[k + 1];
        double f0 = std::min(1.0 / x0 - 1.0, M);
        double f1 = std::min(1.0 / x1 - 1.0, M);
        double slope = (f1 - f0) / (x1 - x0);
        mlp.knots.push_back(x0);
        mlp.coeffs.push_back(slope - prev_slope);
        prev_slope = slope;
    }
    return mlp;
}

}  // namespace ebp::robnet
