#include "naive_forward.hpp"

#include <cmath>
#include <stdexcept>

namespace ebp::reftf {

namespace {

using Mat = std::vector<std::vector<double>>;

Mat zeros(std::size_t r, std::size_t c) { return Mat(r, std::vector<double>(c, 0.0)); }

// rows of a times (rows x cols) Eigen matrix w
Mat matmul(const Mat& a, const Eigen::MatrixXd& w) {
    Mat out = zeros(a.size(), w.cols());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (Eigen::Index k = 0; k < w.rows(); ++k)
            for (Eigen::Index j = 0; j < w.cols(); ++j)
                out[i][j] += a[i][k] * w(k, j);
    return out;
}

Mat layer_norm(const Mat& x, const Eigen::VectorXd& g, const Eigen::VectorXd& b) {
    const std::size_t d = x[0].size();
    Mat out = zeros(x.size(), d);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double mu = 0.0;
        for (double v : x[i]) mu += v;
        mu /= d;
        double var = 0.0;
        for (double v : x[i]) var += (v - mu) * (v - mu);
        var /= d;
        double rstd = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t j = 0; j < d; ++j)
            out[i][j] = (x[i][j] - mu) * rstd * g(j) + b(j);
    }
    return out;
}

double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

}  // namespace

std::vector<double> forward_naive(const tf::ModelParams& p, const std::vector<int>& xs) {
    const tf::ModelConfig& cfg = p.config;
    const std::size_t n = xs.size();
    const std::size_t d = cfg.dmodel;
    const std::size_t dh = cfg.head_dim();

    Mat h = zeros(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        double f0 = xs[i] / 64.0;
        double f1 = std::log1p(static_cast<double>(xs[i]));
        for (std::size_t j = 0; j < d; ++j)
            h[i][j] = f0 * p.embed(0, j) + f1 * p.embed(1, j) + p.embed_b(j);
    }

    for (int layer = 0; layer < cfg.layers; ++layer) {
        const tf::GroupParams& g = p.groups[layer < cfg.layers / 2 ? 0 : 1];

        Mat u = layer_norm(h, g.ln1_g, g.ln1_b);
        Mat q = matmul(u, g.wq), k = matmul(u, g.wk), v = matmul(u, g.wv);

        Mat ocat = zeros(n, d);
        for (int head = 0; head < cfg.heads; ++head) {
            const std::size_t c0 = head * dh;
            if (cfg.attention == tf::AttentionKind::Softmax) {
                const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                for (std::size_t i = 0; i < n; ++i) {
                    std::vector<double> s(n, 0.0);
                    double mx = -1e300;
                    for (std::size_t j = 0; j < n; ++j) {
                        for (std::size_t c = 0; c < dh; ++c)
                            s[j] += q[i][c0 + c] * k[j][c0 + c];
                        s[j] *= scale;
                        mx = std::max(mx, s[j]);
                    }
                    double z = 0.0;
                    for (std::size_t j = 0; j < n; ++j) {
                        s[j] = std::exp(s[j] - mx);
                        z += s[j];
                    }
                    for (std::size_t j = 0; j < n; ++j)
                        for (std::size_t c = 0; c < dh; ++c)
                            ocat[i][c0 + c] += s[j] / z * v[j][c0 + c];
                }
            } else {
                // Attention(Q,K,V) = (1/n) Q (K^T V), identity feature map
                std::vector<std::vector<double>> ktv(dh, std::vector<double>(dh, 0.0));
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t a = 0; a < dh; ++a)
                        for (std::size_t b = 0; b < dh; ++b)
                            ktv[a][b] += k[j][c0 + a] * v[j][c0 + b];
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t a = 0; a < dh; ++a)
                        for (std::size_t b = 0; b < dh; ++b)
                            ocat[i][c0 + b] += q[i][c0 + a] * ktv[a][b] / static_cast<double>(n);
            }
        }

        Mat att = matmul(ocat, g.wo);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) h[i][j] += att[i][j];

        Mat u2 = layer_norm(h, g.ln2_g, g.ln2_b);
        Mat pre = matmul(u2, g.w1);
        for (std::size_t i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < g.b1.size(); ++j) pre[i][j] += g.b1(j);
        for (auto& row : pre)
            for (double& v2 : row) v2 = gelu(v2);
        Mat ffo = matmul(pre, g.w2);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j) h[i][j] += ffo[i][j] + g.b2(j);
    }

    Mat z = layer_norm(h, p.lnf_g, p.lnf_b);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) out[i] += z[i][j] * p.dec_w(j);
        out[i] += p.dec_b;
    }
    return out;
}

}  // namespace ebp::reftf
