#pragma once

#include <Eigen/Dense>
#include <vector>

namespace ebp::robnet {

/// Fixed-weight attention network reproducing the clipped Robbins estimator.
struct RobbinsNetSpec {
    int d;            // support cutoff
    double M;         // clip value
    double D = 0.0;   // large logit constant; 0 => max(100, (d+1)^2)

    double logit() const { return D > 0.0 ? D : std::max(100.0, double(d + 1) * (d + 1)); }
    void validate() const;
};

/// One-hot coupling weights of the softmax construction (embed dim d+1):
/// W_Q = I, W_V = diag(1,..,1,0), and W_K tridiagonal carrying the logit
/// constant D on the diagonal and D + log(i) next to it so that a token with
/// value x attends to tokens with values {x, x+1} with weights {1, x+1}.
struct RobbinsNetWeights {
    Eigen::MatrixXd wq, wk, wv;  // (d+1) x (d+1)
};

RobbinsNetWeights build_robbins_net(const RobbinsNetSpec& spec);

std::vector<double> robbins_net_forward(const RobbinsNetSpec& spec,
                                        const std::vector<int>& xs);

/// Exact linear-attention variant (embed dim d+2, overflow bucket, identity
/// feature map with post-normalization).
std::vector<double> robbins_net_linear_forward(const RobbinsNetSpec& spec,
                                               const std::vector<int>& xs);

/// Piecewise-linear (one hidden ReLU layer) approximation of the decoder
/// f(x) = min(1/x - 1, M) on [0,1]; sup error <= eps on [1/(1+M), 1] and
/// exactly M left of the kink.
struct DecoderMlp {
    double base = 0.0;            // value at x = 0
    std::vector<double> knots;    // ReLU thresholds, ascending
    std::vector<double> coeffs;   // slope increments
    int hidden_units() const { return static_cast<int>(knots.size()); }
    double eval(double x) const;
};

DecoderMlp decoder_mlp_approx(double M, double eps);

}  // namespace ebp::robnet
