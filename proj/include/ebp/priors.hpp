#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ebp/discrete_prior.hpp"

namespace ebp {

enum class Activation { GELU, ReLU, SELU, CELU, SiLU, Tanh, TanhShrink };

const char* activation_name(Activation a);
double apply_activation(Activation a, double x);

/// Two-layer perceptron pushforward prior on [0,1]:
/// theta_base = Sigmoid(10 * W2 * act(W1 * u)), u ~ Unif[0,1].
/// A draw picks one of the four components by mixture weight.
struct NeuralPriorSpec {
    struct Component {
        std::vector<double> w1;  // hidden x 1
        std::vector<double> w2;  // 1 x hidden
        Activation act = Activation::ReLU;
    };
    std::vector<Component> components;  // 4 of them
    std::vector<double> mixture;        // sums to 1

    double push(std::size_t comp, double u) const;
    double sample(std::mt19937_64& rng) const;
};

/// Random evaluation/training scale:
/// 3/4 Unif[0,200] + 1/8 Exp(scale 50) + 1/8 Cauchy(50,10), clamped to [0,500].
struct ThetaMaxLaw {
    double w_uniform = 0.75;
    double w_exponential = 0.125;
    double w_cauchy = 0.125;
    double uniform_hi = 200.0;
    double exp_scale = 50.0;  // mean, not rate
    double cauchy_loc = 50.0;
    double cauchy_scale = 10.0;
    double cap = 500.0;
};

struct DirichletProcessSpec {
    double alpha = 50.0;  // base distribution is Unif[0,1]
};

inline constexpr int kNeuralHiddenWidth = 32;

NeuralPriorSpec sample_neural_prior(std::mt19937_64& rng);
std::vector<double> sample_theta_base_batch(const NeuralPriorSpec& spec, std::size_t n,
                                            std::mt19937_64& rng);
std::vector<double> sample_dirichlet_batch(const DirichletProcessSpec& spec, std::size_t n,
                                           std::mt19937_64& rng);

/// Draw with the mixture branch that produced it (0 uniform, 1 exp, 2 cauchy).
struct ThetaMaxDraw {
    double value;
    int branch;
};
ThetaMaxDraw sample_theta_max_branch(const ThetaMaxLaw& law, std::mt19937_64& rng);
double sample_theta_max(const ThetaMaxLaw& law, std::mt19937_64& rng);

/// Evenly spaced atoms on [0, theta_max], weights ~ symmetric Dirichlet(alpha).
DiscretePrior multinomial_grid_prior(std::size_t grid_size, double theta_max,
                                     std::mt19937_64& rng, double alpha = 1.0);

/// Collapses i.i.d. samples of a continuous prior to a quantile-grid atomic
/// prior (used to give pushforward priors an exact MMSE/Bayes oracle).
DiscretePrior discretize_samples(std::vector<double> samples, std::size_t grid_points,
                                 double theta_max, const std::string& id);
DiscretePrior discretize_neural_prior(const NeuralPriorSpec& spec, double theta_max,
                                      std::mt19937_64& rng,
                                      std::size_t mc_samples = 100000,
                                      std::size_t grid_points = 2000);

/// Least-favorable prior on [0, theta_max] by away-step Frank-Wolfe over a
/// uniform grid. The duality gap equals the equalization gap
/// max_theta MSE_{delta_theta}(bayes_pi) - mmse(pi).
struct WorstCaseResult {
    DiscretePrior prior;
    double mmse = 0.0;
    double gap = 0.0;  // residual equalization gap at termination
    int iterations = 0;
};

struct SolverError : std::runtime_error {
    double residual_gap;
    SolverError(const std::string& what, double gap)
        : std::runtime_error(what), residual_gap(gap) {}
};

WorstCaseResult worst_case_prior(double theta_max, double grid_resolution = 0.05,
                                 double tol = 1e-3, int max_iter = 200000);

/// Disk-cached variant keyed by (theta_max, grid, tol). cache_dir empty =>
/// EBP_CACHE_DIR env var, falling back to ./.ebp-cache.
WorstCaseResult worst_case_prior_cached(double theta_max, double grid_resolution = 0.05,
                                        double tol = 1e-3, int max_iter = 200000,
                                        std::string cache_dir = "");

}  // namespace ebp
