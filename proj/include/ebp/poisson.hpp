#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ebp/discrete_prior.hpp"

namespace ebp {

/// Paired (X, theta) vectors from one prior draw.
struct Batch {
    std::vector<int> xs;
    std::vector<double> thetas;
    std::string prior_id;
};

struct EstimatorResult {
    std::vector<double> estimates;
    std::string estimator_id;
    double wall_time = 0.0;  // seconds
};

struct RegretReport {
    double mse = 0.0;
    double mmse = 0.0;
    double regret = 0.0;  // mse - mmse
    std::size_t n = 0;
    std::size_t batches = 0;
    double std_err = 0.0;
    std::size_t failed_batches = 0;
    double wall_time = 0.0;  // total estimator seconds
};

/// Maps an observation vector to per-position estimates.
using Estimator = std::function<std::vector<double>(const std::vector<int>&)>;

/// Smallest truncation point with Poisson tail mass below eps for every
/// rate in [0, theta_max] (Chernoff bound (e*theta)^x e^-theta / x^x).
int poisson_tail_cutoff(double theta_max, double eps = 1e-12);

Batch sample_batch(const DiscretePrior& prior, std::size_t n, std::mt19937_64& rng);
Batch sample_batch(const std::function<double(std::mt19937_64&)>& theta_sampler,
                   std::size_t n, std::mt19937_64& rng, const std::string& prior_id);

/// log f_pi(x) = log E_pi[e^-theta theta^x / x!], via log-sum-exp over atoms.
double mixture_logpmf(const DiscretePrior& prior, int x);

/// Posterior mean E[theta | X=x] (Eq. form (x+1) f(x+1)/f(x)); throws
/// std::domain_error when f_pi(x) = 0.
double bayes_estimate(const DiscretePrior& prior, int x);
/// Same quantity through the ratio form; kept as an algebraic cross-check.
double bayes_estimate_ratio_form(const DiscretePrior& prior, int x);

/// Posterior-mean table precomputed past the Poisson tail cutoff; queries
/// beyond the table fall back to a direct evaluation (thread-safe, no mutation).
class BayesTable {
  public:
    explicit BayesTable(DiscretePrior prior);
    double operator()(int x) const;
    const DiscretePrior& prior() const { return prior_; }
    void reserve(int x);

  private:
    DiscretePrior prior_;
    std::vector<double> table_;
};

/// mmse(pi) = E[theta^2] - sum_x e(x)^2 / m(x), truncated at x_trunc.
/// Throws std::invalid_argument when x_trunc is below the cutoff needed for
/// truncation error < 1e-12.
double mmse(const DiscretePrior& prior, int x_trunc);
double mmse(const DiscretePrior& prior);  // default x_trunc from tail cutoff

/// MSE of the prior's Bayes estimator at the point mass delta_theta,
/// sum_x Poi(x;theta) (bayes(x) - theta)^2. Gradient of mmse in pi-space.
double mse_at_point(const BayesTable& bayes, double theta, int x_trunc);

struct RegretEvalOptions {
    std::uint64_t seed = 1;
    bool rao_blackwell = true;  // false: plain (est - theta)^2 minus mmse
    int threads = 0;            // 0 = library default
};

RegretReport regret_eval(const Estimator& estimator, const DiscretePrior& prior,
                         std::size_t n, std::size_t batches,
                         const RegretEvalOptions& opt = {});

/// Process-wide cap for OpenMP loops (0 = hardware default).
void set_max_threads(int k);
int effective_threads(int requested);

std::string regret_csv_header();
std::string regret_csv_row(const std::string& estimator_id, const std::string& prior_id,
                           const RegretReport& r);

}  // namespace ebp
