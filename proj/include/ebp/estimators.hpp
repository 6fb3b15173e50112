#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ebp/poisson.hpp"

namespace ebp {

/// Empirical counts N(x) for x = 0..max(xs)+1.
struct FrequencyTable {
    std::vector<long> counts;
    std::size_t n = 0;

    static FrequencyTable from(const std::vector<int>& xs);
    long at(int x) const {
        return (x >= 0 && x < static_cast<int>(counts.size())) ? counts[x] : 0;
    }
    int max_x() const { return static_cast<int>(counts.size()) - 1; }
};

std::vector<double> mle(const std::vector<int>& xs);
std::vector<double> robbins(const std::vector<int>& xs);
std::vector<double> robbins_clipped(const std::vector<int>& xs, int d, double M);

/// ERM over nondecreasing g on {0..max(xs)+1} with g in [0, cap]; reduces to
/// weighted isotonic regression of the Robbins targets.
std::vector<double> erm_monotone(const std::vector<int>& xs, double cap);

/// Weighted least-squares isotonic regression (pool adjacent violators).
std::vector<double> pava(const std::vector<double>& targets, const std::vector<double>& weights);

struct NpmleConfig {
    double theta_max = 50.0;
    std::size_t grid = 0;       // 0 => max(100, 4 * ceil(theta_max))
    double tol = 1e-9;          // relative log-likelihood change
    int max_iter = 20000;
    bool frank_wolfe_refine = false;
};

struct NpmleFit {
    DiscretePrior prior;
    bool converged = false;
    double gap = 0.0;  // max_j directional derivative of mean log-likelihood
    int iterations = 0;
    double loglik = 0.0;
};

NpmleFit npmle_fit(const std::vector<int>& xs, const NpmleConfig& cfg);
std::vector<double> npmle_estimate(const std::vector<int>& xs, const NpmleConfig& cfg);

/// Bayes rule of the least-favorable prior on [0, theta_max]; fixed once built.
Estimator gold_standard(double theta_max);

struct EstimatorContext {
    double theta_max = 50.0;
    NpmleConfig npmle;
    int clip_d = 30;
    double clip_M = 50.0;
    std::optional<double> erm_cap;                // default: theta_max
    std::map<std::string, std::string> checkpoints;  // "tf"/"ltf" -> path
};

/// ids: mle, robbins, robbins_clipped, erm, npmle, gs, tf, ltf.
Estimator make_estimator(const std::string& id, const EstimatorContext& ctx);
std::vector<std::string> known_estimator_ids();

}  // namespace ebp
