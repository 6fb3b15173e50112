#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ebp/estimators.hpp"
#include "ebp/poisson.hpp"

namespace ebp::harness {

struct ExperimentSpec {
    std::vector<std::string> estimator_ids;
    std::string prior_family = "worst_case";  // worst_case | multinomial | neural
    double theta_max = 50.0;
    std::vector<int> lengths = {128, 256, 512, 1024, 2048};
    int batches = 2000;  // per (prior, n)
    int priors = 1;      // sampled priors for the prior-on-prior families
    int multinomial_grid = 501;
    double multinomial_alpha = 1.0;
    bool multinomial_random_scale = false;  // opt-in: span ~ Unif(0,1]*theta_max
    std::size_t neural_mc = 100000;
    std::size_t neural_grid = 2000;
    std::uint64_t seed = 1;
    int threads = 0;
    EstimatorContext ctx;
};

struct CellResult {
    std::string estimator_id;
    std::string family;
    int n = 0;
    double regret = 0.0;
    double std_err = 0.0;
    double wall_time = 0.0;  // estimator seconds per batch, averaged
    std::size_t trials = 0;
    std::size_t failed = 0;
};

struct RankingRecord {
    std::vector<std::string> order;  // best regret first, each id once
};

struct PlFit {
    std::vector<std::string> ids;
    std::vector<double> coef;  // anchor coefficient is exactly 0
    int iterations = 0;
    bool capped = false;  // an always-first estimator was capped at +20
    std::vector<double> loglik;  // per-iteration, nondecreasing
};

struct PairTest {
    std::string a, b;
    int n = 0;
    double p_value = 0.0;  // for mean(loss_a - loss_b) < 0
};

struct SyntheticOutputs {
    std::vector<CellResult> cells;
    std::map<int, PlFit> pl_by_n;
    std::vector<PairTest> ttests;
    // per-trial mean losses keyed by estimator, per sequence length
    std::map<int, std::map<std::string, std::vector<double>>> losses_by_n;
};

SyntheticOutputs run_synthetic(const ExperimentSpec& spec);
void write_synthetic_csvs(const SyntheticOutputs& out, const std::string& outdir);

/// One-sided paired t-test; p-value for mean(a - b) < 0. Throws when all
/// differences are exactly zero; deterministic dominance gives p in {0, 1}.
double paired_t_test(std::span<const double> a, std::span<const double> b);

PlFit plackett_luce_fit(const std::vector<RankingRecord>& records, const std::string& anchor_id,
                        double tol = 1e-8, int max_iter = 20000);

struct TimingSpec {
    std::vector<std::string> estimator_ids;
    std::vector<int> lengths = {256, 512, 1024, 2048, 4096};
    int reps = 5;
    double theta_max = 50.0;
    double timeout_s = 600.0;  // soft per-cell budget
    std::uint64_t seed = 1;
    EstimatorContext ctx;
};

struct TimingCell {
    std::string estimator_id;
    int n = 0;
    double median_s = 0.0;
    int reps = 0;
    bool timed_out = false;
};

struct TimingOutputs {
    std::vector<TimingCell> cells;
    std::map<std::string, double> slopes;  // log-log OLS per estimator
};

TimingOutputs timing_benchmark(const TimingSpec& spec);
void write_timing_csvs(const TimingOutputs& out, const std::string& outdir);

}  // namespace ebp::harness
