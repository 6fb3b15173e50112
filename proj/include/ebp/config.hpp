#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ebp/estimators.hpp"
#include "ebp/harness.hpp"
#include "ebp/tinyformer.hpp"

namespace ebp::cfg {

/// One JSON config file drives every subcommand; unknown keys are rejected
/// and every value is range-checked. schema_version is required to be 1.
struct RunConfig {
    int schema_version = 1;
    std::uint64_t seed = 1;
    int threads = 0;
    std::string output_dir = "out";
    double theta_max = 50.0;
    std::vector<std::string> estimators = {"mle", "robbins", "erm", "npmle", "gs"};
    std::map<std::string, std::string> checkpoints;

    NpmleConfig npmle;

    tf::ModelConfig model;
    tf::TrainSchedule schedule;

    struct SyntheticBlock {
        std::string prior_family = "worst_case";
        std::vector<int> lengths = {128, 256, 512, 1024, 2048};
        int batches = 2000;
        int priors = 64;
        int multinomial_grid = 501;
        double multinomial_alpha = 1.0;
        bool multinomial_random_scale = false;
    } synthetic;

    struct TimingBlock {
        std::vector<int> lengths = {256, 512, 1024, 2048, 4096};
        int reps = 5;
        double timeout_s = 600.0;
    } timing;

    struct ProbeBlock {
        std::vector<std::string> targets = {"x", "frequency"};
        std::string prior_family = "multinomial";
        int sequences = 64;
        int seq_len = 256;
        int hidden = 32;
        int epochs = 400;
        double lr = 0.01;
    } probe;

    struct CertifyBlock {
        int d = 30;
        double M = 50.0;
        double D = 100.0;
        int batches = 1000;
        int max_n = 512;
        double tol_softmax = 1e-6;
        double tol_linear = 1e-9;
    } certify;

    harness::ExperimentSpec to_experiment_spec() const;
    harness::TimingSpec to_timing_spec() const;
    EstimatorContext to_context() const;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

RunConfig config_from_json_text(const std::string& text);
RunConfig config_parse(const std::string& path);  // empty file => all defaults
std::string config_to_json(const RunConfig& c);

}  // namespace ebp::cfg
