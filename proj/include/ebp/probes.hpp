#pragma once

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ebp/estimators.hpp"
#include "ebp/tinyformer.hpp"

namespace ebp::probe {

enum class Target { InputX, Frequency, NpmleDensity, AtomPmf };

const char* target_name(Target t);

struct ProbeConfig {
    Target target = Target::InputX;
    int layer = 1;  // 0 = embedding output, 1..N = post-block residual stream
    int hidden = 32;
    int epochs = 400;
    double lr = 0.01;
    double holdout = 0.2;
    bool raw_frequency = false;  // default labels N(x)/n
    std::uint64_t seed = 7;
};

/// Per-sequence generating prior for probe data.
using PriorSampler = std::function<DiscretePrior(std::mt19937_64&)>;

struct ProbeDataset {
    Eigen::MatrixXd activations;  // rows x dmodel
    Eigen::VectorXd labels;
    std::size_t skipped_sequences = 0;
};

/// Activations for several layers plus labels for several targets, built from
/// one shared set of sequences (NPMLE labels are fit once per sequence).
struct ProbePanel {
    std::vector<int> layers;
    std::vector<Eigen::MatrixXd> activations;           // parallel to layers
    std::map<std::string, Eigen::VectorXd> labels;      // keyed by target_name
    std::size_t skipped_sequences = 0;
};

ProbePanel build_probe_panel(const tf::ModelParams& params, const PriorSampler& sampler,
                             const std::vector<Target>& targets, const std::vector<int>& layers,
                             std::size_t sequences, std::size_t seq_len, std::uint64_t seed,
                             const NpmleConfig& npmle_cfg, bool raw_frequency = false);

ProbeDataset build_probe_dataset(const tf::ModelParams& params, const PriorSampler& sampler,
                                 const ProbeConfig& cfg, std::size_t sequences,
                                 std::size_t seq_len, std::uint64_t seed,
                                 const NpmleConfig& npmle_cfg);

struct ProbeModel {
    Eigen::VectorXd ln_g, ln_b;
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::VectorXd w2;
    double b2 = 0.0;
    Eigen::VectorXd predict(const Eigen::MatrixXd& acts) const;
};

struct ProbeResult {
    ProbeModel model;
    double r2_train = 0.0;
    double r2_holdout = 0.0;
    std::size_t rows = 0;
};

/// layer-norm -> linear -> GELU -> linear head, MSE-trained with Adam;
/// throws on zero-variance labels.
ProbeResult train_probe(const Eigen::MatrixXd& activations, const Eigen::VectorXd& labels,
                        const ProbeConfig& cfg);

struct ProfileRow {
    int layer;
    std::string target;
    double r2_train;
    double r2_holdout;
    std::size_t n_rows;
};

std::vector<ProfileRow> probe_depth_profile(const tf::ModelParams& params,
                                            const std::vector<Target>& targets,
                                            const PriorSampler& sampler, std::size_t sequences,
                                            std::size_t seq_len, const ProbeConfig& base_cfg,
                                            const NpmleConfig& npmle_cfg);

void write_profile_csv(const std::vector<ProfileRow>& rows, const std::string& path);

}  // namespace ebp::probe
