#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ebp/poisson.hpp"
#include "ebp/priors.hpp"

namespace ebp::tf {

enum class AttentionKind { Softmax, LinearIdentity };

const char* attention_name(AttentionKind k);
AttentionKind attention_from_name(const std::string& s);

struct ModelConfig {
    int layers = 6;  // even; first half shares group 0, second half group 1
    int dmodel = 32;
    int heads = 4;
    AttentionKind attention = AttentionKind::Softmax;
    int ff = 128;
    std::uint64_t seed = 1;

    void validate() const;
    int head_dim() const { return dmodel / heads; }
};

struct GroupParams {
    Eigen::MatrixXd wq, wk, wv, wo;      // dmodel x dmodel
    Eigen::VectorXd ln1_g, ln1_b;        // pre-attention layer norm
    Eigen::VectorXd ln2_g, ln2_b;        // pre-feedforward layer norm
    Eigen::MatrixXd w1;                  // dmodel x ff
    Eigen::VectorXd b1;                  // ff
    Eigen::MatrixXd w2;                  // ff x dmodel
    Eigen::VectorXd b2;                  // dmodel
};

struct ModelParams {
    ModelConfig config;
    Eigen::MatrixXd embed;    // 2 x dmodel, applied to (x/64, log1p(x))
    Eigen::VectorXd embed_b;  // dmodel
    std::array<GroupParams, 2> groups;
    Eigen::VectorXd lnf_g, lnf_b;  // final layer norm
    Eigen::VectorXd dec_w;         // dmodel
    double dec_b = 0.0;
};

/// Flat view over every tensor, in checkpoint order.
struct TensorRef {
    std::string name;
    double* data;
    std::size_t size;
};
std::vector<TensorRef> tensor_refs(ModelParams& p);
std::size_t param_count(const ModelParams& p);

ModelParams init_params(const ModelConfig& cfg);
ModelParams zero_like(const ModelConfig& cfg);

/// FNV-1a over the raw tensor bytes; used by the frozen-weights contract.
std::uint64_t params_checksum(const ModelParams& p);

struct ForwardResult {
    std::vector<double> estimates;
    // captured post-block residual streams, one n x dmodel matrix per
    // requested layer (layer 0 = embedding output, 1..N = after block)
    std::vector<Eigen::MatrixXd> activations;
};

ForwardResult forward(const ModelParams& p, const std::vector<int>& xs,
                      const std::vector<int>* capture_layers = nullptr);

struct LossGrad {
    double loss = 0.0;
    ModelParams grads;  // same shapes as the parameters
};
LossGrad loss_and_grad(const ModelParams& p, const Batch& batch);

struct TrainSchedule {
    int epochs = 2000;
    int batches_per_epoch = 192;  // independent sequences per epoch
    int microbatch = 16;          // sequences per Adam step
    int seq_len = 512;
    double lr = 0.02;
    double decay = 0.9;
    int decay_every = 300;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::string prior_mix = "mix";  // mix | neural | dirichlet
    double dp_alpha = 50.0;
    ThetaMaxLaw theta_max_law;
    bool randomize_theta_max = true;  // per batch; false uses theta_max_fixed
    double theta_max_fixed = 50.0;
    double divergence_loss = 1e6;
    int threads = 1;  // >1 evaluates microbatch grads in parallel, fixed-order sum
};

struct TrainLogRow {
    int epoch;
    double mean_loss;
    double lr;
};

struct TrainResult {
    ModelParams params;
    std::vector<TrainLogRow> log;
};

TrainResult train(const ModelConfig& cfg, const TrainSchedule& sched, std::uint64_t seed);
void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path);

/// Checkpoint: magic, version, config JSON, contiguous little-endian float64
/// tensors in tensor_refs order. Round-trips bit-exactly.
void save_params(const ModelParams& p, const std::string& path);
ModelParams load_params(const std::string& path);

}  // namespace ebp::tf
