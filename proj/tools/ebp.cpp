#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "ebp/common.hpp"
#include "ebp/config.hpp"
#include "ebp/harness.hpp"
#include "ebp/poisson.hpp"
#include "ebp/priors.hpp"
#include "ebp/probes.hpp"
#include "ebp/real_data.hpp"
#include "ebp/robbins_net.hpp"
#include "ebp/tinyformer.hpp"
#include "json.hpp"

namespace {

// exit codes: 0 ok, 2 usage, 3 config error, 4 missing input, 5 runtime failure
constexpr int kExitConfig = 3;
constexpr int kExitMissing = 4;
constexpr int kExitRuntime = 5;

struct Manifest {
    std::string subcommand;
    ebp::cfg::RunConfig config;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    void write(const std::string& outdir) const {
        nlohmann::json j;
        j["subcommand"] = subcommand;
        j["seed"] = config.seed;
        j["tool"] = "ebp 0.1.0";
        j["config"] = nlohmann::json::parse(ebp::cfg::config_to_json(config));
        j["wall_time_s"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::filesystem::create_directories(outdir);
        std::ofstream out(outdir + "/manifest.json");
        out << j.dump(2) << "\n";
    }
};

ebp::cfg::RunConfig load_config(const std::string& path) {
    if (path.empty()) return ebp::cfg::config_from_json_text("");
    if (!std::filesystem::exists(path))
        throw std::system_error(std::make_error_code(std::errc::no_such_file_or_directory),
                                "config file: " + path);
    return ebp::cfg::config_parse(path);
}

void apply_overrides(ebp::cfg::RunConfig& c, const std::string& out,
                     std::uint64_t seed_flag, bool seed_set, int threads_flag,
                     bool deterministic, const std::vector<std::string>& estimators) {
    if (!out.empty()) c.output_dir = out;
    if (seed_set) c.seed = seed_flag;
    if (threads_flag > 0) c.threads = threads_flag;
    if (deterministic) {
        c.threads = 1;
        c.schedule.threads = 1;
    }
    if (!estimators.empty()) c.estimators = estimators;
    ebp::set_max_threads(c.threads);
}

int cmd_train(const ebp::cfg::RunConfig& cfg) {
    Manifest mf{"train", cfg};
    std::filesystem::create_directories(cfg.output_dir);
    auto result = ebp::tf::train(cfg.model, cfg.schedule, cfg.seed);
    ebp::tf::save_params(result.params, cfg.output_dir + "/checkpoint.bin");
    ebp::tf::save_train_log(result.log, cfg.output_dir + "/train_log.csv");
    mf.write(cfg.output_dir);
    std::cout << "trained " << cfg.model.layers << "-layer "
              << ebp::tf::attention_name(cfg.model.attention) << " model ("
              << ebp::tf::param_count(result.params) << " params), final loss "
              << result.log.back().mean_loss << "\n"
              << "checkpoint: " << cfg.output_dir << "/checkpoint.bin\n";
    return 0;
}

int cmd_eval_synthetic(const ebp::cfg::RunConfig& cfg) {
    Manifest mf{"eval synthetic", cfg};
    auto out = ebp::harness::run_synthetic(cfg.to_experiment_spec());
    ebp::harness::write_synthetic_csvs(out, cfg.output_dir);
    mf.write(cfg.output_dir);
    for (const auto& c : out.cells)
        std::cout << c.estimator_id << " n=" << c.n << " regret=" << c.regret << " +- "
                  << c.std_err << "\n";
    std::cout << "wrote " << cfg.output_dir << "/{regret,pl,ttest}.csv\n";
    return 0;
}

int cmd_eval_timing(const ebp::cfg::RunConfig& cfg) {
    Manifest mf{"eval timing", cfg};
    auto out = ebp::harness::timing_benchmark(cfg.to_timing_spec());
    ebp::harness::write_timing_csvs(out, cfg.output_dir);
    mf.write(cfg.output_dir);
    for (const auto& [id, slope] : out.slopes)
        std::cout << id << " log-log slope " << slope << "\n";
    std::cout << "wrote " << cfg.output_dir << "/timing.csv\n";
    return 0;
}

int cmd_eval_real(const ebp::cfg::RunConfig& cfg, const std::string& dataset,
                  const std::string& path, const std::string& position) {
    Manifest mf{"eval real", cfg};
    if (!std::filesystem::exists(path))
        throw std::system_error(std::make_error_code(std::errc::no_such_file_or_directory),
                                "dataset file: " + path);

    std::vector<ebp::real::PredictionTask> tasks;
    if (dataset == "nhl") {
        tasks = ebp::real::load_nhl(path, ebp::real::nhl_position_from(position));
    } else if (dataset == "mlb") {
        auto mlb = ebp::real::load_mlb(path);
        tasks = mlb.batting;
        tasks.insert(tasks.end(), mlb.pitching.begin(), mlb.pitching.end());
    } else if (dataset == "wordfreq") {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        auto wf = ebp::real::load_wordfreq(ss.str());
        if (!wf.task) {
            std::cout << "skipped: " << wf.skip_reason << "\n";
            return 0;
        }
        tasks.push_back(*wf.task);
    } else {
        throw ebp::cfg::ConfigError("unknown dataset: " + dataset);
    }

    auto rows = ebp::real::score_tasks(tasks, cfg.estimators, cfg.to_context(), cfg.threads);
    std::filesystem::create_directories(cfg.output_dir);
    ebp::real::write_scores_csv(rows, cfg.output_dir + "/scores.csv");
    auto agg = ebp::real::aggregate_scores(rows);
    ebp::real::write_aggregate_csv(agg, cfg.output_dir + "/aggregate.csv");
    mf.write(cfg.output_dir);
    for (const auto& r : agg.rows)
        std::cout << r.estimator_id << " rmse improvement " << r.rmse_improvement << " +- "
                  << r.rmse_ci95 << " (% vs mle, " << r.tasks << " tasks)\n";
    return 0;
}

int cmd_certify(const ebp::cfg::RunConfig& cfg, const std::vector<double>& logits) {
    Manifest mf{"certify-robbins", cfg};
    const auto& cb = cfg.certify;
    std::vector<double> ds = logits.empty() ? std::vector<double>{cb.D} : logits;

    std::filesystem::create_directories(cfg.output_dir);
    std::ofstream report(cfg.output_dir + "/certify.csv");
    report << "D,max_dev_softmax,max_dev_linear,tol_softmax,tol_linear,pass\n";
    report.precision(12);

    bool all_pass = true;
    for (double D : ds) {
        ebp::robnet::RobbinsNetSpec spec{cb.d, cb.M, D};
        double dev_soft = 0.0, dev_lin = 0.0;
        for (int b = 0; b < cb.batches; ++b) {
            auto rng = ebp::make_rng(cfg.seed, 0x63657274ULL, static_cast<std::uint64_t>(b));
            std::uniform_int_distribution<int> nlen(1, cb.max_n);
            std::uniform_int_distribution<int> val(0, cb.d);
            std::vector<int> xs(nlen(rng));
            for (int& x : xs) x = val(rng);
            auto oracle = ebp::robbins_clipped(xs, cb.d, cb.M);
            auto soft = ebp::robnet::robbins_net_forward(spec, xs);
            auto lin = ebp::robnet::robbins_net_linear_forward(spec, xs);
            for (std::size_t i = 0; i < xs.size(); ++i) {
                dev_soft = std::max(dev_soft, std::abs(soft[i] - oracle[i]));
                dev_lin = std::max(dev_lin, std::abs(lin[i] - oracle[i]));
            }
        }
        bool pass = dev_soft <= cb.tol_softmax && dev_lin <= cb.tol_linear;
        all_pass = all_pass && pass;
        report << D << ',' << dev_soft << ',' << dev_lin << ',' << cb.tol_softmax << ','
               << cb.tol_linear << ',' << (pass ? 1 : 0) << "\n";
        std::cout << (pass ? "PASS" : "FAIL") << " D=" << D << " max_dev_softmax=" << dev_soft
                  << " max_dev_linear=" << dev_lin << "\n";
    }
    mf.write(cfg.output_dir);
    return all_pass ? 0 : kExitRuntime;
}

int cmd_probe(const ebp::cfg::RunConfig& cfg, const std::string& checkpoint) {
    Manifest mf{"probe", cfg};
    if (!std::filesystem::exists(checkpoint))
        throw std::system_error(std::make_error_code(std::errc::no_such_file_or_directory),
                                "checkpoint: " + checkpoint);
    auto params = ebp::tf::load_params(checkpoint);

    std::vector<ebp::probe::Target> targets;
    for (const auto& t : cfg.probe.targets) {
        if (t == "x") targets.push_back(ebp::probe::Target::InputX);
        else if (t == "frequency") targets.push_back(ebp::probe::Target::Frequency);
        else if (t == "npmle_density") targets.push_back(ebp::probe::Target::NpmleDensity);
        else if (t == "atom_pmf") targets.push_back(ebp::probe::Target::AtomPmf);
        else throw ebp::cfg::ConfigError("unknown probe target: " + t);
    }

    double tmax = cfg.theta_max;
    int grid = cfg.synthetic.multinomial_grid;
    ebp::probe::PriorSampler sampler;
    if (cfg.probe.prior_family == "multinomial") {
        sampler = [tmax, grid](std::mt19937_64& rng) {
            return ebp::multinomial_grid_prior(grid, tmax, rng);
        };
    } else if (cfg.probe.prior_family == "neural") {
        sampler = [tmax](std::mt19937_64& rng) {
            auto spec = ebp::sample_neural_prior(rng);
            return ebp::discretize_neural_prior(spec, tmax, rng, 20000, 500);
        };
    } else {
        throw ebp::cfg::ConfigError("unknown probe prior family: " + cfg.probe.prior_family);
    }

    ebp::probe::ProbeConfig pc;
    pc.hidden = cfg.probe.hidden;
    pc.epochs = cfg.probe.epochs;
    pc.lr = cfg.probe.lr;
    pc.seed = cfg.seed;

    auto before = ebp::tf::params_checksum(params);
    auto rows = ebp::probe::probe_depth_profile(params, targets, sampler,
                                                cfg.probe.sequences, cfg.probe.seq_len, pc,
                                                cfg.npmle);
    if (ebp::tf::params_checksum(params) != before)
        throw std::runtime_error("probe mutated the transformer weights");

    std::filesystem::create_directories(cfg.output_dir);
    ebp::probe::write_profile_csv(rows, cfg.output_dir + "/probe_profile.csv");
    mf.write(cfg.output_dir);
    for (const auto& r : rows)
        std::cout << "layer " << r.layer << " target " << r.target << " r2 " << r.r2_holdout
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Poisson empirical-Bayes estimators, transformers, and evaluation harness"};
    app.require_subcommand(1);

    std::string config_path, out_dir, dataset, data_path, position = "all", checkpoint;
    std::uint64_t seed_flag = 0;
    bool seed_set = false, deterministic = false;
    int threads_flag = 0;
    std::vector<std::string> estimators;
    std::vector<double> logits;

    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--out", out_dir, "output directory (overrides config)");
    app.add_option("--seed", seed_flag, "seed (overrides config)")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--threads", threads_flag, "worker cap (overrides config)");
    app.add_flag("--deterministic", deterministic, "force single-threaded numerics");

    auto* train = app.add_subcommand("train", "train a transformer on synthetic priors");
    auto* eval = app.add_subcommand("eval", "run an evaluation");
    eval->require_subcommand(1);
    auto* synth = eval->add_subcommand("synthetic", "synthetic regret experiments");
    auto* timing = eval->add_subcommand("timing", "wall-time scaling benchmark");
    auto* realcmd = eval->add_subcommand("real", "real-data prediction experiments");
    realcmd->add_option("--dataset", dataset, "nhl|mlb|wordfreq")->required();
    realcmd->add_option("--path", data_path, "input data file")->required();
    realcmd->add_option("--position", position, "NHL position filter");
    realcmd->add_option("--estimators", estimators, "estimator ids")->delimiter(',');
    synth->add_option("--estimators", estimators, "estimator ids")->delimiter(',');
    auto* bench = app.add_subcommand("bench", "alias for eval timing");
    auto* certify = app.add_subcommand("certify-robbins", "certify the constructed network");
    int cert_d = 0;
    double cert_M = 0.0;
    int cert_batches = 0;
    certify->add_option("--d", cert_d, "support cutoff");
    certify->add_option("--M", cert_M, "clip value");
    certify->add_option("--D", logits, "logit constants to sweep");
    certify->add_option("--batches", cert_batches, "random batches per sweep");
    auto* probecmd = app.add_subcommand("probe", "linear probes over layer activations");
    probecmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        ebp::cfg::RunConfig cfg = load_config(config_path);
        apply_overrides(cfg, out_dir, seed_flag, seed_set, threads_flag, deterministic,
                        estimators);
        if (cert_d > 0) cfg.certify.d = cert_d;
        if (cert_M > 0.0) cfg.certify.M = cert_M;
        if (cert_batches > 0) cfg.certify.batches = cert_batches;

        if (train->parsed()) return cmd_train(cfg);
        if (synth->parsed()) return cmd_eval_synthetic(cfg);
        if (timing->parsed() || bench->parsed()) return cmd_eval_timing(cfg);
        if (realcmd->parsed()) return cmd_eval_real(cfg, dataset, data_path, position);
        if (certify->parsed()) return cmd_certify(cfg, logits);
        if (probecmd->parsed()) return cmd_probe(cfg, checkpoint);
        return 2;
    } catch (const ebp::cfg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::system_error& e) {
        std::cerr << "missing input: " << e.what() << "\n";
        return kExitMissing;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
