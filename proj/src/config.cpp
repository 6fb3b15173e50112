#include "ebp/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ebp::cfg {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& scope,
                  const std::set<std::string>& allowed) {
    if (!j.is_object()) throw ConfigError(scope + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError(scope + ": unknown key '" + it.key() + "'");
}

template <typename T>
T get_or(const json& j, const std::string& key, T def) {
    if (!j.contains(key)) return def;
    try {
        return j.at(key).get<T>();
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': type mismatch");
    }
}

void check_positive(double v, const std::string& key) {
    if (!(v > 0.0)) throw ConfigError("key '" + key + "': must be > 0, got " +
                                      std::to_string(v));
}

}  // namespace

RunConfig config_from_json_text(const std::string& text) {
    json j;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
        j = json::object();
    } else {
        try {
            j = json::parse(text);
        } catch (const std::exception& e) {
            throw ConfigError(std::string("malformed config: ") + e.what());
        }
    }

    require_keys(j, "config",
                 {"schema_version", "seed", "threads", "output_dir", "theta_max",
                  "estimators", "checkpoints", "npmle", "model", "schedule", "synthetic",
                  "timing", "probe", "certify"});

    RunConfig c;
    c.schema_version = get_or<int>(j, "schema_version", 1);
    if (c.schema_version != 1)
        throw ConfigError("key 'schema_version': unsupported version " +
                          std::to_string(c.schema_version));
    c.seed = get_or<std::uint64_t>(j, "seed", 1);
    c.threads = get_or<int>(j, "threads", 0);
    if (c.threads < 0) throw ConfigError("key 'threads': must be >= 0");
    c.output_dir = get_or<std::string>(j, "output_dir", "out");
    c.theta_max = get_or<double>(j, "theta_max", 50.0);
    check_positive(c.theta_max, "theta_max");
    c.estimators = get_or<std::vector<std::string>>(j, "estimators", c.estimators);
    c.checkpoints =
        get_or<std::map<std::string, std::string>>(j, "checkpoints", c.checkpoints);

    if (j.contains("npmle")) {
        const json& n = j["npmle"];
        require_keys(n, "npmle", {"theta_max", "grid", "tol", "max_iter", "frank_wolfe_refine"});
        c.npmle.theta_max = get_or<double>(n, "theta_max", c.theta_max);
        c.npmle.grid = get_or<std::size_t>(n, "grid", 0);
        c.npmle.tol = get_or<double>(n, "tol", c.npmle.tol);
        check_positive(c.npmle.tol, "npmle.tol");
        c.npmle.max_iter = get_or<int>(n, "max_iter", c.npmle.max_iter);
        if (c.npmle.max_iter < 1) throw ConfigError("key 'npmle.max_iter': must be >= 1");
        c.npmle.frank_wolfe_refine = get_or<bool>(n, "frank_wolfe_refine", false);
    } else {
        c.npmle.theta_max = c.theta_max;
    }

    if (j.contains("model")) {
        const json& m = j["model"];
        require_keys(m, "model", {"layers", "dmodel", "heads", "attention", "ff", "seed"});
        c.model.layers = get_or<int>(m, "layers", c.model.layers);
        c.model.dmodel = get_or<int>(m, "dmodel", c.model.dmodel);
        c.model.heads = get_or<int>(m, "heads", c.model.heads);
        c.model.attention =
            tf::attention_from_name(get_or<std::string>(m, "attention", "softmax"));
        c.model.ff = get_or<int>(m, "ff", c.model.ff);
        c.model.seed = get_or<std::uint64_t>(m, "seed", c.seed);
        try {
            c.model.validate();
        } catch (const std::exception& e) {
            throw ConfigError(std::string("model: ") + e.what());
        }
    }

    if (j.contains("schedule")) {
        const json& s = j["schedule"];
        require_keys(s, "schedule",
                     {"epochs", "batches_per_epoch", "microbatch", "seq_len", "lr", "decay",
                      "decay_every", "prior_mix", "dp_alpha", "randomize_theta_max",
                      "theta_max_fixed", "threads"});
        auto& sc = c.schedule;
        sc.epochs = get_or<int>(s, "epochs", sc.epochs);
        if (sc.epochs < 1) throw ConfigError("key 'schedule.epochs': must be >= 1");
        sc.batches_per_epoch = get_or<int>(s, "batches_per_epoch", sc.batches_per_epoch);
        sc.microbatch = get_or<int>(s, "microbatch", sc.microbatch);
        sc.seq_len = get_or<int>(s, "seq_len", sc.seq_len);
        if (sc.seq_len < 1) throw ConfigError("key 'schedule.seq_len': must be >= 1");
        sc.lr = get_or<double>(s, "lr", sc.lr);
        check_positive(sc.lr, "schedule.lr");
        sc.decay = get_or<double>(s, "decay", sc.decay);
        if (!(sc.decay > 0.0 && sc.decay <= 1.0))
            throw ConfigError("key 'schedule.decay': must be in (0, 1]");
        sc.decay_every = get_or<int>(s, "decay_every", sc.decay_every);
        if (sc.decay_every < 1) throw ConfigError("key 'schedule.decay_every': must be >= 1");
        sc.prior_mix = get_or<std::string>(s, "prior_mix", sc.prior_mix);
        if (sc.prior_mix != "mix" && sc.prior_mix != "neural" && sc.prior_mix != "dirichlet")
            throw ConfigError("key 'schedule.prior_mix': must be mix|neural|dirichlet");
        sc.dp_alpha = get_or<double>(s, "dp_alpha", sc.dp_alpha);
        check_positive(sc.dp_alpha, "schedule.dp_alpha");
        sc.randomize_theta_max = get_or<bool>(s, "randomize_theta_max", true);
        sc.theta_max_fixed = get_or<double>(s, "theta_max_fixed", sc.theta_max_fixed);
        sc.threads = get_or<int>(s, "threads", 1);
    }

    if (j.contains("synthetic")) {
        const json& s = j["synthetic"];
        require_keys(s, "synthetic",
                     {"prior_family", "lengths", "batches", "priors", "multinomial_grid",
                      "multinomial_alpha", "multinomial_random_scale"});
        auto& sy = c.synthetic;
        sy.prior_family = get_or<std::string>(s, "prior_family", sy.prior_family);
        sy.lengths = get_or<std::vector<int>>(s, "lengths", sy.lengths);
        for (int n : sy.lengths)
            if (n < 1) throw ConfigError("key 'synthetic.lengths': lengths must be positive");
        sy.batches = get_or<int>(s, "batches", sy.batches);
        if (sy.batches < 1) throw ConfigError("key 'synthetic.batches': must be >= 1");
        sy.priors = get_or<int>(s, "priors", sy.priors);
        if (sy.priors < 1) throw ConfigError("key 'synthetic.priors': must be >= 1");
        sy.multinomial_grid = get_or<int>(s, "multinomial_grid", sy.multinomial_grid);
        if (sy.multinomial_grid < 1)
            throw ConfigError("key 'synthetic.multinomial_grid': must be >= 1");
        sy.multinomial_alpha = get_or<double>(s, "multinomial_alpha", sy.multinomial_alpha);
        check_positive(sy.multinomial_alpha, "synthetic.multinomial_alpha");
        sy.multinomial_random_scale = get_or<bool>(s, "multinomial_random_scale", false);
    }

    if (j.contains("timing")) {
        const json& t = j["timing"];
        require_keys(t, "timing", {"lengths", "reps", "timeout_s"});
        c.timing.lengths = get_or<std::vector<int>>(t, "lengths", c.timing.lengths);
        c.timing.reps = get_or<int>(t, "reps", c.timing.reps);
        if (c.timing.reps < 1) throw ConfigError("key 'timing.reps': must be >= 1");
        c.timing.timeout_s = get_or<double>(t, "timeout_s", c.timing.timeout_s);
        check_positive(c.timing.timeout_s, "timing.timeout_s");
    }

    if (j.contains("probe")) {
        const json& p = j["probe"];
        require_keys(p, "probe",
                     {"targets", "prior_family", "sequences", "seq_len", "hidden", "epochs", "lr"});
        auto& pb = c.probe;
        pb.targets = get_or<std::vector<std::string>>(p, "targets", pb.targets);
        pb.prior_family = get_or<std::string>(p, "prior_family", pb.prior_family);
        pb.sequences = get_or<int>(p, "sequences", pb.sequences);
        if (pb.sequences < 1) throw ConfigError("key 'probe.sequences': must be >= 1");
        pb.seq_len = get_or<int>(p, "seq_len", pb.seq_len);
        if (pb.seq_len < 1) throw ConfigError("key 'probe.seq_len': must be >= 1");
        pb.hidden = get_or<int>(p, "hidden", pb.hidden);
        if (pb.hidden < 1) throw ConfigError("key 'probe.hidden': must be >= 1");
        pb.epochs = get_or<int>(p, "epochs", pb.epochs);
        if (pb.epochs < 1) throw ConfigError("key 'probe.epochs': must be >= 1");
        pb.lr = get_or<double>(p, "lr", pb.lr);
        check_positive(pb.lr, "probe.lr");
    }

    if (j.contains("certify")) {
        const json& ce = j["certify"];
        require_keys(ce, "certify",
                     {"d", "M", "D", "batches", "max_n", "tol_softmax", "tol_linear"});
        auto& cb = c.certify;
        cb.d = get_or<int>(ce, "d", cb.d);
        if (cb.d < 1) throw ConfigError("key 'certify.d': must be >= 1");
        cb.M = get_or<double>(ce, "M", cb.M);
        check_positive(cb.M, "certify.M");
        cb.D = get_or<double>(ce, "D", cb.D);
        cb.batches = get_or<int>(ce, "batches", cb.batches);
        if (cb.batches < 1) throw ConfigError("key 'certify.batches': must be >= 1");
        cb.max_n = get_or<int>(ce, "max_n", cb.max_n);
        if (cb.max_n < 1) throw ConfigError("key 'certify.max_n': must be >= 1");
        cb.tol_softmax = get_or<double>(ce, "tol_softmax", cb.tol_softmax);
        check_positive(cb.tol_softmax, "certify.tol_softmax");
        cb.tol_linear = get_or<double>(ce, "tol_linear", cb.tol_linear);
        check_positive(cb.tol_linear, "certify.tol_linear");
    }

    return c;
}

RunConfig config_parse(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json_text(ss.str());
}

std::string config_to_json(const RunConfig& c) {
    json j;
    j["schema_version"] = c.schema_version;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["output_dir"] = c.output_dir;
    j["theta_max"] = c.theta_max;
    j["estimators"] = c.estimators;
    j["checkpoints"] = c.checkpoints;
    j["npmle"] = {{"theta_max", c.npmle.theta_max},
                  {"grid", c.npmle.grid},
                  {"tol", c.npmle.tol},
                  {"max_iter", c.npmle.max_iter},
                  {"frank_wolfe_refine", c.npmle.frank_wolfe_refine}};
    j["model"] = {{"layers", c.model.layers},
                  {"dmodel", c.model.dmodel},
                  {"heads", c.model.heads},
                  {"attention", tf::attention_name(c.model.attention)},
                  {"ff", c.model.ff},
                  {"seed", c.model.seed}};
    j["schedule"] = {{"epochs", c.schedule.epochs},
                     {"batches_per_epoch", c.schedule.batches_per_epoch},
                     {"microbatch", c.schedule.microbatch},
                     {"seq_len", c.schedule.seq_len},
                     {"lr", c.schedule.lr},
                     {"decay", c.schedule.decay},
                     {"decay_every", c.schedule.decay_every},
                     {"prior_mix", c.schedule.prior_mix},
                     {"dp_alpha", c.schedule.dp_alpha},
                     {"randomize_theta_max", c.schedule.randomize_theta_max},
                     {"theta_max_fixed", c.schedule.theta_max_fixed},
                     {"threads", c.schedule.threads}};
    j["synthetic"] = {{"prior_family", c.synthetic.prior_family},
                      {"lengths", c.synthetic.lengths},
                      {"batches", c.synthetic.batches},
                      {"priors", c.synthetic.priors},
                      {"multinomial_grid", c.synthetic.multinomial_grid},
                      {"multinomial_alpha", c.synthetic.multinomial_alpha},
                      {"multinomial_random_scale", c.synthetic.multinomial_random_scale}};
    j["timing"] = {{"lengths", c.timing.lengths},
                   {"reps", c.timing.reps},
                   {"timeout_s", c.timing.timeout_s}};
    j["probe"] = {{"targets", c.probe.targets},
                  {"prior_family", c.probe.prior_family},
                  {"sequences", c.probe.sequences},
                  {"seq_len", c.probe.seq_len},
                  {"hidden", c.probe.hidden},
                  {"epochs", c.probe.epochs},
                  {"lr", c.probe.lr}};
    j["certify"] = {{"d", c.certify.d},
                    {"M", c.certify.M},
                    {"D", c.certify.D},
                    {"batches", c.certify.batches},
                    {"max_n", c.certify.max_n},
                    {"tol_softmax", c.certify.tol_softmax},
                    {"tol_linear", c.certify.tol_linear}};
    return j.dump(2);
}

EstimatorContext RunConfig::to_context() const {
    EstimatorContext ctx;
    ctx.theta_max = theta_max;
    ctx.npmle = npmle;
    ctx.checkpoints = checkpoints;
    return ctx;
}

harness::ExperimentSpec RunConfig::to_experiment_spec() const {
    harness::ExperimentSpec s;
    s.estimator_ids = estimators;
    s.prior_family = synthetic.prior_family;
    s.theta_max = theta_max;
    s.lengths = synthetic.lengths;
    s.batches = synthetic.batches;
    s.priors = synthetic.priors;
    s.multinomial_grid = synthetic.multinomial_grid;
    s.multinomial_alpha = synthetic.multinomial_alpha;
    s.multinomial_random_scale = synthetic.multinomial_random_scale;
    s.seed = seed;
    s.threads = threads;
    s.ctx = to_context();
    return s;
}

harness::TimingSpec RunConfig::to_timing_spec() const {
    harness::TimingSpec t;
    t.estimator_ids = estimators;
    t.lengths = timing.lengths;
    t.reps = timing.reps;
    t.theta_max = theta_max;
    t.timeout_s = timing.timeout_s;
    t.seed = seed;
    t.ctx = to_context();
    return t;
}

}  // namespace ebp::cfg
