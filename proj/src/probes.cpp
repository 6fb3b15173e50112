#include "ebp/probes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ebp/common.hpp"
#include "ebp/poisson.hpp"

namespace ebp::probe {

const char* target_name(Target t) {
    switch (t) {
        case Target::InputX: return "x";
        case Target::Frequency: return "frequency";
        case Target::NpmleDensity: return "npmle_density";
        case Target::AtomPmf: return "atom_pmf";
    }
    return "?";
}

ProbePanel build_probe_panel(const tf::ModelParams& params, const PriorSampler& sampler,
                             const std::vector<Target>& targets, const std::vector<int>& layers,
                             std::size_t sequences, std::size_t seq_len, std::uint64_t seed,
                             const NpmleConfig& npmle_cfg, bool raw_frequency) {
    ProbePanel panel;
    panel.layers = layers;
    panel.activations.resize(layers.size());

    bool need_npmle = std::find(targets.begin(), targets.end(), Target::NpmleDensity) !=
                      targets.end();
    std::vector<std::vector<Eigen::MatrixXd>> acts(layers.size());
    std::map<std::string, std::vector<double>> labels;
    for (Target t : targets) labels[target_name(t)] = {};

    for (std::size_t s = 0; s < sequences; ++s) {
        auto rng = make_rng(seed, 0x70726f6265ULL, s);
        DiscretePrior prior = sampler(rng);
        Batch batch = sample_batch(prior, seq_len, rng);

        std::optional<NpmleFit> fit;
        if (need_npmle) {
            try {
                fit = npmle_fit(batch.xs, npmle_cfg);
            } catch (const std::exception&) {
                ++panel.skipped_sequences;
                continue;
            }
        }

        auto fwd = tf::forward(params, batch.xs, &layers);
        for (std::size_t li = 0; li < layers.size(); ++li)
            acts[li].push_back(std::move(fwd.activations[li]));

        FrequencyTable freq = FrequencyTable::from(batch.xs);
        for (Target t : targets) {
            auto& dst = labels[target_name(t)];
            for (std::size_t i = 0; i < batch.xs.size(); ++i) {
                switch (t) {
                    case Target::InputX:
                        dst.push_back(static_cast<double>(batch.xs[i]));
                        break;
                    case Target::Frequency: {
                        double c = static_cast<double>(freq.at(batch.xs[i]));
                        dst.push_back(raw_frequency ? c : c / static_cast<double>(seq_len));
                        break;
                    }
                    case Target::NpmleDensity:
                        dst.push_back(std::exp(mixture_logpmf(fit->prior, batch.xs[i])));
                        break;
                    case Target::AtomPmf: {
                        auto it = std::lower_bound(prior.atoms.begin(), prior.atoms.end(),
                                                   batch.thetas[i] - 1e-12);
                        dst.push_back(prior.weights[it - prior.atoms.begin()]);
                        break;
                    }
                }
            }
        }
    }

    for (std::size_t li = 0; li < layers.size(); ++li) {
        std::size_t rows = 0;
        for (const auto& m : acts[li]) rows += m.rows();
        Eigen::MatrixXd all(rows, params.config.dmodel);
        std::size_t at = 0;
        for (const auto& m : acts[li]) {
            all.middleRows(at, m.rows()) = m;
            at += m.rows();
        }
        panel.activations[li] = std::move(all);
    }
    for (auto& [name, v] : labels)
        panel.labels[name] = Eigen::Map<Eigen::VectorXd>(v.data(), v.size());
    return panel;
}

ProbeDataset build_probe_dataset(const tf::ModelParams& params, const PriorSampler& sampler,
                                 const ProbeConfig& cfg, std::size_t sequences,
                                 std::size_t seq_len, std::uint64_t seed,
                                 const NpmleConfig& npmle_cfg) {
    ProbePanel panel = build_probe_panel(params, sampler, {cfg.target}, {cfg.layer}, sequences,
                                         seq_len, seed, npmle_cfg, cfg.raw_frequency);
    ProbeDataset ds;
    ds.activations = std::move(panel.activations[0]);
    ds.labels = std::move(panel.labels[target_name(cfg.target)]);
    ds.skipped_sequences = panel.skipped_sequences;
    return ds;
}

namespace {

Eigen::MatrixXd row_layer_norm(const Eigen::MatrixXd& x, Eigen::MatrixXd* xhat_out) {
    Eigen::MatrixXd xhat(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = x.row(i).mean();
        double v = (x.row(i).array() - m).square().sum() / static_cast<double>(x.cols());
        xhat.row(i) = (x.row(i).array() - m) / std::sqrt(v + 1e-5);
    }
    if (xhat_out) *xhat_out = xhat;
    return xhat;
}

double r2_score(const Eigen::VectorXd& y, const Eigen::VectorXd& pred) {
    double mean = y.mean();
    double sst = (y.array() - mean).square().sum();
    double sse = (y - pred).array().square().sum();
    return 1.0 - sse / sst;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * phi;
}

}  // namespace

Eigen::VectorXd ProbeModel::predict(const Eigen::MatrixXd& acts) const {
    Eigen::MatrixXd xhat = row_layer_norm(acts, nullptr);
    Eigen::MatrixXd u =
        (xhat.array().rowwise() * ln_g.transpose().array()).rowwise() +
        ln_b.transpose().array();
    Eigen::MatrixXd pre = u * w1;
    pre.rowwise() += b1.transpose();
    Eigen::MatrixXd act = pre.unaryExpr([](double v) { return gelu(v); });
    Eigen::VectorXd out = act * w2;
    out.array() += b2;
    return out;
}

ProbeResult train_probe(const Eigen::MatrixXd& activations, const Eigen::VectorXd& labels,
                        const ProbeConfig& cfg) {
    if (activations.rows() == 0 || activations.rows() != labels.size())
        throw std::invalid_argument("train_probe: empty or mismatched dataset");
    const double label_var = (labels.array() - labels.mean()).square().sum();
    if (label_var <= 0.0)
        throw std::invalid_argument("train_probe: zero-variance labels, R^2 undefined");

    const Eigen::Index rows = activations.rows();
    const Eigen::Index d = activations.cols();
    const int h = cfg.hidden;

    // deterministic shuffle, 20% holdout
    std::vector<Eigen::Index> order(rows);
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(cfg.seed, 0x73706c6974ULL);
    std::shuffle(order.begin(), order.end(), rng);
    Eigen::Index n_hold = static_cast<Eigen::Index>(cfg.holdout * static_cast<double>(rows));
    n_hold = std::clamp<Eigen::Index>(n_hold, 1, rows - 1);
    Eigen::Index n_train = rows - n_hold;

    Eigen::MatrixXd xtr(n_train, d), xho(n_hold, d);
    Eigen::VectorXd ytr(n_train), yho(n_hold);
    for (Eigen::Index i = 0; i < n_train; ++i) {
        xtr.row(i) = activations.row(order[i]);
        ytr(i) = labels(order[i]);
    }
    for (Eigen::Index i = 0; i < n_hold; ++i) {
        xho.row(i) = activations.row(order[n_train + i]);
        yho(i) = labels(order[n_train + i]);
    }

    // z-score labels for optimization; predictions map back at the end
    double mu = ytr.mean();
    double sd = std::sqrt((ytr.array() - mu).square().sum() / std::max<Eigen::Index>(1, n_train));
    if (sd <= 0.0) sd = 1.0;
    Eigen::VectorXd ztr = (ytr.array() - mu) / sd;

    ProbeModel m;
    m.ln_g = Eigen::VectorXd::Ones(d);
    m.ln_b = Eigen::VectorXd::Zero(d);
    m.w1.resize(d, h);
    m.b1 = Eigen::VectorXd::Zero(h);
    m.w2 = Eigen::VectorXd::Zero(h);
    {
        double lim = std::sqrt(6.0 / static_cast<double>(d + h));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (Eigen::Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = u(rng);
        double lim2 = std::sqrt(6.0 / static_cast<double>(h + 1));
        std::uniform_real_distribution<double> u2(-lim2, lim2);
        for (int i = 0; i < h; ++i) m.w2(i) = u2(rng);
    }

    Eigen::MatrixXd xhat = row_layer_norm(xtr, nullptr);

    struct Flat {
        std::vector<double*> ptr;
        std::vector<std::size_t> len;
    } flat;
    auto reg = [&](double* p, std::size_t n) {
        flat.ptr.push_back(p);
        flat.len.push_back(n);
    };
    reg(m.ln_g.data(), d);
    reg(m.ln_b.data(), d);
    reg(m.w1.data(), m.w1.size());
    reg(m.b1.data(), h);
    reg(m.w2.data(), h);
    reg(&m.b2, 1);
    std::size_t total = 0;
    for (auto l : flat.len) total += l;
    std::vector<double> adam_m(total, 0.0), adam_v(total, 0.0);

    const double inv_n = 1.0 / static_cast<double>(n_train);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Eigen::MatrixXd u = (xhat.array().rowwise() * m.ln_g.transpose().array()).rowwise() +
                            m.ln_b.transpose().array();
        Eigen::MatrixXd pre = u * m.w1;
        pre.rowwise() += m.b1.transpose();
        Eigen::MatrixXd act = pre.unaryExpr([](double v) { return gelu(v); });
        Eigen::VectorXd out = act * m.w2;
        out.array() += m.b2;

        Eigen::VectorXd dout = 2.0 * (out - ztr) * inv_n;
        Eigen::VectorXd gw2 = act.transpose() * dout;
        double gb2 = dout.sum();
        Eigen::MatrixXd dact = dout * m.w2.transpose();
        Eigen::MatrixXd dpre =
            dact.array() * pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
        Eigen::MatrixXd gw1 = u.transpose() * dpre;
        Eigen::VectorXd gb1 = dpre.colwise().sum().transpose();
        Eigen::MatrixXd du = dpre * m.w1.transpose();
        Eigen::VectorXd gln_g = (du.array() * xhat.array()).colwise().sum().transpose();
        Eigen::VectorXd gln_b = du.colwise().sum().transpose();

        std::vector<const double*> grads = {gln_g.data(), gln_b.data(), gw1.data(),
                                            gb1.data(),   gw2.data(),  &gb2};
        double bc1 = 1.0 - std::pow(0.9, epoch);
        double bc2 = 1.0 - std::pow(0.999, epoch);
        std::size_t off = 0;
        for (std::size_t k = 0; k < flat.ptr.size(); ++k) {
            for (std::size_t i = 0; i < flat.len[k]; ++i, ++off) {
                double g = grads[k][i];
                adam_m[off] = 0.9 * adam_m[off] + 0.1 * g;
                adam_v[off] = 0.999 * adam_v[off] + 0.001 * g * g;
                flat.ptr[k][i] -=
                    cfg.lr * (adam_m[off] / bc1) / (std::sqrt(adam_v[off] / bc2) + 1e-8);
            }
        }
    }

    // undo label scaling so predictions live in label units
    m.w2 *= sd;
    m.b2 = m.b2 * sd + mu;

    ProbeResult res;
    res.rows = static_cast<std::size_t>(rows);
    res.r2_train = r2_score(ytr, m.predict(xtr));
    res.r2_holdout = r2_score(yho, m.predict(xho));
    res.model = std::move(m);
    return res;
}

std::vector<ProfileRow> probe_depth_profile(const tf::ModelParams& params,
                                            const std::vector<Target>& targets,
                                            const PriorSampler& sampler, std::size_t sequences,
                                            std::size_t seq_len, const ProbeConfig& base_cfg,
                                            const NpmleConfig& npmle_cfg) {
    std::vector<int> layers;
    for (int l = 1; l <= params.config.layers; ++l) layers.push_back(l);
    ProbePanel panel = build_probe_panel(params, sampler, targets, layers, sequences, seq_len,
                                         base_cfg.seed, npmle_cfg, base_cfg.raw_frequency);
    std::vector<ProfileRow> rows;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        for (Target t : targets) {
            ProbeConfig cfg = base_cfg;
            cfg.layer = layers[li];
            cfg.target = t;
            ProbeResult r = train_probe(panel.activations[li], panel.labels[target_name(t)], cfg);
            rows.push_back({layers[li], target_name(t), r.r2_train, r.r2_holdout, r.rows});
        }
    }
    return rows;
}

void write_profile_csv(const std::vector<ProfileRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_profile_csv: cannot open " + path);
    out << "layer,target,r2_train,r2_holdout,n_rows\n";
    out.precision(10);
    for (const auto& r : rows)
        out << r.layer << ',' << r.target << ',' << r.r2_train << ',' << r.r2_holdout << ','
            << r.n_rows << "\n";
}

}  // namespace ebp::probe
