#include "ebp/tinyformer.hpp"

#include <omp.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "ebp/common.hpp"
#include "json.hpp"

namespace ebp::tf {

namespace {
constexpr double kLnEps = 1e-5;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }
inline double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * phi;
}

Eigen::MatrixXd features(const std::vector<int>& xs) {
    Eigen::MatrixXd f(xs.size(), 2);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (xs[i] < 0) throw std::invalid_argument("forward: negative observation");
        f(i, 0) = xs[i] / 64.0;
        f(i, 1) = std::log1p(static_cast<double>(xs[i]));
    }
    return f;
}

struct LnCache {
    Eigen::VectorXd mu, rstd;
    Eigen::MatrixXd xhat;
};

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& g,
                           const Eigen::VectorXd& b, LnCache* cache) {
    const auto n = x.rows();
    const auto d = x.cols();
    Eigen::MatrixXd out(n, d);
    Eigen::VectorXd mu(n), rstd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = x.row(i).mean();
        double v = (x.row(i).array() - m).square().sum() / static_cast<double>(d);
        mu(i) = m;
        rstd(i) = 1.0 / std::sqrt(v + kLnEps);
    }
    Eigen::MatrixXd xhat = (x.colwise() - mu).array().colwise() * rstd.array();
    out = (xhat.array().rowwise() * g.transpose().array()).rowwise() +
          b.transpose().array();
    if (cache) {
        cache->mu = std::move(mu);
        cache->rstd = std::move(rstd);
        cache->xhat = std::move(xhat);
    }
    return out;
}

// dX for Y = xhat*g + b; accumulates dg, db.
Eigen::MatrixXd layer_norm_backward(const Eigen::MatrixXd& dy, const LnCache& c,
                                    const Eigen::VectorXd& g, Eigen::VectorXd& dg,
                                    Eigen::VectorXd& db) {
    const auto n = dy.rows();
    const auto d = dy.cols();
    db += dy.colwise().sum().transpose();
    dg += (dy.array() * c.xhat.array()).colwise().sum().transpose().matrix();
    Eigen::MatrixXd dxhat = dy.array().rowwise() * g.transpose().array();
    Eigen::MatrixXd dx(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        double m1 = dxhat.row(i).mean();
        double m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
        dx.row(i) = (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2) * c.rstd(i);
    }
    return dx;
}

struct LayerCache {
    Eigen::MatrixXd hin;
    LnCache ln1;
    Eigen::MatrixXd u, q, k, v;
    std::vector<Eigen::MatrixXd> probs;  // softmax: per-head n x n
    std::vector<Eigen::MatrixXd> ktv;    // linear: per-head dh x dh
    Eigen::MatrixXd ocat, hmid;
    LnCache ln2;
    Eigen::MatrixXd u2, ffpre, ffact;
};

// softmax attention output for one head; blocked over rows to bound memory
void attend_softmax_blocked(const Eigen::Ref<const Eigen::MatrixXd>& q,
                            const Eigen::Ref<const Eigen::MatrixXd>& k,
                            const Eigen::Ref<const Eigen::MatrixXd>& v,
                            Eigen::Ref<Eigen::MatrixXd> out) {
    const Eigen::Index n = q.rows();
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Eigen::Index block = std::min<Eigen::Index>(n, 256);
    Eigen::MatrixXd s;
    for (Eigen::Index r0 = 0; r0 < n; r0 += block) {
        Eigen::Index rows = std::min(block, n - r0);
        s = q.middleRows(r0, rows) * k.transpose() * scale;
        for (Eigen::Index i = 0; i < rows; ++i) {
            double mx = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - mx).exp();
            s.row(i) /= s.row(i).sum();
        }
        out.middleRows(r0, rows).noalias() = s * v;
    }
}

void attention_forward(const ModelConfig& cfg, const Eigen::MatrixXd& q,
                       const Eigen::MatrixXd& k, const Eigen::MatrixXd& v,
                       Eigen::MatrixXd& ocat, LayerCache* cache) {
    const Eigen::Index n = q.rows();
    const int dh = cfg.head_dim();
    ocat.resize(n, cfg.dmodel);
    for (int h = 0; h < cfg.heads; ++h) {
        auto qh = q.middleCols(h * dh, dh);
        auto kh = k.middleCols(h * dh, dh);
        auto vh = v.middleCols(h * dh, dh);
        if (cfg.attention == AttentionKind::Softmax) {
            if (cache) {
                const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                Eigen::MatrixXd s = qh * kh.transpose() * scale;
                for (Eigen::Index i = 0; i < n; ++i) {
                    double mx = s.row(i).maxCoeff();
                    s.row(i) = (s.row(i).array() - mx).exp();
                    s.row(i) /= s.row(i).sum();
                }
                ocat.middleCols(h * dh, dh).noalias() = s * vh;
                cache->probs.push_back(std::move(s));
            } else {
                attend_softmax_blocked(qh, kh, vh, ocat.middleCols(h * dh, dh));
            }
        } else {
            // Linear attention with identity feature map: (1/n) Q (K^T V)
            Eigen::MatrixXd ktv = kh.transpose() * vh;
            ocat.middleCols(h * dh, dh).noalias() =
                qh * ktv / static_cast<double>(n);
            if (cache) cache->ktv.push_back(std::move(ktv));
        }
    }
}

struct FullForward {
    std::vector<LayerCache> layers;  // only filled when caching
    Eigen::MatrixXd h_final;
    LnCache lnf;
    Eigen::MatrixXd z;
    Eigen::VectorXd yhat;
    Eigen::MatrixXd feat;
};

void check_finite(const Eigen::MatrixXd& m, int layer, const char* where) {
    if (!m.allFinite())
        throw std::runtime_error("forward: non-finite value at layer " +
                                 std::to_string(layer) + " (" + where + ")");
}

FullForward run_forward(const ModelParams& p, const std::vector<int>& xs, bool keep_cache,
                        const std::vector<int>* capture,
                        std::vector<Eigen::MatrixXd>* captured) {
    p.config.validate();
    if (xs.empty()) throw std::invalid_argument("forward: empty sequence");
    const ModelConfig& cfg = p.config;

    FullForward ff;
    ff.feat = features(xs);
    Eigen::MatrixXd h = ff.feat * p.embed;
    h.rowwise() += p.embed_b.transpose();
    check_finite(h, 0, "embedding");

    auto want = [&](int layer) {
        return capture &&
               std::find(capture->begin(), capture->end(), layer) != capture->end();
    };
    if (want(0) && captured) captured->push_back(h);

    for (int layer = 0; layer < cfg.layers; ++layer) {
        const GroupParams& g = p.groups[layer < cfg.layers / 2 ? 0 : 1];
        LayerCache lc;
        LayerCache* c = keep_cache ? &lc : nullptr;
        if (c) c->hin = h;

        Eigen::MatrixXd u = layer_norm(h, g.ln1_g, g.ln1_b, c ? &c->ln1 : nullptr);
        Eigen::MatrixXd q = u * g.wq, k = u * g.wk, v = u * g.wv;
        Eigen::MatrixXd ocat;
        attention_forward(cfg, q, k, v, ocat, c);
        h.noalias() += ocat * g.wo;
        check_finite(h, layer + 1, "attention");
        if (c) {
            c->u = std::move(u);
            c->q = std::move(q);
            c->k = std::move(k);
            c->v = std::move(v);
            c->ocat = std::move(ocat);
            c->hmid = h;
        }

        Eigen::MatrixXd u2 = layer_norm(h, g.ln2_g, g.ln2_b, c ? &c->ln2 : nullptr);
        Eigen::MatrixXd ffpre = u2 * g.w1;
        ffpre.rowwise() += g.b1.transpose();
        Eigen::MatrixXd ffact = ffpre.unaryExpr([](double x) { return gelu(x); });
        h.noalias() += ffact * g.w2;
        h.rowwise() += g.b2.transpose();
        check_finite(h, layer + 1, "feedforward");
        if (c) {
            c->u2 = std::move(u2);
            c->ffpre = std::move(ffpre);
            c->ffact = std::move(ffact);
            ff.layers.push_back(std::move(lc));
        }
        if (want(layer + 1) && captured) captured->push_back(h);
    }

    ff.h_final = h;
    ff.z = layer_norm(h, p.lnf_g, p.lnf_b, keep_cache ? &ff.lnf : nullptr);
    ff.yhat = ff.z * p.dec_w;
    ff.yhat.array() += p.dec_b;
    if (!ff.yhat.allFinite())
        throw std::runtime_error("forward: non-finite value at decoder");
    return ff;
}

}  // namespace

const char* attention_name(AttentionKind k) {
    return k == AttentionKind::Softmax ? "softmax" : "linear-identity";
}

AttentionKind attention_from_name(const std::string& s) {
    if (s == "softmax") return AttentionKind::Softmax;
    if (s == "linear-identity" || s == "linear") return AttentionKind::LinearIdentity;
    throw std::invalid_argument("unknown attention kind: " + s);
}

void ModelConfig::validate() const {
    if (layers < 2 || layers % 2 != 0)
        throw std::invalid_argument("ModelConfig: layers must be even and >= 2");
    if (dmodel <= 0 || heads <= 0 || dmodel % heads != 0)
        throw std::invalid_argument("ModelConfig: dmodel must be divisible by heads");
    if (ff <= 0) throw std::invalid_argument("ModelConfig: ff <= 0");
}

std::vector<TensorRef> tensor_refs(ModelParams& p) {
    std::vector<TensorRef> refs;
    auto add_m = [&](const std::string& name, Eigen::MatrixXd& m) {
        refs.push_back({name, m.data(), static_cast<std::size_t>(m.size())});
    };
    auto add_v = [&](const std::string& name, Eigen::VectorXd& v) {
        refs.push_back({name, v.data(), static_cast<std::size_t>(v.size())});
    };
    add_m("embed", p.embed);
    add_v("embed_b", p.embed_b);
    for (int g = 0; g < 2; ++g) {
        std::string pre = "group" + std::to_string(g) + ".";
        add_m(pre + "wq", p.groups[g].wq);
        add_m(pre + "wk", p.groups[g].wk);
        add_m(pre + "wv", p.groups[g].wv);
        add_m(pre + "wo", p.groups[g].wo);
        add_v(pre + "ln1_g", p.groups[g].ln1_g);
        add_v(pre + "ln1_b", p.groups[g].ln1_b);
        add_v(pre + "ln2_g", p.groups[g].ln2_g);
        add_v(pre + "ln2_b", p.groups[g].ln2_b);
        add_m(pre + "w1", p.groups[g].w1);
        add_v(pre + "b1", p.groups[g].b1);
        add_m(pre + "w2", p.groups[g].w2);
        add_v(pre + "b2", p.groups[g].b2);
    }
    add_v("lnf_g", p.lnf_g);
    add_v("lnf_b", p.lnf_b);
    add_v("dec_w", p.dec_w);
    refs.push_back({"dec_b", &p.dec_b, 1});
    return refs;
}

std::size_t param_count(const ModelParams& p) {
    std::size_t n = 0;
    for (const auto& r : tensor_refs(const_cast<ModelParams&>(p))) n += r.size;
    return n;
}

std::uint64_t params_checksum(const ModelParams& p) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& r : tensor_refs(const_cast<ModelParams&>(p))) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(r.data);
        for (std::size_t i = 0; i < r.size * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

static void shape_params(ModelParams& p) {
    const ModelConfig& c = p.config;
    p.embed.resize(2, c.dmodel);
    p.embed_b.resize(c.dmodel);
    for (auto& g : p.groups) {
        g.wq.resize(c.dmodel, c.dmodel);
        g.wk.resize(c.dmodel, c.dmodel);
        g.wv.resize(c.dmodel, c.dmodel);
        g.wo.resize(c.dmodel, c.dmodel);
        g.ln1_g.resize(c.dmodel);
        g.ln1_b.resize(c.dmodel);
        g.ln2_g.resize(c.dmodel);
        g.ln2_b.resize(c.dmodel);
        g.w1.resize(c.dmodel, c.ff);
        g.b1.resize(c.ff);
        g.w2.resize(c.ff, c.dmodel);
        g.b2.resize(c.dmodel);
    }
    p.lnf_g.resize(c.dmodel);
    p.lnf_b.resize(c.dmodel);
    p.dec_w.resize(c.dmodel);
}

ModelParams zero_like(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    shape_params(p);
    for (auto& r : tensor_refs(p)) std::fill(r.data, r.data + r.size, 0.0);
    return p;
}

ModelParams init_params(const ModelConfig& cfg) {
    ModelParams p = zero_like(cfg);
    auto rng = make_rng(cfg.seed, 0x696e6974ULL);
    auto xavier = [&](Eigen::MatrixXd& m) {
        double lim = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    };
    xavier(p.embed);
    for (auto& g : p.groups) {
        xavier(g.wq);
        xavier(g.wk);
        xavier(g.wv);
        xavier(g.wo);
        g.ln1_g.setOnes();
        g.ln2_g.setOnes();
        xavier(g.w1);
        xavier(g.w2);
    }
    p.lnf_g.setOnes();
    {
        double lim = std::sqrt(6.0 / static_cast<double>(p.dec_w.size() + 1));
        std::uniform_real_distribution<double> u(-lim, lim);
        for (Eigen::Index i = 0; i < p.dec_w.size(); ++i) p.dec_w(i) = u(rng);
    }
    return p;
}

ForwardResult forward(const ModelParams& p, const std::vector<int>& xs,
                      const std::vector<int>* capture_layers) {
    ForwardResult res;
    FullForward ff = run_forward(p, xs, false, capture_layers, &res.activations);
    res.estimates.assign(ff.yhat.data(), ff.yhat.data() + ff.yhat.size());
    return res;
}

LossGrad loss_and_grad(const ModelParams& p, const Batch& batch) {
    if (batch.xs.size() != batch.thetas.size() || batch.xs.empty())
        throw std::invalid_argument("loss_and_grad: malformed batch");
    const ModelConfig& cfg = p.config;
    const auto n = static_cast<Eigen::Index>(batch.xs.size());

    FullForward ff = run_forward(p, batch.xs, true, nullptr, nullptr);

    LossGrad out;
    out.grads = zero_like(cfg);
    ModelParams& g = out.grads;

    Eigen::VectorXd dy(n);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double diff = ff.yhat(i) - batch.thetas[i];
        loss += diff * diff;
        dy(i) = 2.0 * diff / static_cast<double>(n);
    }
    out.loss = loss / static_cast<double>(n);

    // decoder and final layer norm
    g.dec_w += ff.z.transpose() * dy;
    g.dec_b += dy.sum();
    Eigen::MatrixXd dz = dy * p.dec_w.transpose();
    Eigen::MatrixXd dh = layer_norm_backward(dz, ff.lnf, p.lnf_g, g.lnf_g, g.lnf_b);

    const int dh_dim = cfg.head_dim();
    for (int layer = cfg.layers - 1; layer >= 0; --layer) {
        const GroupParams& gp = p.groups[layer < cfg.layers / 2 ? 0 : 1];
        GroupParams& gg = g.groups[layer < cfg.layers / 2 ? 0 : 1];
        const LayerCache& c = ff.layers[layer];

        // feedforward sublayer
        Eigen::MatrixXd dffout = dh;  // residual: dh flows to both branches
        gg.b2 += dffout.colwise().sum().transpose();
        gg.w2 += c.ffact.transpose() * dffout;
        Eigen::MatrixXd dffact = dffout * gp.w2.transpose();
        Eigen::MatrixXd dffpre =
            dffact.array() * c.ffpre.unaryExpr([](double x) { return gelu_grad(x); }).array();
        gg.b1 += dffpre.colwise().sum().transpose();
        gg.w1 += c.u2.transpose() * dffpre;
        Eigen::MatrixXd du2 = dffpre * gp.w1.transpose();
        Eigen::MatrixXd dhmid =
            dh + layer_norm_backward(du2, c.ln2, gp.ln2_g, gg.ln2_g, gg.ln2_b);

        // attention sublayer
        Eigen::MatrixXd docat = dhmid * gp.wo.transpose();
        gg.wo += c.ocat.transpose() * dhmid;
        Eigen::MatrixXd dq(n, cfg.dmodel), dk(n, cfg.dmodel), dv(n, cfg.dmodel);
        for (int h = 0; h < cfg.heads; ++h) {
            auto qh = c.q.middleCols(h * dh_dim, dh_dim);
            auto kh = c.k.middleCols(h * dh_dim, dh_dim);
            auto vh = c.v.middleCols(h * dh_dim, dh_dim);
            auto doh = docat.middleCols(h * dh_dim, dh_dim);
            if (cfg.attention == AttentionKind::Softmax) {
                const Eigen::MatrixXd& prob = c.probs[h];
                const double scale = 1.0 / std::sqrt(static_cast<double>(dh_dim));
                Eigen::MatrixXd dprob = doh * vh.transpose();
                dv.middleCols(h * dh_dim, dh_dim).noalias() = prob.transpose() * doh;
                Eigen::VectorXd rowdot =
                    (dprob.array() * prob.array()).rowwise().sum();
                Eigen::MatrixXd ds =
                    prob.array() * (dprob.colwise() - rowdot).array();
                dq.middleCols(h * dh_dim, dh_dim).noalias() = ds * kh * scale;
                dk.middleCols(h * dh_dim, dh_dim).noalias() = ds.transpose() * qh * scale;
            } else {
                const Eigen::MatrixXd& ktv = c.ktv[h];
                const double inv_n = 1.0 / static_cast<double>(n);
                dq.middleCols(h * dh_dim, dh_dim).noalias() =
                    doh * ktv.transpose() * inv_n;
                Eigen::MatrixXd dktv = qh.transpose() * doh * inv_n;
                dk.middleCols(h * dh_dim, dh_dim).noalias() = vh * dktv.transpose();
                dv.middleCols(h * dh_dim, dh_dim).noalias() = kh * dktv;
            }
        }
        gg.wq += c.u.transpose() * dq;
        gg.wk += c.u.transpose() * dk;
        gg.wv += c.u.transpose() * dv;
        Eigen::MatrixXd du =
            dq * gp.wq.transpose() + dk * gp.wk.transpose() + dv * gp.wv.transpose();
        dh = dhmid + layer_norm_backward(du, c.ln1, gp.ln1_g, gg.ln1_g, gg.ln1_b);
    }

    // embedding
    g.embed += ff.feat.transpose() * dh;
    g.embed_b += dh.colwise().sum().transpose();

    for (const auto& r : tensor_refs(g))
        for (std::size_t i = 0; i < r.size; ++i)
            if (!std::isfinite(r.data[i]))
                throw std::runtime_error("loss_and_grad: non-finite gradient in " + r.name);
    return out;
}

namespace {

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
};

void adam_step(ModelParams& p, const ModelParams& grads, AdamState& st,
               const TrainSchedule& s, double lr) {
    auto pr = tensor_refs(p);
    auto gr = tensor_refs(const_cast<ModelParams&>(grads));
    std::size_t total = 0;
    for (auto& r : pr) total += r.size;
    if (st.m.empty()) {
        st.m.assign(total, 0.0);
        st.v.assign(total, 0.0);
    }
    ++st.t;
    double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(st.t));
    double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(st.t));
    std::size_t off = 0;
    for (std::size_t k = 0; k < pr.size(); ++k) {
        for (std::size_t i = 0; i < pr[k].size; ++i, ++off) {
            double gval = gr[k].data[i];
            st.m[off] = s.beta1 * st.m[off] + (1.0 - s.beta1) * gval;
            st.v[off] = s.beta2 * st.v[off] + (1.0 - s.beta2) * gval * gval;
            double mhat = st.m[off] / bc1;
            double vhat = st.v[off] / bc2;
            pr[k].data[i] -= lr * mhat / (std::sqrt(vhat) + s.adam_eps);
        }
    }
}

Batch draw_train_batch(const TrainSchedule& s, std::uint64_t seed, int epoch, int seq_index) {
    auto rng = make_rng(seed, 0x747261696eULL, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(seq_index));
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    bool use_neural;
    if (s.prior_mix == "neural") use_neural = true;
    else if (s.prior_mix == "dirichlet") use_neural = false;
    else use_neural = unif(rng) < 0.5;

    ThetaMaxLaw law = s.theta_max_law;
    double tmax = s.randomize_theta_max ? sample_theta_max(law, rng) : s.theta_max_fixed;

    std::vector<double> base;
    if (use_neural) {
        NeuralPriorSpec spec = sample_neural_prior(rng);
        base = sample_theta_base_batch(spec, s.seq_len, rng);
    } else {
        base = sample_dirichlet_batch(DirichletProcessSpec{s.dp_alpha}, s.seq_len, rng);
    }

    Batch b;
    b.prior_id = use_neural ? "neural" : "dirichlet";
    b.thetas.resize(base.size());
    b.xs.resize(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
        double th = base[i] * tmax;
        b.thetas[i] = th;
        if (th == 0.0) {
            b.xs[i] = 0;
        } else {
            std::poisson_distribution<int> poi(th);
            b.xs[i] = poi(rng);
        }
    }
    return b;
}

}  // namespace

TrainResult train(const ModelConfig& cfg, const TrainSchedule& sched, std::uint64_t seed) {
    cfg.validate();
    if (sched.microbatch < 1 || sched.batches_per_epoch < sched.microbatch)
        throw std::invalid_argument("train: bad microbatch/batches_per_epoch");

    TrainResult result;
    result.params = init_params(cfg);
    AdamState adam;

    const int steps = sched.batches_per_epoch / sched.microbatch;
    const int mb = sched.microbatch;
    const double inv_mb = 1.0 / static_cast<double>(mb);

    for (int epoch = 0; epoch < sched.epochs; ++epoch) {
        double lr = sched.lr * std::pow(sched.decay, epoch / sched.decay_every);
        double epoch_loss = 0.0;
        for (int step = 0; step < steps; ++step) {
            ModelParams grads = zero_like(cfg);
            double step_loss = 0.0;
            std::vector<LossGrad> parts(mb);
            if (sched.threads > 1) {
                std::string err;
#pragma omp parallel for schedule(dynamic) num_threads(sched.threads)
                for (int j = 0; j < mb; ++j) {
                    try {
                        Batch b = draw_train_batch(sched, seed, epoch, step * mb + j);
                        parts[j] = loss_and_grad(result.params, b);
                    } catch (const std::exception& e) {
#pragma omp critical
                        err = e.what();
                    }
                }
                if (!err.empty()) throw std::runtime_error(err);
            } else {
                for (int j = 0; j < mb; ++j) {
                    Batch b = draw_train_batch(sched, seed, epoch, step * mb + j);
                    parts[j] = loss_and_grad(result.params, b);
                }
            }
            // fixed-order reduction keeps the result thread-count independent
            auto acc = tensor_refs(grads);
            for (int j = 0; j < mb; ++j) {
                step_loss += parts[j].loss;
                auto src = tensor_refs(parts[j].grads);
                for (std::size_t k = 0; k < acc.size(); ++k)
                    for (std::size_t i = 0; i < acc[k].size; ++i)
                        acc[k].data[i] += src[k].data[i] * inv_mb;
            }
            step_loss *= inv_mb;
            epoch_loss += step_loss;
            if (!std::isfinite(step_loss) || step_loss > sched.divergence_loss)
                throw std::runtime_error("train: diverged at epoch " + std::to_string(epoch) +
                                         " (loss " + std::to_string(step_loss) + ")");
            adam_step(result.params, grads, adam, sched, lr);
        }
        result.log.push_back({epoch, epoch_loss / steps, lr});
    }
    return result;
}

void save_train_log(const std::vector<TrainLogRow>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_train_log: cannot open " + path);
    out << "epoch,mean_loss,lr\n";
    out.precision(12);
    for (const auto& row : log)
        out << row.epoch << ',' << row.mean_loss << ',' << row.lr << "\n";
}

namespace {
constexpr char kMagic[8] = {'E', 'B', 'P', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

nlohmann::json config_json(const ModelConfig& c) {
    return {{"layers", c.layers},   {"dmodel", c.dmodel}, {"heads", c.heads},
            {"attention", attention_name(c.attention)},   {"ff", c.ff},
            {"seed", c.seed}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.dmodel = j.at("dmodel").get<int>();
    c.heads = j.at("heads").get<int>();
    c.attention = attention_from_name(j.at("attention").get<std::string>());
    c.ff = j.at("ff").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}
}  // namespace

void save_params(const ModelParams& p, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_params: cannot open " + path);
    out.write(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    std::string cj = config_json(p.config).dump();
    std::uint32_t len = static_cast<std::uint32_t>(cj.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(cj.data(), len);
    for (const auto& r : tensor_refs(const_cast<ModelParams&>(p)))
        out.write(reinterpret_cast<const char*>(r.data),
                  static_cast<std::streamsize>(r.size * sizeof(double)));
    if (!out) throw std::runtime_error("save_params: write failed for " + path);
}

ModelParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_params: cannot open " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("load_params: bad magic in " + path);
    std::uint32_t version = 0, len = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kVersion)
        throw std::runtime_error("load_params: unsupported version");
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1u << 20)) throw std::runtime_error("load_params: bad header");
    std::string cj(len, '\0');
    in.read(cj.data(), len);
    if (!in) throw std::runtime_error("load_params: truncated header");

    ModelParams p = zero_like(config_from_json(nlohmann::json::parse(cj)));
    for (auto& r : tensor_refs(p)) {
        in.read(reinterpret_cast<char*>(r.data),
                static_cast<std::streamsize>(r.size * sizeof(double)));
        if (!in)
            throw std::runtime_error("load_params: shape mismatch reading " + r.name);
    }
    char extra;
    if (in.read(&extra, 1))
        throw std::runtime_error("load_params: trailing bytes in " + path);
    return p;
}

}  // namespace ebp::tf
