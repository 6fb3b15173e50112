#include "ebp/priors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ebp/common.hpp"
#include "json.hpp"

namespace ebp {

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::GELU: return "gelu";
        case Activation::ReLU: return "relu";
        case Activation::SELU: return "selu";
        case Activation::CELU: return "celu";
        case Activation::SiLU: return "silu";
        case Activation::Tanh: return "tanh";
        case Activation::TanhShrink: return "tanhshrink";
    }
    return "?";
}

double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::GELU:
            return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
        case Activation::ReLU:
            return x > 0.0 ? x : 0.0;
        case Activation::SELU: {
            constexpr double lambda = 1.0507009873554804934193349852946;
            constexpr double alpha = 1.6732632423543772848170429916717;
            return x > 0.0 ? lambda * x : lambda * alpha * (std::exp(x) - 1.0);
        }
        case Activation::CELU:
            return x > 0.0 ? x : std::exp(x) - 1.0;
        case Activation::SiLU:
            return x / (1.0 + std::exp(-x));
        case Activation::Tanh:
            return std::tanh(x);
        case Activation::TanhShrink:
            return x - std::tanh(x);
    }
    return x;
}

static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double NeuralPriorSpec::push(std::size_t comp, double u) const {
    const Component& c = components.at(comp);
    const std::size_t h = c.w1.size();
    double acc = 0.0;
    for (std::size_t i = 0; i < h; ++i)
        acc += c.w2[i] * apply_activation(c.act, c.w1[i] * u);
    return sigmoid(10.0 * acc);
}

double NeuralPriorSpec::sample(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double r = unif(rng);
    std::size_t comp = 0;
    double acc = 0.0;
    for (std::size_t k = 0; k < mixture.size(); ++k) {
        acc += mixture[k];
        if (r <= acc) { comp = k; break; }
        comp = k;  // numerical slack: fall through to the last component
    }
    return push(comp, unif(rng));
}

NeuralPriorSpec sample_neural_prior(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> pick_act(0, 6);
    std::gamma_distribution<double> gamma1(1.0, 1.0);

    NeuralPriorSpec spec;
    spec.components.resize(4);
    for (auto& c : spec.components) {
        c.w1.resize(kNeuralHiddenWidth);
        c.w2.resize(kNeuralHiddenWidth);
        for (double& v : c.w1) v = gauss(rng);
        for (double& v : c.w2) v = gauss(rng);
        c.act = static_cast<Activation>(pick_act(rng));
    }
    // component weights ~ Dirichlet(1,1,1,1)
    spec.mixture.resize(4);
    double s = 0.0;
    for (double& w : spec.mixture) { w = gamma1(rng); s += w; }
    for (double& w : spec.mixture) w /= s;
    return spec;
}

std::vector<double> sample_theta_base_batch(const NeuralPriorSpec& spec, std::size_t n,
                                            std::mt19937_64& rng) {
    std::vector<double> out(n);
    for (double& v : out) v = spec.sample(rng);
    return out;
}

std::vector<double> sample_dirichlet_batch(const DirichletProcessSpec& spec, std::size_t n,
                                           std::mt19937_64& rng) {
    if (spec.alpha <= 0.0) throw std::invalid_argument("dirichlet process: alpha <= 0");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<double> out;
    out.reserve(n);
    for (std::size_t j = 1; j <= n; ++j) {
        double p_new = spec.alpha / (spec.alpha + j - 1.0);
        if (j == 1 || unif(rng) < p_new) {
            out.push_back(unif(rng));
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, j - 2);
            out.push_back(out[pick(rng)]);
        }
    }
    return out;
}

ThetaMaxDraw sample_theta_max_branch(const ThetaMaxLaw& law, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double total = law.w_uniform + law.w_exponential + law.w_cauchy;
    double r = unif(rng) * total;
    double v;
    int branch;
    if (r < law.w_uniform) {
        v = unif(rng) * law.uniform_hi;
        branch = 0;
    } else if (r < law.w_uniform + law.w_exponential) {
        std::exponential_distribution<double> ex(1.0 / law.exp_scale);
        v = ex(rng);
        branch = 1;
    } else {
        std::cauchy_distribution<double> cy(law.cauchy_loc, law.cauchy_scale);
        v = cy(rng);
        branch = 2;
    }
    return {std::clamp(v, 0.0, law.cap), branch};
}

double sample_theta_max(const ThetaMaxLaw& law, std::mt19937_64& rng) {
    return sample_theta_max_branch(law, rng).value;
}

DiscretePrior multinomial_grid_prior(std::size_t grid_size, double theta_max,
                                     std::mt19937_64& rng, double alpha) {
    if (grid_size < 1) throw std::invalid_argument("multinomial_grid_prior: grid_size < 1");
    DiscretePrior p;
    p.theta_max = theta_max;
    p.id = "multinomial";
    p.atoms.resize(grid_size);
    p.weights.resize(grid_size);
    for (std::size_t j = 0; j < grid_size; ++j)
        p.atoms[j] = grid_size == 1 ? theta_max
                                    : theta_max * static_cast<double>(j) / (grid_size - 1);
    std::gamma_distribution<double> gamma(alpha, 1.0);
    double s = 0.0;
    for (double& w : p.weights) { w = gamma(rng); s += w; }
    for (double& w : p.weights) w /= s;
    return p;
}

DiscretePrior discretize_samples(std::vector<double> samples, std::size_t grid_points,
                                 double theta_max, const std::string& id) {
    if (samples.empty()) throw std::invalid_argument("discretize_samples: empty");
    std::sort(samples.begin(), samples.end());
    const std::size_t m = std::min(grid_points, samples.size());
    DiscretePrior p;
    p.theta_max = theta_max;
    p.id = id;
    // quantile grid; exact duplicates (saturated pushforwards) merge weights
    for (std::size_t k = 0; k < m; ++k) {
        double q = (k + 0.5) / static_cast<double>(m);
        double v = samples[std::min(samples.size() - 1,
                                    static_cast<std::size_t>(q * samples.size()))];
        if (!p.atoms.empty() && v - p.atoms.back() < 1e-12) {
            p.weights.back() += 1.0;
        } else {
            p.atoms.push_back(v);
            p.weights.push_back(1.0);
        }
    }
    double s = 0.0;
    for (double w : p.weights) s += w;
    for (double& w : p.weights) w /= s;
    return p;
}

DiscretePrior discretize_neural_prior(const NeuralPriorSpec& spec, double theta_max,
                                      std::mt19937_64& rng, std::size_t mc_samples,
                                      std::size_t grid_points) {
    std::vector<double> samples(mc_samples);
    for (double& v : samples) v = spec.sample(rng) * theta_max;
    return discretize_samples(std::move(samples), grid_points, theta_max, "neural");
}

std::string to_json(const DiscretePrior& p) {
    nlohmann::json j;
    j["theta_max"] = p.theta_max;
    j["atoms"] = p.atoms;
    j["weights"] = p.weights;
    if (!p.id.empty()) j["id"] = p.id;
    return j.dump(2);
}

DiscretePrior prior_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    DiscretePrior p;
    p.theta_max = j.at("theta_max").get<double>();
    p.atoms = j.at("atoms").get<std::vector<double>>();
    p.weights = j.at("weights").get<std::vector<double>>();
    if (j.contains("id")) p.id = j["id"].get<std::string>();
    p.validate();
    return p;
}

void save_prior(const DiscretePrior& p, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_prior: cannot open " + path);
    out << to_json(p) << "\n";
}

DiscretePrior load_prior(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_prior: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return prior_from_json(ss.str());
}

}  // namespace ebp
