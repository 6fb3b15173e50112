#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ebp/common.hpp"
#include "ebp/poisson.hpp"
#include "ebp/priors.hpp"
#include "json.hpp"

namespace ebp {

namespace {

// Dense pmf matrix over the fixed grid; rows are grid atoms.
struct GridTables {
    std::vector<double> atoms;
    int x_trunc;
    std::vector<std::vector<double>> pmf;  // pmf[k][x]

    GridTables(double theta_max, double h) {
        int K = std::max(1, static_cast<int>(std::round(theta_max / h)));
        atoms.resize(K + 1);
        for (int k = 0; k <= K; ++k) atoms[k] = theta_max * k / static_cast<double>(K);
        x_trunc = poisson_tail_cutoff(theta_max, 1e-15);
        pmf.assign(atoms.size(), std::vector<double>(x_trunc + 1));
        for (std::size_t k = 0; k < atoms.size(); ++k)
            for (int x = 0; x <= x_trunc; ++x)
                pmf[k][x] = std::exp(poisson_logpmf(x, atoms[k]));
    }
};

struct ActiveState {
    std::vector<int> idx;       // grid indices, sorted ascending
    std::vector<double> w;      // matching weights

    void drop_zeros(double eps = 1e-12) {
        std::vector<int> ni;
        std::vector<double> nw;
        double s = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            if (w[j] > eps) {
                ni.push_back(idx[j]);
                nw.push_back(w[j]);
                s += w[j];
            }
        }
        for (double& v : nw) v /= s;
        idx = std::move(ni);
        w = std::move(nw);
    }
};

// mmse restricted to the active support, using the precomputed pmf rows.
double active_mmse(const GridTables& g, const ActiveState& s) {
    double second = 0.0;
    for (std::size_t j = 0; j < s.idx.size(); ++j)
        second += s.w[j] * sqr(g.atoms[s.idx[j]]);
    double acc = 0.0;
    for (int x = 0; x <= g.x_trunc; ++x) {
        double m = 0.0, e = 0.0;
        for (std::size_t j = 0; j < s.idx.size(); ++j) {
            double p = s.w[j] * g.pmf[s.idx[j]][x];
            m += p;
            e += p * g.atoms[s.idx[j]];
        }
        if (m > 0.0) acc += e * e / m;
    }
    return second - acc;
}

// posterior mean table of the active prior, for x = 0..x_trunc
void posterior_means(const GridTables& g, const ActiveState& s, std::vector<double>& out) {
    out.assign(g.x_trunc + 1, 0.0);
    for (int x = 0; x <= g.x_trunc; ++x) {
        double m = 0.0, e = 0.0;
        for (std::size_t j = 0; j < s.idx.size(); ++j) {
            double p = s.w[j] * g.pmf[s.idx[j]][x];
            m += p;
            e += p * g.atoms[s.idx[j]];
        }
        out[x] = m > 0.0 ? e / m : g.atoms.back();
    }
}

// MSE of the active prior's Bayes rule at every grid atom (= mmse gradient)
void grid_mse(const GridTables& g, const std::vector<double>& post, std::vector<double>& out) {
    out.assign(g.atoms.size(), 0.0);
    for (std::size_t k = 0; k < g.atoms.size(); ++k) {
        double a = g.atoms[k];
        double acc = 0.0;
        const auto& row = g.pmf[k];
        for (int x = 0; x <= g.x_trunc; ++x) acc += row[x] * sqr(post[x] - a);
        out[k] = acc;
    }
}

// concave 1-d maximization by ternary search
template <typename F>
double ternary_max(F f, double lo, double hi, int iters = 48) {
    for (int i = 0; i < iters; ++i) {
        double a = lo + (hi - lo) / 3.0;
        double b = hi - (hi - lo) / 3.0;
        if (f(a) < f(b)) lo = a; else hi = b;
    }
    return 0.5 * (lo + hi);
}

std::string cache_path(double theta_max, double h, double tol, std::string dir) {
    if (dir.empty()) {
        if (const char* env = std::getenv("EBP_CACHE_DIR")) dir = env;
        else dir = ".ebp-cache";
    }
    std::filesystem::create_directories(dir);
    std::ostringstream ss;
    ss.precision(10);
    ss << dir << "/wcp_tmax" << theta_max << "_h" << h << "_tol" << tol << ".json";
    return ss.str();
}

}  // namespace

WorstCaseResult worst_case_prior(double theta_max, double grid_resolution, double tol,
                                 int max_iter) {
    if (theta_max <= 0.0) throw std::invalid_argument("worst_case_prior: theta_max <= 0");
    if (tol <= 0.0) throw std::invalid_argument("worst_case_prior: tol <= 0");

    GridTables grid(theta_max, grid_resolution);
    const int K = static_cast<int>(grid.atoms.size()) - 1;

    ActiveState st;
    st.idx = {0, K};
    st.w = {0.5, 0.5};
    if (K == 0) { st.idx = {0}; st.w = {1.0}; }

    std::vector<double> post, g;
    double gap = 0.0;
    int it = 0;
    for (; it < max_iter; ++it) {
        posterior_means(grid, st, post);
        grid_mse(grid, post, g);

        double cur = 0.0;  // <w, g> = mmse of current iterate
        for (std::size_t j = 0; j < st.idx.size(); ++j) cur += st.w[j] * g[st.idx[j]];

        int k_fw = 0;
        for (std::size_t k = 1; k < g.size(); ++k)
            if (g[k] > g[k_fw]) k_fw = static_cast<int>(k);
        std::size_t j_away = 0;
        for (std::size_t j = 1; j < st.idx.size(); ++j)
            if (g[st.idx[j]] < g[st.idx[j_away]]) j_away = j;

        gap = g[k_fw] - cur;
        if (gap <= tol) break;

        // pairwise step: move weight from the lowest-MSE support atom to the
        // highest-MSE grid atom (avoids the toward/away zig-zag)
        auto pos = std::lower_bound(st.idx.begin(), st.idx.end(), k_fw);
        std::size_t jnew = static_cast<std::size_t>(pos - st.idx.begin());
        if (pos == st.idx.end() || *pos != k_fw) {
            st.idx.insert(pos, k_fw);
            st.w.insert(st.w.begin() + jnew, 0.0);
            if (jnew <= j_away) ++j_away;
        }
        bool moved = false;
        if (jnew != j_away) {
            double gmax = st.w[j_away];
            auto eval = [&](double gamma) {
                ActiveState t = st;
                t.w[jnew] += gamma;
                t.w[j_away] -= gamma;
                return active_mmse(grid, t);
            };
            double gamma = ternary_max(eval, 0.0, gmax);
            if (gamma > gmax * (1.0 - 1e-9)) gamma = gmax;  // away atom drops
            if (gamma > 1e-13) {
                st.w[jnew] += gamma;
                st.w[j_away] -= gamma;
                moved = true;
            }
        }
        if (!moved) {
            // the lowest-MSE atom carries no usable weight: take a plain
            // toward step, blending the whole iterate with delta_{k_fw}
            auto eval = [&](double gamma) {
                ActiveState t = st;
                for (double& v : t.w) v *= (1.0 - gamma);
                t.w[jnew] += gamma;
                return active_mmse(grid, t);
            };
            double gamma = ternary_max(eval, 0.0, 1.0);
            for (double& v : st.w) v *= (1.0 - gamma);
            st.w[jnew] += gamma;
        }
        st.drop_zeros();
    }

    double m = active_mmse(grid, st);
    if (gap > tol)
        throw SolverError("worst_case_prior: no convergence in " + std::to_string(max_iter) +
                              " iterations; residual gap " + std::to_string(gap),
                          gap);

    WorstCaseResult res;
    res.prior.theta_max = theta_max;
    res.prior.id = "worst_case";
    for (std::size_t j = 0; j < st.idx.size(); ++j) {
        res.prior.atoms.push_back(grid.atoms[st.idx[j]]);
        res.prior.weights.push_back(st.w[j]);
    }
    res.prior = res.prior.pruned(1e-10);
    res.prior.id = "worst_case";
    res.prior.validate();
    res.mmse = m;
    res.gap = gap;
    res.iterations = it;
    return res;
}

WorstCaseResult worst_case_prior_cached(double theta_max, double grid_resolution, double tol,
                                        int max_iter, std::string cache_dir) {
    const std::string path = cache_path(theta_max, grid_resolution, tol, std::move(cache_dir));
    if (std::filesystem::exists(path)) {
        std::ifstream in(path);
        std::stringstream ss;
        ss << in.rdbuf();
        try {
            nlohmann::json j = nlohmann::json::parse(ss.str());
            WorstCaseResult res;
            res.prior = prior_from_json(j.at("prior").dump());
            res.mmse = j.at("mmse").get<double>();
            res.gap = j.at("gap").get<double>();
            res.iterations = j.at("iterations").get<int>();
            if (res.gap <= tol) return res;
        } catch (const std::exception&) {
            // corrupt cache entry: fall through and re-solve
        }
    }
    WorstCaseResult res = worst_case_prior(theta_max, grid_resolution, tol, max_iter);
    nlohmann::json j;
    j["prior"] = nlohmann::json::parse(to_json(res.prior));
    j["mmse"] = res.mmse;
    j["gap"] = res.gap;
    j["iterations"] = res.iterations;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
    return res;
}

}  // namespace ebp
