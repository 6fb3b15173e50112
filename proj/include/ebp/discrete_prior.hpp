#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ebp {

/// Finite atomic distribution on [0, theta_max]; the universal prior
/// representation shared by oracles, NPMLE output and worst-case priors.
struct DiscretePrior {
    std::vector<double> atoms;    // strictly increasing, in [0, theta_max]
    std::vector<double> weights;  // nonnegative, sum to 1
    double theta_max = 0.0;
    std::string id;

    std::size_t size() const { return atoms.size(); }

    void validate() const {
        if (atoms.size() != weights.size())
            throw std::invalid_argument("DiscretePrior: atom/weight length mismatch");
        if (atoms.empty()) throw std::invalid_argument("DiscretePrior: empty");
        double s = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            if (atoms[j] < 0.0 || atoms[j] > theta_max + 1e-12)
                throw std::invalid_argument("DiscretePrior: atom outside [0, theta_max]");
            if (j > 0 && !(atoms[j] > atoms[j - 1]))
                throw std::invalid_argument("DiscretePrior: atoms not strictly increasing");
            if (weights[j] < 0.0)
                throw std::invalid_argument("DiscretePrior: negative weight");
            s += weights[j];
        }
        if (std::abs(s - 1.0) > 1e-12)
            throw std::invalid_argument("DiscretePrior: weights sum to " + std::to_string(s));
    }

    double mean() const {
        double s = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) s += weights[j] * atoms[j];
        return s;
    }

    double second_moment() const {
        double s = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) s += weights[j] * atoms[j] * atoms[j];
        return s;
    }

    /// Drops atoms with weight < eps and renormalizes.
    DiscretePrior pruned(double eps = 1e-10) const {
        DiscretePrior out;
        out.theta_max = theta_max;
        out.id = id;
        double s = 0.0;
        for (std::size_t j = 0; j < atoms.size(); ++j) {
            if (weights[j] >= eps) {
                out.atoms.push_back(atoms[j]);
                out.weights.push_back(weights[j]);
                s += weights[j];
            }
        }
        for (double& w : out.weights) w /= s;
        return out;
    }

    static DiscretePrior point_mass(double c) {
        return DiscretePrior{{c}, {1.0}, c, "delta"};
    }
};

// JSON round-trip ({theta_max, atoms[], weights[]}); defined in priors.cpp.
std::string to_json(const DiscretePrior& p);
DiscretePrior prior_from_json(const std::string& text);
void save_prior(const DiscretePrior& p, const std::string& path);
DiscretePrior load_prior(const std::string& path);

}  // namespace ebp
