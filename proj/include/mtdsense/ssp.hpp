#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "milp.hpp"
#include "product.hpp"

namespace mtdsense {

/// Per-state probability of reaching a final state. Indexed like the MDP.
struct ValueVector {
    std::vector<double> values;

    double operator[](std::size_t z) const { return values[z]; }
    std::size_t size() const { return values.size(); }
};

/// pi(a|z); probs[z][k] belongs to mdp.rows[z][k]. Absorbing states have
/// empty entries.
struct StochasticPolicy {
    std::vector<std::vector<double>> probs;
    double temperature = 0.0;
};

struct StateRelevanceWeights {
    std::vector<double> weights;

    /// c_z = iota(z) + floor. Weights must be strictly positive for the LP to
    /// pin down every state, while iota vanishes on most product states.
    static StateRelevanceWeights from_initial(const ProductMdp& mdp, double floor = 1e-6) {
        StateRelevanceWeights c;
        c.weights.resize(mdp.size());
        for (std::size_t z = 0; z < mdp.size(); ++z) c.weights[z] = mdp.initial[z] + floor;
        return c;
    }
};

/// iota . v, the success probability seen from the initial distribution.
inline double initial_value(const ProductMdp& mdp, const ValueVector& v) {
    double sum = 0.0;
    for (std::size_t z = 0; z < mdp.size(); ++z) sum += mdp.initial[z] * v[z];
    return sum;
}

inline double weighted_sum(const StateRelevanceWeights& c, const ValueVector& v) {
    double sum = 0.0;
    for (std::size_t z = 0; z < v.size(); ++z) sum += c.weights[z] * v[z];
    return sum;
}

inline double q_value(const ActionRow& row, const ValueVector& v) {
    double q = 0.0;
    for (const auto& o : row.outcomes) q += o.prob * v[o.next];
    return q;
}

/**
 * The reachability LP: minimize sum_z c_z v_z subject to
 * v_z >= sum_z' P(z'|z,a) v_z' for every non-absorbing z and defined a,
 * v = 1 on final states, v = 0 at the sink, v >= 0.
 */
inline MilpModel build_ssp_lp(const ProductMdp& mdp, const StateRelevanceWeights& c) {
    if (c.weights.size() != mdp.size()) throw ValidationError("state-relevance weights have wrong size");
    for (double w : c.weights)
        if (!(w > 0.0)) throw ValidationError("state-relevance weights must be strictly positive");
    MilpModel lp;
    for (std::size_t z = 0; z < mdp.size(); ++z) {
        double lo = 0.0, hi = kInf;
        if (mdp.is_sink(z)) hi = 0.0;
        else if (mdp.final[z]) lo = hi = 1.0;
        lp.add_variable("v_" + mdp.state_names[z], lo, hi);
    }
    for (std::size_t z = 0; z < mdp.size(); ++z) {
        if (mdp.is_absorbing(z)) continue;
        for (const auto& row : mdp.rows[z]) {
            LinearExpr e{{z, 1.0}};
            for (const auto& o : row.outcomes) {
                if (o.next == z)
                    e[0].coef -= o.prob;
                else
                    e.push_back({o.next, -o.prob});
            }
            lp.add_constraint(std::move(e), Relation::greater_equal, 0.0,
                              "bellman_" + mdp.state_names[z] + "_" + mdp.action_names[row.action]);
        }
    }
    LinearExpr obj;
    for (std::size_t z = 0; z < mdp.size(); ++z) obj.push_back({z, c.weights[z]});
    lp.set_objective(std::move(obj));
    return lp;
}

inline ValueVector solve_ssp_lp(const ProductMdp& mdp, const StateRelevanceWeights& c) {
    auto sol = solve_lp_relaxation(build_ssp_lp(mdp, c));
    if (sol.status != SolveStatus::optimal)
        throw SolverError(std::string("reachability LP returned status ") + to_string(sol.status));
    ValueVector v{std::move(sol.assignment)};
    for (auto& x : v.values) x = std::clamp(x, 0.0, 1.0);
    return v;
}

inline ValueVector solve_ssp_lp(const ProductMdp& mdp) {
    return solve_ssp_lp(mdp, StateRelevanceWeights::from_initial(mdp));
}

/**
 * Bellman iteration for maximal reachability, started from the reward
 * vector so iterates increase monotonically towards v*. Stops when the
 * sup-norm change drops below `tol`.
 */
inline ValueVector value_iteration(const ProductMdp& mdp, double tol = 1e-9, std::size_t max_iter = 100000) {
    if (!(tol > 0.0)) throw ValidationError("value_iteration: tol must be positive");
    std::vector<double> v(mdp.size()), next(mdp.size());
    for (std::size_t z = 0; z < mdp.size(); ++z) v[z] = mdp.reward(z);
    double residual = kInf;
    for (std::size_t it = 0; it < max_iter; ++it) {
        residual = 0.0;
        for (std::size_t z = 0; z < mdp.size(); ++z) {
            if (mdp.is_absorbing(z)) {
                next[z] = v[z];
                continue;
            }
            double best = 0.0;
            for (const auto& row : mdp.rows[z]) {
                double q = 0.0;
                for (const auto& o : row.outcomes) q += o.prob * v[o.next];
                best = std::max(best, q);
            }
            residual = std::max(residual, std::abs(best - v[z]));
            next[z] = best;
        }
        v.swap(next);
        if (residual < tol) return ValueVector{std::move(v)};
    }
    throw SolverError("value iteration did not converge in " + std::to_string(max_iter) +
                      " iterations (residual " + std::to_string(residual) + ")");
}

/**
 * Softmax attack policy: pi(a|z) proportional to exp((Q(z,a) - v_z) / mu)
 * with Q(z,a) = sum_z' P(z'|z,a) v_z', normalized over the actions defined
 * at z. Small mu approaches the greedy policy; ties split evenly.
 */
inline StochasticPolicy extract_policy(const ProductMdp& mdp, const ValueVector& v, double mu) {
    if (!(mu > 0.0)) throw ValidationError("extract_policy: temperature must be positive");
    if (v.size() != mdp.size()) throw ValidationError("extract_policy: value vector has wrong size");
    StochasticPolicy pi;
    pi.temperature = mu;
    pi.probs.resize(mdp.size());
    for (std::size_t z = 0; z < mdp.size(); ++z) {
        if (mdp.is_absorbing(z)) continue;
        const auto& rows = mdp.rows[z];
        if (rows.empty()) continue;  // dead end: nothing to choose, value 0
        std::vector<double> logits;
        for (const auto& row : rows) logits.push_back((q_value(row, v) - v[z]) / mu);
        const double top = *std::max_element(logits.begin(), logits.end());
        double total = 0.0;
        for (auto& l : logits) {
            l = std::exp(l - top);
            total += l;
        }
        for (auto& l : logits) l /= total;
        pi.probs[z] = std::move(logits);
    }
    return pi;
}

struct EvaluateOptions {
    std::size_t direct_threshold = 2000;  // Gaussian elimination below this many unknowns
    double tol = 1e-9;
    std::size_t max_iter = 1000000;
};

/**
 * Value of a fixed stochastic policy: solves v = P_pi v with v = 1 on final
 * states and v = 0 at the sink. States from which no final state is
 * reachable under pi get 0, which makes the remaining system non-singular.
 */
inline ValueVector evaluate_policy(const ProductMdp& mdp, const StochasticPolicy& pi, const EvaluateOptions& opts = {}) {
    const std::size_t n = mdp.size();
    if (pi.probs.size() != n) throw ValidationError("evaluate_policy: policy has wrong size");
    for (std::size_t z = 0; z < n; ++z)
        if (!mdp.is_absorbing(z) && pi.probs[z].size() != mdp.rows[z].size())
            throw ValidationError("evaluate_policy: policy does not cover state " + mdp.state_names[z]);

    // chain[z] = sum_a pi(a|z) P(.|z,a)
    std::vector<Distribution> chain(n);
    for (std::size_t z = 0; z < n; ++z) {
        if (mdp.is_absorbing(z)) continue;
        for (std::size_t k = 0; k < mdp.rows[z].size(); ++k) {
            const double pa = pi.probs[z][k];
            if (pa == 0.0) continue;
            for (const auto& o : mdp.rows[z][k].outcomes) detail::accumulate(chain[z], o.next, pa * o.prob);
        }
    }

    // backward reachability of final states
    std::vector<std::vector<std::size_t>> preds(n);
    for (std::size_t z = 0; z < n; ++z)
        for (const auto& o : chain[z])
            if (o.prob > 0.0) preds[o.next].push_back(z);
    std::vector<char> reaches(n, 0);
    std::deque<std::size_t> queue;
    for (std::size_t z = 0; z < n; ++z)
        if (!mdp.is_sink(z) && mdp.final[z]) {
            reaches[z] = 1;
            queue.push_back(z);
        }
    while (!queue.empty()) {
        std::size_t z = queue.front();
        queue.pop_front();
        for (std::size_t p : preds[z])
            if (!reaches[p]) {
                reaches[p] = 1;
                queue.push_back(p);
            }
    }

    std::vector<double> v(n, 0.0);
    std::vector<std::ptrdiff_t> slot(n, -1);
    std::vector<std::size_t> unknowns;
    for (std::size_t z = 0; z < n; ++z) {
        if (mdp.is_absorbing(z)) {
            v[z] = mdp.reward(z);
        } else if (reaches[z]) {
            slot[z] = static_cast<std::ptrdiff_t>(unknowns.size());
            unknowns.push_back(z);
        }
    }
    const std::size_t m = unknowns.size();
    if (m == 0) return ValueVector{std::move(v)};

    if (m < opts.direct_threshold) {
        // dense (I - Q) v = b with partial pivoting
        std::vector<double> A(m * m, 0.0), b(m, 0.0);
        for (std::size_t r = 0; r < m; ++r) {
            const std::size_t z = unknowns[r];
            A[r * m + r] = 1.0;
            for (const auto& o : chain[z]) {
                if (slot[o.next] >= 0)
                    A[r * m + static_cast<std::size_t>(slot[o.next])] -= o.prob;
                else
                    b[r] += o.prob * v[o.next];
            }
        }
        for (std::size_t col = 0; col < m; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < m; ++r)
                if (std::abs(A[r * m + col]) > std::abs(A[piv * m + col])) piv = r;
            if (std::abs(A[piv * m + col]) < 1e-14) throw SolverError("evaluate_policy: singular linear system");
            if (piv != col) {
                for (std::size_t k = 0; k < m; ++k) std::swap(A[piv * m + k], A[col * m + k]);
                std::swap(b[piv], b[col]);
            }
            const double d = A[col * m + col];
            for (std::size_t r = col + 1; r < m; ++r) {
                const double f = A[r * m + col] / d;
                if (f == 0.0) continue;
                for (std::size_t k = col; k < m; ++k) A[r * m + k] -= f * A[col * m + k];
                b[r] -= f * b[col];
            }
        }
        std::vector<double> x(m);
        for (std::size_t r = m; r-- > 0;) {
            double s = b[r];
            for (std::size_t k = r + 1; k < m; ++k) s -= A[r * m + k] * x[k];
            x[r] = s / A[r * m + r];
        }
        for (std::size_t r = 0; r < m; ++r) v[unknowns[r]] = std::clamp(x[r], 0.0, 1.0);
    } else {
        // Gauss-Seidel from below
        for (std::size_t it = 0;; ++it) {
            if (it >= opts.max_iter) throw SolverError("evaluate_policy: iterative solve did not converge");
            double delta = 0.0;
            for (std::size_t z : unknowns) {
                double s = 0.0;
                for (const auto& o : chain[z]) s += o.prob * v[o.next];
                delta = std::max(delta, std::abs(s - v[z]));
                v[z] = s;
            }
            if (delta < opts.tol) break;
        }
    }
    return ValueVector{std::move(v)};
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json value_vector_to_json(const ProductMdp& mdp, const ValueVector& v) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t z = 0; z < mdp.size(); ++z) j[mdp.state_names[z]] = v[z];
    return j;
}

inline nlohmann::json policy_to_json(const ProductMdp& mdp, const StochasticPolicy& pi) {
    nlohmann::json states = nlohmann::json::object();
    for (std::size_t z = 0; z < mdp.size(); ++z) {
        if (mdp.is_absorbing(z)) continue;
        nlohmann::json row = nlohmann::json::object();
        for (std::size_t k = 0; k < mdp.rows[z].size(); ++k)
            row[mdp.action_names[mdp.rows[z][k].action]] = pi.probs[z][k];
        states[mdp.state_names[z]] = row;
    }
    return {{"temperature", pi.temperature}, {"policy", states}};
}

}  // namespace mtdsense
