#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "milp.hpp"
#include "model.hpp"
#include "product.hpp"
#include "ssp.hpp"

namespace mtdsense {

/// Big-M constants for linearizing value x binary products. Values lie in
/// [0, 1], so M = 1 and m = -1 are large enough.
struct BigMConstants {
    double upper = 1.0;   // M
    double lower = -1.0;  // m
};

/// An allocation MILP together with the handles needed to read it back.
struct AllocationMilp {
    MilpModel model;
    std::vector<VarId> value_vars;    // v_z, indexed like the product MDP
    std::map<Site, VarId> site_vars;  // placement binaries
};

struct AllocOptions {
    SolveOptions milp;
    BigMConstants big_m;
    double weight_floor = 1e-6;      // c_z = iota(z) + floor
    double certificate_tol = 1e-4;   // MILP objective vs. independent recomputation
    double vi_tol = 1e-9;
};

struct DetectorAllocResult {
    SiteSet x;
    ValueVector attacker_value;  // v* under M^x, read from the MILP
    ValueVector certificate;     // v* under M^x, recomputed by value iteration
    double objective = 0.0;      // sum_z c_z v_z
    SolveStats milp_stats;
};

struct StealthyAllocResult {
    SiteSet y;
    StochasticPolicy policy;      // attack policy pi* extracted on M^x
    ValueVector perceived_value;  // pi* evaluated on M^x (what the attacker expects)
    ValueVector defender_value;   // pi* evaluated on M^{x,y}
    double objective = 0.0;
    SolveStats milp_stats;
};

namespace detail {

inline std::string site_var_name(const ProductMdp& m, const char* prefix, const Site& s) {
    return std::string(prefix) + "[" + m.state_names[m.index(s.state, s.config)] + "," + m.action_names[s.action] + "]";
}

inline void add_value_vars(const ProductMdp& mdp, AllocationMilp& out) {
    for (std::size_t z = 0; z < mdp.size(); ++z) {
        double lo = 0.0, hi = 1.0;
        if (mdp.is_sink(z)) hi = 0.0;
        else if (mdp.final[z]) lo = 1.0;
        out.value_vars.push_back(out.model.add_variable("v[" + mdp.state_names[z] + "]", lo, hi));
    }
}

inline void add_budget_rows(const ProductMdp& mdp, AllocationMilp& out, int budget, const char* tag) {
    for (std::size_t i = 0; i < mdp.num_configs; ++i) {
        LinearExpr e;
        for (const auto& [site, var] : out.site_vars)
            if (site.config == i) e.push_back({var, 1.0});
        if (!e.empty())
            out.model.add_constraint(std::move(e), Relation::less_equal, static_cast<double>(budget),
                                     std::string(tag) + "_budget_" + std::to_string(i));
    }
}

inline void add_objective(const StateRelevanceWeights& c, AllocationMilp& out) {
    LinearExpr obj;
    for (std::size_t z = 0; z < out.value_vars.size(); ++z) obj.push_back({out.value_vars[z], c.weights[z]});
    out.model.set_objective(std::move(obj));
}

inline void check_weights(const ProductMdp& mdp, const StateRelevanceWeights& c) {
    if (c.weights.size() != mdp.size()) throw ValidationError("state-relevance weights have wrong size");
    for (double w : c.weights)
        if (!(w > 0.0)) throw ValidationError("state-relevance weights must be strictly positive");
}

}  // namespace detail

/**
 * Step-1 MILP: optimal detector placement against a best-responding
 * attacker. For every non-absorbing z = (s, i) and action a,
 *
 *     v_z >= sum_z' P(z'|z,a) w_{z,a,z'}
 *
 * where, for an outcome z' = (s', j) of a defined exploit at an eligible
 * site, w equals eps(s,a) v_z' if x_{s,j,a} = 1 and v_z' otherwise. That
 * choice is linearized with four big-M rows. Outcomes of invalid actions
 * and of non-eligible sites keep v_z' directly. Budgets are per
 * configuration.
 */
inline AllocationMilp build_step1_milp(const ProductMdp& mdp, const SensorConstraints& cons,
                                       const FalseNegativeModel& fn, const StateRelevanceWeights& c,
                                       const BigMConstants& big_m = {}) {
    if (!mdp.detectors.empty() || !mdp.stealthy.empty())
        throw ValidationError("build_step1_milp expects the sensor-free product MDP");
    detail::check_weights(mdp, c);
    AllocationMilp out;
    auto& model = out.model;
    detail::add_value_vars(mdp, out);

    for (std::size_t s = 0; s < mdp.num_attack_states; ++s)
        for (std::size_t j = 0; j < mdp.num_configs; ++j)
            for (std::size_t a = 0; a < mdp.num_actions; ++a) {
                const Site site{s, j, a};
                if (mdp.final[mdp.index(s, j)] || !cons.detector_eligible(s, a) || !mdp.site_defined(site)) continue;
                out.site_vars[site] = model.add_binary(detail::site_var_name(mdp, "x", site));
            }

    const double M = big_m.upper, m = big_m.lower;
    for (std::size_t z = 0; z < mdp.size(); ++z) {
        if (mdp.is_absorbing(z)) continue;
        const std::size_t s = mdp.attack_state(z);
        for (const auto& row : mdp.rows[z]) {
            const double eps = fn.rate(s, row.action);
            LinearExpr bellman{{out.value_vars[z], 1.0}};
            for (const auto& o : row.outcomes) {
                const VarId vnext = out.value_vars[o.next];
                auto it = mdp.is_sink(o.next) ? out.site_vars.end()
                                              : out.site_vars.find(Site{s, mdp.config(o.next), row.action});
                if (it == out.site_vars.end()) {
                    bellman.push_back({vnext, -o.prob});
                    continue;
                }
                const VarId x = it->second;
                const std::string tag = mdp.state_names[z] + "," + mdp.action_names[row.action] + "," +
                                        mdp.state_names[o.next];
                const VarId w = model.add_variable("w[" + tag + "]", 0.0, kInf);
                bellman.push_back({w, -o.prob});
                // w - eps v' <= M (1 - x)
                model.add_constraint({{w, 1.0}, {vnext, -eps}, {x, M}}, Relation::less_equal, M, "wv1[" + tag + "]");
                // w - eps v' >= m (1 - x)
                model.add_constraint({{w, 1.0}, {vnext, -eps}, {x, m}}, Relation::greater_equal, m, "wv2[" + tag + "]");
                // w - v' <= M x
                model.add_constraint({{w, 1.0}, {vnext, -1.0}, {x, -M}}, Relation::less_equal, 0.0, "wv3[" + tag + "]");
                // w - v' >= m x
                model.add_constraint({{w, 1.0}, {vnext, -1.0}, {x, -m}}, Relation::greater_equal, 0.0, "wv4[" + tag + "]");
            }
            model.add_constraint(std::move(bellman), Relation::greater_equal, 0.0,
                                 "bellman[" + mdp.state_names[z] + "," + mdp.action_names[row.action] + "]");
        }
    }
    detail::add_budget_rows(mdp, out, cons.detector_budget, "detector");
    detail::add_objective(c, out);
    return out;
}

/**
 * Step-2 MILP: stealthy sensor placement against a fixed attack policy
 * pi* computed on M^x. v_z is the sum of flow terms q_{z,a,z'}; a flow into
 * configuration j through site (s, j, a) equals P^x(z'|z,a) pi*(a|z) v_z'
 * when y_{s,j,a} = 0 and is forced to zero when y_{s,j,a} = 1. Sites that
 * already hold a detector get no binary.
 */
inline AllocationMilp build_step2_milp(const ProductMdp& mdp_x, const StochasticPolicy& pi_star,
                                       const SensorConstraints& cons, const SiteSet& x,
                                       const StateRelevanceWeights& c, const BigMConstants& big_m = {}) {
    if (!mdp_x.stealthy.empty()) throw ValidationError("build_step2_milp expects an MDP without stealthy sensors");
    detail::check_weights(mdp_x, c);
    if (pi_star.probs.size() != mdp_x.size()) throw ValidationError("attack policy has wrong size");
    for (std::size_t z = 0; z < mdp_x.size(); ++z)
        if (!mdp_x.is_absorbing(z) && pi_star.probs[z].size() != mdp_x.rows[z].size())
            throw ValidationError("attack policy does not cover state " + mdp_x.state_names[z]);

    AllocationMilp out;
    auto& model = out.model;
    detail::add_value_vars(mdp_x, out);

    for (std::size_t s = 0; s < mdp_x.num_attack_states; ++s)
        for (std::size_t j = 0; j < mdp_x.num_configs; ++j)
            for (std::size_t a = 0; a < mdp_x.num_actions; ++a) {
                const Site site{s, j, a};
                if (mdp_x.final[mdp_x.index(s, j)] || !cons.stealthy_eligible(s, a) || !mdp_x.site_defined(site) ||
                    x.count(site))
                    continue;
                out.site_vars[site] = model.add_binary(detail::site_var_name(mdp_x, "y", site));
            }

    const double M = big_m.upper, m = big_m.lower;
    for (std::size_t z = 0; z < mdp_x.size(); ++z) {
        if (mdp_x.is_absorbing(z)) continue;
        const std::size_t s = mdp_x.attack_state(z);
        LinearExpr balance{{out.value_vars[z], 1.0}};
        for (std::size_t k = 0; k < mdp_x.rows[z].size(); ++k) {
            const auto& row = mdp_x.rows[z][k];
            const double pa = pi_star.probs[z][k];
            for (const auto& o : row.outcomes) {
                if (mdp_x.is_sink(o.next)) continue;  // v_sink = 0
                const double coef = o.prob * pa;
                if (coef == 0.0) continue;
                const VarId vnext = out.value_vars[o.next];
                auto it = out.site_vars.find(Site{s, mdp_x.config(o.next), row.action});
                if (it == out.site_vars.end()) {
                    balance.push_back({vnext, -coef});
                    continue;
                }
                const VarId y = it->second;
                const std::string tag = mdp_x.state_names[z] + "," + mdp_x.action_names[row.action] + "," +
                                        mdp_x.state_names[o.next];
                const VarId q = model.add_variable("q[" + tag + "]", 0.0, kInf);
                balance.push_back({q, -1.0});
                // q <= M (1 - y)
                model.add_constraint({{q, 1.0}, {y, M}}, Relation::less_equal, M, "hs1[" + tag + "]");
                // P pi v' - q >= m y
                model.add_constraint({{vnext, coef}, {q, -1.0}, {y, -m}}, Relation::greater_equal, 0.0,
                                     "hs2[" + tag + "]");
                // P pi v' - q <= M y
                model.add_constraint({{vnext, coef}, {q, -1.0}, {y, -M}}, Relation::less_equal, 0.0, "hs3[" + tag + "]");
            }
        }
        model.add_constraint(std::move(balance), Relation::equal, 0.0, "eval[" + mdp_x.state_names[z] + "]");
    }
    detail::add_budget_rows(mdp_x, out, cons.stealthy_budget, "stealthy");
    detail::add_objective(c, out);
    return out;
}

namespace detail {

inline MilpSolution solve_or_throw(const MilpModel& model, const SolveOptions& opts, const char* what) {
    auto sol = solve(model, opts);
    if (sol.status != SolveStatus::optimal)
        throw SolverError(std::string(what) + " MILP returned status " + to_string(sol.status));
    return sol;
}

inline SiteSet read_sites(const AllocationMilp& milp, const MilpSolution& sol) {
    SiteSet out;
    for (const auto& [site, var] : milp.site_vars)
        if (sol[var] > 0.5) out.insert(site);
    return out;
}

inline ValueVector read_values(const AllocationMilp& milp, const MilpSolution& sol) {
    ValueVector v;
    for (VarId var : milp.value_vars) v.values.push_back(std::clamp(sol[var], 0.0, 1.0));
    return v;
}

}  // namespace detail

/**
 * Step 1 of the pipeline. Solves the detector MILP on the bundle's base
 * MDP and certifies the result by re-solving M^x with value iteration.
 */
inline DetectorAllocResult allocate_detectors(const ModelBundle& bundle, const AllocOptions& opts = {}) {
    const auto base = build_base_mdp(bundle);
    const auto c = StateRelevanceWeights::from_initial(base, opts.weight_floor);
    const auto milp = build_step1_milp(base, bundle.constraints, bundle.fn_model, c, opts.big_m);
    const auto sol = detail::solve_or_throw(milp.model, opts.milp, "detector allocation");

    DetectorAllocResult r;
    r.x = detail::read_sites(milp, sol);
    r.attacker_value = detail::read_values(milp, sol);
    r.objective = sol.objective_value;
    r.milp_stats = sol.stats;
    r.certificate = value_iteration(apply_detectors(base, r.x, bundle.fn_model), opts.vi_tol);
    const double recomputed = weighted_sum(c, r.certificate);
    if (std::abs(recomputed - r.objective) > opts.certificate_tol)
        throw SolverError("detector allocation certificate mismatch: MILP objective " + std::to_string(r.objective) +
                          ", value iteration " + std::to_string(recomputed));
    return r;
}

/**
 * Step 2 of the pipeline: extracts pi* on M^x at temperature `mu`, solves the
 * stealthy MILP and certifies the defender value by policy evaluation on
 * M^{x,y}.
 */
inline StealthyAllocResult allocate_stealthy(const ModelBundle& bundle, const DetectorAllocResult& det, double mu,
                                             const AllocOptions& opts = {}) {
    const auto base = build_base_mdp(bundle);
    const auto mdp_x = apply_detectors(base, det.x, bundle.fn_model);
    const auto c = StateRelevanceWeights::from_initial(base, opts.weight_floor);

    StealthyAllocResult r;
    r.policy = extract_policy(mdp_x, det.attacker_value, mu);
    const auto milp = build_step2_milp(mdp_x, r.policy, bundle.constraints, det.x, c, opts.big_m);
    const auto sol = detail::solve_or_throw(milp.model, opts.milp, "stealthy sensor allocation");
    r.y = detail::read_sites(milp, sol);
    r.objective = sol.objective_value;
    r.milp_stats = sol.stats;
    r.perceived_value = evaluate_policy(mdp_x, r.policy);
    r.defender_value = evaluate_policy(apply_stealthy(mdp_x, r.y), r.policy);
    const double recomputed = weighted_sum(c, r.defender_value);
    if (std::abs(recomputed - r.objective) > opts.certificate_tol)
        throw SolverError("stealthy allocation certificate mismatch: MILP objective " + std::to_string(r.objective) +
                          ", policy evaluation " + std::to_string(recomputed));
    return r;
}

// ---------------------------------------------------------------------------
// Brute-force oracles
// ---------------------------------------------------------------------------

struct BruteForceOptions {
    std::size_t max_candidates = 1'000'000;
    unsigned threads = 1;
    double weight_floor = 1e-6;
    double vi_tol = 1e-9;
};

namespace detail {

inline double count_subsets(std::size_t n, int k) {
    double total = 0.0, binom = 1.0;
    for (int r = 0; r <= k && static_cast<std::size_t>(r) <= n; ++r) {
        total += binom;
        binom = binom * static_cast<double>(n - static_cast<std::size_t>(r)) / (r + 1);
    }
    return total;
}

// All subsets of size <= k of `sites`, as sorted site vectors.
inline void subsets(const std::vector<Site>& sites, int k, std::size_t from, std::vector<Site>& cur,
                    std::vector<std::vector<Site>>& out) {
    out.push_back(cur);
    if (static_cast<int>(cur.size()) == k) return;
    for (std::size_t i = from; i < sites.size(); ++i) {
        cur.push_back(sites[i]);
        subsets(sites, k, i + 1, cur, out);
        cur.pop_back();
    }
}

/// Every feasible allocation drawn from per-configuration candidate lists,
/// in lexicographic order of the site sets.
inline std::vector<SiteSet> enumerate_allocations(const std::vector<std::vector<Site>>& per_config, int budget,
                                                  std::size_t max_candidates) {
    double total = 1.0;
    for (const auto& c : per_config) total *= count_subsets(c.size(), budget);
    if (total > static_cast<double>(max_candidates))
        throw ValidationError("instance too large for brute force: " + std::to_string(total) + " allocations");
    std::vector<SiteSet> all{SiteSet{}};
    for (const auto& cands : per_config) {
        std::vector<std::vector<Site>> subs;
        std::vector<Site> cur;
        subsets(cands, budget, 0, cur, subs);
        std::vector<SiteSet> next;
        next.reserve(all.size() * subs.size());
        for (const auto& base : all)
            for (const auto& sub : subs) {
                SiteSet s = base;
                s.insert(sub.begin(), sub.end());
                next.push_back(std::move(s));
            }
        all = std::move(next);
    }
    std::sort(all.begin(), all.end());
    return all;
}

/// Scores every candidate (in parallel when asked) and returns the index of
/// the first minimizer.
inline std::size_t argmin_parallel(std::size_t n, unsigned threads, const std::function<double(std::size_t)>& score,
                                   std::vector<double>& scores) {
    scores.assign(n, 0.0);
    threads = std::max(1u, threads);
    if (threads == 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) scores[i] = score(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t)
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < n; i += threads) scores[i] = score(i);
            });
        for (auto& th : pool) th.join();
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (scores[i] < scores[best] - 1e-12) best = i;
    return best;
}

}  // namespace detail

/**
 * Exhaustive detector search: every feasible x, scored by the same
 * state-relevance-weighted objective as the Step-1 MILP with v* of M^x from
 * value iteration. Ties go to the lexicographically smallest site set.
 */
inline DetectorAllocResult brute_force_detectors(const ModelBundle& bundle, const BruteForceOptions& opts = {}) {
    const auto base = build_base_mdp(bundle);
    const auto c = StateRelevanceWeights::from_initial(base, opts.weight_floor);
    std::vector<std::vector<Site>> per_config;
    for (std::size_t i = 0; i < bundle.num_configs(); ++i) {
        std::vector<Site> cands;
        for (const auto& site : bundle.detector_candidates(i))
            if (!bundle.goal[site.state]) cands.push_back(site);
        per_config.push_back(std::move(cands));
    }
    const auto all = detail::enumerate_allocations(per_config, bundle.constraints.detector_budget, opts.max_candidates);
    std::vector<double> scores;
    const auto best = detail::argmin_parallel(all.size(), opts.threads, [&](std::size_t k) {
        return weighted_sum(c, value_iteration(apply_detectors(base, all[k], bundle.fn_model), opts.vi_tol));
    }, scores);

    DetectorAllocResult r;
    r.x = all[best];
    r.attacker_value = value_iteration(apply_detectors(base, r.x, bundle.fn_model), opts.vi_tol);
    r.certificate = r.attacker_value;
    r.objective = scores[best];
    return r;
}

/// Exhaustive stealthy search for fixed detectors and a fixed attack policy.
inline StealthyAllocResult brute_force_stealthy(const ModelBundle& bundle, const DetectorAllocResult& det,
                                                const StochasticPolicy& pi_star, const BruteForceOptions& opts = {}) {
    const auto base = build_base_mdp(bundle);
    const auto mdp_x = apply_detectors(base, det.x, bundle.fn_model);
    const auto c = StateRelevanceWeights::from_initial(base, opts.weight_floor);
    std::vector<std::vector<Site>> per_config;
    for (std::size_t i = 0; i < bundle.num_configs(); ++i) {
        std::vector<Site> cands;
        for (const auto& site : bundle.stealthy_candidates(i))
            if (!bundle.goal[site.state] && !det.x.count(site)) cands.push_back(site);
        per_config.push_back(std::move(cands));
    }
    const auto all = detail::enumerate_allocations(per_config, bundle.constraints.stealthy_budget, opts.max_candidates);
    std::vector<double> scores;
    const auto best = detail::argmin_parallel(all.size(), opts.threads, [&](std::size_t k) {
        return weighted_sum(c, evaluate_policy(apply_stealthy(mdp_x, all[k]), pi_star));
    }, scores);

    StealthyAllocResult r;
    r.y = all[best];
    r.policy = pi_star;
    r.perceived_value = evaluate_policy(mdp_x, pi_star);
    r.defender_value = evaluate_policy(apply_stealthy(mdp_x, r.y), pi_star);
    r.objective = scores[best];
    return r;
}

// ---------------------------------------------------------------------------
// Two-step pipeline
// ---------------------------------------------------------------------------

struct PipelineResult {
    DetectorAllocResult detectors;
    StealthyAllocResult stealthy;
    double attacker_value = 0.0;   // V2: iota . v*(M^x)
    double perceived_value = 0.0;  // iota . V^{pi*}(M^x)
    double defender_value = 0.0;   // V1: iota . V^{pi*}(M^{x,y})

    SensorAllocation allocation() const { return {detectors.x, stealthy.y}; }
};

inline PipelineResult synthesize(const ModelBundle& bundle, double mu, const AllocOptions& opts = {}) {
    PipelineResult r;
    r.detectors = allocate_detectors(bundle, opts);
    r.stealthy = allocate_stealthy(bundle, r.detectors, mu, opts);
    const auto base = build_base_mdp(bundle);
    r.attacker_value = initial_value(base, r.detectors.attacker_value);
    r.perceived_value = initial_value(base, r.stealthy.perceived_value);
    r.defender_value = initial_value(base, r.stealthy.defender_value);
    return r;
}

inline nlohmann::json pipeline_to_json(const ModelBundle& bundle, const PipelineResult& r, double mu) {
    const auto base = build_base_mdp(bundle);
    nlohmann::json j = allocation_to_json(bundle, r.allocation());
    j["settings"] = {{"detector_budget", bundle.constraints.detector_budget},
                     {"stealthy_budget", bundle.constraints.stealthy_budget},
                     {"false_negative", model_to_json(bundle)["false_negative"]},
                     {"temperature", mu}};
    j["attacker_value_V2"] = r.attacker_value;
    j["perceived_value"] = r.perceived_value;
    j["defender_value_V1"] = r.defender_value;
    j["step1"] = {{"objective", r.detectors.objective},
                  {"values", value_vector_to_json(base, r.detectors.attacker_value)},
                  {"stats", r.detectors.milp_stats.to_json()}};
    j["step2"] = {{"objective", r.stealthy.objective},
                  {"values", value_vector_to_json(base, r.stealthy.defender_value)},
                  {"stats", r.stealthy.milp_stats.to_json()}};
    return j;
}

}  // namespace mtdsense
