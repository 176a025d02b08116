#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"

namespace mtdsense {

struct ActionRow {
    std::size_t action;
    Distribution outcomes;  // sorted by next-state index, no zero entries
    bool operator==(const ActionRow&) const = default;
};

/**
 * Joint attacker/defender MDP over Z = S x Theta plus a detection sink.
 * Product state (s, i) has index s * num_configs + i; the sink is the last
 * index. Absorbing states (goal states and the sink) carry no action rows.
 *
 * `defined_sites` remembers which (s, j, a) have a defined transition in
 * configuration j, which the sensor constructions and the allocation MILPs
 * need to tell an exploit outcome from an invalid-action self-loop.
 */
struct ProductMdp {
    std::size_t num_attack_states = 0;
    std::size_t num_configs = 0;
    std::size_t num_actions = 0;
    std::vector<std::string> state_names;
    std::vector<std::string> action_names;
    std::vector<std::vector<ActionRow>> rows;
    std::vector<double> initial;
    std::vector<bool> final;
    std::vector<char> defined_sites;
    SiteSet detectors;  // sensors already applied to this MDP
    SiteSet stealthy;

    std::size_t size() const { return rows.size(); }
    std::size_t sink() const { return num_attack_states * num_configs; }
    std::size_t index(std::size_t s, std::size_t i) const { return s * num_configs + i; }
    std::size_t attack_state(std::size_t z) const { return z / num_configs; }
    std::size_t config(std::size_t z) const { return z % num_configs; }
    bool is_sink(std::size_t z) const { return z == sink(); }
    bool is_absorbing(std::size_t z) const { return z == sink() || final[z]; }
    double reward(std::size_t z) const { return z != sink() && final[z] ? 1.0 : 0.0; }

    bool site_defined(const Site& site) const {
        return defined_sites[(site.state * num_configs + site.config) * num_actions + site.action] != 0;
    }

    const ActionRow* row(std::size_t z, std::size_t action) const {
        for (const auto& r : rows[z])
            if (r.action == action) return &r;
        return nullptr;
    }
    double prob(std::size_t z, std::size_t action, std::size_t next) const {
        const auto* r = row(z, action);
        if (!r) return 0.0;
        for (const auto& o : r->outcomes)
            if (o.next == next) return o.prob;
        return 0.0;
    }

    bool operator==(const ProductMdp&) const = default;
};

namespace detail {

// Adds `p` to the entry for `next`, keeping the row sorted.
inline void accumulate(Distribution& d, std::size_t next, double p) {
    auto it = std::lower_bound(d.begin(), d.end(), next, [](const Outcome& o, std::size_t n) { return o.next < n; });
    if (it != d.end() && it->next == next)
        it->prob += p;
    else
        d.insert(it, {next, p});
}

}  // namespace detail

/**
 * Attacker MDP without sensors. For z = (s, i) and action a, each
 * configuration j contributes either P(i,j) T^j(s'|s,a) to (s', j) when
 * T^j(.|s,a) is defined, or P(i,j) to (s, j) when it is not (the action is
 * invalid after the switch, so the attacker makes no progress). An action
 * appears at z only when it is defined at s in some configuration.
 */
inline ProductMdp build_base_mdp(const ModelBundle& b) {
    ProductMdp m;
    const std::size_t ns = b.num_states(), nc = b.num_configs(), na = b.num_actions();
    m.num_attack_states = ns;
    m.num_configs = nc;
    m.num_actions = na;
    m.action_names = b.actions;
    const std::size_t nz = ns * nc + 1;
    m.rows.assign(nz, {});
    m.initial.assign(nz, 0.0);
    m.final.assign(nz, false);
    m.state_names.resize(nz);
    m.defined_sites.assign(ns * nc * na, 0);

    for (std::size_t s = 0; s < ns; ++s)
        for (std::size_t j = 0; j < nc; ++j)
            for (std::size_t a = 0; a < na; ++a)
                m.defined_sites[(s * nc + j) * na + a] = b.graphs[j].defined(s, a) ? 1 : 0;

    for (std::size_t s = 0; s < ns; ++s) {
        for (std::size_t i = 0; i < nc; ++i) {
            const std::size_t z = m.index(s, i);
            m.state_names[z] = b.states[s] + "@" + b.schedule.configs[i];
            m.initial[z] = b.initial_dist[s] * b.schedule.initial[i];
            m.final[z] = b.goal[s];
            if (b.goal[s]) continue;
            for (std::size_t a = 0; a < na; ++a) {
                bool anywhere = false;
                for (std::size_t j = 0; j < nc; ++j) anywhere = anywhere || b.graphs[j].defined(s, a);
                if (!anywhere) continue;
                ActionRow row{a, {}};
                for (std::size_t j = 0; j < nc; ++j) {
                    const double pij = b.schedule.switch_prob(i, j);
                    if (pij == 0.0) continue;
                    if (const auto* d = b.graphs[j].transition(s, a)) {
                        for (const auto& o : *d) detail::accumulate(row.outcomes, m.index(o.next, j), pij * o.prob);
                    } else {
                        detail::accumulate(row.outcomes, m.index(s, j), pij);
                    }
                }
                m.rows[z].push_back(std::move(row));
            }
        }
    }
    m.state_names[m.sink()] = "sink";
    return m;
}

/**
 * Attacker MDP under detectors x. Every outcome of a monitored, defined
 * exploit in configuration j is scaled by eps(s, a); the detected mass
 * P(i,j) (1 - eps(s, a)) moves to the sink. Invalid-action self-loops are
 * never monitored.
 */
inline ProductMdp apply_detectors(const ProductMdp& base, const SiteSet& x, const FalseNegativeModel& fn) {
    if (!base.detectors.empty() || !base.stealthy.empty())
        throw ValidationError("apply_detectors expects a sensor-free product MDP");
    for (const auto& site : x) {
        if (site.state >= base.num_attack_states || site.config >= base.num_configs || site.action >= base.num_actions)
            throw ValidationError("detector site index out of range");
        if (!base.site_defined(site))
            throw ValidationError("detector placed on undefined transition (" + base.state_names[base.index(site.state, site.config)] +
                                  ", " + base.action_names[site.action] + ")");
    }
    ProductMdp m = base;
    m.detectors = x;
    if (x.empty()) return m;
    for (std::size_t z = 0; z < m.size(); ++z) {
        if (m.is_absorbing(z)) continue;
        const std::size_t s = m.attack_state(z);
        for (auto& row : m.rows[z]) {
            const double eps = fn.rate(s, row.action);
            double detected = 0.0;
            Distribution out;
            out.reserve(row.outcomes.size() + 1);
            for (auto o : row.outcomes) {
                if (!m.is_sink(o.next)) {
                    const Site site{s, m.config(o.next), row.action};
                    if (x.count(site)) {
                        detected += o.prob * (1.0 - eps);
                        o.prob *= eps;
                    }
                }
                if (o.prob > 0.0) out.push_back(o);
            }
            if (detected > 0.0) detail::accumulate(out, m.sink(), detected);
            row.outcomes = std::move(out);
        }
    }
    return m;
}

/**
 * Defender MDP: stealthy sensors y on top of mdp_x. Outcomes landing in a
 * configuration j with y(s, j, a) set are removed and their mass, P(i,j)
 * for a defined exploit, is added to whatever detector mass already sits
 * on the sink.
 */
inline ProductMdp apply_stealthy(const ProductMdp& mdp_x, const SiteSet& y) {
    if (!mdp_x.stealthy.empty()) throw ValidationError("apply_stealthy: stealthy sensors already applied");
    for (const auto& site : y) {
        if (site.state >= mdp_x.num_attack_states || site.config >= mdp_x.num_configs || site.action >= mdp_x.num_actions)
            throw ValidationError("stealthy site index out of range");
        const auto where =
            "(" + mdp_x.state_names[mdp_x.index(site.state, site.config)] + ", " + mdp_x.action_names[site.action] + ")";
        if (!mdp_x.site_defined(site)) throw ValidationError("stealthy sensor placed on undefined transition " + where);
        if (mdp_x.detectors.count(site)) throw ValidationError("stealthy sensor and detector share site " + where);
    }
    ProductMdp m = mdp_x;
    m.stealthy = y;
    if (y.empty()) return m;
    for (std::size_t z = 0; z < m.size(); ++z) {
        if (m.is_absorbing(z)) continue;
        const std::size_t s = m.attack_state(z);
        for (auto& row : m.rows[z]) {
            double caught = 0.0;
            Distribution out;
            out.reserve(row.outcomes.size() + 1);
            for (const auto& o : row.outcomes) {
                if (!m.is_sink(o.next) && y.count(Site{s, m.config(o.next), row.action})) {
                    caught += o.prob;
                    continue;
                }
                out.push_back(o);
            }
            if (caught > 0.0) detail::accumulate(out, m.sink(), caught);
            row.outcomes = std::move(out);
        }
    }
    return m;
}

/// M^{x,y} straight from a bundle and a full allocation.
inline ProductMdp build_defender_mdp(const ModelBundle& b, const SensorAllocation& alloc) {
    return apply_stealthy(apply_detectors(build_base_mdp(b), alloc.detectors, b.fn_model), alloc.stealthy);
}

/// Graphviz dump for inspection: one node per product state, one edge per
/// (action, next state) labelled "action:prob".
inline void write_dot(const ProductMdp& m, std::ostream& os) {
    os << "digraph product {\n  rankdir=LR;\n";
    for (std::size_t z = 0; z < m.size(); ++z) {
        os << "  n" << z << " [label=\"" << m.state_names[z] << "\"";
        if (m.is_sink(z))
            os << ", shape=box";
        else if (m.final[z])
            os << ", shape=doublecircle";
        if (m.initial[z] > 0.0) os << ", style=bold";
        os << "];\n";
    }
    for (std::size_t z = 0; z < m.size(); ++z)
        for (const auto& row : m.rows[z])
            for (const auto& o : row.outcomes)
                os << "  n" << z << " -> n" << o.next << " [label=\"" << m.action_names[row.action] << ":" << o.prob
                   << "\"];\n";
    os << "}\n";
}

}  // namespace mtdsense
