#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace mtdsense {

/// Tolerance used for every "sums to one" check on loaded data.
inline constexpr double kStochasticTol = 1e-9;

struct Outcome {
    std::size_t next;
    double prob;
    bool operator==(const Outcome&) const = default;
};

using Distribution = std::vector<Outcome>;

struct StateAction {
    std::size_t state;
    std::size_t action;
    auto operator<=>(const StateAction&) const = default;
};

/// A (state, configuration, action) coordinate where a sensor may sit.
struct Site {
    std::size_t state;
    std::size_t config;
    std::size_t action;
    auto operator<=>(const Site&) const = default;
};

using SiteSet = std::set<Site>;

/**
 * Transition table of one configuration's attack graph. States, actions,
 * the initial distribution and the goal set are shared by all
 * configurations and live in ModelBundle; only the transition function
 * differs between configurations.
 *
 * A missing entry means the action is invalid at that state in this
 * configuration. That is different from an action that fails, which is
 * encoded as a self-loop outcome.
 */
class AttackGraph {
  public:
    AttackGraph() = default;
    AttackGraph(std::size_t num_states, std::size_t num_actions)
        : num_actions_(num_actions), table_(num_states * num_actions) {}

    const Distribution* transition(std::size_t s, std::size_t a) const {
        const auto& slot = table_.at(s * num_actions_ + a);
        return slot ? &*slot : nullptr;
    }
    bool defined(std::size_t s, std::size_t a) const { return transition(s, a) != nullptr; }

    void set_transition(std::size_t s, std::size_t a, Distribution d) {
        std::sort(d.begin(), d.end(), [](const Outcome& l, const Outcome& r) { return l.next < r.next; });
        table_.at(s * num_actions_ + a) = std::move(d);
    }
    void clear_transition(std::size_t s, std::size_t a) { table_.at(s * num_actions_ + a).reset(); }

    std::size_t num_actions() const { return num_actions_; }
    std::size_t num_states() const { return num_actions_ == 0 ? 0 : table_.size() / num_actions_; }

    bool operator==(const AttackGraph&) const = default;

  private:
    std::size_t num_actions_ = 0;
    std::vector<std::optional<Distribution>> table_;
};

/// Markov chain over configurations driving the moving-target defense.
struct MtdSchedule {
    std::vector<std::string> configs;
    std::vector<std::vector<double>> matrix;
    std::vector<double> initial;

    double switch_prob(std::size_t from, std::size_t to) const { return matrix[from][to]; }
    bool operator==(const MtdSchedule&) const = default;
};

/// Eligible sites and per-configuration budgets. `detector_budget` bounds
/// intrusion detectors, `stealthy_budget` bounds stealthy sensors.
struct SensorConstraints {
    std::vector<StateAction> detector_sites;
    std::vector<StateAction> stealthy_sites;
    int detector_budget = 0;
    int stealthy_budget = 0;

    bool detector_eligible(std::size_t s, std::size_t a) const {
        return std::binary_search(detector_sites.begin(), detector_sites.end(), StateAction{s, a});
    }
    bool stealthy_eligible(std::size_t s, std::size_t a) const {
        return std::binary_search(stealthy_sites.begin(), stealthy_sites.end(), StateAction{s, a});
    }
    bool operator==(const SensorConstraints&) const = default;
};

/// Detector false-negative rates eps(s, a): a global default plus overrides.
struct FalseNegativeModel {
    double default_rate = 0.0;
    std::map<StateAction, double> overrides;

    double rate(std::size_t s, std::size_t a) const {
        auto it = overrides.find({s, a});
        return it == overrides.end() ? default_rate : it->second;
    }
    static FalseNegativeModel uniform(double eps) { return FalseNegativeModel{eps, {}}; }
    bool operator==(const FalseNegativeModel&) const = default;
};

struct SensorAllocation {
    SiteSet detectors;  // x
    SiteSet stealthy;   // y
    bool operator==(const SensorAllocation&) const = default;
};

struct ModelBundle {
    std::vector<std::string> states;
    std::vector<std::string> actions;
    std::vector<bool> goal;
    std::vector<double> initial_dist;
    std::vector<AttackGraph> graphs;  // one per configuration, same order as schedule.configs
    MtdSchedule schedule;
    SensorConstraints constraints;
    FalseNegativeModel fn_model;

    std::size_t num_states() const { return states.size(); }
    std::size_t num_actions() const { return actions.size(); }
    std::size_t num_configs() const { return graphs.size(); }

    bool site_defined(const Site& site) const { return graphs[site.config].defined(site.state, site.action); }

    std::optional<std::size_t> state_index(const std::string& name) const { return find_(states, name); }
    std::optional<std::size_t> action_index(const std::string& name) const { return find_(actions, name); }
    std::optional<std::size_t> config_index(const std::string& name) const { return find_(schedule.configs, name); }

    /// Sites of configuration `config` where a detector may be placed:
    /// eligible pairs with a defined transition in that configuration.
    std::vector<Site> detector_candidates(std::size_t config) const {
        return candidates_(config, constraints.detector_sites);
    }
    std::vector<Site> stealthy_candidates(std::size_t config) const {
        return candidates_(config, constraints.stealthy_sites);
    }

    std::string site_name(const Site& site) const {
        return "(" + states[site.state] + ", " + schedule.configs[site.config] + ", " + actions[site.action] + ")";
    }

    bool operator==(const ModelBundle&) const = default;

  private:
    static std::optional<std::size_t> find_(const std::vector<std::string>& names, const std::string& name) {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) return std::nullopt;
        return static_cast<std::size_t>(it - names.begin());
    }
    std::vector<Site> candidates_(std::size_t config, const std::vector<StateAction>& pairs) const {
        std::vector<Site> out;
        for (const auto& p : pairs)
            if (graphs[config].defined(p.state, p.action)) out.push_back({p.state, config, p.action});
        return out;
    }
};

/// Copy of `b` with per-configuration budgets replaced.
inline ModelBundle with_budgets(ModelBundle b, int detector_budget, int stealthy_budget) {
    b.constraints.detector_budget = detector_budget;
    b.constraints.stealthy_budget = stealthy_budget;
    return b;
}

/// Copy of `b` whose detectors all share the false-negative rate `eps`.
inline ModelBundle with_uniform_eps(ModelBundle b, double eps) {
    b.fn_model = FalseNegativeModel::uniform(eps);
    return b;
}

// ---------------------------------------------------------------------------
// Allocation checks
// ---------------------------------------------------------------------------

struct Violation {
    enum class Kind { out_of_range, undefined_site, not_eligible, mutual_exclusion, detector_budget, stealthy_budget };
    Kind kind;
    Site site;  // for budget violations only `config` is meaningful
    std::string message;
};

/**
 * Checks every SensorAllocation invariant against the bundle. Returns one
 * entry per violation; an empty list means the allocation is feasible.
 */
inline std::vector<Violation> validate_allocation(const ModelBundle& bundle, const SensorAllocation& alloc) {
    std::vector<Violation> out;
    auto in_range = [&](const Site& s) {
        return s.state < bundle.num_states() && s.config < bundle.num_configs() && s.action < bundle.num_actions();
    };
    auto check_sites = [&](const SiteSet& sites, bool detector) {
        const char* kind = detector ? "detector" : "stealthy sensor";
        for (const auto& site : sites) {
            if (!in_range(site)) {
                out.push_back({Violation::Kind::out_of_range, site, std::string(kind) + " site index out of range"});
                continue;
            }
            bool eligible = detector ? bundle.constraints.detector_eligible(site.state, site.action)
                                     : bundle.constraints.stealthy_eligible(site.state, site.action);
            if (!eligible)
                out.push_back({Violation::Kind::not_eligible, site,
                               std::string(kind) + " on non-eligible site " + bundle.site_name(site)});
            if (!bundle.site_defined(site))
                out.push_back({Violation::Kind::undefined_site, site,
                               std::string(kind) + " on undefined transition " + bundle.site_name(site)});
        }
    };
    check_sites(alloc.detectors, true);
    check_sites(alloc.stealthy, false);

    for (const auto& site : alloc.detectors)
        if (alloc.stealthy.count(site) && in_range(site))
            out.push_back({Violation::Kind::mutual_exclusion, site,
                           "detector and stealthy sensor both placed at " + bundle.site_name(site)});

    std::vector<int> detectors(bundle.num_configs(), 0), stealthy(bundle.num_configs(), 0);
    for (const auto& s : alloc.detectors)
        if (in_range(s)) ++detectors[s.config];
    for (const auto& s : alloc.stealthy)
        if (in_range(s)) ++stealthy[s.config];
    for (std::size_t i = 0; i < bundle.num_configs(); ++i) {
        if (detectors[i] > bundle.constraints.detector_budget)
            out.push_back({Violation::Kind::detector_budget, {0, i, 0},
                           "configuration '" + bundle.schedule.configs[i] + "' has " + std::to_string(detectors[i]) +
                               " detectors, budget " + std::to_string(bundle.constraints.detector_budget)});
        if (stealthy[i] > bundle.constraints.stealthy_budget)
            out.push_back({Violation::Kind::stealthy_budget, {0, i, 0},
                           "configuration '" + bundle.schedule.configs[i] + "' has " + std::to_string(stealthy[i]) +
                               " stealthy sensors, budget " + std::to_string(bundle.constraints.stealthy_budget)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON model format
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}

template <class T>
T get_field(const nlohmann::json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) throw ParseError(where + ": missing key '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(where + ": bad value for '" + key + "': " + e.what());
    }
}

inline double as_prob(const nlohmann::json& v, const std::string& where) {
    if (!v.is_number()) throw ParseError(where + ": probability must be a number");
    return v.get<double>();
}

inline void append_unique(std::vector<std::string>& names, const std::vector<std::string>& more) {
    for (const auto& n : more)
        if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
}

}  // namespace detail

/**
 * Builds a validated ModelBundle from its JSON representation. State and
 * action sets are the union of the top-level lists and any per-configuration
 * `states`/`actions` lists. Identifiers used in transitions must belong to
 * those sets. Warnings (degenerate false-negative rates) are appended to
 * `warnings` when given.
 */
inline ModelBundle parse_model(const nlohmann::json& j, std::vector<std::string>* warnings = nullptr) {
    using detail::get_field;
    using nlohmann::json;
    if (!j.is_object()) throw ParseError("model: top level must be an object");

    ModelBundle b;
    b.states = get_field<std::vector<std::string>>(j, "states", "model");
    b.actions = get_field<std::vector<std::string>>(j, "actions", "model");
    const json& configs = j.contains("configs") ? j.at("configs") : json();
    if (!configs.is_array() || configs.empty()) throw ParseError("model: 'configs' must be a non-empty array");
    for (std::size_t i = 0; i < configs.size(); ++i) {
        const auto where = "configs[" + std::to_string(i) + "]";
        const auto& c = configs[i];
        if (!c.is_object()) throw ParseError(where + ": must be an object");
        if (c.contains("states")) detail::append_unique(b.states, get_field<std::vector<std::string>>(c, "states", where));
        if (c.contains("actions"))
            detail::append_unique(b.actions, get_field<std::vector<std::string>>(c, "actions", where));
        b.schedule.configs.push_back(c.contains("name") ? get_field<std::string>(c, "name", where) : std::to_string(i));
    }
    {
        auto check_unique = [](std::vector<std::string> names, const char* what) {
            std::sort(names.begin(), names.end());
            auto dup = std::adjacent_find(names.begin(), names.end());
            if (dup != names.end()) throw ValidationError(std::string("duplicate ") + what + " '" + *dup + "'");
        };
        check_unique(b.states, "state");
        check_unique(b.actions, "action");
        check_unique(b.schedule.configs, "configuration");
    }
    if (b.states.empty()) throw ValidationError("model has no states");

    auto state_id = [&](const std::string& name, const std::string& where) {
        auto id = b.state_index(name);
        if (!id) throw ValidationError(where + ": unknown state '" + name + "'");
        return *id;
    };
    auto action_id = [&](const std::string& name, const std::string& where) {
        auto id = b.action_index(name);
        if (!id) throw ValidationError(where + ": unknown action '" + name + "'");
        return *id;
    };

    const std::size_t ns = b.states.size(), na = b.actions.size(), nc = configs.size();

    b.goal.assign(ns, false);
    for (const auto& g : get_field<std::vector<std::string>>(j, "goal_states", "model"))
        b.goal[state_id(g, "goal_states")] = true;

    b.initial_dist.assign(ns, 0.0);
    {
        const auto init = get_field<json>(j, "initial_dist", "model");
        if (!init.is_object()) throw ParseError("initial_dist: must be an object {state: probability}");
        double sum = 0.0;
        for (const auto& [name, p] : init.items()) {
            double v = detail::as_prob(p, "initial_dist");
            if (v < 0.0 || v > 1.0) throw ValidationError("initial_dist: probability of '" + name + "' outside [0, 1]");
            b.initial_dist[state_id(name, "initial_dist")] = v;
            sum += v;
        }
        if (std::abs(sum - 1.0) > kStochasticTol)
            throw ValidationError("initial_dist sums to " + detail::fmt_num(sum) + ", expected 1");
    }

    for (std::size_t i = 0; i < nc; ++i) {
        const auto& cfg_name = b.schedule.configs[i];
        const auto where = "configuration '" + cfg_name + "'";
        AttackGraph g(ns, na);
        const auto trans = get_field<json>(configs[i], "transitions", where);
        if (!trans.is_object()) throw ParseError(where + ": 'transitions' must be an object");
        for (const auto& [sname, by_action] : trans.items()) {
            std::size_t s = state_id(sname, where);
            if (!by_action.is_object()) throw ParseError(where + ": transitions of '" + sname + "' must be an object");
            for (const auto& [aname, dist] : by_action.items()) {
                std::size_t a = action_id(aname, where);
                const auto row = where + ": transition row (" + sname + ", " + aname + ")";
                if (!dist.is_object() || dist.empty()) throw ParseError(row + " must be a non-empty object");
                Distribution d;
                double sum = 0.0;
                for (const auto& [next, p] : dist.items()) {
                    double v = detail::as_prob(p, row);
                    if (!(v > 0.0 && v <= 1.0))
                        throw ValidationError(row + ": probability " + detail::fmt_num(v) + " of '" + next +
                                              "' outside (0, 1]");
                    d.push_back({state_id(next, row), v});
                    sum += v;
                }
                if (std::abs(sum - 1.0) > kStochasticTol)
                    throw ValidationError(row + " sums to " + detail::fmt_num(sum) + ", expected 1");
                g.set_transition(s, a, std::move(d));
            }
        }
        b.graphs.push_back(std::move(g));
    }

    {
        const auto mtd = get_field<json>(j, "mtd", "model");
        b.schedule.matrix = get_field<std::vector<std::vector<double>>>(mtd, "matrix", "mtd");
        b.schedule.initial = get_field<std::vector<double>>(mtd, "initial", "mtd");
        if (b.schedule.matrix.size() != nc)
            throw ValidationError("mtd.matrix has " + std::to_string(b.schedule.matrix.size()) + " rows for " +
                                  std::to_string(nc) + " configurations");
        for (std::size_t i = 0; i < nc; ++i) {
            const auto& row = b.schedule.matrix[i];
            if (row.size() != nc) throw ValidationError("mtd.matrix row " + std::to_string(i) + " has wrong length");
            double sum = 0.0;
            for (double v : row) {
                if (v < 0.0 || v > 1.0) throw ValidationError("mtd.matrix row " + std::to_string(i) + ": entry outside [0, 1]");
                sum += v;
            }
            if (std::abs(sum - 1.0) > kStochasticTol)
                throw ValidationError("mtd.matrix row " + std::to_string(i) + " sums to " + detail::fmt_num(sum) +
                                      ", expected 1");
        }
        if (b.schedule.initial.size() != nc) throw ValidationError("mtd.initial has wrong length");
        double sum = 0.0;
        for (double v : b.schedule.initial) {
            if (v < 0.0 || v > 1.0) throw ValidationError("mtd.initial: entry outside [0, 1]");
            sum += v;
        }
        if (std::abs(sum - 1.0) > kStochasticTol)
            throw ValidationError("mtd.initial sums to " + detail::fmt_num(sum) + ", expected 1");
    }

    {
        const auto sensors = get_field<json>(j, "sensors", "model");
        auto read_sites = [&](const char* key) {
            std::vector<StateAction> out;
            for (const auto& pair : get_field<std::vector<std::vector<std::string>>>(sensors, key, "sensors")) {
                const auto where = std::string("sensors.") + key;
                if (pair.size() != 2) throw ParseError(where + ": each site must be [state, action]");
                StateAction sa{state_id(pair[0], where), action_id(pair[1], where)};
                bool defined = std::any_of(b.graphs.begin(), b.graphs.end(),
                                           [&](const AttackGraph& g) { return g.defined(sa.state, sa.action); });
                if (!defined)
                    throw ValidationError(where + ": site (" + pair[0] + ", " + pair[1] +
                                          ") has no defined transition in any configuration");
                out.push_back(sa);
            }
            std::sort(out.begin(), out.end());
            out.erase(std::unique(out.begin(), out.end()), out.end());
            return out;
        };
        b.constraints.detector_sites = read_sites("detector_sites");
        b.constraints.stealthy_sites = read_sites("stealthy_sites");
        b.constraints.detector_budget = get_field<int>(sensors, "detector_budget", "sensors");
        b.constraints.stealthy_budget = get_field<int>(sensors, "stealthy_budget", "sensors");
        if (b.constraints.detector_budget < 0) throw ValidationError("sensors.detector_budget is negative");
        if (b.constraints.stealthy_budget < 0) throw ValidationError("sensors.stealthy_budget is negative");
    }

    {
        auto check_rate = [&](double v, const std::string& where) {
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(where + ": false negative rate outside [0, 1]");
            if ((v == 0.0 || v == 1.0) && warnings)
                warnings->push_back(where + ": degenerate false negative rate " + detail::fmt_num(v));
        };
        const auto fn = get_field<json>(j, "false_negative", "model");
        b.fn_model.default_rate = get_field<double>(fn, "default", "false_negative");
        check_rate(b.fn_model.default_rate, "false_negative.default");
        if (fn.contains("overrides")) {
            const auto& ov = fn.at("overrides");
            if (!ov.is_array()) throw ParseError("false_negative.overrides must be an array");
            for (const auto& o : ov) {
                const auto where = std::string("false_negative.overrides");
                StateAction sa{state_id(get_field<std::string>(o, "state", where), where),
                               action_id(get_field<std::string>(o, "action", where), where)};
                double rate = get_field<double>(o, "rate", where);
                check_rate(rate, where);
                b.fn_model.overrides[sa] = rate;
            }
        }
    }
    return b;
}

inline ModelBundle load_model(const std::string& path, std::vector<std::string>* warnings = nullptr) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
    return parse_model(j, warnings);
}

/// Inverse of parse_model. Reloading the output yields an equal bundle.
inline nlohmann::json model_to_json(const ModelBundle& b) {
    using nlohmann::json;
    json j;
    j["states"] = b.states;
    j["actions"] = b.actions;
    json goals = json::array();
    for (std::size_t s = 0; s < b.num_states(); ++s)
        if (b.goal[s]) goals.push_back(b.states[s]);
    j["goal_states"] = goals;
    json init = json::object();
    for (std::size_t s = 0; s < b.num_states(); ++s)
        if (b.initial_dist[s] > 0.0) init[b.states[s]] = b.initial_dist[s];
    j["initial_dist"] = init;

    json configs = json::array();
    for (std::size_t i = 0; i < b.num_configs(); ++i) {
        json trans = json::object();
        for (std::size_t s = 0; s < b.num_states(); ++s)
            for (std::size_t a = 0; a < b.num_actions(); ++a)
                if (const auto* d = b.graphs[i].transition(s, a)) {
                    json row = json::object();
                    for (const auto& o : *d) row[b.states[o.next]] = o.prob;
                    trans[b.states[s]][b.actions[a]] = row;
                }
        configs.push_back({{"name", b.schedule.configs[i]}, {"transitions", trans}});
    }
    j["configs"] = configs;
    j["mtd"] = {{"matrix", b.schedule.matrix}, {"initial", b.schedule.initial}};

    auto sites = [&](const std::vector<StateAction>& v) {
        json out = json::array();
        for (const auto& sa : v) out.push_back({b.states[sa.state], b.actions[sa.action]});
        return out;
    };
    j["sensors"] = {{"detector_sites", sites(b.constraints.detector_sites)},
                    {"stealthy_sites", sites(b.constraints.stealthy_sites)},
                    {"detector_budget", b.constraints.detector_budget},
                    {"stealthy_budget", b.constraints.stealthy_budget}};
    json overrides = json::array();
    for (const auto& [sa, rate] : b.fn_model.overrides)
        overrides.push_back({{"state", b.states[sa.state]}, {"action", b.actions[sa.action]}, {"rate", rate}});
    j["false_negative"] = {{"default", b.fn_model.default_rate}, {"overrides", overrides}};
    return j;
}

inline void save_model(const ModelBundle& b, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write model file '" + path + "'");
    out << model_to_json(b).dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Allocation JSON: {"detectors": {config: [[state, action], ...]}, "stealthy": {...}}
// ---------------------------------------------------------------------------

inline nlohmann::json allocation_to_json(const ModelBundle& b, const SensorAllocation& alloc) {
    auto per_config = [&](const SiteSet& sites) {
        nlohmann::json out = nlohmann::json::object();
        for (const auto& name : b.schedule.configs) out[name] = nlohmann::json::array();
        for (const auto& s : sites)
            out[b.schedule.configs[s.config]].push_back({b.states[s.state], b.actions[s.action]});
        return out;
    };
    return {{"detectors", per_config(alloc.detectors)}, {"stealthy", per_config(alloc.stealthy)}};
}

/// Throws ValidationError when the allocation names an identifier the
/// bundle does not know.
inline SensorAllocation allocation_from_json(const ModelBundle& b, const nlohmann::json& j) {
    auto read = [&](const char* key) {
        SiteSet out;
        if (!j.contains(key)) return out;
        const auto& by_config = j.at(key);
        if (!by_config.is_object()) throw ParseError(std::string("allocation.") + key + " must be an object");
        for (const auto& [cname, sites] : by_config.items()) {
            auto c = b.config_index(cname);
            if (!c) throw ValidationError("allocation references unknown configuration '" + cname + "'");
            for (const auto& pair : sites) {
                if (!pair.is_array() || pair.size() != 2)
                    throw ParseError("allocation: each site must be [state, action]");
                auto s = b.state_index(pair[0].get<std::string>());
                auto a = b.action_index(pair[1].get<std::string>());
                if (!s) throw ValidationError("allocation references unknown state '" + pair[0].get<std::string>() + "'");
                if (!a) throw ValidationError("allocation references unknown action '" + pair[1].get<std::string>() + "'");
                out.insert({*s, *c, *a});
            }
        }
        return out;
    };
    return SensorAllocation{read("detectors"), read("stealthy")};
}

}  // namespace mtdsense
