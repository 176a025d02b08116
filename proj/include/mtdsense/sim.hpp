#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <ostream>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"
#include "product.hpp"
#include "ssp.hpp"

namespace mtdsense {

/**
 * Counter-based SplitMix64. Output n of stream `key` is mix(key + n * gamma),
 * so any trial's stream can be produced without touching the others.
 */
class SplitMix64 {
public:
    static constexpr std::uint64_t gamma = 0x9E3779B97F4A7C15ULL;

    explicit SplitMix64(std::uint64_t key) : key_(key) {}

    /// Independent sub-stream `index` of a base seed.
    static SplitMix64 substream(std::uint64_t seed, std::uint64_t index) {
        return SplitMix64(mix(seed ^ mix(index + gamma)));
    }

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t next() { return mix(key_ + (++counter_) * gamma); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

struct SimReport {
    std::uint64_t trials = 0;
    std::uint64_t successes = 0;
    std::uint64_t detections = 0;
    std::uint64_t truncations = 0;  // step cap reached, or stuck in a state with no actions
    double empirical_success_rate = 0.0;
    double std_error = 0.0;  // binomial standard error of the rate
    std::uint64_t seed = 0;

    nlohmann::json to_json() const {
        return {{"trials", trials},
                {"successes", successes},
                {"detections", detections},
                {"truncations", truncations},
                {"empirical_success_rate", empirical_success_rate},
                {"stderr", std_error},
                {"seed", seed}};
    }
};

struct SimOptions {
    std::uint64_t max_steps = 10000;
    unsigned threads = 1;
    std::ostream* trace = nullptr;  // JSON-lines, one object per trial; forces a single thread
};

namespace detail {

enum class TrialOutcome { success, detection, truncation };

inline std::size_t sample_index(SplitMix64& rng, const std::vector<double>& weights) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) {
        if (weights[k] <= 0.0) continue;
        acc += weights[k];
        last = k;
        if (u < acc) return k;
    }
    return last;  // rounding slack goes to the last supported entry
}

inline std::size_t sample_outcome(SplitMix64& rng, const Distribution& d) {
    const double u = rng.uniform();
    double acc = 0.0;
    for (const auto& o : d) {
        acc += o.prob;
        if (u < acc) return o.next;
    }
    return d.back().next;
}

inline TrialOutcome run_trial(const ProductMdp& mdp, const StochasticPolicy& pi, const std::vector<double>& init,
                              std::uint64_t seed, std::uint64_t t, std::uint64_t max_steps,
                              nlohmann::json* path) {
    auto rng = SplitMix64::substream(seed, t);
    std::size_t z = sample_index(rng, init);
    for (std::uint64_t step = 0;; ++step) {
        if (mdp.is_sink(z)) return TrialOutcome::detection;
        if (mdp.final[z]) return TrialOutcome::success;
        if (step >= max_steps || mdp.rows[z].empty()) return TrialOutcome::truncation;
        if (pi.probs[z].size() != mdp.rows[z].size())
            throw ValidationError("attack policy does not cover state " + mdp.state_names[z]);
        const auto& row = mdp.rows[z][sample_index(rng, pi.probs[z])];
        if (path) path->push_back({mdp.state_names[z], mdp.action_names[row.action]});
        z = sample_outcome(rng, row.outcomes);
    }
}

}  // namespace detail

/**
 * Monte Carlo rollouts of `pi` on `mdp`. Trial t draws from sub-stream t of
 * `seed`, so the report does not depend on the thread count.
 */
inline SimReport simulate(const ProductMdp& mdp, const StochasticPolicy& pi, std::uint64_t trials,
                          std::uint64_t seed, const SimOptions& opts = {}) {
    if (trials < 1) throw ValidationError("simulate: trials must be at least 1");
    if (opts.max_steps < 1) throw ValidationError("simulate: max_steps must be at least 1");
    if (pi.probs.size() != mdp.size()) throw ValidationError("attack policy has wrong size");
    double mass = 0.0;
    for (double p : mdp.initial) mass += p;
    if (!(mass > 0.0)) throw ValidationError("simulate: initial distribution is empty");

    std::vector<detail::TrialOutcome> outcome(trials);
    unsigned threads = opts.trace ? 1u : std::max(1u, opts.threads);
    if (threads == 1) {
        for (std::uint64_t t = 0; t < trials; ++t) {
            nlohmann::json path = nlohmann::json::array();
            outcome[t] = detail::run_trial(mdp, pi, mdp.initial, seed, t, opts.max_steps, opts.trace ? &path : nullptr);
            if (opts.trace) {
                static const char* names[] = {"success", "detection", "truncation"};
                nlohmann::json line{{"trial", t}, {"path", path}, {"outcome", names[static_cast<int>(outcome[t])]}};
                *opts.trace << line.dump() << '\n';
            }
        }
    } else {
        std::vector<std::thread> pool;
        std::vector<std::exception_ptr> errors(threads);
        for (unsigned w = 0; w < threads; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::uint64_t t = w; t < trials; t += threads)
                        outcome[t] = detail::run_trial(mdp, pi, mdp.initial, seed, t, opts.max_steps, nullptr);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& th : pool) th.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    }

    SimReport r;
    r.trials = trials;
    r.seed = seed;
    for (auto o : outcome) {
        if (o == detail::TrialOutcome::success) ++r.successes;
        else if (o == detail::TrialOutcome::detection) ++r.detections;
        else ++r.truncations;
    }
    const double n = static_cast<double>(trials);
    r.empirical_success_rate = static_cast<double>(r.successes) / n;
    r.std_error = std::sqrt(r.empirical_success_rate * (1.0 - r.empirical_success_rate) / n);
    return r;
}

}  // namespace mtdsense
