#include <gtest/gtest.h>

#include <random>

#include <mtdsense/alloc.hpp>

#include "random_models.hpp"
#include "test_util.hpp"

using namespace mtdsense;
using namespace mtdsense::testing;

namespace {

ModelBundle toy(std::uint64_t seed) {
    RandomModelSpec spec;
    spec.max_sites = 6;
    spec.max_states = 5;
    spec.max_configs = 2;
    spec.per_site_eps = seed % 2 == 0;
    spec.detector_budget = 1 + static_cast<int>(seed % 2);
    spec.stealthy_budget = 1;
    return random_model(seed, spec);
}

std::size_t per_config_count(const SiteSet& sites, std::size_t config) {
    return static_cast<std::size_t>(
        std::count_if(sites.begin(), sites.end(), [&](const Site& s) { return s.config == config; }));
}

}  // namespace

TEST(Alloc, Step1MatchesBruteForce) {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto b = toy(seed);
        const auto milp = allocate_detectors(b);
        const auto brute = brute_force_detectors(b);
        EXPECT_NEAR(milp.objective, brute.objective, 1e-6) << "seed " << seed;
        for (std::size_t i = 0; i < b.num_configs(); ++i)
            EXPECT_LE(per_config_count(milp.x, i), static_cast<std::size_t>(b.constraints.detector_budget));
        EXPECT_TRUE(validate_allocation(b, {milp.x, {}}).empty());
    }
}

TEST(Alloc, Step2MatchesBruteForce) {
    for (std::uint64_t seed = 1; seed <= 12; ++seed) {
        const auto b = toy(seed);
        const auto det = allocate_detectors(b);
        const auto st = allocate_stealthy(b, det, 0.1);
        const auto brute = brute_force_stealthy(b, det, st.policy);
        EXPECT_NEAR(st.objective, brute.objective, 1e-6) << "seed " << seed;
        for (const auto& s : st.y) EXPECT_FALSE(det.x.count(s));
        EXPECT_TRUE(validate_allocation(b, {det.x, st.y}).empty());
    }
}

TEST(Alloc, BigMFormulationIsExactForFixedPlacements) {
    std::mt19937_64 rng(42);
    for (std::uint64_t seed = 30; seed < 40; ++seed) {
        const auto b = random_model(seed);
        const auto base = build_base_mdp(b);
        const auto c = StateRelevanceWeights::from_initial(base);
        const auto milp = build_step1_milp(base, b.constraints, b.fn_model, c);
        for (int trial = 0; trial < 3; ++trial) {
            auto model = milp.model;
            SiteSet x;
            std::vector<int> used(b.num_configs(), 0);
            for (const auto& [site, var] : milp.site_vars) {
                const bool on = rng() % 3 == 0 && used[site.config] < b.constraints.detector_budget;
                if (on) {
                    ++used[site.config];
                    x.insert(site);
                }
                model.set_bounds(var, on, on);
            }
            const auto sol = solve(model);
            ASSERT_EQ(sol.status, SolveStatus::optimal);
            const auto v = solve_ssp_lp(apply_detectors(base, x, b.fn_model), c);
            EXPECT_NEAR(sol.objective_value, weighted_sum(c, v), 1e-6) << "seed " << seed;
        }
    }
}

TEST(Alloc, HoneyFormulationIsExactForFixedPlacements) {
    std::mt19937_64 rng(7);
    for (std::uint64_t seed = 40; seed < 50; ++seed) {
        const auto b = random_model(seed);
        const auto base = build_base_mdp(b);
        const auto c = StateRelevanceWeights::from_initial(base);
        const auto det = allocate_detectors(b);
        const auto mdp_x = apply_detectors(base, det.x, b.fn_model);
        const auto pi = extract_policy(mdp_x, det.attacker_value, 0.1);
        const auto milp = build_step2_milp(mdp_x, pi, b.constraints, det.x, c);
        auto model = milp.model;
        SiteSet y;
        std::vector<int> used(b.num_configs(), 0);
        for (const auto& [site, var] : milp.site_vars) {
            const bool on = rng() % 2 == 0 && used[site.config] < b.constraints.stealthy_budget;
            if (on) {
                ++used[site.config];
                y.insert(site);
            }
            model.set_bounds(var, on, on);
        }
        const auto sol = solve(model);
        ASSERT_EQ(sol.status, SolveStatus::optimal);
        EXPECT_NEAR(sol.objective_value, weighted_sum(c, evaluate_policy(apply_stealthy(mdp_x, y), pi)), 1e-6);
    }
}

TEST(Alloc, ZeroBudgets) {
    const auto b = with_budgets(bundled_model(), 0, 0);
    const auto r = synthesize(b, 0.1);
    EXPECT_TRUE(r.detectors.x.empty());
    EXPECT_TRUE(r.stealthy.y.empty());
    const auto base = build_base_mdp(b);
    EXPECT_NEAR(r.attacker_value, initial_value(base, value_iteration(base)), 1e-6);
    EXPECT_NEAR(r.defender_value, r.perceived_value, 1e-9);
}

TEST(Alloc, StealthySensorsNeverHelpTheAttacker) {
    for (int k = 0; k <= 2; ++k)
        for (int h = 0; h <= 2; ++h) {
            const auto r = synthesize(with_budgets(bundled_model(), k, h), 0.1);
            EXPECT_LE(r.defender_value, r.perceived_value + 1e-9);
            EXPECT_LE(r.perceived_value, r.attacker_value + 1e-9);
            for (const auto& v : r.stealthy.defender_value.values) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
}

TEST(Alloc, CertificatesAgree) {
    const auto b = bundled_model();
    const auto det = allocate_detectors(b);
    ASSERT_EQ(det.attacker_value.size(), det.certificate.size());
    for (std::size_t z = 0; z < det.certificate.size(); ++z)
        EXPECT_NEAR(det.attacker_value[z], det.certificate[z], 1e-6);
    EXPECT_EQ(per_config_count(det.x, 0), 2u);
}

TEST(Alloc, MilpStructure) {
    const auto b = bundled_model();
    const auto base = build_base_mdp(b);
    const auto c = StateRelevanceWeights::from_initial(base);
    const auto m1 = build_step1_milp(base, b.constraints, b.fn_model, c);
    EXPECT_EQ(m1.site_vars.size(), 16u);
    EXPECT_EQ(m1.model.num_binaries(), 16u);
    EXPECT_EQ(m1.value_vars.size(), base.size());

    const SiteSet x{site(b, "A", "default", "w1")};
    const auto mx = apply_detectors(base, x, b.fn_model);
    const auto pi = extract_policy(mx, solve_ssp_lp(mx), 0.1);
    const auto m2 = build_step2_milp(mx, pi, b.constraints, x, c);
    EXPECT_EQ(m2.site_vars.size(), 15u);
    EXPECT_FALSE(m2.site_vars.count(site(b, "A", "default", "w1")));

    // Preconditions.
    EXPECT_THROW(build_step1_milp(mx, b.constraints, b.fn_model, c), ValidationError);
    StochasticPolicy short_pi = pi;
    short_pi.probs[0].pop_back();
    EXPECT_THROW(build_step2_milp(mx, short_pi, b.constraints, x, c), ValidationError);
    StateRelevanceWeights zero = c;
    zero.weights[0] = 0.0;
    EXPECT_THROW(build_step1_milp(base, b.constraints, b.fn_model, zero), ValidationError);
}

TEST(Alloc, BruteForceGuardsInstanceSize) {
    auto b = with_budgets(bundled_model(), 4, 0);
    BruteForceOptions opts;
    opts.max_candidates = 100;
    EXPECT_THROW(brute_force_detectors(b, opts), ValidationError);
}

TEST(Alloc, BruteForceIsThreadIndependent) {
    const auto b = toy(3);
    BruteForceOptions one, many;
    many.threads = 4;
    const auto r1 = brute_force_detectors(b, one);
    const auto r4 = brute_force_detectors(b, many);
    EXPECT_EQ(r1.x, r4.x);
    EXPECT_EQ(r1.objective, r4.objective);
}

TEST(Alloc, DetectorBudgetMonotonicity) {
    const auto b = bundled_model();
    double prev = 2.0;
    for (int k = 0; k <= 4; ++k) {
        const auto det = allocate_detectors(with_budgets(b, k, 0));
        const double v = initial_value(build_base_mdp(b), det.certificate);
        EXPECT_LE(v, prev + 1e-9) << "k=" << k;
        prev = v;
    }
}

TEST(Alloc, PipelineJson) {
    const auto b = bundled_model();
    const auto r = synthesize(b, 0.1);
    const auto j = pipeline_to_json(b, r, 0.1);
    EXPECT_EQ(allocation_from_json(b, j), r.allocation());
    EXPECT_DOUBLE_EQ(j["defender_value_V1"].get<double>(), r.defender_value);
    EXPECT_TRUE(j["step1"]["stats"].contains("nodes"));
    EXPECT_EQ(j["settings"]["temperature"].get<double>(), 0.1);
}
