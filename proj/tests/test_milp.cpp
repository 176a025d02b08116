#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include <mtdsense/milp.hpp>

#include "test_util.hpp"

using namespace mtdsense;

namespace {

/// Random pure-binary program: min c.x s.t. A x <= b (plus one >= row),
/// with an exhaustive oracle over all 2^n assignments.
struct BinaryProgram {
    std::vector<double> cost;
    std::vector<std::vector<double>> rows;
    std::vector<double> rhs;
    std::vector<Relation> rel;

    MilpModel model() const {
        MilpModel m;
        for (std::size_t j = 0; j < cost.size(); ++j) m.add_binary("x" + std::to_string(j));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            LinearExpr e;
            for (std::size_t j = 0; j < cost.size(); ++j)
                if (rows[i][j] != 0.0) e.push_back({j, rows[i][j]});
            m.add_constraint(e, rel[i], rhs[i]);
        }
        LinearExpr obj;
        for (std::size_t j = 0; j < cost.size(); ++j) obj.push_back({j, cost[j]});
        m.set_objective(obj);
        return m;
    }

    std::optional<double> brute_force() const {
        std::optional<double> best;
        const std::size_t n = cost.size();
        for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
            bool ok = true;
            for (std::size_t i = 0; i < rows.size() && ok; ++i) {
                double lhs = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (mask >> j & 1) lhs += rows[i][j];
                ok = rel[i] == Relation::less_equal ? lhs <= rhs[i] + 1e-12 : lhs >= rhs[i] - 1e-12;
            }
            if (!ok) continue;
            double obj = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (mask >> j & 1) obj += cost[j];
            if (!best || obj < *best) best = obj;
        }
        return best;
    }
};

BinaryProgram random_program(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> nvars(3, 12), nrows(1, 4);
    std::uniform_real_distribution<double> coef(-1.0, 3.0), cost(-5.0, 5.0);
    BinaryProgram p;
    const int n = nvars(rng), m = nrows(rng);
    for (int j = 0; j < n; ++j) p.cost.push_back(std::round(cost(rng) * 100) / 100);
    for (int i = 0; i < m; ++i) {
        std::vector<double> row(n);
        double total = 0.0;
        for (auto& a : row) total += (a = std::round(coef(rng) * 100) / 100);
        p.rows.push_back(row);
        p.rhs.push_back(std::round(total * 0.4 * 100) / 100);
        p.rel.push_back(Relation::less_equal);
    }
    // One covering row keeps the empty assignment from being trivially optimal.
    p.rows.push_back(std::vector<double>(n, 1.0));
    p.rhs.push_back(std::min(2, n));
    p.rel.push_back(Relation::greater_equal);
    return p;
}

}  // namespace

TEST(Milp, TextbookLp) {
    // max x + y  s.t.  x + 2y <= 4, 3x + y <= 6, x, y >= 0   ->  (1.6, 1.2), 2.8
    MilpModel m;
    auto x = m.add_variable("x", 0.0, kInf);
    auto y = m.add_variable("y", 0.0, kInf);
    m.add_constraint({{x, 1.0}, {y, 2.0}}, Relation::less_equal, 4.0);
    m.add_constraint({{x, 3.0}, {y, 1.0}}, Relation::less_equal, 6.0);
    m.set_objective({{x, -1.0}, {y, -1.0}});
    const auto s = solve(m);
    ASSERT_EQ(s.status, SolveStatus::optimal);
    EXPECT_NEAR(s.objective_value, -2.8, 1e-9);
    EXPECT_NEAR(s[x], 1.6, 1e-9);
    EXPECT_NEAR(s[y], 1.2, 1e-9);
    EXPECT_LE(max_violation(m, s.assignment), 1e-9);
}

TEST(Milp, EqualitiesFreeAndShiftedVariables) {
    // min x - y + z with x + y + z = 3, x - z >= -1, y in [-2, 1], x free, z in [1, 5]
    MilpModel m;
    auto x = m.add_variable("x", -kInf, kInf);
    auto y = m.add_variable("y", -2.0, 1.0);
    auto z = m.add_variable("z", 1.0, 5.0);
    m.add_constraint({{x, 1.0}, {y, 1.0}, {z, 1.0}}, Relation::equal, 3.0);
    m.add_constraint({{x, 1.0}, {z, -1.0}}, Relation::greater_equal, -1.0);
    m.set_objective({{x, 1.0}, {y, -1.0}, {z, 1.0}}, 10.0);
    const auto s = solve(m);
    ASSERT_EQ(s.status, SolveStatus::optimal);
    // x = 3 - y - z, objective 3 - 2y, so y = 1; x >= z - 1 means 2 - z >= z - 1, z <= 1.5.
    EXPECT_NEAR(s[y], 1.0, 1e-9);
    EXPECT_NEAR(s.objective_value, 11.0, 1e-9);
    EXPECT_LE(max_violation(m, s.assignment), 1e-9);
}

TEST(Milp, InfeasibleAndUnbounded) {
    MilpModel inf;
    auto a = inf.add_variable("a", 0.0, 1.0);
    inf.add_constraint({{a, 1.0}}, Relation::greater_equal, 2.0);
    inf.set_objective({{a, 1.0}});
    EXPECT_EQ(solve(inf).status, SolveStatus::infeasible);

    MilpModel unb;
    auto b = unb.add_variable("b", 0.0, kInf);
    auto c = unb.add_variable("c", 0.0, kInf);
    unb.add_constraint({{b, 1.0}, {c, -1.0}}, Relation::less_equal, 1.0);
    unb.set_objective({{b, -1.0}});
    EXPECT_EQ(solve(unb).status, SolveStatus::unbounded);

    MilpModel int_inf;
    auto u = int_inf.add_binary("u");
    auto v = int_inf.add_binary("v");
    int_inf.add_constraint({{u, 2.0}, {v, 2.0}}, Relation::equal, 1.0);
    int_inf.set_objective({{u, 1.0}});
    EXPECT_EQ(solve(int_inf).status, SolveStatus::infeasible);
    EXPECT_EQ(solve_lp_relaxation(int_inf).status, SolveStatus::optimal);
}

TEST(Milp, MatchesEnumerationOracle) {
    for (std::uint64_t seed = 1; seed <= 60; ++seed) {
        const auto p = random_program(seed);
        const auto model = p.model();
        const auto best = p.brute_force();
        const auto s = solve(model);
        if (!best) {
            EXPECT_EQ(s.status, SolveStatus::infeasible) << "seed " << seed;
            continue;
        }
        ASSERT_EQ(s.status, SolveStatus::optimal) << "seed " << seed;
        EXPECT_NEAR(s.objective_value, *best, 1e-6) << "seed " << seed;
        for (double v : s.assignment) EXPECT_TRUE(v == 0.0 || v == 1.0);
        EXPECT_LE(max_violation(model, s.assignment), 1e-7);
    }
}

TEST(Milp, MixedIntegerFacilityToy) {
    // Two facilities with opening costs 3 and 4, serving demand 5 with capacities 4 and 4;
    // flow costs 1 and 0.5 per unit. Optimum opens both: 3 + 4 + 0.5*4 + 1*1 = 10.
    MilpModel m;
    auto o1 = m.add_binary("open1");
    auto o2 = m.add_binary("open2");
    auto f1 = m.add_variable("flow1", 0.0, kInf);
    auto f2 = m.add_variable("flow2", 0.0, kInf);
    m.add_constraint({{f1, 1.0}, {f2, 1.0}}, Relation::equal, 5.0);
    m.add_constraint({{f1, 1.0}, {o1, -4.0}}, Relation::less_equal, 0.0);
    m.add_constraint({{f2, 1.0}, {o2, -4.0}}, Relation::less_equal, 0.0);
    m.set_objective({{o1, 3.0}, {o2, 4.0}, {f1, 1.0}, {f2, 0.5}});
    const auto s = solve(m);
    ASSERT_EQ(s.status, SolveStatus::optimal);
    EXPECT_NEAR(s.objective_value, 10.0, 1e-9);
    EXPECT_NEAR(s[f2], 4.0, 1e-9);
    EXPECT_GE(s.stats.nodes, 1u);
    EXPECT_LT(solve_lp_relaxation(m).objective_value, 10.0);
}

TEST(Milp, NodeLimitReportsGap) {
    const auto p = random_program(7);
    SolveOptions opts;
    opts.node_limit = 1;
    const auto s = solve(p.model(), opts);
    EXPECT_TRUE(s.status == SolveStatus::gap_limit || s.status == SolveStatus::optimal ||
                s.status == SolveStatus::infeasible);
}

TEST(Milp, ValidateRejectsBadModels) {
    MilpModel m;
    m.add_variable("a", 0.0, 1.0);
    m.add_constraint({{3, 1.0}}, Relation::less_equal, 1.0);
    EXPECT_THROW(m.validate(), ValidationError);
    EXPECT_THROW(solve(m), ValidationError);

    MilpModel n;
    auto b = n.add_binary("b");
    n.set_bounds(b, 0.0, 2.0);
    EXPECT_THROW(n.validate(), ValidationError);
}

TEST(Milp, LpFormatExport) {
    MilpModel m;
    auto x = m.add_binary("x[A@default,w1]");
    auto v = m.add_variable("v 1", 0.0, 1.0);
    auto w = m.add_variable("w", -kInf, kInf);
    m.add_constraint({{x, 1.0}, {v, -0.5}}, Relation::less_equal, 1.0, "budget 0");
    m.add_constraint({{v, 1.0}, {w, 1.0}}, Relation::equal, 0.25);
    m.set_objective({{v, 2.0}, {x, -1.0}});
    std::ostringstream os;
    write_lp(m, os);
    const auto s = os.str();
    for (const char* section : {"Minimize", "Subject To", "Bounds", "Binaries", "End"})
        EXPECT_NE(s.find(section), std::string::npos) << section;
    EXPECT_EQ(s.find("v 1"), std::string::npos);  // names are sanitized
    EXPECT_NE(s.find("free"), std::string::npos);
    EXPECT_NE(s.find("= 0.25"), std::string::npos);

    const auto dir = mtdsense::testing::scratch_dir("milp_lp");
    export_lp_file(m, (dir / "m.lp").string());
    EXPECT_TRUE(std::filesystem::exists(dir / "m.lp"));
    EXPECT_THROW(export_lp_file(m, "/nonexistent/dir/m.lp"), IoError);
}

TEST(Milp, MaxViolation) {
    MilpModel m;
    auto a = m.add_variable("a", 0.0, 1.0);
    m.add_constraint({{a, 1.0}}, Relation::greater_equal, 0.5);
    EXPECT_NEAR(max_violation(m, {0.2}), 0.3, 1e-12);
    EXPECT_NEAR(max_violation(m, {1.5}), 0.5, 1e-12);
    EXPECT_EQ(max_violation(m, {0.7}), 0.0);
}
