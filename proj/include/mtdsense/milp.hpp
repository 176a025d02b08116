#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace mtdsense {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

using VarId = std::size_t;

enum class VarType { continuous, binary };
enum class Relation { less_equal, greater_equal, equal };

struct Term {
    VarId var;
    double coef;
};
using LinearExpr = std::vector<Term>;

struct Variable {
    std::string name;
    double lower;
    double upper;
    VarType type;
};

struct Constraint {
    std::string name;
    LinearExpr expr;
    Relation rel;
    double rhs;
};

/// Minimization MILP with continuous and binary variables.
class MilpModel {
  public:
    VarId add_variable(std::string name, double lower, double upper, VarType type = VarType::continuous) {
        vars_.push_back({std::move(name), lower, upper, type});
        return vars_.size() - 1;
    }
    VarId add_binary(std::string name) { return add_variable(std::move(name), 0.0, 1.0, VarType::binary); }

    void add_constraint(LinearExpr expr, Relation rel, double rhs, std::string name = {}) {
        if (name.empty()) name = "c" + std::to_string(cons_.size());
        cons_.push_back({std::move(name), std::move(expr), rel, rhs});
    }

    void set_objective(LinearExpr expr, double constant = 0.0) {
        objective_ = std::move(expr);
        objective_constant_ = constant;
    }

    void set_bounds(VarId v, double lower, double upper) {
        vars_.at(v).lower = lower;
        vars_.at(v).upper = upper;
    }

    const std::vector<Variable>& variables() const { return vars_; }
    const std::vector<Constraint>& constraints() const { return cons_; }
    const LinearExpr& objective() const { return objective_; }
    double objective_constant() const { return objective_constant_; }
    std::size_t num_variables() const { return vars_.size(); }

    std::size_t num_binaries() const {
        return static_cast<std::size_t>(
            std::count_if(vars_.begin(), vars_.end(), [](const Variable& v) { return v.type == VarType::binary; }));
    }

    /// Throws ValidationError on undeclared variables, bad binary bounds
    /// or non-finite coefficients.
    void validate() const {
        auto check_expr = [&](const LinearExpr& e, const std::string& where) {
            for (const auto& t : e) {
                if (t.var >= vars_.size()) throw ValidationError(where + ": undeclared variable " + std::to_string(t.var));
                if (!std::isfinite(t.coef)) throw ValidationError(where + ": non-finite coefficient");
            }
        };
        for (const auto& v : vars_) {
            if (std::isnan(v.lower) || std::isnan(v.upper)) throw ValidationError("variable " + v.name + ": NaN bound");
            if (v.type == VarType::binary && (v.lower < 0.0 || v.upper > 1.0))
                throw ValidationError("binary variable " + v.name + " has bounds outside [0, 1]");
        }
        check_expr(objective_, "objective");
        if (!std::isfinite(objective_constant_)) throw ValidationError("objective: non-finite constant");
        for (const auto& c : cons_) {
            check_expr(c.expr, "constraint " + c.name);
            if (!std::isfinite(c.rhs)) throw ValidationError("constraint " + c.name + ": non-finite right-hand side");
        }
    }

  private:
    std::vector<Variable> vars_;
    std::vector<Constraint> cons_;
    LinearExpr objective_;
    double objective_constant_ = 0.0;
};

enum class SolveStatus { optimal, infeasible, unbounded, gap_limit };

inline const char* to_string(SolveStatus s) {
    switch (s) {
        case SolveStatus::optimal: return "optimal";
        case SolveStatus::infeasible: return "infeasible";
        case SolveStatus::unbounded: return "unbounded";
        case SolveStatus::gap_limit: return "gap_limit";
    }
    return "unknown";
}

struct SolveStats {
    std::size_t nodes = 0;
    std::size_t lp_iterations = 0;
    double wall_seconds = 0.0;

    nlohmann::json to_json() const {
        return {{"nodes", nodes}, {"lp_iterations", lp_iterations}, {"wall_seconds", wall_seconds}};
    }
};

struct MilpSolution {
    SolveStatus status = SolveStatus::infeasible;
    double objective_value = kInf;
    std::vector<double> assignment;
    SolveStats stats;

    double operator[](VarId v) const { return assignment.at(v); }
};

/// Solver tolerances and limits. Defaults are tighter than the 1e-6 used
/// by assertions on solver output.
struct SolveOptions {
    double feasibility_tol = 1e-7;
    double integrality_tol = 1e-6;
    double gap = 1e-8;
    std::size_t node_limit = 5'000'000;
    double time_limit_seconds = kInf;
};

namespace detail {

/**
 * Dense bounded-variable primal simplex (two phases, Dantzig pricing with a
 * Bland fallback once the objective stalls). Every internal column lives in
 * [0, upper]; the caller's bounds are mapped in by shifting, negating or
 * splitting free variables.
 */
class DenseSimplex {
  public:
    enum class Result { optimal, infeasible, unbounded };

    struct Output {
        Result result;
        std::vector<double> x;  // in the caller's variable space
        double objective;
        std::size_t iterations;
    };

    static Output run(const MilpModel& model, const std::vector<double>& lower, const std::vector<double>& upper,
                      double feas_tol) {
        DenseSimplex lp(model, lower, upper, feas_tol);
        return lp.solve();
    }

  private:
    static constexpr double kPivotTol = 1e-9;
    static constexpr double kOptTol = 1e-9;

    struct ColMap {
        VarId var;
        double sign;
    };

    const MilpModel& model_;
    double feas_tol_;
    std::size_t nvars_;
    std::vector<double> shift_;   // per caller variable
    std::vector<ColMap> cols_;    // structural internal columns
    std::size_t m_ = 0, n_ = 0;   // rows, total columns
    std::size_t n_struct_ = 0, art_begin_ = 0;
    std::vector<double> T_;       // m x n tableau, row-major
    std::vector<double> beta_;    // basic values
    std::vector<double> d_;       // reduced costs
    std::vector<double> cost_;    // phase-dependent costs
    std::vector<double> ub_;      // column upper bounds
    std::vector<std::ptrdiff_t> basic_row_;  // row of basic column or -1
    std::vector<std::size_t> basis_;         // column basic in each row
    std::vector<char> at_upper_;
    std::vector<char> blocked_;              // columns never allowed to enter
    std::size_t iterations_ = 0;
    bool infeasible_bounds_ = false;

    double& t(std::size_t i, std::size_t j) { return T_[i * n_ + j]; }
    double t(std::size_t i, std::size_t j) const { return T_[i * n_ + j]; }

    DenseSimplex(const MilpModel& model, const std::vector<double>& lower, const std::vector<double>& upper,
                 double feas_tol)
        : model_(model), feas_tol_(feas_tol), nvars_(model.num_variables()), shift_(nvars_, 0.0) {
        std::vector<double> col_ub;
        for (VarId v = 0; v < nvars_; ++v) {
            double lo = lower[v], hi = upper[v];
            if (lo > hi + feas_tol_) infeasible_bounds_ = true;
            if (std::isfinite(lo)) {
                shift_[v] = lo;
                cols_.push_back({v, 1.0});
                col_ub.push_back(std::max(0.0, hi - lo));
            } else if (std::isfinite(hi)) {
                shift_[v] = hi;
                cols_.push_back({v, -1.0});
                col_ub.push_back(kInf);
            } else {
                cols_.push_back({v, 1.0});
                col_ub.push_back(kInf);
                cols_.push_back({v, -1.0});
                col_ub.push_back(kInf);
            }
        }
        n_struct_ = cols_.size();
        std::vector<std::vector<std::size_t>> cols_of(nvars_);
        for (std::size_t c = 0; c < n_struct_; ++c) cols_of[cols_[c].var].push_back(c);

        const auto& cons = model.constraints();
        m_ = cons.size();
        std::size_t nslack = 0;
        for (const auto& c : cons) nslack += c.rel != Relation::equal;
        art_begin_ = n_struct_ + nslack;

        // residuals with every structural column at zero
        std::vector<double> rhs(m_);
        std::vector<int> art_sign(m_, 0);
        std::vector<double> slack_coef(m_, 0.0);
        for (std::size_t i = 0; i < m_; ++i) {
            double r = cons[i].rhs;
            for (const auto& term : cons[i].expr) r -= term.coef * shift_[term.var];
            rhs[i] = r;
            if (cons[i].rel == Relation::less_equal) slack_coef[i] = 1.0;
            if (cons[i].rel == Relation::greater_equal) slack_coef[i] = -1.0;
            bool slack_ok = slack_coef[i] != 0.0 && r * slack_coef[i] >= 0.0;
            if (!slack_ok) art_sign[i] = r >= 0.0 ? 1 : -1;
        }
        std::size_t nart = 0;
        for (int s : art_sign) nart += s != 0;
        n_ = art_begin_ + nart;

        T_.assign(m_ * n_, 0.0);
        beta_.assign(m_, 0.0);
        ub_.assign(n_, kInf);
        basic_row_.assign(n_, -1);
        basis_.assign(m_, 0);
        at_upper_.assign(n_, 0);
        blocked_.assign(n_, 0);
        for (std::size_t c = 0; c < n_struct_; ++c) ub_[c] = col_ub[c];

        std::size_t slack_col = n_struct_, art_col = art_begin_;
        for (std::size_t i = 0; i < m_; ++i) {
            for (const auto& term : cons[i].expr)
                for (std::size_t c : cols_of[term.var]) t(i, c) += term.coef * cols_[c].sign;
            std::size_t basic_col = 0;
            double basic_coef = 1.0;
            if (slack_coef[i] != 0.0) {
                t(i, slack_col) = slack_coef[i];
                if (art_sign[i] == 0) {
                    basic_col = slack_col;
                    basic_coef = slack_coef[i];
                }
                ++slack_col;
            }
            if (art_sign[i] != 0) {
                t(i, art_col) = art_sign[i];
                basic_col = art_col;
                basic_coef = art_sign[i];
                ++art_col;
            }
            for (std::size_t j = 0; j < n_; ++j) t(i, j) /= basic_coef;
            beta_[i] = rhs[i] / basic_coef;
            basis_[i] = basic_col;
            basic_row_[basic_col] = static_cast<std::ptrdiff_t>(i);
        }
    }

    void compute_reduced_costs() {
        d_ = cost_;
        for (std::size_t i = 0; i < m_; ++i) {
            const double cb = cost_[basis_[i]];
            if (cb == 0.0) continue;
            const double* row = &T_[i * n_];
            for (std::size_t j = 0; j < n_; ++j) d_[j] -= cb * row[j];
        }
    }

    double current_objective() const {
        double z = 0.0;
        for (std::size_t i = 0; i < m_; ++i) z += cost_[basis_[i]] * beta_[i];
        for (std::size_t j = 0; j < n_; ++j)
            if (at_upper_[j] && basic_row_[j] < 0) z += cost_[j] * ub_[j];
        return z;
    }

    void pivot(std::size_t r, std::size_t j, double entering_value) {
        const double piv = t(r, j);
        double* prow = &T_[r * n_];
        for (std::size_t k = 0; k < n_; ++k) prow[k] /= piv;
        std::vector<std::size_t> nz;
        nz.reserve(n_);
        for (std::size_t k = 0; k < n_; ++k)
            if (prow[k] != 0.0) nz.push_back(k);
        for (std::size_t i = 0; i < m_; ++i) {
            if (i == r) continue;
            const double f = t(i, j);
            if (f == 0.0) continue;
            double* row = &T_[i * n_];
            for (std::size_t k : nz) row[k] -= f * prow[k];
            row[j] = 0.0;
        }
        const double fd = d_[j];
        if (fd != 0.0) {
            for (std::size_t k : nz) d_[k] -= fd * prow[k];
            d_[j] = 0.0;
        }
        const std::size_t leaving = basis_[r];
        basic_row_[leaving] = -1;
        basis_[r] = j;
        basic_row_[j] = static_cast<std::ptrdiff_t>(r);
        at_upper_[j] = 0;
        beta_[r] = entering_value;
    }

    // Runs primal simplex on the current costs. Returns false if unbounded.
    bool iterate() {
        const std::size_t stall_limit = 5 * (m_ + n_);
        const std::size_t iter_limit = 200 * (m_ + n_) + 10000;
        bool bland = false;
        std::size_t stall = 0;
        double last_obj = current_objective();
        for (std::size_t it = 0;; ++it) {
            if (it > iter_limit) throw SolverError("simplex iteration limit exceeded (numerical failure)");
            std::ptrdiff_t enter = -1;
            double best = 0.0;
            for (std::size_t j = 0; j < n_; ++j) {
                if (basic_row_[j] >= 0 || blocked_[j] || ub_[j] == 0.0) continue;
                double score = at_upper_[j] ? d_[j] : -d_[j];
                if (score <= kOptTol) continue;
                if (bland) {
                    enter = static_cast<std::ptrdiff_t>(j);
                    break;
                }
                if (score > best) {
                    best = score;
                    enter = static_cast<std::ptrdiff_t>(j);
                }
            }
            if (enter < 0) return true;
            const std::size_t j = static_cast<std::size_t>(enter);
            const double dir = at_upper_[j] ? -1.0 : 1.0;

            double step = ub_[j];
            std::ptrdiff_t leave = -1;
            bool leave_to_upper = false;
            double leave_alpha = 0.0;
            for (std::size_t i = 0; i < m_; ++i) {
                const double alpha = dir * t(i, j);
                double limit;
                bool to_upper;
                if (alpha > kPivotTol) {
                    limit = std::max(0.0, beta_[i]) / alpha;
                    to_upper = false;
                } else if (alpha < -kPivotTol && std::isfinite(ub_[basis_[i]])) {
                    limit = std::max(0.0, ub_[basis_[i]] - beta_[i]) / -alpha;
                    to_upper = true;
                } else {
                    continue;
                }
                bool take;
                if (leave < 0)
                    take = limit <= step;  // step is still the bound-flip distance
                else if (limit < step - 1e-12)
                    take = true;
                else if (limit <= step + 1e-12)
                    take = bland ? basis_[i] < basis_[static_cast<std::size_t>(leave)]
                                 : std::abs(alpha) > std::abs(leave_alpha);
                else
                    take = false;
                if (take) {
                    step = std::min(step, limit);
                    leave = static_cast<std::ptrdiff_t>(i);
                    leave_to_upper = to_upper;
                    leave_alpha = alpha;
                }
            }
            if (!std::isfinite(step)) return false;
            ++iterations_;

            for (std::size_t i = 0; i < m_; ++i) {
                const double a = t(i, j);
                if (a != 0.0) beta_[i] -= dir * step * a;
            }
            if (leave < 0) {
                at_upper_[j] = at_upper_[j] ? 0 : 1;  // bound flip
            } else {
                const std::size_t r = static_cast<std::size_t>(leave);
                const std::size_t out = basis_[r];
                const double entering_value = at_upper_[j] ? ub_[j] - step : step;
                pivot(r, j, entering_value);
                at_upper_[out] = leave_to_upper ? 1 : 0;
            }
            for (std::size_t i = 0; i < m_; ++i) {
                if (beta_[i] < 0.0 && beta_[i] > -feas_tol_) beta_[i] = 0.0;
                const double u = ub_[basis_[i]];
                if (std::isfinite(u) && beta_[i] > u && beta_[i] < u + feas_tol_) beta_[i] = u;
            }

            const double obj = current_objective();
            if (obj < last_obj - 1e-12) {
                last_obj = obj;
                stall = 0;
            } else if (++stall > stall_limit) {
                bland = true;
            }
        }
    }

    Output solve() {
        Output out{Result::infeasible, {}, kInf, 0};
        if (infeasible_bounds_) return out;

        // phase 1
        cost_.assign(n_, 0.0);
        for (std::size_t j = art_begin_; j < n_; ++j) cost_[j] = 1.0;
        if (n_ > art_begin_) {
            compute_reduced_costs();
            iterate();
            double infeas = 0.0;
            for (std::size_t i = 0; i < m_; ++i)
                if (basis_[i] >= art_begin_) infeas += std::abs(beta_[i]);
            if (infeas > feas_tol_) {
                out.iterations = iterations_;
                return out;
            }
            for (std::size_t j = art_begin_; j < n_; ++j) {
                ub_[j] = 0.0;
                blocked_[j] = 1;
            }
            // drive zero-valued artificials out of the basis
            for (std::size_t r = 0; r < m_; ++r) {
                if (basis_[r] < art_begin_) continue;
                std::ptrdiff_t best = -1;
                double best_abs = kPivotTol;
                for (std::size_t j = 0; j < art_begin_; ++j) {
                    if (basic_row_[j] >= 0) continue;
                    if (std::abs(t(r, j)) > best_abs) {
                        best_abs = std::abs(t(r, j));
                        best = static_cast<std::ptrdiff_t>(j);
                    }
                }
                if (best < 0) continue;  // redundant row; artificial stays basic at 0
                const std::size_t j = static_cast<std::size_t>(best);
                const std::size_t out_col = basis_[r];
                const double value = at_upper_[j] ? ub_[j] : 0.0;
                const double delta = beta_[r] / t(r, j);
                for (std::size_t i = 0; i < m_; ++i)
                    if (i != r) beta_[i] -= delta * t(i, j);
                pivot(r, j, value + delta);
                at_upper_[out_col] = 0;
            }
        }

        // phase 2
        cost_.assign(n_, 0.0);
        for (const auto& term : model_.objective())
            for (std::size_t c = 0; c < n_struct_; ++c)
                if (cols_[c].var == term.var) cost_[c] += term.coef * cols_[c].sign;
        compute_reduced_costs();
        bool bounded = iterate();
        out.iterations = iterations_;
        if (!bounded) {
            out.result = Result::unbounded;
            return out;
        }

        std::vector<double> colval(n_struct_, 0.0);
        for (std::size_t c = 0; c < n_struct_; ++c) {
            if (basic_row_[c] >= 0)
                colval[c] = beta_[static_cast<std::size_t>(basic_row_[c])];
            else if (at_upper_[c])
                colval[c] = ub_[c];
        }
        out.x = shift_;
        for (std::size_t c = 0; c < n_struct_; ++c) out.x[cols_[c].var] += cols_[c].sign * colval[c];
        out.objective = model_.objective_constant();
        for (const auto& term : model_.objective()) out.objective += term.coef * out.x[term.var];
        out.result = Result::optimal;
        return out;
    }
};

}  // namespace detail

namespace detail {

inline MilpSolution solve_with_bounds(const MilpModel& model, const std::vector<double>& lower,
                                      const std::vector<double>& upper, const SolveOptions& opts) {
    auto out = DenseSimplex::run(model, lower, upper, opts.feasibility_tol);
    MilpSolution sol;
    sol.stats.lp_iterations = out.iterations;
    switch (out.result) {
        case DenseSimplex::Result::infeasible: sol.status = SolveStatus::infeasible; break;
        case DenseSimplex::Result::unbounded:
            sol.status = SolveStatus::unbounded;
            sol.objective_value = -kInf;
            break;
        case DenseSimplex::Result::optimal:
            sol.status = SolveStatus::optimal;
            sol.objective_value = out.objective;
            sol.assignment = std::move(out.x);
            break;
    }
    return sol;
}

}  // namespace detail

/// LP relaxation: integrality dropped, binaries kept within their bounds.
inline MilpSolution solve_lp_relaxation(const MilpModel& model, const SolveOptions& opts = {}) {
    model.validate();
    auto start = std::chrono::steady_clock::now();
    std::vector<double> lo, hi;
    for (const auto& v : model.variables()) {
        lo.push_back(v.lower);
        hi.push_back(v.upper);
    }
    auto sol = detail::solve_with_bounds(model, lo, hi, opts);
    sol.stats.nodes = 1;
    sol.stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sol;
}

/**
 * Branch-and-bound over the binary variables. Each node solves its LP
 * relaxation with the simplex above; nodes are explored best-bound first
 * (ties by creation order) and branch on the most fractional binary (ties by
 * declaration order). Returns gap_limit with the incumbent when the node or
 * time limit is hit.
 */
inline MilpSolution solve(const MilpModel& model, const SolveOptions& opts = {}) {
    model.validate();
    const auto start = std::chrono::steady_clock::now();
    const auto& vars = model.variables();
    std::vector<VarId> binaries;
    for (VarId v = 0; v < vars.size(); ++v)
        if (vars[v].type == VarType::binary) binaries.push_back(v);

    std::vector<double> base_lo, base_hi;
    for (const auto& v : vars) {
        base_lo.push_back(v.lower);
        base_hi.push_back(v.upper);
    }

    // fixing per binary: -1 free, 0 or 1 fixed
    using Fixing = std::vector<std::int8_t>;
    struct Node {
        double bound;
        std::size_t id;
        Fixing fix;
        std::ptrdiff_t branch;  // index into `binaries`
    };
    struct Worse {
        bool operator()(const Node& a, const Node& b) const {
            if (a.bound != b.bound) return a.bound > b.bound;
            return a.id > b.id;
        }
    };

    SolveStats stats;
    MilpSolution incumbent;
    incumbent.status = SolveStatus::infeasible;
    bool have_incumbent = false;
    bool unbounded = false;
    std::priority_queue<Node, std::vector<Node>, Worse> open;
    std::size_t next_id = 0;

    auto evaluate = [&](Fixing fix) -> std::optional<Node> {
        std::vector<double> lo = base_lo, hi = base_hi;
        for (std::size_t k = 0; k < binaries.size(); ++k)
            if (fix[k] >= 0) lo[binaries[k]] = hi[binaries[k]] = fix[k];
        auto sol = detail::solve_with_bounds(model, lo, hi, opts);
        ++stats.nodes;
        stats.lp_iterations += sol.stats.lp_iterations;
        if (sol.status == SolveStatus::unbounded) {  // only reachable at the root
            unbounded = true;
            return std::nullopt;
        }
        if (sol.status != SolveStatus::optimal) return std::nullopt;
        if (have_incumbent && sol.objective_value >= incumbent.objective_value - opts.gap) return std::nullopt;
        std::ptrdiff_t branch = -1;
        double best_frac = opts.integrality_tol;
        for (std::size_t k = 0; k < binaries.size(); ++k) {
            const double val = sol.assignment[binaries[k]];
            const double frac = std::min(val - std::floor(val), std::ceil(val) - val);
            if (frac > best_frac + 1e-12) {
                best_frac = frac;
                branch = static_cast<std::ptrdiff_t>(k);
            }
        }
        if (branch < 0) {
            incumbent = std::move(sol);
            have_incumbent = true;
            return std::nullopt;
        }
        return Node{sol.objective_value, next_id++, std::move(fix), branch};
    };

    bool hit_limit = false;
    if (auto root = evaluate(Fixing(binaries.size(), -1))) open.push(std::move(*root));
    if (unbounded) {
        MilpSolution result;
        result.status = SolveStatus::unbounded;
        result.objective_value = -kInf;
        result.stats = stats;
        result.stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return result;
    }
    while (!open.empty()) {
        const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (stats.nodes >= opts.node_limit || elapsed > opts.time_limit_seconds) {
            hit_limit = true;
            break;
        }
        Node node = open.top();
        open.pop();
        if (have_incumbent && node.bound >= incumbent.objective_value - opts.gap) continue;
        for (std::int8_t value : {std::int8_t{0}, std::int8_t{1}}) {
            Fixing fix = node.fix;
            fix[static_cast<std::size_t>(node.branch)] = value;
            if (auto child = evaluate(std::move(fix))) open.push(std::move(*child));
        }
    }

    MilpSolution result;
    if (have_incumbent) {
        // polish: re-solve with binaries pinned to their rounded values
        std::vector<double> lo = base_lo, hi = base_hi;
        for (VarId v : binaries) lo[v] = hi[v] = std::round(incumbent.assignment[v]);
        auto polished = detail::solve_with_bounds(model, lo, hi, opts);
        stats.lp_iterations += polished.stats.lp_iterations;
        result = polished.status == SolveStatus::optimal ? std::move(polished) : std::move(incumbent);
        for (VarId v : binaries) result.assignment[v] = std::round(result.assignment[v]);
        result.status = hit_limit ? SolveStatus::gap_limit : SolveStatus::optimal;
    } else {
        result.status = hit_limit ? SolveStatus::gap_limit : SolveStatus::infeasible;
    }
    result.stats = stats;
    result.stats.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

/// Largest violation of any constraint or bound by `x`; used by tests and
/// post-solve checks.
inline double max_violation(const MilpModel& model, const std::vector<double>& x) {
    double worst = 0.0;
    for (VarId v = 0; v < model.num_variables(); ++v) {
        worst = std::max(worst, model.variables()[v].lower - x[v]);
        worst = std::max(worst, x[v] - model.variables()[v].upper);
    }
    for (const auto& c : model.constraints()) {
        double lhs = 0.0;
        for (const auto& t : c.expr) lhs += t.coef * x[t.var];
        switch (c.rel) {
            case Relation::less_equal: worst = std::max(worst, lhs - c.rhs); break;
            case Relation::greater_equal: worst = std::max(worst, c.rhs - lhs); break;
            case Relation::equal: worst = std::max(worst, std::abs(lhs - c.rhs)); break;
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// CPLEX LP text format
// ---------------------------------------------------------------------------

namespace detail {

// Deterministic, collision-free names legal in the LP format.
inline std::vector<std::string> sanitize_names(const std::vector<std::string>& raw, const char* fallback) {
    std::vector<std::string> out;
    std::set<std::string> used;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        std::string s;
        for (char ch : raw[i]) s += (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_') ? ch : '_';
        if (s.empty()) s = fallback + std::to_string(i);
        if (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == 'e' || s[0] == 'E') s = "_" + s;
        if (used.count(s)) s += "_" + std::to_string(i);
        used.insert(s);
        out.push_back(std::move(s));
    }
    return out;
}

inline std::string lp_num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline void write_expr(std::ostream& os, const LinearExpr& expr, const std::vector<std::string>& names) {
    std::size_t width = 0;
    bool first = true;
    for (const auto& t : expr) {
        std::string piece = (t.coef < 0 ? "- " : (first ? "" : "+ ")) + lp_num(std::abs(t.coef)) + " " + names[t.var];
        if (width + piece.size() > 200) {
            os << "\n   ";
            width = 0;
        }
        os << " " << piece;
        width += piece.size() + 1;
        first = false;
    }
    if (expr.empty()) os << " 0 " << (names.empty() ? "x" : names[0]);
}

}  // namespace detail

inline void write_lp(const MilpModel& model, std::ostream& os) {
    const auto& vars = model.variables();
    std::vector<std::string> raw;
    for (const auto& v : vars) raw.push_back(v.name);
    const auto names = detail::sanitize_names(raw, "x");
    std::vector<std::string> craw;
    for (const auto& c : model.constraints()) craw.push_back(c.name);
    const auto cnames = detail::sanitize_names(craw, "c");

    if (model.objective_constant() != 0.0)
        os << "\\ objective constant " << detail::lp_num(model.objective_constant()) << " omitted\n";
    os << "Minimize\n obj:";
    detail::write_expr(os, model.objective(), names);
    os << "\nSubject To\n";
    for (std::size_t i = 0; i < model.constraints().size(); ++i) {
        const auto& c = model.constraints()[i];
        os << " " << cnames[i] << ":";
        detail::write_expr(os, c.expr, names);
        os << (c.rel == Relation::less_equal ? " <= " : c.rel == Relation::greater_equal ? " >= " : " = ")
           << detail::lp_num(c.rhs) << "\n";
    }
    os << "Bounds\n";
    for (VarId v = 0; v < vars.size(); ++v) {
        const auto& var = vars[v];
        if (var.type == VarType::binary && var.lower == 0.0 && var.upper == 1.0) continue;
        if (var.lower == var.upper) {
            os << " " << names[v] << " = " << detail::lp_num(var.lower) << "\n";
        } else if (!std::isfinite(var.lower) && !std::isfinite(var.upper)) {
            os << " " << names[v] << " free\n";
        } else {
            os << " " << (std::isfinite(var.lower) ? detail::lp_num(var.lower) : "-infinity") << " <= " << names[v]
               << " <= " << (std::isfinite(var.upper) ? detail::lp_num(var.upper) : "+infinity") << "\n";
        }
    }
    bool any_binary = false;
    for (VarId v = 0; v < vars.size(); ++v) {
        if (vars[v].type != VarType::binary) continue;
        if (!any_binary) os << "Binaries\n";
        any_binary = true;
        os << " " << names[v] << "\n";
    }
    os << "End\n";
}

inline void export_lp_file(const MilpModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write LP file '" + path + "'");
    write_lp(model, out);
    if (!out) throw IoError("write failed for LP file '" + path + "'");
}

}  // namespace mtdsense
