#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <mtdsense/mtdsense.hpp>

using namespace mtdsense;

namespace {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

LogLevel log_level() {
    const char* env = std::getenv("MTDSENSE_LOG");
    if (!env) return LogLevel::info;
    const std::string v = env;
    if (v == "quiet" || v == "0") return LogLevel::quiet;
    if (v == "debug" || v == "2") return LogLevel::debug;
    return LogLevel::info;
}

void log(LogLevel lvl, const std::string& msg) {
    if (static_cast<int>(lvl) <= static_cast<int>(log_level())) std::cerr << "[mtdsense] " << msg << '\n';
}

std::string num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

// Rounded form for human-readable summaries.
std::string pretty(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct Common {
    std::string model_path;
    std::optional<double> eps;
};

ModelBundle load(const Common& c) {
    std::vector<std::string> warnings;
    auto b = load_model(c.model_path, &warnings);
    for (const auto& w : warnings) log(LogLevel::info, "warning: " + w);
    if (c.eps) {
        if (!(*c.eps >= 0.0 && *c.eps <= 1.0)) throw ValidationError("--eps must lie in [0, 1]");
        b = with_uniform_eps(std::move(b), *c.eps);
    }
    return b;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    return out;
}

SensorAllocation load_allocation(const ModelBundle& b, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open allocation file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("'" + path + "': " + e.what());
    }
    auto alloc = allocation_from_json(b, j);
    if (const auto v = validate_allocation(b, alloc); !v.empty()) throw ValidationError(v.front().message);
    return alloc;
}

void emit(const std::string& text, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << text;
        return;
    }
    auto out = open_out(out_path);
    out << text;
}

std::string site_list(const ModelBundle& b, const SiteSet& sites) {
    if (sites.empty()) return "none";
    std::string s;
    for (const auto& site : sites) s += (s.empty() ? "" : " ") + b.site_name(site);
    return s;
}

// ---- subcommands ---------------------------------------------------------

int cmd_validate(const Common& c) {
    const auto b = load(c);
    std::cout << "ok: " << b.num_states() << " states, " << b.num_actions() << " actions, " << b.num_configs()
              << " configurations\n";
    return 0;
}

int cmd_product(const Common& c, const std::string& alloc_path, const std::string& out_path) {
    const auto b = load(c);
    const auto alloc = alloc_path.empty() ? SensorAllocation{} : load_allocation(b, alloc_path);
    std::ostringstream os;
    write_dot(build_defender_mdp(b, alloc), os);
    emit(os.str(), out_path);
    return 0;
}

int cmd_solve(const Common& c, const std::string& alloc_path, const std::string& method, double tol,
              const std::string& out_path) {
    const auto b = load(c);
    const auto alloc = alloc_path.empty() ? SensorAllocation{} : load_allocation(b, alloc_path);
    const auto mdp = build_defender_mdp(b, alloc);
    nlohmann::json j;
    if (method == "lp" || method == "both") {
        const auto v = solve_ssp_lp(mdp);
        j["lp"] = {{"initial_value", initial_value(mdp, v)}, {"values", value_vector_to_json(mdp, v)}};
    }
    if (method == "vi" || method == "both") {
        const auto v = value_iteration(mdp, tol);
        j["vi"] = {{"initial_value", initial_value(mdp, v)}, {"values", value_vector_to_json(mdp, v)}};
    }
    emit(j.dump(2) + "\n", out_path);
    return 0;
}

int cmd_allocate(const Common& c, int k, int h, double mu, const std::string& out_path, const std::string& lp_prefix) {
    auto b = with_budgets(load(c), k, h);
    if (k < 0 || h < 0) throw ValidationError("budgets must be non-negative");
    const auto base = build_base_mdp(b);
    const double unguarded = initial_value(base, solve_ssp_lp(base));
    log(LogLevel::debug, "unguarded success rate " + num(unguarded));

    const auto r = synthesize(b, mu);
    if (!out_path.empty()) {
        auto j = pipeline_to_json(b, r, mu);
        j["unguarded_value"] = unguarded;
        auto out = open_out(out_path);
        out << j.dump(2) << '\n';
    }
    if (!lp_prefix.empty()) {
        const auto c_w = StateRelevanceWeights::from_initial(base);
        const auto m1 = build_step1_milp(base, b.constraints, b.fn_model, c_w);
        const auto mdp_x = apply_detectors(base, r.detectors.x, b.fn_model);
        const auto m2 = build_step2_milp(mdp_x, r.stealthy.policy, b.constraints, r.detectors.x, c_w);
        export_lp_file(m1.model, lp_prefix + "_step1.lp");
        export_lp_file(m2.model, lp_prefix + "_step2.lp");
    }

    std::cout << "unguarded success rate: " << pretty(unguarded) << '\n'
              << "detectors (k=" << k << "): " << site_list(b, r.detectors.x) << '\n'
              << "stealthy sensors (h=" << h << "): " << site_list(b, r.stealthy.y) << '\n'
              << "V2 attacker value with detectors: " << pretty(r.attacker_value) << '\n'
              << "attacker value of softmax policy: " << pretty(r.perceived_value) << '\n'
              << "V1 defender evaluation: " << pretty(r.defender_value) << '\n'
              << "step 1: " << r.detectors.milp_stats.nodes << " nodes, " << r.detectors.milp_stats.wall_seconds
              << " s\n"
              << "step 2: " << r.stealthy.milp_stats.nodes << " nodes, " << r.stealthy.milp_stats.wall_seconds
              << " s\n";
    return 0;
}

int cmd_export_lp(const Common& c, int k, int h, double mu, const std::string& prefix) {
    auto b = with_budgets(load(c), k, h);
    const auto base = build_base_mdp(b);
    const auto c_w = StateRelevanceWeights::from_initial(base);
    const auto m1 = build_step1_milp(base, b.constraints, b.fn_model, c_w);
    export_lp_file(m1.model, prefix + "_step1.lp");
    // Step 2 is parameterized by the Step-1 solution, so it has to be solved first.
    const auto det = allocate_detectors(b);
    const auto mdp_x = apply_detectors(base, det.x, b.fn_model);
    const auto pi = extract_policy(mdp_x, det.attacker_value, mu);
    const auto m2 = build_step2_milp(mdp_x, pi, b.constraints, det.x, c_w);
    export_lp_file(m2.model, prefix + "_step2.lp");
    std::cout << prefix << "_step1.lp\n" << prefix << "_step2.lp\n";
    return 0;
}

int cmd_simulate(const Common& c, const std::string& alloc_path, double mu, std::uint64_t trials, std::uint64_t seed,
                 std::uint64_t max_steps, unsigned threads, const std::string& trace_path, const std::string& out_path) {
    const auto b = load(c);
    const auto alloc = load_allocation(b, alloc_path);
    const auto mdp_x = apply_detectors(build_base_mdp(b), alloc.detectors, b.fn_model);
    const auto mdp_xy = apply_stealthy(mdp_x, alloc.stealthy);
    const auto pi = extract_policy(mdp_x, solve_ssp_lp(mdp_x), mu);

    SimOptions opts;
    opts.max_steps = max_steps;
    opts.threads = threads;
    std::ofstream trace;
    if (!trace_path.empty()) {
        trace = open_out(trace_path);
        opts.trace = &trace;
    }
    const auto report = simulate(mdp_xy, pi, trials, seed, opts);
    auto j = report.to_json();
    j["analytic_success_rate"] = initial_value(mdp_xy, evaluate_policy(mdp_xy, pi));
    emit(j.dump(2) + "\n", out_path);
    return 0;
}

std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        double v = 0.0;
        auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc() || res.ptr != item.data() + item.size() || v < 0.0)
            throw ValidationError(std::string(what) + ": bad value '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw ValidationError(std::string(what) + " must not be empty");
    return out;
}

std::vector<int> parse_int_list(const std::string& text, const char* what) {
    std::vector<int> out;
    for (double v : parse_list(text, what)) {
        if (v != static_cast<int>(v)) throw ValidationError(std::string(what) + ": budgets must be integers");
        out.push_back(static_cast<int>(v));
    }
    return out;
}

int cmd_sweep(const Common& c, const std::string& ks, const std::string& hs, const std::string& epss, double mu,
              std::uint64_t trials, std::uint64_t seed, unsigned threads, const std::string& out_path) {
    const auto base_bundle = load(c);
    const auto k_values = parse_int_list(ks, "--k-list");
    const auto h_values = parse_int_list(hs, "--h-list");
    std::vector<double> eps_values;
    if (epss.empty()) {
        if (!base_bundle.fn_model.overrides.empty())
            throw ValidationError("model has per-site false negative rates; pass --eps-list for a uniform sweep");
        eps_values.push_back(base_bundle.fn_model.default_rate);
    } else {
        eps_values = parse_list(epss, "--eps-list");
    }
    for (double e : eps_values)
        if (e > 1.0) throw ValidationError("--eps-list: values must lie in [0, 1]");

    struct Cell {
        int k, h;
        double eps;
        std::string line;
        std::exception_ptr error;
    };
    std::vector<Cell> cells;
    for (int k : k_values)
        for (int h : h_values)
            for (double e : eps_values) cells.push_back({k, h, e, {}, nullptr});

    auto run_cell = [&](Cell& cell) {
        try {
            const auto b = with_budgets(with_uniform_eps(base_bundle, cell.eps), cell.k, cell.h);
            const auto r = synthesize(b, mu);
            std::string line = std::to_string(cell.k) + "," + std::to_string(cell.h) + "," + num(cell.eps) + "," +
                               num(r.attacker_value) + "," + num(r.defender_value) + "," +
                               num(r.detectors.milp_stats.wall_seconds) + "," +
                               num(r.stealthy.milp_stats.wall_seconds);
            if (trials > 0) {
                const auto mdp_xy = build_defender_mdp(b, r.allocation());
                const auto rep = simulate(mdp_xy, r.stealthy.policy, trials, seed);
                line += "," + num(rep.empirical_success_rate) + "," + num(rep.std_error);
            }
            cell.line = std::move(line);
            log(LogLevel::debug, "cell " + cell.line);
        } catch (...) {
            cell.error = std::current_exception();
        }
    };

    std::string header = "k,h,eps,attacker_value_V2,defender_value_V1,milp_time_step1,milp_time_step2";
    if (trials > 0) header += ",empirical_rate,stderr";

    std::ofstream file;
    if (!out_path.empty()) file = open_out(out_path);
    std::ostream& out = out_path.empty() ? std::cout : file;
    try {
        out << header << '\n';
        threads = std::max(1u, threads);
        // Cells run in batches of `threads`; rows are written in sweep order.
        for (std::size_t first = 0; first < cells.size(); first += threads) {
            const std::size_t last = std::min(cells.size(), first + threads);
            std::vector<std::thread> pool;
            for (std::size_t i = first + 1; i < last; ++i) pool.emplace_back([&, i] { run_cell(cells[i]); });
            run_cell(cells[first]);
            for (auto& t : pool) t.join();
            for (std::size_t i = first; i < last; ++i) {
                if (cells[i].error) std::rethrow_exception(cells[i].error);
                out << cells[i].line << '\n';
            }
        }
        out.flush();
        if (!out) throw IoError("failed writing sweep output");
    } catch (...) {
        if (!out_path.empty()) {
            file.close();
            std::filesystem::remove(out_path);
        }
        throw;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mtdsense: sensor allocation for moving target defense"};
    app.set_help_flag("--help", "Print this help message and exit");
    app.require_subcommand(1);

    Common common;
    auto add_model = [&](CLI::App* sub) {
        sub->add_option("model", common.model_path, "Model JSON file")->required();
        sub->add_option("--eps", common.eps, "Uniform false negative rate overriding the model's rates");
    };

    std::string out_path, alloc_path, method = "both", lp_prefix, trace_path;
    std::string k_list = "0", h_list = "0", eps_list;
    int k = 0, h = 0;
    double mu = 0.1, tol = 1e-9;
    std::uint64_t trials = 0, seed = 1, max_steps = 10000;
    unsigned threads = 1;

    auto* validate = app.add_subcommand("validate", "Load and validate a model");
    add_model(validate);

    auto* product = app.add_subcommand("product", "Dump the product MDP as Graphviz DOT");
    add_model(product);
    product->add_option("--alloc", alloc_path, "Allocation JSON to apply");
    product->add_option("--out", out_path, "Output file (default stdout)");

    auto* solve_cmd = app.add_subcommand("solve", "Attacker reachability values by LP and/or value iteration");
    add_model(solve_cmd);
    solve_cmd->add_option("--alloc", alloc_path, "Allocation JSON to apply");
    solve_cmd->add_option("--method", method, "lp, vi or both")->check(CLI::IsMember({"lp", "vi", "both"}));
    solve_cmd->add_option("--tol", tol, "Value iteration tolerance");
    solve_cmd->add_option("--out", out_path, "Output file (default stdout)");

    auto* allocate = app.add_subcommand("allocate", "Two-step detector and stealthy sensor allocation");
    add_model(allocate);
    allocate->add_option("--k", k, "Detectors per configuration")->required();
    allocate->add_option("--h", h, "Stealthy sensors per configuration")->required();
    allocate->add_option("--mu", mu, "Softmax temperature of the attack policy");
    allocate->add_option("--out", out_path, "Result JSON file");
    allocate->add_option("--export-lp", lp_prefix, "Write <prefix>_step1.lp and <prefix>_step2.lp");

    auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo rollouts against an allocation");
    add_model(simulate_cmd);
    simulate_cmd->add_option("allocation", alloc_path, "Allocation JSON from 'allocate'")->required();
    simulate_cmd->add_option("--mu", mu, "Softmax temperature of the attack policy");
    simulate_cmd->add_option("--trials", trials, "Number of trials")->default_val(100000);
    simulate_cmd->add_option("--seed", seed, "RNG seed");
    simulate_cmd->add_option("--max-steps", max_steps, "Step cap per trial");
    simulate_cmd->add_option("--threads", threads, "Worker threads");
    simulate_cmd->add_option("--trace", trace_path, "Write per-trial paths as JSON lines");
    simulate_cmd->add_option("--out", out_path, "Output file (default stdout)");

    auto* sweep = app.add_subcommand("sweep", "Budget / false-negative sweep as CSV");
    add_model(sweep);
    sweep->add_option("--k-list", k_list, "Comma-separated detector budgets");
    sweep->add_option("--h-list", h_list, "Comma-separated stealthy budgets");
    sweep->add_option("--eps-list", eps_list, "Comma-separated uniform false negative rates");
    sweep->add_option("--mu", mu, "Softmax temperature of the attack policy");
    sweep->add_option("--trials", trials, "Simulation trials per cell (0 = none)");
    sweep->add_option("--seed", seed, "RNG seed");
    sweep->add_option("--threads", threads, "Worker threads");
    sweep->add_option("--out", out_path, "CSV file (default stdout)");

    auto* export_lp = app.add_subcommand("export-lp", "Write the Step-1 and Step-2 MILPs in LP format");
    add_model(export_lp);
    export_lp->add_option("--k", k, "Detectors per configuration")->required();
    export_lp->add_option("--h", h, "Stealthy sensors per configuration")->required();
    export_lp->add_option("--mu", mu, "Softmax temperature of the attack policy");
    export_lp->add_option("--out", lp_prefix, "Output prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (*validate) return cmd_validate(common);
        if (*product) return cmd_product(common, alloc_path, out_path);
        if (*solve_cmd) return cmd_solve(common, alloc_path, method, tol, out_path);
        if (*allocate) return cmd_allocate(common, k, h, mu, out_path, lp_prefix);
        if (*simulate_cmd) return cmd_simulate(common, alloc_path, mu, trials, seed, max_steps, threads, trace_path, out_path);
        if (*sweep) return cmd_sweep(common, k_list, h_list, eps_list, mu, trials, seed, threads, out_path);
        if (*export_lp) return cmd_export_lp(common, k, h, mu, lp_prefix);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const SolverError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
