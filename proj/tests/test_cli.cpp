#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <mtdsense/model.hpp>

#include "test_util.hpp"

using namespace mtdsense::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Run run(const std::string& args) {
    static int counter = 0;
    const auto dir = fs::temp_directory_path() / "mtdsense_cli_runs";
    fs::create_directories(dir);
    const auto out = dir / ("out" + std::to_string(counter) + ".txt");
    const auto err = dir / ("err" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string("MTDSENSE_LOG=quiet ") + MTDSENSE_CLI + " " + args + " >" + out.string() +
                            " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

const std::string model = bundled_model_path();

}  // namespace

TEST(Cli, Validate) {
    auto r = run("validate " + model);
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("7 states"), std::string::npos);

    const auto dir = scratch_dir("cli_validate");
    auto j = bundled_json();
    j["configs"][0]["transitions"]["A"]["w1"]["A"] = 0.2;
    std::ofstream(dir / "bad.json") << j.dump();
    r = run("validate " + (dir / "bad.json").string());
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("(A, w1)"), std::string::npos) << r.err;

    r = run("validate " + (dir / "missing.json").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.err.find("cannot open"), std::string::npos);

    EXPECT_EQ(run("frobnicate").code, 1);
}

TEST(Cli, ProductAndSolve) {
    auto r = run("product " + model);
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out.rfind("digraph product", 0), 0u);

    r = run("solve " + model + " --method both");
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_NEAR(j["lp"]["initial_value"].get<double>(), j["vi"]["initial_value"].get<double>(), 1e-6);
}

TEST(Cli, AllocateSummaryAndFiles) {
    const auto dir = scratch_dir("cli_allocate");
    auto r = run("allocate " + model + " --k 0 --h 0");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("unguarded success rate: 1"), std::string::npos) << r.out;

    const auto out = dir / "alloc.json";
    r = run("allocate " + model + " --k 2 --h 1 --eps 0.3 --out " + out.string() + " --export-lp " +
            (dir / "model").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = nlohmann::json::parse(slurp(out));
    EXPECT_LE(j["defender_value_V1"].get<double>(), j["attacker_value_V2"].get<double>() + 1e-12);
    EXPECT_NE(r.out.find("V1 defender evaluation"), std::string::npos);
    for (const char* f : {"model_step1.lp", "model_step2.lp"}) {
        const auto text = slurp(dir / f);
        EXPECT_NE(text.find("Minimize"), std::string::npos) << f;
        EXPECT_NE(text.find("Binaries"), std::string::npos) << f;
    }
}

TEST(Cli, SimulateIsDeterministic) {
    const auto dir = scratch_dir("cli_simulate");
    const auto alloc = (dir / "alloc.json").string();
    ASSERT_EQ(run("allocate " + model + " --k 1 --h 1 --out " + alloc).code, 0);
    const auto a = run("simulate " + model + " " + alloc + " --trials 100000 --seed 7");
    const auto b = run("simulate " + model + " " + alloc + " --trials 100000 --seed 7");
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    const auto j = nlohmann::json::parse(a.out);
    EXPECT_LE(std::abs(j["empirical_success_rate"].get<double>() - j["analytic_success_rate"].get<double>()),
              4.0 * j["stderr"].get<double>());

    auto bad = nlohmann::json::parse(slurp(alloc));
    bad["detectors"]["default"] = nlohmann::json::array({nlohmann::json::array({"ghost", "w1"})});
    std::ofstream(dir / "bad.json") << bad.dump();
    const auto r = run("simulate " + model + " " + (dir / "bad.json").string() + " --trials 10");
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("ghost"), std::string::npos);
}

TEST(Cli, SweepShapes) {
    const auto dir = scratch_dir("cli_sweep");
    auto r = run("sweep " + model + " --k-list 2 --h-list 1 --out " + (dir / "one.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    auto rows = read_csv(dir / "one.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0][0], "k");
    EXPECT_EQ(rows[0][3], "attacker_value_V2");

    r = run("sweep " + model + " --k-list 0,1,2,3,4 --h-list 0 --eps-list 0.3 --out " + (dir / "k.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    rows = read_csv(dir / "k.csv");
    ASSERT_EQ(rows.size(), 6u);
    for (std::size_t i = 2; i < rows.size(); ++i)
        EXPECT_LE(std::stod(rows[i][3]), std::stod(rows[i - 1][3]) + 1e-9);

    r = run("sweep " + model + " --k-list 2 --h-list 0,1,2,3 --trials 2000 --out " + (dir / "h.csv").string());
    ASSERT_EQ(r.code, 0) << r.err;
    rows = read_csv(dir / "h.csv");
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows[0].size(), 9u);
    for (std::size_t i = 2; i < rows.size(); ++i)
        EXPECT_LE(std::stod(rows[i][4]), std::stod(rows[i - 1][4]) + 1e-9);
}

TEST(Cli, SweepCellMatchesAllocate) {
    const auto dir = scratch_dir("cli_parity");
    ASSERT_EQ(run("sweep " + model + " --k-list 1,2 --h-list 1 --eps-list 0.3 --threads 2 --out " +
                  (dir / "s.csv").string()).code, 0);
    ASSERT_EQ(run("allocate " + model + " --k 2 --h 1 --eps 0.3 --out " + (dir / "a.json").string()).code, 0);
    const auto rows = read_csv(dir / "s.csv");
    const auto j = nlohmann::json::parse(slurp(dir / "a.json"));
    EXPECT_NEAR(std::stod(rows[2][3]), j["attacker_value_V2"].get<double>(), 1e-12);
    EXPECT_NEAR(std::stod(rows[2][4]), j["defender_value_V1"].get<double>(), 1e-12);
}

TEST(Cli, FailedSweepLeavesNoFile) {
    const auto dir = scratch_dir("cli_sweep_fail");
    const auto out = dir / "bad.csv";
    const auto r = run("sweep " + model + " --k-list 1 --h-list 0 --eps-list 1.5 --out " + out.string());
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, ExportLp) {
    const auto dir = scratch_dir("cli_export");
    const auto r = run("export-lp " + model + " --k 1 --h 1 --out " + (dir / "m").string());
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "m_step1.lp"));
    EXPECT_TRUE(fs::exists(dir / "m_step2.lp"));
    const auto w = run("export-lp " + model + " --k 1 --h 1 --out /nonexistent/dir/m");
    EXPECT_EQ(w.code, 3);
}
