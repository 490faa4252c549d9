// End-to-end checks of the command line tool: exit codes, file outputs, and
// byte-level determinism across reruns and thread counts.
#include <catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "panelmc/panelmc.hpp"

namespace {

const std::string cli = PANELMC_CLI_PATH;

int run(const std::string& args) {
    const std::string cmd = cli + " " + args + " >cli_stdout.txt 2>cli_stderr.txt";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

}  // namespace

TEST_CASE("simulate writes a deterministic loadable panel") {
    REQUIRE(run("--seed 5 simulate --synthetic n=8,t=6,rank=2,sigma=0.4 "
                "--output cli_sim_a.csv") == 0);
    REQUIRE(run("--seed 5 simulate --synthetic n=8,t=6,rank=2,sigma=0.4 "
                "--output cli_sim_b.csv") == 0);
    CHECK(slurp("cli_sim_a.csv") == slurp("cli_sim_b.csv"));
    const auto panel = panelmc::load_panel_csv("cli_sim_a.csv");
    CHECK(panel.y.n_units() == 8);
    CHECK(panel.mask.n_missing() == 0);
    std::remove("cli_sim_a.csv");
    std::remove("cli_sim_b.csv");
}

TEST_CASE("impute with did fills the saturated 2x2 example") {
    write_file("cli_did.csv",
               "unit,time,outcome,treated\na,1,1,0\na,2,2,0\nb,1,3,0\nb,2,,1\n");
    REQUIRE(run("impute --input cli_did.csv --estimator did --output cli_did_out.csv "
                "--metadata cli_did_meta.json") == 0);
    const auto imputed = panelmc::load_panel_csv("cli_did_out.csv");
    CHECK(imputed.y(1, 1) == Catch::Approx(4.0).margin(1e-10));
    CHECK(!imputed.mask.is_observed(1, 1));  // treated flag preserved
    std::remove("cli_did.csv");
    std::remove("cli_did_out.csv");
    std::remove("cli_did_meta.json");
}

TEST_CASE("impute with mc-nnm and automatic lambda records CV metadata") {
    REQUIRE(run("--seed 3 simulate --synthetic n=12,t=9,rank=2,sigma=0.3 "
                "--output cli_full.csv") == 0);
    // hide a staggered block by rewriting the file with treated flags
    auto panel = panelmc::load_panel_csv("cli_full.csv");
    const auto mask =
        panelmc::mask_staggered(9, {9, 9, 9, 9, 9, 9, 7, 6, 5, 9, 9, 4});
    panelmc::write_panel_csv("cli_masked.csv", panel.y, mask);

    REQUIRE(run("--seed 11 impute --input cli_masked.csv --estimator mc-nnm "
                "--lambda auto --folds 3 --output cli_mc_out.csv "
                "--metadata cli_mc_meta.json") == 0);
    const auto meta = nlohmann::json::parse(slurp("cli_mc_meta.json"));
    CHECK(meta.contains("lambda"));
    CHECK(meta["lambda"].get<double>() >= 0.0);
    CHECK(meta.contains("effective_rank"));
    CHECK(meta["converged"].get<bool>());

    const auto imputed = panelmc::load_panel_csv("cli_mc_out.csv");
    for (const auto& [i, t] : mask.observed_cells())
        CHECK(imputed.y(i, t) == panel.y(i, t));  // observed pass through

    SECTION("max-scaled lambda flag works") {
        REQUIRE(run("impute --input cli_masked.csv --estimator mc-nnm "
                    "--lambda max-scaled:1.0 --output cli_mc_out2.csv "
                    "--metadata cli_mc_meta2.json") == 0);
        const auto meta2 = nlohmann::json::parse(slurp("cli_mc_meta2.json"));
        CHECK(meta2["effective_rank"].get<int>() == 0);  // annihilated
        std::remove("cli_mc_out2.csv");
        std::remove("cli_mc_meta2.json");
    }

    std::remove("cli_full.csv");
    std::remove("cli_masked.csv");
    std::remove("cli_mc_out.csv");
    std::remove("cli_mc_meta.json");
}

TEST_CASE("infeasible estimator exits with code 2 and a diagnostic") {
    // every unit treated in the last period: hr has no training rows
    write_file("cli_bad.csv",
               "unit,time,outcome,treated\na,1,1,0\na,2,,1\nb,1,3,0\nb,2,,1\n");
    CHECK(run("impute --input cli_bad.csv --estimator hr --output cli_bad_out.csv") ==
          2);
    const std::string err = slurp("cli_stderr.txt");
    CHECK(err.find("error") != std::string::npos);
    std::remove("cli_bad.csv");
}

TEST_CASE("parse failures exit with code 1") {
    write_file("cli_malformed.csv", "unit,time,outcome\na,1,2\n");
    CHECK(run("impute --input cli_malformed.csv --estimator did "
              "--output cli_x.csv") == 1);
    CHECK(run("impute --input cli_does_not_exist.csv --estimator did "
              "--output cli_x.csv") == 1);
    CHECK(run("impute --no-such-flag") == 1);
    std::remove("cli_malformed.csv");
}

TEST_CASE("cv subcommand reports the chosen lambda and table") {
    REQUIRE(run("--seed 3 simulate --synthetic n=10,t=8,rank=1,sigma=0.2 "
                "--output cli_cvp.csv") == 0);
    auto panel = panelmc::load_panel_csv("cli_cvp.csv");
    panelmc::write_panel_csv("cli_cvm.csv", panel.y,
                             panelmc::mask_block(10, 8, 6, {1, 4, 7}));
    REQUIRE(run("--seed 4 cv --input cli_cvm.csv --folds 3 --grid-size 8 "
                "--output cli_cv.json") == 0);
    const auto j = nlohmann::json::parse(slurp("cli_cv.json"));
    CHECK(j["lambda_grid"].size() == 8);
    CHECK(j["mean_holdout_mse"].size() == 8);
    CHECK(j["lambda_star"].get<double>() >= 0.0);
    std::remove("cli_cvp.csv");
    std::remove("cli_cvm.csv");
    std::remove("cli_cv.json");
}

TEST_CASE("compare emits identical bytes across runs and thread counts") {
    const std::string base =
        "compare --synthetic n=14,t=10,rank=2,sigma=0.6 "
        "--plan staggered:nt=7 --reps 4 --estimators did,vt-en,mc-nnm ";
    REQUIRE(run("--seed 21 --threads 1 " + base + "--output cli_cmp_a.json "
                "--csv-out cli_cmp_a.csv") == 0);
    REQUIRE(run("--seed 21 --threads 8 " + base + "--output cli_cmp_b.json "
                "--csv-out cli_cmp_b.csv") == 0);
    REQUIRE(run("--seed 21 --threads 1 " + base + "--output cli_cmp_c.json "
                "--csv-out cli_cmp_c.csv") == 0);
    const std::string a = slurp("cli_cmp_a.json");
    CHECK(a == slurp("cli_cmp_b.json"));
    CHECK(a == slurp("cli_cmp_c.json"));
    CHECK(slurp("cli_cmp_a.csv") == slurp("cli_cmp_b.csv"));

    const auto j = nlohmann::json::parse(a);
    CHECK(j["estimators"].size() == 3);
    CHECK(j["config_echo"]["plan"] == "staggered:nt=7");
    for (const auto& f : {"cli_cmp_a.json", "cli_cmp_b.json", "cli_cmp_c.json",
                          "cli_cmp_a.csv", "cli_cmp_b.csv", "cli_cmp_c.csv"})
        std::remove(f);
}

TEST_CASE("compare lists every requested estimator") {
    REQUIRE(run("--seed 9 compare --synthetic n=16,t=12,rank=2,sigma=0.8 "
                "--plan simultaneous:nt=4,t0_ratio=0.6 --reps 2 "
                "--estimators did,hr-en,vt-en,sc-adh,mc-nnm "
                "--output cli_five.json") == 0);
    const auto j = nlohmann::json::parse(slurp("cli_five.json"));
    REQUIRE(j["estimators"].size() == 5);
    CHECK(j["estimators"][0]["name"] == "did");
    CHECK(j["estimators"][4]["name"] == "mc-nnm");
    std::remove("cli_five.json");
}

TEST_CASE("compare sweep produces one point per ratio") {
    REQUIRE(run("--seed 13 compare --synthetic n=12,t=10,rank=2,sigma=0.5 "
                "--plan simultaneous:nt=4 --reps 2 --estimators did,mc-nnm "
                "--sweep t0_ratio=0.4:0.8:3 --output cli_sweep.json") == 0);
    const auto j = nlohmann::json::parse(slurp("cli_sweep.json"));
    CHECK(j["sweep_parameter"] == "t0_ratio");
    REQUIRE(j["points"].size() == 3);
    CHECK(j["points"][0]["t0_ratio"].get<double>() == Catch::Approx(0.4));
    CHECK(j["points"][2]["t0_ratio"].get<double>() == Catch::Approx(0.8));
    std::remove("cli_sweep.json");
}

TEST_CASE("config file entries are echoed into reports") {
    write_file("cli_conf.ini", "dataset=demo\nnotes=first pass\n");
    REQUIRE(run("--seed 2 --config cli_conf.ini compare "
                "--synthetic n=10,t=8,rank=1,sigma=0.5 --plan staggered:nt=5 "
                "--reps 2 --estimators did --output cli_conf.json") == 0);
    const auto j = nlohmann::json::parse(slurp("cli_conf.json"));
    CHECK(j["config_echo"]["config.dataset"] == "demo");
    CHECK(j["config_echo"]["config.notes"] == "first pass");
    std::remove("cli_conf.ini");
    std::remove("cli_conf.json");
}

TEST_CASE("check-theory passes with defaults and rejects bad pc") {
    CHECK(run("check-theory --count 10 --json") == 0);
    const auto j = nlohmann::json::parse(slurp("cli_stdout.txt"));
    CHECK(j["lemma1"]["held"] == 10);
    CHECK(j["bound_monotone"].get<bool>());
    CHECK(j["pass"].get<bool>());
    CHECK(run("check-theory --pc 0") == 1);
    CHECK(run("check-theory --pc 1.5") == 1);
}
