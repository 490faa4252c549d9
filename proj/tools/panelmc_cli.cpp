// Command-line driver: impute a panel with a chosen estimator, cross-validate
// the nuclear-norm penalty, simulate synthetic panels, run the
// pseudo-treatment estimator comparison, and check the finite-sample theory
// suites. Every command is a pure function of (inputs, flags, seed): outputs
// are byte-identical across runs and across --threads settings.
//
// Exit codes: 0 success, 1 usage or parse error, 2 infeasible or numerical
// failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "panelmc/panelmc.hpp"

namespace {

using panelmc::Index;
using panelmc::Matrix;

std::map<std::string, std::string> parse_kv_list(const std::string& text) {
    std::map<std::string, std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw panelmc::InvalidSpecError("expected key=value, got '" + item + "'");
        out[item.substr(0, eq)] = item.substr(eq + 1);
    }
    return out;
}

double parse_num(const std::map<std::string, std::string>& kv, const std::string& key,
                 std::optional<double> fallback = std::nullopt) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
        if (fallback) return *fallback;
        throw panelmc::InvalidSpecError("missing '" + key + "'");
    }
    return std::stod(it->second);
}

// config file: plain key=value lines, echoed into reports for provenance
std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::map<std::string, std::string> out;
    if (path.empty()) return out;
    std::ifstream in(path);
    if (!in) throw panelmc::ParseError("cannot open config file '" + path + "'");
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw panelmc::ParseError("config line " + std::to_string(line_no) +
                                      ": expected key=value");
        out["config." + line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

struct LambdaChoice {
    enum class Mode { automatic, fixed, max_scaled } mode = Mode::automatic;
    double value = 0.0;
};

LambdaChoice parse_lambda_flag(const std::string& text) {
    LambdaChoice out;
    if (text == "auto") {
        out.mode = LambdaChoice::Mode::automatic;
    } else if (text.rfind("max-scaled:", 0) == 0) {
        out.mode = LambdaChoice::Mode::max_scaled;
        out.value = std::stod(text.substr(11));
        if (out.value < 0.0)
            throw panelmc::InvalidSpecError("--lambda max-scaled factor must be >= 0");
    } else {
        out.mode = LambdaChoice::Mode::fixed;
        out.value = std::stod(text);
        if (out.value < 0.0) throw panelmc::InvalidSpecError("--lambda must be >= 0");
    }
    return out;
}

panelmc::SyntheticSpec parse_synthetic(const std::string& text, std::uint64_t seed) {
    const auto kv = parse_kv_list(text);
    panelmc::SyntheticSpec spec;
    spec.n = static_cast<Index>(parse_num(kv, "n"));
    spec.t = static_cast<Index>(parse_num(kv, "t"));
    spec.rank = static_cast<Index>(parse_num(kv, "rank", 1.0));
    spec.noise_sigma = parse_num(kv, "sigma", 0.0);
    spec.factor_scale = parse_num(kv, "scale", 1.0);
    spec.seed = seed;
    if (const auto it = kv.find("noise"); it != kv.end()) {
        if (it->second == "iid") {
            spec.noise_model = panelmc::SyntheticSpec::NoiseModel::iid_gaussian;
        } else if (it->second.rfind("ar1:", 0) == 0) {
            spec.noise_model = panelmc::SyntheticSpec::NoiseModel::ar1;
            spec.ar_rho = std::stod(it->second.substr(4));
        } else {
            throw panelmc::InvalidSpecError("noise must be iid or ar1:<rho>");
        }
    }
    spec.validate();
    return spec;
}

panelmc::PseudoTreatmentPlan parse_plan(const std::string& text, int reps,
                                        std::uint64_t seed) {
    panelmc::PseudoTreatmentPlan plan;
    plan.replications = reps;
    plan.seed = seed;
    const auto colon = text.find(':');
    const std::string mode = text.substr(0, colon);
    const auto kv =
        colon == std::string::npos ? std::map<std::string, std::string>{}
                                   : parse_kv_list(text.substr(colon + 1));
    if (mode == "simultaneous") {
        plan.mode = panelmc::PseudoTreatmentPlan::Mode::simultaneous;
        plan.n_treated = static_cast<Index>(parse_num(kv, "nt"));
        plan.t0_ratio = parse_num(kv, "t0_ratio", 0.5);
    } else if (mode == "staggered") {
        plan.mode = panelmc::PseudoTreatmentPlan::Mode::staggered;
        plan.n_treated = static_cast<Index>(parse_num(kv, "nt"));
        if (kv.count("lo")) plan.adoption_lo = static_cast<Index>(parse_num(kv, "lo"));
        if (kv.count("hi")) plan.adoption_hi = static_cast<Index>(parse_num(kv, "hi"));
    } else {
        throw panelmc::InvalidSpecError(
            "--plan must be simultaneous:... or staggered:...");
    }
    return plan;
}

std::vector<panelmc::EstimatorSpec> parse_estimators(const std::string& csv,
                                                     double en_alpha) {
    std::vector<panelmc::EstimatorSpec> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        auto spec = panelmc::EstimatorSpec::parse(item);
        if (spec.en_config) spec.en_config->alpha = en_alpha;
        out.push_back(std::move(spec));
    }
    if (out.empty()) throw panelmc::InvalidSpecError("no estimators given");
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int cmd_impute(const std::string& input, const std::string& estimator_name,
               const std::string& lambda_flag, double en_alpha,
               const std::string& unit_cov, const std::string& time_cov,
               const std::string& unit_time_cov, double lambda_h,
               const std::string& output, const std::string& metadata_path,
               std::uint64_t seed, int folds,
               const std::map<std::string, std::string>& echo) {
    const panelmc::LoadedPanel panel = panelmc::load_panel_csv(input);
    auto spec = panelmc::EstimatorSpec::parse(estimator_name);
    if (spec.en_config) spec.en_config->alpha = en_alpha;
    const LambdaChoice lam = parse_lambda_flag(lambda_flag);

    nlohmann::json meta;
    meta["estimator"] = estimator_name;
    meta["seed"] = seed;
    meta["input"] = input;
    for (const auto& [k, v] : echo) meta["config_echo"][k] = v;

    panelmc::PanelMatrix imputed = panelmc::PanelMatrix::zero(1, 1);
    const bool with_covariates =
        !unit_cov.empty() || !time_cov.empty() || !unit_time_cov.empty();

    if (spec.kind == panelmc::EstimatorSpec::Kind::mc_nnm) {
        double lambda_l = 0.0;
        if (lam.mode == LambdaChoice::Mode::fixed) {
            lambda_l = lam.value;
        } else if (lam.mode == LambdaChoice::Mode::max_scaled) {
            lambda_l = lam.value * panelmc::lambda_max(panel.y, panel.mask);
        } else {
            panelmc::CvConfig cv;
            cv.n_folds = folds;
            cv.seed = seed;
            cv.lambda_grid = panelmc::default_lambda_grid(panel.y, panel.mask);
            const panelmc::McnnmConfig base;
            const auto sel = panelmc::cross_validate(panel.y, panel.mask, cv, base);
            lambda_l = sel.lambda_star;
            meta["cv"]["lambda_grid"] = sel.lambda_grid;
            meta["cv"]["mean_holdout_mse"] = sel.mean_holdout_mse;
        }
        meta["lambda"] = lambda_l;

        if (with_covariates) {
            panelmc::CovariateSet cov;
            if (!unit_cov.empty())
                cov.x = panelmc::load_unit_covariates(unit_cov, panel.unit_names);
            if (!time_cov.empty())
                cov.z = panelmc::load_time_covariates(time_cov, panel.time_names);
            if (!unit_time_cov.empty())
                cov.v = panelmc::load_unit_time_covariates(unit_time_cov,
                                                           panel.unit_names,
                                                           panel.time_names);
            const auto fit = panelmc::fit_covariate_model(panel.y, panel.mask, cov,
                                                          lambda_l, lambda_h);
            Matrix full = panel.y.matrix();
            for (Index i = 0; i < panel.y.n_units(); ++i)
                for (Index t = 0; t < panel.y.n_periods(); ++t)
                    if (!panel.mask.is_observed(i, t))
                        full(i, t) = fit.fitted(cov, i, t);
            imputed = panelmc::PanelMatrix(std::move(full));
            meta["lambda_h"] = lambda_h;
            meta["cycles"] = fit.cycles_used;
            meta["converged"] = fit.converged;
        } else {
            panelmc::McnnmConfig cfg;
            cfg.lambda = lambda_l;
            const auto fit = panelmc::fit_mcnnm(panel.y, panel.mask, cfg);
            Matrix full = panel.y.matrix();
            for (Index i = 0; i < panel.y.n_units(); ++i)
                for (Index t = 0; t < panel.y.n_periods(); ++t)
                    if (!panel.mask.is_observed(i, t)) full(i, t) = fit.estimate(i, t);
            imputed = panelmc::PanelMatrix(std::move(full));
            meta["effective_rank"] = fit.effective_rank;
            meta["iterations"] = fit.iterations_used;
            meta["converged"] = fit.converged;
        }
    } else {
        imputed = panelmc::impute_with(spec, panel.y, panel.mask, seed);
    }

    panelmc::write_panel_csv(output, imputed, panel.mask, panel.unit_names,
                             panel.time_names);
    if (!metadata_path.empty()) {
        std::ofstream mf(metadata_path);
        if (!mf) throw panelmc::ParseError("cannot write '" + metadata_path + "'");
        mf << meta.dump(2) << '\n';
    }
    return 0;
}

int cmd_cv(const std::string& input, int folds, int grid_size, std::uint64_t seed,
           const std::string& output,
           const std::map<std::string, std::string>& echo) {
    const panelmc::LoadedPanel panel = panelmc::load_panel_csv(input);
    panelmc::CvConfig cv;
    cv.n_folds = folds;
    cv.seed = seed;
    cv.lambda_grid = panelmc::default_lambda_grid(panel.y, panel.mask, grid_size);
    const panelmc::McnnmConfig base;
    const auto sel = panelmc::cross_validate(panel.y, panel.mask, cv, base);

    nlohmann::json j;
    j["seed"] = seed;
    j["lambda_star"] = sel.lambda_star;
    j["lambda_grid"] = sel.lambda_grid;
    j["mean_holdout_mse"] = sel.mean_holdout_mse;
    for (const auto& [k, v] : echo) j["config_echo"][k] = v;
    if (output.empty()) {
        std::cout << j.dump(2) << '\n';
    } else {
        std::ofstream out(output);
        if (!out) throw panelmc::ParseError("cannot write '" + output + "'");
        out << j.dump(2) << '\n';
    }
    return 0;
}

int cmd_simulate(const std::string& synthetic, std::uint64_t seed,
                 const std::string& output, const std::string& truth_output) {
    const auto spec = parse_synthetic(synthetic, seed);
    const auto panel = panelmc::generate_synthetic(spec);
    const auto full = panelmc::ObservationMask::full(spec.n, spec.t);
    panelmc::write_panel_csv(output, panel.y, full);
    if (!truth_output.empty()) panelmc::write_panel_csv(truth_output, panel.l_star, full);
    return 0;
}

int cmd_compare(const std::string& input, const std::string& synthetic,
                const std::string& plan_text, int reps,
                const std::string& estimators_text, double en_alpha,
                const std::string& sweep, std::uint64_t seed, int threads,
                const std::string& output, const std::string& csv_output,
                std::map<std::string, std::string> echo) {
    panelmc::PanelMatrix y = panelmc::PanelMatrix::zero(1, 1);
    if (!synthetic.empty()) {
        y = panelmc::generate_synthetic(parse_synthetic(synthetic, seed)).y;
    } else if (!input.empty()) {
        const auto panel = panelmc::load_panel_csv(input);
        if (panel.mask.n_missing() > 0)
            throw panelmc::InfeasibleError(
                "compare needs a fully observed panel as the held-back truth");
        y = panel.y;
    } else {
        throw panelmc::InvalidSpecError("compare requires --input or --synthetic");
    }

    const auto estimators = parse_estimators(estimators_text, en_alpha);
    echo["estimators"] = estimators_text;
    echo["plan"] = plan_text;
    echo["reps"] = std::to_string(reps);

    nlohmann::json out_json;
    if (!sweep.empty()) {
        // --sweep t0_ratio=<lo>:<hi>:<count>
        const auto eq = sweep.find('=');
        if (eq == std::string::npos || sweep.substr(0, eq) != "t0_ratio")
            throw panelmc::InvalidSpecError("--sweep must be t0_ratio=<lo>:<hi>:<n>");
        double lo = 0, hi = 0;
        int count = 0;
        if (std::sscanf(sweep.c_str() + eq + 1, "%lf:%lf:%d", &lo, &hi, &count) != 3 ||
            count < 1)
            throw panelmc::InvalidSpecError("--sweep must be t0_ratio=<lo>:<hi>:<n>");
        echo["sweep"] = sweep;
        out_json["sweep_parameter"] = "t0_ratio";
        out_json["points"] = nlohmann::json::array();
        for (int s = 0; s < count; ++s) {
            const double ratio =
                count == 1 ? lo : lo + (hi - lo) * s / static_cast<double>(count - 1);
            auto plan = parse_plan(plan_text, reps, seed);
            plan.t0_ratio = ratio;
            const auto report = panelmc::run_comparison(y, plan, estimators, threads);
            nlohmann::json point = panelmc::report_to_json(report, {});
            point.erase("config_echo");
            point["t0_ratio"] = ratio;
            out_json["points"].push_back(point);
        }
        out_json["seed"] = seed;
        for (const auto& [k, v] : echo) out_json["config_echo"][k] = v;
    } else {
        const auto plan = parse_plan(plan_text, reps, seed);
        const auto report = panelmc::run_comparison(y, plan, estimators, threads);
        out_json = panelmc::report_to_json(report, echo);
        if (!csv_output.empty()) panelmc::write_report_csv(report, csv_output);
    }

    if (output.empty()) {
        std::cout << out_json.dump(2) << '\n';
    } else {
        std::ofstream out(output);
        if (!out) throw panelmc::ParseError("cannot write '" + output + "'");
        out << out_json.dump(2) << '\n';
    }
    return 0;
}

int cmd_check_theory(int count, std::uint64_t seed, double pc, bool as_json) {
    if (pc <= 0.0 || pc > 1.0)
        throw panelmc::InvalidSpecError("--pc must lie in (0, 1]");

    panelmc::Lemma1BatchConfig cfg;
    cfg.count = count;
    cfg.seed = seed;
    const auto batch = panelmc::lemma1_batch(cfg);
    int held = 0;
    for (const auto& inst : batch)
        if (inst.verdict == panelmc::LemmaVerdict::holds) ++held;

    std::string lattice_failure;
    const bool lattice_ok = panelmc::theorem_bound_monotone_lattice(&lattice_failure);

    panelmc::TheoremBoundConfig bound_cfg;
    bound_cfg.p_c = pc;
    const double bound_at_pc = panelmc::theorem_bound(bound_cfg, 100, 100);

    const bool ok = held == count && lattice_ok;
    if (as_json) {
        nlohmann::json j;
        j["lemma1"]["held"] = held;
        j["lemma1"]["count"] = count;
        j["bound_monotone"] = lattice_ok;
        j["bound_at_pc"]["pc"] = pc;
        j["bound_at_pc"]["value"] = bound_at_pc;
        j["seed"] = seed;
        j["pass"] = ok;
        std::cout << j.dump(2) << '\n';
    } else {
        std::cout << "lemma-1 oracle inequality: " << held << "/" << count
                  << (held == count ? " hold\n" : " hold (FAIL)\n");
        std::cout << "bound monotonicity lattice: "
                  << (lattice_ok ? "pass" : "FAIL " + lattice_failure) << '\n';
        std::cout << "bound at pc=" << format_double(pc) << " (N=T=100, defaults): "
                  << format_double(bound_at_pc) << '\n';
    }
    return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Matrix completion estimators for causal panel data"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    int threads = 1;
    std::string config_path;
    app.add_option("--seed", seed, "seed for all randomness");
    app.add_option("--threads", threads, "worker threads for replication/fold loops");
    app.add_option("--config", config_path, "key=value config file echoed into reports");

    // impute
    auto* impute = app.add_subcommand("impute", "fill missing cells of a panel CSV");
    std::string in_path, estimator = "mc-nnm", lambda_flag = "auto";
    std::string out_path, meta_path;
    std::string unit_cov, time_cov, unit_time_cov;
    double en_alpha = 0.5, lambda_h = 0.0;
    int folds = 5;
    impute->add_option("--input", in_path, "panel CSV")->required();
    impute->add_option("--estimator", estimator,
                       "did|hr|vt|hr-en|vt-en|sc-adh|mc-nnm");
    impute->add_option("--lambda", lambda_flag, "auto | <number> | max-scaled:<f>");
    impute->add_option("--alpha", en_alpha, "elastic net mixing for hr-en/vt-en");
    impute->add_option("--folds", folds, "CV folds for --lambda auto");
    impute->add_option("--unit-covariates", unit_cov, "unit covariate CSV");
    impute->add_option("--time-covariates", time_cov, "time covariate CSV");
    impute->add_option("--unit-time-covariates", unit_time_cov,
                       "unit-time covariate CSV");
    impute->add_option("--lambda-h", lambda_h, "covariate matrix penalty");
    impute->add_option("--output", out_path, "imputed CSV")->required();
    impute->add_option("--metadata", meta_path, "fit metadata JSON");

    // cv
    auto* cv = app.add_subcommand("cv", "cross-validate the nuclear norm penalty");
    std::string cv_input, cv_output;
    int cv_folds = 5, cv_grid = 30;
    cv->add_option("--input", cv_input, "panel CSV")->required();
    cv->add_option("--folds", cv_folds, "number of folds");
    cv->add_option("--grid-size", cv_grid, "lambda grid size");
    cv->add_option("--output", cv_output, "result JSON (stdout when absent)");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "write a synthetic panel CSV");
    std::string sim_spec, sim_out, sim_truth;
    simulate->add_option("--synthetic", sim_spec, "n=..,t=..,rank=..,sigma=..")
        ->required();
    simulate->add_option("--output", sim_out, "panel CSV")->required();
    simulate->add_option("--truth-output", sim_truth, "noise-free panel CSV");

    // compare
    auto* compare = app.add_subcommand(
        "compare", "pseudo-treatment RMSE comparison of estimators");
    std::string cmp_input, cmp_synth, cmp_plan, cmp_est = "did,hr-en,vt-en,sc-adh,mc-nnm";
    std::string cmp_sweep, cmp_out, cmp_csv;
    int cmp_reps = 10;
    double cmp_alpha = 0.5;
    compare->add_option("--input", cmp_input, "fully observed panel CSV");
    compare->add_option("--synthetic", cmp_synth, "n=..,t=..,rank=..,sigma=..");
    compare->add_option("--plan", cmp_plan,
                        "simultaneous:nt=..[,t0_ratio=..] | staggered:nt=..[,lo=..,hi=..]")
        ->required();
    compare->add_option("--reps", cmp_reps, "replications");
    compare->add_option("--estimators", cmp_est, "comma-separated estimator list");
    compare->add_option("--alpha", cmp_alpha, "elastic net mixing");
    compare->add_option("--sweep", cmp_sweep, "t0_ratio=<lo>:<hi>:<count>");
    compare->add_option("--output", cmp_out, "report JSON (stdout when absent)");
    compare->add_option("--csv-out", cmp_csv, "per-replication CSV");

    // check-theory
    auto* check = app.add_subcommand("check-theory", "run the theory check suites");
    int chk_count = 50;
    double chk_pc = 1.0;
    bool chk_json = false;
    check->add_option("--count", chk_count, "lemma-1 instances");
    check->add_option("--pc", chk_pc, "control probability for the bound printout");
    check->add_flag("--json", chk_json, "machine readable summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        std::map<std::string, std::string> echo = read_config_file(config_path);
        echo["seed"] = std::to_string(seed);
        if (app.got_subcommand(impute))
            return cmd_impute(in_path, estimator, lambda_flag, en_alpha, unit_cov,
                              time_cov, unit_time_cov, lambda_h, out_path, meta_path,
                              seed, folds, echo);
        if (app.got_subcommand(cv))
            return cmd_cv(cv_input, cv_folds, cv_grid, seed, cv_output, echo);
        if (app.got_subcommand(simulate))
            return cmd_simulate(sim_spec, seed, sim_out, sim_truth);
        if (app.got_subcommand(compare))
            return cmd_compare(cmp_input, cmp_synth, cmp_plan, cmp_reps, cmp_est,
                               cmp_alpha, cmp_sweep, seed, threads, cmp_out, cmp_csv,
                               echo);
        if (app.got_subcommand(check))
            return cmd_check_theory(chk_count, seed, chk_pc, chk_json);
        std::cerr << "no subcommand selected\n";
        return 1;
    } catch (const panelmc::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const panelmc::InvalidSpecError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const panelmc::DimensionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
