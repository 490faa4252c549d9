#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelmc/errors.hpp"
#include "panelmc/evaluation.hpp"

namespace panelmc {

/// Evaluation report as JSON: {estimators: [{name, mean_rmse, se, n_reps,
/// skipped}], config_echo, seed}. Keys are emitted in sorted order and all
/// numbers round-trip, so identical runs produce identical bytes.
inline nlohmann::json report_to_json(
    const EvalReport& report,
    const std::map<std::string, std::string>& config_echo) {
    nlohmann::json j;
    j["seed"] = report.seed;
    j["replications"] = report.replications;
    j["config_echo"] = config_echo;
    j["estimators"] = nlohmann::json::array();
    for (const auto& est : report.estimators) {
        nlohmann::json e;
        e["name"] = est.name;
        e["mean_rmse"] = est.mean_rmse;
        e["se"] = est.se;
        e["n_reps"] = est.n_reps;
        e["skipped"] = est.skipped;
        j["estimators"].push_back(e);
    }
    return j;
}

inline void write_report(const EvalReport& report,
                         const std::map<std::string, std::string>& config_echo,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << report_to_json(report, config_echo).dump(2) << '\n';
}

/// Flat per-replication CSV for plotting: one row per (estimator, replication).
inline void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << "estimator,replication,rmse,effective_rank,lambda,skipped\n";
    char buf[64];
    for (const auto& est : report.estimators) {
        for (size_t rep = 0; rep < est.replications.size(); ++rep) {
            const auto& cell = est.replications[rep];
            out << est.name << ',' << rep;
            if (cell.skipped) {
                out << ",,,";
            } else {
                std::snprintf(buf, sizeof buf, "%.17g", cell.rmse);
                out << ',' << buf << ',';
                if (cell.effective_rank) out << *cell.effective_rank;
                out << ',';
                if (cell.lambda_used) {
                    std::snprintf(buf, sizeof buf, "%.17g", *cell.lambda_used);
                    out << buf;
                }
            }
            out << ',' << (cell.skipped ? 1 : 0) << '\n';
        }
    }
}

}  // namespace panelmc
