#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "panelmc/errors.hpp"
#include "panelmc/mask.hpp"
#include "panelmc/panel.hpp"

namespace panelmc {

struct LoadedPanel {
    PanelMatrix y;  // 0 at missing cells unless the file carries a value there
    ObservationMask mask{1, 1, BoolArray::Constant(1, 1, true)};
    std::vector<std::string> unit_names;  // in order of first appearance
    std::vector<std::string> time_names;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_double(const std::string& s, int line_no, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ParseError("line " + std::to_string(line_no) + ": bad " + what +
                         " value '" + s + "'");
    return v;
}

}  // namespace detail

/// Long-format panel reader. Expected header: unit,time,outcome,treated.
/// Units and times are arbitrary strings mapped to contiguous indices by
/// first appearance; a cell is missing iff treated=1 or the outcome field is
/// empty. Every (unit, time) combination must appear exactly once.
inline LoadedPanel load_panel_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    {
        const auto header = detail::split_csv_line(line);
        if (header.size() != 4 || header[0] != "unit" || header[1] != "time" ||
            header[2] != "outcome" || header[3] != "treated")
            throw ParseError(path + ": line 1: header must be unit,time,outcome,treated");
    }

    std::map<std::string, Index> unit_index, time_index;
    std::vector<std::string> unit_names, time_names;
    struct Cell {
        double value;
        bool missing;
        bool has_value;
        int line_no;
    };
    std::map<std::pair<Index, Index>, Cell> cells;

    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 4)
            throw ParseError("line " + std::to_string(line_no) +
                             ": expected 4 fields, got " + std::to_string(f.size()));
        auto intern = [](std::map<std::string, Index>& idx,
                         std::vector<std::string>& names, const std::string& key) {
            auto it = idx.find(key);
            if (it != idx.end()) return it->second;
            const Index v = static_cast<Index>(names.size());
            idx.emplace(key, v);
            names.push_back(key);
            return v;
        };
        const Index i = intern(unit_index, unit_names, f[0]);
        const Index t = intern(time_index, time_names, f[1]);

        if (f[3] != "0" && f[3] != "1")
            throw ParseError("line " + std::to_string(line_no) +
                             ": treated must be 0 or 1, got '" + f[3] + "'");
        const bool treated = f[3] == "1";
        Cell cell{0.0, treated || f[2].empty(), false, line_no};
        if (!f[2].empty()) {
            cell.value = detail::parse_double(f[2], line_no, "outcome");
            cell.has_value = true;
        }
        const auto [it, inserted] = cells.emplace(std::make_pair(i, t), cell);
        if (!inserted)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate cell (" +
                             f[0] + "," + f[1] + "), first seen at line " +
                             std::to_string(it->second.line_no));
    }

    const Index n = static_cast<Index>(unit_names.size());
    const Index t_len = static_cast<Index>(time_names.size());
    if (n == 0 || t_len == 0) throw ParseError(path + ": no data rows");
    if (static_cast<Index>(cells.size()) != n * t_len) {
        for (Index i = 0; i < n; ++i)
            for (Index t = 0; t < t_len; ++t)
                if (!cells.count({i, t}))
                    throw ParseError(path + ": non-rectangular panel, cell (" +
                                     unit_names[static_cast<size_t>(i)] + "," +
                                     time_names[static_cast<size_t>(t)] + ") absent");
    }

    Matrix y = Matrix::Zero(n, t_len);
    BoolArray observed = BoolArray::Constant(n, t_len, true);
    for (const auto& [key, cell] : cells) {
        if (cell.has_value) y(key.first, key.second) = cell.value;
        if (cell.missing) observed(key.first, key.second) = false;
    }

    LoadedPanel out;
    out.y = PanelMatrix(std::move(y));
    out.mask = ObservationMask(n, t_len, std::move(observed));
    out.unit_names = std::move(unit_names);
    out.time_names = std::move(time_names);
    return out;
}

/// Writes the panel in the long format accepted by load_panel_csv. Outcome
/// values are written for every cell (imputed files keep their fill-ins);
/// treated flags mark the missing cells, so a round trip reproduces both the
/// matrix and the mask exactly.
inline void write_panel_csv(const std::string& path, const PanelMatrix& y,
                            const ObservationMask& mask,
                            const std::vector<std::string>& unit_names = {},
                            const std::vector<std::string>& time_names = {}) {
    require_same_shape(y, mask.n_units(), mask.n_periods(), "write_panel_csv");
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << "unit,time,outcome,treated\n";
    char buf[64];
    for (Index i = 0; i < y.n_units(); ++i)
        for (Index t = 0; t < y.n_periods(); ++t) {
            std::snprintf(buf, sizeof buf, "%.17g", y(i, t));
            const std::string uname = unit_names.empty()
                                          ? std::to_string(i + 1)
                                          : unit_names[static_cast<size_t>(i)];
            const std::string tname = time_names.empty()
                                          ? std::to_string(t + 1)
                                          : time_names[static_cast<size_t>(t)];
            out << uname << ',' << tname << ',' << buf << ','
                << (mask.is_observed(i, t) ? '0' : '1') << '\n';
        }
}

/// Unit-covariate reader: header unit,<name1>,<name2>,...; one row per unit.
/// Rows are aligned to the panel's unit order; every panel unit must appear.
inline Matrix load_unit_covariates(const std::string& path,
                                   const std::vector<std::string>& unit_names) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[0] != "unit")
        throw ParseError(path + ": line 1: header must be unit,<name>,...");
    const Index p = static_cast<Index>(header.size()) - 1;

    std::map<std::string, Index> order;
    for (size_t i = 0; i < unit_names.size(); ++i)
        order.emplace(unit_names[i], static_cast<Index>(i));

    Matrix x = Matrix::Zero(static_cast<Index>(unit_names.size()), p);
    std::set<Index> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (static_cast<Index>(f.size()) != p + 1)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(p + 1) + " fields");
        const auto it = order.find(f[0]);
        if (it == order.end())
            throw ParseError("line " + std::to_string(line_no) + ": unknown unit '" +
                             f[0] + "'");
        if (!seen.insert(it->second).second)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate unit '" +
                             f[0] + "'");
        for (Index j = 0; j < p; ++j)
            x(it->second, j) =
                detail::parse_double(f[static_cast<size_t>(j) + 1], line_no, "covariate");
    }
    if (seen.size() != unit_names.size())
        throw ParseError(path + ": covariates missing for some panel units");
    return x;
}

/// Time-covariate reader: header time,<name1>,...; one row per period.
inline Matrix load_time_covariates(const std::string& path,
                                   const std::vector<std::string>& time_names) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    auto header = detail::split_csv_line(line);
    if (header.size() < 2 || header[0] != "time")
        throw ParseError(path + ": line 1: header must be time,<name>,...");
    const Index q = static_cast<Index>(header.size()) - 1;

    std::map<std::string, Index> order;
    for (size_t i = 0; i < time_names.size(); ++i)
        order.emplace(time_names[i], static_cast<Index>(i));

    Matrix z = Matrix::Zero(static_cast<Index>(time_names.size()), q);
    std::set<Index> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (static_cast<Index>(f.size()) != q + 1)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(q + 1) + " fields");
        const auto it = order.find(f[0]);
        if (it == order.end())
            throw ParseError("line " + std::to_string(line_no) + ": unknown time '" +
                             f[0] + "'");
        if (!seen.insert(it->second).second)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate time '" +
                             f[0] + "'");
        for (Index j = 0; j < q; ++j)
            z(it->second, j) =
                detail::parse_double(f[static_cast<size_t>(j) + 1], line_no, "covariate");
    }
    if (seen.size() != time_names.size())
        throw ParseError(path + ": covariates missing for some panel periods");
    return z;
}

/// Unit-time covariate reader: header unit,time,<name1>,...; one row per
/// cell, rectangular. Returns one N x T matrix per covariate column.
inline std::vector<Matrix> load_unit_time_covariates(
    const std::string& path, const std::vector<std::string>& unit_names,
    const std::vector<std::string>& time_names) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    const auto header = detail::split_csv_line(line);
    if (header.size() < 3 || header[0] != "unit" || header[1] != "time")
        throw ParseError(path + ": line 1: header must be unit,time,<name>,...");
    const Index j_len = static_cast<Index>(header.size()) - 2;

    std::map<std::string, Index> uorder, torder;
    for (size_t i = 0; i < unit_names.size(); ++i)
        uorder.emplace(unit_names[i], static_cast<Index>(i));
    for (size_t i = 0; i < time_names.size(); ++i)
        torder.emplace(time_names[i], static_cast<Index>(i));

    const Index n = static_cast<Index>(unit_names.size());
    const Index t_len = static_cast<Index>(time_names.size());
    std::vector<Matrix> v(static_cast<size_t>(j_len), Matrix::Zero(n, t_len));
    std::set<std::pair<Index, Index>> seen;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (static_cast<Index>(f.size()) != j_len + 2)
            throw ParseError("line " + std::to_string(line_no) + ": expected " +
                             std::to_string(j_len + 2) + " fields");
        const auto ui = uorder.find(f[0]);
        const auto ti = torder.find(f[1]);
        if (ui == uorder.end() || ti == torder.end())
            throw ParseError("line " + std::to_string(line_no) + ": unknown cell (" +
                             f[0] + "," + f[1] + ")");
        if (!seen.insert({ui->second, ti->second}).second)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate cell (" +
                             f[0] + "," + f[1] + ")");
        for (Index j = 0; j < j_len; ++j)
            v[static_cast<size_t>(j)](ui->second, ti->second) =
                detail::parse_double(f[static_cast<size_t>(j) + 2], line_no, "covariate");
    }
    if (static_cast<Index>(seen.size()) != n * t_len)
        throw ParseError(path + ": non-rectangular unit-time covariates");
    return v;
}

}  // namespace panelmc
