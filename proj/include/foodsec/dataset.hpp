#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "foodsec/csv.hpp"
#include "foodsec/error.hpp"
#include "foodsec/table.hpp"

namespace foodsec {

/// Maps a semantic role to a source column. The loaded dataset always stores
/// the column under the role name, so downstream code never sees file-local
/// naming.
struct ColumnSpec {
    std::string role;
    std::string column;
    bool required = true;
};

using ColumnSchema = std::vector<ColumnSpec>;

/// Schema in which every role reads a column of the same name.
inline ColumnSchema default_schema() {
    ColumnSchema s;
    auto req = [&s](const char* role) { s.push_back({role, role, true}); };
    auto opt = [&s](const char* role) { s.push_back({role, role, false}); };
    req("individual_id");
    req("wave_year");
    req("state_id");
    req("food_exp_pc");
    req("income_pc");
    req("snap");
    req("weight");
    req("hh_size");
    req("pct_children");
    req("tfp_cost");
    req("coli");
    opt("rp_female");
    opt("rp_age");
    opt("rp_age_sq");
    opt("rp_white");
    opt("rp_married");
    opt("rp_employed");
    opt("rp_disabled");
    opt("rp_college");
    opt("unemployment_rate");
    opt("income_to_fpl_ratio");
    opt("low_income_flag");
    return s;
}

/// Individual-by-wave observation panel, sorted by (individual_id,
/// wave_year). Keys live outside the numeric table.
struct PanelDataset {
    std::vector<long long> individual_id;
    std::vector<long long> wave_year;
    std::vector<long long> state_id;
    DataTable cols;

    std::size_t n_rows() const { return individual_id.size(); }

    bool has(const std::string& name) const { return cols.has(name); }
    const std::vector<double>& col(const std::string& name) const { return cols.col(name); }

    /// Key column by dimension name: individual, state, or year.
    const std::vector<long long>& key(const std::string& dim) const {
        if (dim == "individual") return individual_id;
        if (dim == "state") return state_id;
        if (dim == "year") return wave_year;
        throw DataError("unknown fixed-effect dimension '" + dim + "'");
    }

    /// Contiguous [begin, end) row ranges per individual; valid because rows
    /// are key-sorted.
    std::vector<std::pair<std::size_t, std::size_t>> individual_runs() const {
        std::vector<std::pair<std::size_t, std::size_t>> runs;
        std::size_t i = 0;
        while (i < n_rows()) {
            std::size_t j = i + 1;
            while (j < n_rows() && individual_id[j] == individual_id[i]) ++j;
            runs.emplace_back(i, j);
            i = j;
        }
        return runs;
    }

    PanelDataset select_rows(const std::vector<std::size_t>& rows) const {
        PanelDataset out;
        out.individual_id.reserve(rows.size());
        out.wave_year.reserve(rows.size());
        out.state_id.reserve(rows.size());
        for (auto r : rows) {
            out.individual_id.push_back(individual_id[r]);
            out.wave_year.push_back(wave_year[r]);
            out.state_id.push_back(state_id[r]);
        }
        out.cols = cols.select_rows(rows);
        return out;
    }
};

struct LoadReport {
    PanelDataset panel;
    std::vector<std::string> issues;
    std::size_t n_rows_loaded = 0;
};

namespace detail {

inline long long to_key(double v, std::size_t file_row, const std::string& column) {
    if (std::isnan(v))
        throw DataError("missing key in column '" + column + "' at row " +
                        std::to_string(file_row));
    double r = std::nearbyint(v);
    if (std::fabs(v - r) > 1e-9 || std::fabs(v) > 9.0e15)
        throw DataError("non-integer key '" + format_double(v) + "' in column '" + column +
                        "' at row " + std::to_string(file_row));
    return static_cast<long long>(r);
}

inline bool is_binary01(double v) { return v == 0.0 || v == 1.0; }

} // namespace detail

/// Loads and validates the observation panel. Structural violations
/// (missing required column, duplicate key, non-numeric cell, bad key)
/// throw; domain violations are reported as issues with file row numbers.
/// low_income_flag is derived from income_to_fpl_ratio (minimum across an
/// individual's waves below 1.3) when that column is present, else taken
/// from a supplied low_income_flag column normalized to be constant within
/// individual.
inline LoadReport load_panel(const std::string& path, const ColumnSchema& schema) {
    CsvTable raw = read_csv(path);
    LoadReport report;

    std::map<std::string, std::size_t> role_to_col;
    std::vector<bool> consumed(raw.header.size(), false);
    for (const auto& entry : schema) {
        auto idx = raw.col_index(entry.column);
        if (idx < 0) {
            if (entry.required)
                throw DataError(path + ": missing required column '" + entry.column + "'");
            continue;
        }
        role_to_col[entry.role] = static_cast<std::size_t>(idx);
        consumed[static_cast<std::size_t>(idx)] = true;
    }
    for (const char* key_role : {"individual_id", "wave_year", "state_id"})
        if (!role_to_col.count(key_role))
            throw DataError(path + ": missing required column '" + std::string(key_role) + "'");

    const std::size_t n = raw.n_rows();
    report.n_rows_loaded = n;
    PanelDataset& p = report.panel;
    p.individual_id.resize(n);
    p.wave_year.resize(n);
    p.state_id.resize(n);

    // File row number of each record: header is row 1.
    auto file_row = [](std::size_t i) { return i + 2; };

    for (std::size_t i = 0; i < n; ++i) {
        p.individual_id[i] = detail::to_key(
            parse_double(raw.rows[i][role_to_col["individual_id"]], file_row(i), "individual_id"),
            file_row(i), "individual_id");
        p.wave_year[i] = detail::to_key(
            parse_double(raw.rows[i][role_to_col["wave_year"]], file_row(i), "wave_year"),
            file_row(i), "wave_year");
        p.state_id[i] = detail::to_key(
            parse_double(raw.rows[i][role_to_col["state_id"]], file_row(i), "state_id"),
            file_row(i), "state_id");
    }

    {
        std::map<std::pair<long long, long long>, std::size_t> seen;
        for (std::size_t i = 0; i < n; ++i) {
            auto key = std::make_pair(p.individual_id[i], p.wave_year[i]);
            auto it = seen.find(key);
            if (it != seen.end())
                throw DataError(path + ": duplicate (individual_id, wave_year) key (" +
                                std::to_string(key.first) + ", " + std::to_string(key.second) +
                                ") at rows " + std::to_string(file_row(it->second)) + " and " +
                                std::to_string(file_row(i)));
            seen.emplace(key, i);
        }
    }

    DataTable cols(n);
    auto load_numeric = [&](const std::string& name, std::size_t j) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = parse_double(raw.rows[i][j], file_row(i), name);
        cols.add(name, std::move(v));
    };
    for (const auto& [role, j] : role_to_col) {
        if (role == "individual_id" || role == "wave_year" || role == "state_id") continue;
        load_numeric(role, j);
    }
    for (std::size_t j = 0; j < raw.header.size(); ++j) {
        if (consumed[j]) continue;
        if (cols.has(raw.header[j])) {
            report.issues.push_back("column '" + raw.header[j] +
                                    "' shadowed by a schema role of the same name; ignored");
            continue;
        }
        load_numeric(raw.header[j], j);
    }

    auto domain_issue = [&](std::size_t i, const std::string& what) {
        report.issues.push_back("row " + std::to_string(file_row(i)) + ": " + what);
    };
    auto check_col = [&](const std::string& name, auto&& ok, const std::string& what) {
        if (!cols.has(name)) return;
        const auto& v = cols.col(name);
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isnan(v[i]) && !ok(v[i])) domain_issue(i, name + " " + what + " (value " +
                                                                    format_double(v[i]) + ")");
    };
    check_col("weight", [](double v) { return v >= 0.0; }, "must be nonnegative");
    check_col("food_exp_pc", [](double v) { return v >= 0.0; }, "must be nonnegative");
    check_col("tfp_cost", [](double v) { return v > 0.0; }, "must be positive");
    check_col("coli", [](double v) { return v > 0.0; }, "must be positive");
    check_col("hh_size", [](double v) { return v > 0.0; }, "must be positive");
    check_col("pct_children", [](double v) { return v >= 0.0 && v <= 1.0; },
              "must lie in [0,1]");
    check_col("snap", detail::is_binary01, "must be 0 or 1");
    check_col("low_income_flag", detail::is_binary01, "must be 0 or 1");

    // Sort by (individual, wave) before any within-individual derivation.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (p.individual_id[a] != p.individual_id[b])
            return p.individual_id[a] < p.individual_id[b];
        return p.wave_year[a] < p.wave_year[b];
    });
    p.cols = std::move(cols);
    PanelDataset sorted = p.select_rows(order);
    report.panel = std::move(sorted);
    PanelDataset& panel = report.panel;

    if (panel.has("income_to_fpl_ratio")) {
        std::vector<double> flag(n, std::numeric_limits<double>::quiet_NaN());
        const auto& ratio = panel.col("income_to_fpl_ratio");
        for (auto [b, e] : panel.individual_runs()) {
            double mn = std::numeric_limits<double>::infinity();
            bool any = false;
            for (std::size_t i = b; i < e; ++i) {
                if (std::isnan(ratio[i])) continue;
                mn = std::min(mn, ratio[i]);
                any = true;
            }
            double f = any ? (mn < 1.3 ? 1.0 : 0.0) : std::numeric_limits<double>::quiet_NaN();
            for (std::size_t i = b; i < e; ++i) flag[i] = f;
        }
        panel.cols.set("low_income_flag", std::move(flag));
    } else if (panel.has("low_income_flag")) {
        auto& flag = panel.cols.mutable_col("low_income_flag");
        for (auto [b, e] : panel.individual_runs()) {
            double mx = 0.0;
            bool inconsistent = false, any = false;
            double first = std::numeric_limits<double>::quiet_NaN();
            for (std::size_t i = b; i < e; ++i) {
                if (std::isnan(flag[i])) continue;
                if (!any) first = flag[i];
                else if (flag[i] != first) inconsistent = true;
                mx = std::max(mx, flag[i]);
                any = true;
            }
            if (inconsistent)
                report.issues.push_back("individual " +
                                        std::to_string(panel.individual_id[b]) +
                                        ": low_income_flag varies across waves; set to " +
                                        format_double(mx) + " in all waves");
            for (std::size_t i = b; i < e; ++i)
                flag[i] = any ? mx : std::numeric_limits<double>::quiet_NaN();
        }
    }

    return report;
}

/// Writes the panel back out with key columns first, numeric columns in
/// table order.
inline void write_panel(const std::string& path, const PanelDataset& panel) {
    CsvTable t;
    t.header = {"individual_id", "wave_year", "state_id"};
    for (const auto& name : panel.cols.names()) t.header.push_back(name);
    t.rows.reserve(panel.n_rows());
    for (std::size_t i = 0; i < panel.n_rows(); ++i) {
        std::vector<std::string> row;
        row.reserve(t.header.size());
        row.push_back(std::to_string(panel.individual_id[i]));
        row.push_back(std::to_string(panel.wave_year[i]));
        row.push_back(std::to_string(panel.state_id[i]));
        for (const auto& name : panel.cols.names())
            row.push_back(format_double(panel.cols.col(name)[i]));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

} // namespace foodsec
