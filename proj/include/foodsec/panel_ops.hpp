#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "foodsec/csv.hpp"
#include "foodsec/dataset.hpp"
#include "foodsec/stats.hpp"

namespace foodsec {

/// Caps values above the (1 - fraction) weighted quantile at that quantile.
/// Ties at the quantile itself are left unmodified. Missing values pass
/// through. With no weights given, unit weights are used.
inline std::vector<double> winsorize_top(const std::vector<double>& values, double fraction,
                                         const std::vector<double>* weights = nullptr) {
    if (values.empty()) throw DataError("winsorize_top: empty input");
    if (fraction < 0.0 || fraction >= 1.0)
        throw DataError("winsorize_top: fraction must lie in [0, 1)");
    if (fraction == 0.0) return values;
    std::vector<double> w(values.size(), 1.0);
    if (weights) {
        if (weights->size() != values.size())
            throw DataError("winsorize_top: weight length mismatch");
        w = *weights;
    }
    double cap = weighted_quantile(values, w, 1.0 - fraction);
    std::vector<double> out(values);
    for (auto& v : out)
        if (!std::isnan(v) && v > cap) v = cap;
    return out;
}

/// Converts a nominal amount to base-period units: nominal * cpi_base / cpi_t.
inline double deflate(double nominal, double cpi_t, double cpi_base) {
    if (!(cpi_t > 0.0) || !(cpi_base > 0.0)) throw DataError("deflate: CPI must be positive");
    return nominal * cpi_base / cpi_t;
}

/// Adds `<column>_lag<N>` holding the column's value at wave_year - lag_years
/// for the same individual; rows whose individual lacks that exact wave get
/// a missing value. Row count and order are unchanged.
inline PanelDataset lag_join(const PanelDataset& panel, const std::string& column,
                             int lag_years) {
    if (lag_years <= 0) throw DataError("lag_join: lag_years must be positive");
    const auto& src = panel.col(column);
    std::vector<double> lagged(panel.n_rows(), std::numeric_limits<double>::quiet_NaN());
    for (auto [b, e] : panel.individual_runs()) {
        std::map<long long, std::size_t> by_year;
        for (std::size_t i = b; i < e; ++i) by_year.emplace(panel.wave_year[i], i);
        for (std::size_t i = b; i < e; ++i) {
            auto it = by_year.find(panel.wave_year[i] - lag_years);
            if (it != by_year.end()) lagged[i] = src[it->second];
        }
    }
    PanelDataset out = panel;
    out.cols.add(column + "_lag" + std::to_string(lag_years), std::move(lagged));
    return out;
}

struct SummaryRow {
    std::string column;
    std::size_t n = 0;
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
};

/// Weighted mean and sd (population convention: a single observation has
/// sd 0) per column, using the panel's survey weights.
inline std::vector<SummaryRow> weighted_summary(const PanelDataset& panel,
                                                const std::vector<std::string>& columns,
                                                const std::string& weight_col = "weight") {
    const auto& w = panel.col(weight_col);
    double total = 0.0;
    for (double wi : w)
        if (!std::isnan(wi)) total += wi;
    if (total <= 0.0) throw DataError("weighted_summary: zero total weight");
    std::vector<SummaryRow> out;
    for (const auto& name : columns) {
        auto m = weighted_moments(panel.col(name), w);
        out.push_back({name, m.n, m.mean, m.sd});
    }
    return out;
}

inline void write_summary(const std::string& path, const std::vector<SummaryRow>& rows) {
    CsvTable t;
    t.header = {"column", "n", "weighted_mean", "weighted_sd"};
    for (const auto& r : rows)
        t.rows.push_back({r.column, std::to_string(r.n), format_double(r.mean),
                          format_double(r.sd)});
    write_csv(path, t);
}

} // namespace foodsec
