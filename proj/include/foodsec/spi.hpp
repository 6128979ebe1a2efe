#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "foodsec/csv.hpp"
#include "foodsec/dataset.hpp"
#include "foodsec/error.hpp"

namespace foodsec {

struct PolicyRecord {
    long long state_id = 0;
    long long year = 0;
    double vehicle_exempt_some = 0.0;
    double vehicle_exempt_all = 0.0;
    double bbce = 0.0;
    double noncitizen_restriction = 0.0;
    double short_recert_share = 0.0;
    double simplified_reporting = 0.0;
    double online_application = 0.0;
    double ebt_share = 0.0;
    double fingerprint_required = 0.0;
    double outreach_ad = 0.0;
};

/// Magnitudes of each policy's contribution to the weighted index; signs
/// are fixed by the policy's direction (generous adds, restrictive
/// subtracts) inside the index functions.
struct SpiWeights {
    double vehicle_exempt_some = 1.624;
    double vehicle_exempt_all = 1.552;
    double bbce = 1.828;
    double noncitizen_restriction = 4.800;
    double short_recert_share = 3.180;
    double simplified_reporting = 1.132;
    double online_application = 0.456;
    double ebt_share = 0.276;
    double fingerprint_required = 1.864;
    double outreach_ad = 0.148;
};

namespace detail {

inline std::string policy_tag(const PolicyRecord& r) {
    return "state " + std::to_string(r.state_id) + " year " + std::to_string(r.year);
}

inline void policy_issues(const PolicyRecord& r, std::vector<std::string>& out) {
    auto binary = [&](double v, const char* name) {
        if (v != 0.0 && v != 1.0)
            out.push_back(policy_tag(r) + ": " + name + " must be 0 or 1");
    };
    auto share = [&](double v, const char* name) {
        if (std::isnan(v) || v < 0.0 || v > 1.0)
            out.push_back(policy_tag(r) + ": " + name + " must lie in [0,1]");
    };
    binary(r.vehicle_exempt_some, "vehicle_exempt_some");
    binary(r.vehicle_exempt_all, "vehicle_exempt_all");
    binary(r.bbce, "bbce");
    binary(r.noncitizen_restriction, "noncitizen_restriction");
    share(r.short_recert_share, "short_recert_share");
    binary(r.simplified_reporting, "simplified_reporting");
    binary(r.online_application, "online_application");
    share(r.ebt_share, "ebt_share");
    binary(r.fingerprint_required, "fingerprint_required");
    binary(r.outreach_ad, "outreach_ad");
    if (r.vehicle_exempt_some == 1.0 && r.vehicle_exempt_all == 1.0)
        out.push_back(policy_tag(r) + ": vehicle exemption flags are mutually exclusive");
}

inline void validate_record(const PolicyRecord& r) {
    std::vector<std::string> issues;
    policy_issues(r, issues);
    if (!issues.empty()) throw DataError(issues.front());
}

inline double signed_sum(const PolicyRecord& r, const SpiWeights& w) {
    return w.vehicle_exempt_some * r.vehicle_exempt_some +
           w.vehicle_exempt_all * r.vehicle_exempt_all + w.bbce * r.bbce +
           w.simplified_reporting * r.simplified_reporting +
           w.online_application * r.online_application + w.ebt_share * r.ebt_share +
           w.outreach_ad * r.outreach_ad - w.noncitizen_restriction * r.noncitizen_restriction -
           w.short_recert_share * r.short_recert_share -
           w.fingerprint_required * r.fingerprint_required;
}

/// The record a maximally generous state-year would have; the two vehicle
/// exemptions are mutually exclusive, so the larger-weighted one is set.
inline PolicyRecord most_generous(const SpiWeights& w) {
    PolicyRecord r;
    if (w.vehicle_exempt_some >= w.vehicle_exempt_all) r.vehicle_exempt_some = 1.0;
    else r.vehicle_exempt_all = 1.0;
    r.bbce = r.simplified_reporting = r.online_application = 1.0;
    r.ebt_share = r.outreach_ad = 1.0;
    return r;
}

inline PolicyRecord most_restrictive() {
    PolicyRecord r;
    r.noncitizen_restriction = r.short_recert_share = r.fingerprint_required = 1.0;
    return r;
}

} // namespace detail

/// Count of generous policies minus count of restrictive policies, plus 4;
/// fractional policies contribute their share. Range [1, 10].
inline double unweighted_spi(const PolicyRecord& record) {
    detail::validate_record(record);
    SpiWeights unit;
    unit.vehicle_exempt_some = unit.vehicle_exempt_all = unit.bbce = 1.0;
    unit.noncitizen_restriction = unit.short_recert_share = 1.0;
    unit.simplified_reporting = unit.online_application = unit.ebt_share = 1.0;
    unit.fingerprint_required = unit.outreach_ad = 1.0;
    return detail::signed_sum(record, unit) + 4.0;
}

/// Weighted signed sum mapped affinely onto [1, 10], with the endpoints
/// anchored at the theoretically most restrictive and most generous
/// records. Evaluating the endpoints through the same accumulation keeps
/// them exact in floating point.
inline double weighted_spi(const PolicyRecord& record, const SpiWeights& weights = {}) {
    detail::validate_record(record);
    double s = detail::signed_sum(record, weights);
    double s_max = detail::signed_sum(detail::most_generous(weights), weights);
    double s_min = detail::signed_sum(detail::most_restrictive(), weights);
    if (!(s_max > s_min)) throw DataError("weighted_spi: degenerate weight bounds");
    return 1.0 + 9.0 * (s - s_min) / (s_max - s_min);
}

/// Report-only checks over a policy panel: duplicate state-years, field
/// domain violations, and gaps in each state's year series.
inline std::vector<std::string> validate_policy_panel(const std::vector<PolicyRecord>& records) {
    std::vector<std::string> report;
    std::set<std::pair<long long, long long>> seen;
    std::map<long long, std::set<long long>> years_by_state;
    for (const auto& r : records) {
        if (!seen.emplace(r.state_id, r.year).second)
            report.push_back("duplicate policy record for " + detail::policy_tag(r));
        years_by_state[r.state_id].insert(r.year);
        detail::policy_issues(r, report);
    }
    for (const auto& kv : years_by_state) {
        long long prev = 0;
        bool first = true;
        for (long long y : kv.second) {
            if (!first && y - prev > 1) {
                std::string gap = prev + 1 == y - 1
                                      ? std::to_string(prev + 1)
                                      : std::to_string(prev + 1) + ".." + std::to_string(y - 1);
                report.push_back("state " + std::to_string(kv.first) + ": years " + gap +
                                 " missing from policy series");
            }
            prev = y;
            first = false;
        }
    }
    return report;
}

struct SpiRow {
    long long state_id = 0;
    long long year = 0;
    double spi_unweighted = 0.0;
    double spi_weighted = 0.0;
};

inline std::vector<SpiRow> compute_spi_table(const std::vector<PolicyRecord>& records,
                                             const SpiWeights& weights = {}) {
    std::vector<SpiRow> rows;
    rows.reserve(records.size());
    for (const auto& r : records)
        rows.push_back({r.state_id, r.year, unweighted_spi(r), weighted_spi(r, weights)});
    std::sort(rows.begin(), rows.end(), [](const SpiRow& a, const SpiRow& b) {
        return std::tie(a.state_id, a.year) < std::tie(b.state_id, b.year);
    });
    return rows;
}

inline const char* const kPolicyColumns[] = {
    "vehicle_exempt_some", "vehicle_exempt_all",   "bbce",
    "noncitizen_restriction", "short_recert_share", "simplified_reporting",
    "online_application",  "ebt_share",            "fingerprint_required",
    "outreach_ad"};

inline std::vector<PolicyRecord> read_policy_csv(const std::string& path) {
    auto t = read_csv(path);
    auto need = [&](const std::string& name) {
        auto j = t.col_index(name);
        if (j < 0) throw DataError("policy file " + path + " missing column '" + name + "'");
        return static_cast<std::size_t>(j);
    };
    std::size_t sc = need("state_id"), yc = need("year");
    std::size_t pc[10];
    for (int k = 0; k < 10; ++k) pc[k] = need(kPolicyColumns[k]);
    std::vector<PolicyRecord> records;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        const auto& row = t.rows[i];
        std::size_t line = i + 2;
        PolicyRecord r;
        double s = parse_double(row[sc], line, "state_id");
        double y = parse_double(row[yc], line, "year");
        if (std::isnan(s) || s != std::floor(s))
            throw DataError("policy file row " + std::to_string(line) +
                            ": state_id must be an integer");
        if (std::isnan(y) || y != std::floor(y))
            throw DataError("policy file row " + std::to_string(line) +
                            ": year must be an integer");
        r.state_id = static_cast<long long>(s);
        r.year = static_cast<long long>(y);
        double* fields[10] = {&r.vehicle_exempt_some, &r.vehicle_exempt_all,
                              &r.bbce,                &r.noncitizen_restriction,
                              &r.short_recert_share,  &r.simplified_reporting,
                              &r.online_application,  &r.ebt_share,
                              &r.fingerprint_required, &r.outreach_ad};
        for (int k = 0; k < 10; ++k) {
            double v = parse_double(row[pc[k]], line, kPolicyColumns[k]);
            if (std::isnan(v))
                throw DataError("policy file row " + std::to_string(line) + ": " +
                                kPolicyColumns[k] + " is missing");
            *fields[k] = v;
        }
        records.push_back(r);
    }
    return records;
}

inline void write_policy_csv(const std::string& path, const std::vector<PolicyRecord>& records) {
    CsvTable t;
    t.header = {"state_id", "year"};
    for (const auto* c : kPolicyColumns) t.header.push_back(c);
    for (const auto& r : records) {
        const double fields[10] = {r.vehicle_exempt_some, r.vehicle_exempt_all,
                                   r.bbce,                r.noncitizen_restriction,
                                   r.short_recert_share,  r.simplified_reporting,
                                   r.online_application,  r.ebt_share,
                                   r.fingerprint_required, r.outreach_ad};
        std::vector<std::string> row{std::to_string(r.state_id), std::to_string(r.year)};
        for (double v : fields) row.push_back(format_double(v));
        t.rows.push_back(std::move(row));
    }
    write_csv(path, t);
}

inline void write_spi_csv(const std::string& path, const std::vector<SpiRow>& rows) {
    CsvTable t;
    t.header = {"state", "year", "spi_unweighted", "spi_weighted"};
    for (const auto& r : rows)
        t.rows.push_back({std::to_string(r.state_id), std::to_string(r.year),
                          format_double(r.spi_unweighted), format_double(r.spi_weighted)});
    write_csv(path, t);
}

/// Joins one SPI variant onto the panel by (state_id, wave_year) as a new
/// column. Every panel row must find its state-year.
inline PanelDataset join_spi(const PanelDataset& panel, const std::vector<SpiRow>& rows,
                             bool use_weighted, const std::string& column_name = "spi") {
    std::map<std::pair<long long, long long>, double> lookup;
    for (const auto& r : rows) {
        double v = use_weighted ? r.spi_weighted : r.spi_unweighted;
        if (!lookup.emplace(std::make_pair(r.state_id, r.year), v).second)
            throw DataError("join_spi: duplicate index row for state " +
                            std::to_string(r.state_id) + " year " + std::to_string(r.year));
    }
    std::vector<double> col(panel.n_rows());
    for (std::size_t i = 0; i < panel.n_rows(); ++i) {
        auto it = lookup.find({panel.state_id[i], panel.wave_year[i]});
        if (it == lookup.end())
            throw DataError("join_spi: no policy index for state " +
                            std::to_string(panel.state_id[i]) + " year " +
                            std::to_string(panel.wave_year[i]));
        col[i] = it->second;
    }
    PanelDataset out = panel;
    out.cols.set(column_name, col);
    return out;
}

} // namespace foodsec
