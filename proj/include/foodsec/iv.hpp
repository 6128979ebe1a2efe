#pragma once

// Instrumental-variable estimators for the panel models: explicit two-stage
// least squares with cluster-robust inference, interaction-instrument fits
// with a joint weak-instrument diagnostic, and a three-step estimator that
// instruments a binary treatment with its fitted participation probability.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "foodsec/csv.hpp"
#include "foodsec/dataset.hpp"
#include "foodsec/error.hpp"
#include "foodsec/glm.hpp"
#include "foodsec/regress.hpp"
#include "foodsec/special.hpp"

namespace foodsec {

enum class IvMode { linear_2sls, interaction_2sls, three_step };

inline const char* iv_mode_name(IvMode m) {
    switch (m) {
        case IvMode::linear_2sls: return "linear_2sls";
        case IvMode::interaction_2sls: return "interaction_2sls";
        case IvMode::three_step: return "three_step";
    }
    return "unknown";
}

/// Result of an instrumental-variable fit. `structural` carries the outcome
/// equation with cluster-robust covariance; `first_stages` holds one linear
/// fit per endogenous regressor (three-step fits prepend the participation
/// logit). `kp_f` is the cluster-robust F statistic on the excluded
/// instruments, +infinity when the first stage is deterministic.
struct IVResult {
    IvMode mode = IvMode::linear_2sls;
    FitResult structural;
    std::vector<FitResult> first_stages;
    double kp_f = std::numeric_limits<double>::quiet_NaN();
    std::size_t n_obs = 0;
    double mean_outcome = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

inline void check_disjoint_names(const std::string& outcome,
                                 const std::vector<std::string>& endogenous,
                                 const std::vector<std::string>& instruments,
                                 const std::vector<std::string>& controls) {
    std::set<std::string> seen;
    seen.insert(outcome);
    auto take = [&seen](const std::vector<std::string>& group, const char* what) {
        for (const auto& name : group)
            if (!seen.insert(name).second)
                throw DataError(std::string(what) + " '" + name +
                                "' duplicates another variable in the model");
    };
    take(endogenous, "endogenous regressor");
    take(instruments, "instrument");
    take(controls, "control");
}

/// Shared two-stage engine. Absorbs fixed effects (or applies the Mundlak
/// device) once, fits one first stage per endogenous column on the common
/// instrument + control design, then fits the outcome on fitted endogenous
/// values. Structural residuals are rebuilt with the actual endogenous
/// columns before the sandwich covariance.
inline IVResult tsls_core(const std::string& outcome,
                          const std::vector<std::string>& endogenous,
                          const std::vector<std::string>& instruments, const ModelSpec& spec,
                          const PanelDataset& panel, IvMode mode) {
    if (endogenous.empty()) throw DataError("tsls: no endogenous regressor given");
    if (instruments.size() < endogenous.size())
        throw DataError("tsls: under-identified model (" + std::to_string(instruments.size()) +
                        " instruments for " + std::to_string(endogenous.size()) +
                        " endogenous regressors)");
    check_disjoint_names(outcome, endogenous, instruments, spec.regressors);

    bool absorbs_individual = false;
    for (const auto& d : spec.fe_dims) {
        if (d != "individual" && d != "state" && d != "year")
            throw DataError("unknown fixed-effect dimension '" + d + "'");
        if (d == "individual") absorbs_individual = true;
    }
    if (spec.mundlak && absorbs_individual)
        throw DataError("mundlak and individual fixed effects are mutually exclusive");

    const PanelDataset* data = &panel;
    PanelDataset augmented;
    std::vector<std::string> controls = spec.regressors;
    if (spec.mundlak) {
        std::vector<std::string> base = spec.regressors;
        base.insert(base.end(), instruments.begin(), instruments.end());
        augmented = mundlak_augment(panel, base);
        data = &augmented;
        for (const auto& c : base) controls.push_back(c + "_imean");
    }

    std::vector<std::string> needed = controls;
    needed.insert(needed.end(), endogenous.begin(), endogenous.end());
    needed.insert(needed.end(), instruments.begin(), instruments.end());
    auto rows = complete_rows(*data, outcome, needed, spec.weight_col, spec.filter_col);
    std::size_t singletons = 0;
    rows = drop_singletons(*data, spec.fe_dims, std::move(rows), &singletons);
    if (rows.size() < needed.size() + 1)
        throw DataError("too few usable rows (" + std::to_string(rows.size()) + ") for " +
                        std::to_string(needed.size()) + " model columns");
    const std::size_t n = rows.size();
    const std::size_t n_en = endogenous.size();
    const std::size_t n_in = instruments.size();

    std::vector<double> w(n, 1.0);
    if (!spec.weight_col.empty()) {
        const auto& wc = data->col(spec.weight_col);
        for (std::size_t i = 0; i < n; ++i) w[i] = wc[rows[i]];
    }
    double wsum = 0.0;
    for (double wi : w) wsum += wi;
    if (wsum <= 0.0) throw DataError("zero total weight");

    std::vector<double> y(n);
    {
        const auto& yc = data->col(outcome);
        for (std::size_t i = 0; i < n; ++i) y[i] = yc[rows[i]];
    }
    double mean_outcome = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_outcome += w[i] * y[i];
    mean_outcome /= wsum;

    auto load = [&](const std::vector<std::string>& names) {
        std::vector<std::vector<double>> out(names.size(), std::vector<double>(n));
        for (std::size_t j = 0; j < names.size(); ++j) {
            const auto& c = data->col(names[j]);
            for (std::size_t i = 0; i < n; ++i) out[j][i] = c[rows[i]];
        }
        return out;
    };
    auto d_raw = load(endogenous);
    auto z_cols = load(instruments);
    auto x_cols = load(controls);

    const bool has_fe = !spec.fe_dims.empty();
    int sweeps = 0;
    std::vector<double> y_abs = y;
    std::vector<std::vector<double>> d_abs = d_raw;
    if (has_fe) {
        std::vector<GroupIndex> dims;
        for (const auto& d : spec.fe_dims) dims.push_back(make_group_index(data->key(d), rows));
        std::vector<std::vector<double>> all;
        all.reserve(1 + n_en + n_in + x_cols.size());
        all.push_back(std::move(y_abs));
        for (auto& c : d_abs) all.push_back(std::move(c));
        for (auto& c : z_cols) all.push_back(std::move(c));
        for (auto& c : x_cols) all.push_back(std::move(c));
        sweeps = absorb_columns(all, dims, w);
        std::size_t at = 0;
        y_abs = std::move(all[at++]);
        for (auto& c : d_abs) c = std::move(all[at++]);
        for (auto& c : z_cols) c = std::move(all[at++]);
        for (auto& c : x_cols) c = std::move(all[at++]);
    }

    std::vector<std::vector<double>> design1;
    std::vector<std::string> names1;
    if (!has_fe) {
        design1.emplace_back(n, 1.0);
        names1.push_back("(intercept)");
    }
    for (std::size_t j = 0; j < n_in; ++j) {
        design1.push_back(z_cols[j]);
        names1.push_back(instruments[j]);
    }
    for (std::size_t j = 0; j < controls.size(); ++j) {
        design1.push_back(x_cols[j]);
        names1.push_back(controls[j]);
    }
    const std::size_t z_at = has_fe ? 0 : 1;

    auto labels = cluster_labels(*data, spec.cluster, rows);
    std::set<long long> distinct(labels.begin(), labels.end());
    long long fe_params = has_fe ? fe_param_count(panel, spec.fe_dims, rows) : 0;

    Eigen::MatrixXd x1(n, design1.size());
    for (std::size_t j = 0; j < design1.size(); ++j)
        for (std::size_t i = 0; i < n; ++i) x1(i, j) = design1[j][i];

    IVResult out;
    out.mode = mode;
    out.n_obs = n;
    out.mean_outcome = mean_outcome;
    out.kp_f = std::numeric_limits<double>::infinity();

    std::vector<std::vector<double>> d_hat(n_en, std::vector<double>(n));
    for (std::size_t j = 0; j < n_en; ++j) {
        auto core = wls_solve(design1, d_abs[j], w, names1);
        long long k_total = static_cast<long long>(core.rank) + fe_params;

        FitResult fs;
        fs.names = names1;
        fs.coef = core.coef;
        fs.sample_rows = rows;
        fs.n_obs = n;
        fs.residuals = core.residuals;
        fs.fitted.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            fs.fitted[i] = d_raw[j][i] - core.residuals[i];
            d_hat[j][i] = d_abs[j][i] - core.residuals[i];
        }
        fs.dof = static_cast<long long>(n) - k_total;
        double ss_res = 0.0, ss_tot = 0.0, dmean = 0.0;
        if (!has_fe) {
            for (std::size_t i = 0; i < n; ++i) dmean += w[i] * d_abs[j][i];
            dmean /= wsum;
        }
        double max_res = 0.0, max_d = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            ss_res += w[i] * core.residuals[i] * core.residuals[i];
            double dev = d_abs[j][i] - dmean;
            ss_tot += w[i] * dev * dev;
            max_res = std::max(max_res, std::abs(core.residuals[i]));
            max_d = std::max(max_d, std::abs(d_abs[j][i]));
        }
        fs.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot
                                    : std::numeric_limits<double>::quiet_NaN();
        fs.vcov = cluster_vcov(x1, core.residuals, w, labels, true,
                               static_cast<std::size_t>(k_total));
        fs.diagnostics["n_clusters"] = static_cast<double>(distinct.size());
        fs.diagnostics["condition_number"] = core.condition;
        fs.diagnostics["singletons_dropped"] = static_cast<double>(singletons);
        fs.diagnostics["absorb_sweeps"] = static_cast<double>(sweeps);
        fs.diagnostics["fe_params"] = static_cast<double>(fe_params);

        // Per-equation excluded-instrument Wald statistic divided by the
        // instrument count; the joint diagnostic takes the minimum over
        // equations. A deterministic first stage reports +infinity.
        double f_eq;
        if (max_res <= 1e-10 * (1.0 + max_d)) {
            f_eq = std::numeric_limits<double>::infinity();
        } else {
            Eigen::VectorXd bz = core.coef.segment(static_cast<Eigen::Index>(z_at),
                                                   static_cast<Eigen::Index>(n_in));
            Eigen::MatrixXd vz = fs.vcov.block(static_cast<Eigen::Index>(z_at),
                                               static_cast<Eigen::Index>(z_at),
                                               static_cast<Eigen::Index>(n_in),
                                               static_cast<Eigen::Index>(n_in));
            Eigen::VectorXd sol = vz.ldlt().solve(bz);
            double wald = bz.dot(sol);
            f_eq = std::isfinite(wald) && wald >= 0.0
                       ? wald / static_cast<double>(n_in)
                       : std::numeric_limits<double>::infinity();
        }
        out.kp_f = std::min(out.kp_f, f_eq);
        out.first_stages.push_back(std::move(fs));
    }

    std::vector<std::vector<double>> design2;
    std::vector<std::string> names2;
    if (!has_fe) {
        design2.emplace_back(n, 1.0);
        names2.push_back("(intercept)");
    }
    for (std::size_t j = 0; j < n_en; ++j) {
        design2.push_back(d_hat[j]);
        names2.push_back(endogenous[j]);
    }
    for (std::size_t j = 0; j < controls.size(); ++j) {
        design2.push_back(x_cols[j]);
        names2.push_back(controls[j]);
    }

    auto core2 = wls_solve(design2, y_abs, w, names2);
    long long k_total2 = static_cast<long long>(core2.rank) + fe_params;

    // Structural residuals substitute the actual endogenous columns back in.
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        std::size_t c = 0;
        if (!has_fe) {
            pred += core2.coef(0);
            c = 1;
        }
        for (std::size_t j = 0; j < n_en; ++j, ++c)
            pred += core2.coef(static_cast<Eigen::Index>(c)) * d_abs[j][i];
        for (std::size_t j = 0; j < controls.size(); ++j, ++c)
            pred += core2.coef(static_cast<Eigen::Index>(c)) * x_cols[j][i];
        resid[i] = y_abs[i] - pred;
    }

    FitResult st;
    st.names = std::move(names2);
    st.coef = core2.coef;
    st.sample_rows = rows;
    st.n_obs = n;
    st.residuals = resid;
    st.fitted.resize(n);
    for (std::size_t i = 0; i < n; ++i) st.fitted[i] = y[i] - resid[i];
    st.dof = static_cast<long long>(n) - k_total2;

    // R-squared uses the structural residuals; it can be negative.
    double ss_res = 0.0, ss_tot = 0.0, ymean = 0.0;
    if (!has_fe) {
        for (std::size_t i = 0; i < n; ++i) ymean += w[i] * y_abs[i];
        ymean /= wsum;
    }
    for (std::size_t i = 0; i < n; ++i) {
        ss_res += w[i] * resid[i] * resid[i];
        double dev = y_abs[i] - ymean;
        ss_tot += w[i] * dev * dev;
    }
    st.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot
                                : std::numeric_limits<double>::quiet_NaN();

    Eigen::MatrixXd x2(n, design2.size());
    for (std::size_t j = 0; j < design2.size(); ++j)
        for (std::size_t i = 0; i < n; ++i) x2(i, j) = design2[j][i];
    st.vcov = cluster_vcov(x2, resid, w, labels, true, static_cast<std::size_t>(k_total2));
    st.diagnostics["n_clusters"] = static_cast<double>(distinct.size());
    st.diagnostics["condition_number"] = core2.condition;
    st.diagnostics["singletons_dropped"] = static_cast<double>(singletons);
    st.diagnostics["absorb_sweeps"] = static_cast<double>(sweeps);
    st.diagnostics["fe_params"] = static_cast<double>(fe_params);
    st.diagnostics["kp_f"] = out.kp_f;
    st.diagnostics["n_instruments"] = static_cast<double>(n_in);
    st.diagnostics["n_endogenous"] = static_cast<double>(n_en);
    st.diagnostics["weak_instruments"] = out.kp_f < 10.0 ? 1.0 : 0.0;

    out.structural = std::move(st);
    return out;
}

} // namespace detail

/// Two-stage least squares with one endogenous regressor. The first stage
/// regresses the endogenous column on the excluded instruments plus the
/// controls in `spec`; the second stage replaces the endogenous column with
/// its fitted values. Fitted values are kept as-is, including negative
/// ones. Covariances are cluster-robust (individual by default).
inline IVResult tsls_fit(const std::string& outcome, const std::string& endogenous,
                         const std::vector<std::string>& instruments, const ModelSpec& spec,
                         const PanelDataset& panel) {
    return detail::tsls_core(outcome, {endogenous}, instruments, spec, panel,
                             IvMode::linear_2sls);
}

/// First-stage strength statistic of a fitted IV model: the cluster-robust
/// Wald statistic on the excluded instruments divided by their count. With
/// several endogenous regressors the reported value is the minimum across
/// the per-equation statistics.
inline double first_stage_F(const IVResult& iv) {
    if (iv.first_stages.empty()) throw DataError("first_stage_F: missing first stage");
    return iv.kp_f;
}

/// Heterogeneous-effect 2SLS: instruments both the endogenous column and
/// its interaction with a binary group flag, using each base instrument and
/// its interaction with the flag. The flag itself is not added to the
/// structural equation; include it among spec.regressors when it is not
/// absorbed. An all-zero flag degenerates to the plain two-stage fit.
inline IVResult interaction_iv(const std::string& outcome, const std::string& endogenous,
                               const std::string& group_flag,
                               const std::vector<std::string>& instruments,
                               const ModelSpec& spec, const PanelDataset& panel) {
    const auto& g = panel.col(group_flag);
    bool any_zero = false, any_one = false;
    for (double v : g) {
        if (std::isnan(v)) continue;
        if (v == 0.0)
            any_zero = true;
        else if (v == 1.0)
            any_one = true;
        else
            throw DataError("interaction_iv: group flag '" + group_flag +
                            "' must contain only 0 or 1");
    }
    if (!any_zero && !any_one)
        throw DataError("interaction_iv: group flag '" + group_flag + "' has no usable rows");
    if (!any_one) {
        ModelSpec reduced = spec;
        reduced.regressors.erase(
            std::remove(reduced.regressors.begin(), reduced.regressors.end(), group_flag),
            reduced.regressors.end());
        return detail::tsls_core(outcome, {endogenous}, instruments, reduced, panel,
                                 IvMode::interaction_2sls);
    }
    if (!any_zero)
        throw DataError("interaction_iv: group flag '" + group_flag + "' is constant");

    PanelDataset work = panel;
    const std::size_t n = panel.n_rows();
    auto interact = [&](const std::vector<double>& a) {
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * g[i];
        return out;
    };
    auto add_col = [&work](const std::string& name, std::vector<double> values) {
        if (work.has(name))
            throw DataError("interaction_iv: derived column '" + name + "' already exists");
        work.cols.add(name, std::move(values));
    };

    std::string d_int = endogenous + "_x_" + group_flag;
    add_col(d_int, interact(panel.col(endogenous)));
    std::vector<std::string> z_full = instruments;
    for (const auto& z : instruments) {
        std::string z_int = z + "_x_" + group_flag;
        add_col(z_int, interact(panel.col(z)));
        z_full.push_back(z_int);
    }
    return detail::tsls_core(outcome, {endogenous, d_int}, z_full, spec, work,
                             IvMode::interaction_2sls);
}

/// Three-step estimator for a binary endogenous treatment: a logit of the
/// treatment on instruments + controls produces fitted probabilities, which
/// then serve as the single excluded instrument in a two-stage fit. The
/// logit fit is prepended to `first_stages`; separation errors propagate.
inline IVResult three_step_iv(const std::string& outcome, const std::string& endogenous,
                              const std::vector<std::string>& instruments,
                              const ModelSpec& spec, const PanelDataset& panel) {
    detail::check_disjoint_names(outcome, {endogenous}, instruments, spec.regressors);
    GlmSpec gspec;
    static_cast<ModelSpec&>(gspec) = spec;
    gspec.outcome = endogenous;
    gspec.regressors = instruments;
    gspec.regressors.insert(gspec.regressors.end(), spec.regressors.begin(),
                            spec.regressors.end());
    gspec.family = Family::logit;
    FitResult step1 = logit_fit(gspec, panel);

    std::vector<double> phat(panel.n_rows(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < step1.sample_rows.size(); ++i) {
        double p = step1.fitted[i];
        if (!(p > 0.0) || !(p < 1.0))
            throw NumericError("three_step_iv: fitted probability outside (0,1)");
        phat[step1.sample_rows[i]] = p;
    }
    PanelDataset work = panel;
    const std::string phat_col = "__phat";
    if (work.has(phat_col))
        throw DataError("three_step_iv: derived column '" + phat_col + "' already exists");
    work.cols.add(phat_col, std::move(phat));

    IVResult out =
        detail::tsls_core(outcome, {endogenous}, {phat_col}, spec, work, IvMode::three_step);
    out.first_stages.insert(out.first_stages.begin(), std::move(step1));
    return out;
}

/// Correlation diagnostic for instrument exogeneity: Pearson correlation of
/// two aligned change series with a two-sided p-value from the exact t
/// reference with N-2 degrees of freedom. NaN pairs are skipped.
struct ExogeneityDiag {
    double r = std::numeric_limits<double>::quiet_NaN();
    double p_value = std::numeric_limits<double>::quiet_NaN();
    std::size_t n = 0;
};

inline ExogeneityDiag exogeneity_diag(const std::vector<double>& delta_spi,
                                      const std::vector<double>& delta_unemp) {
    if (delta_spi.size() != delta_unemp.size())
        throw DataError("exogeneity_diag: series lengths differ");
    std::vector<double> a, b;
    for (std::size_t i = 0; i < delta_spi.size(); ++i) {
        if (std::isnan(delta_spi[i]) || std::isnan(delta_unemp[i])) continue;
        a.push_back(delta_spi[i]);
        b.push_back(delta_unemp[i]);
    }
    const std::size_t n = a.size();
    if (n < 3) throw DataError("exogeneity_diag: need at least 3 complete pairs");
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa <= 0.0 || sbb <= 0.0) throw DataError("exogeneity_diag: a series has zero variance");

    ExogeneityDiag out;
    out.n = n;
    out.r = sab / std::sqrt(saa * sbb);
    out.r = std::max(-1.0, std::min(1.0, out.r));
    double df = static_cast<double>(n) - 2.0;
    double denom = 1.0 - out.r * out.r;
    double t = denom > 0.0 ? out.r * std::sqrt(df / denom)
                           : std::numeric_limits<double>::infinity() * (out.r < 0 ? -1.0 : 1.0);
    out.p_value = student_t_two_sided_p(t, df);
    return out;
}

/// Effect of a one-log-unit income change evaluated at the mean:
/// coefficient times mean income, in outcome units.
inline double semi_elasticity(const FitResult& fit, const std::string& income_coefficient,
                              double mean_income) {
    return fit.coef_of(income_coefficient) * mean_income;
}

/// Writes a one-estimate summary table with a `statistic,value` header.
/// NaN values serialize as empty fields.
inline void write_estimates_csv(const std::filesystem::path& path,
                                const std::vector<std::pair<std::string, double>>& stats) {
    CsvTable t;
    t.header = {"statistic", "value"};
    for (const auto& [name, value] : stats)
        t.rows.push_back({name, format_double(value)});
    write_csv(path, t);
}

/// Standard summary rows for a focal coefficient of an IV fit: estimate,
/// standard error, sample size, mean outcome, and first-stage F.
inline std::vector<std::pair<std::string, double>> estimate_summary(
    const IVResult& iv, const std::string& focal) {
    std::vector<std::pair<std::string, double>> rows;
    rows.emplace_back("coefficient", iv.structural.coef_of(focal));
    rows.emplace_back("se", iv.structural.se_of(focal));
    rows.emplace_back("n", static_cast<double>(iv.n_obs));
    rows.emplace_back("mean_outcome", iv.mean_outcome);
    rows.emplace_back("f_stat", iv.kp_f);
    return rows;
}

} // namespace foodsec
