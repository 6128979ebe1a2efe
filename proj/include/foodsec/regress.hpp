#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "foodsec/dataset.hpp"
#include "foodsec/error.hpp"

namespace foodsec {

/// Declarative description of one linear fit.
struct ModelSpec {
    std::string outcome;
    std::vector<std::string> regressors;
    std::vector<std::string> fe_dims;   // subset of {individual, state, year}
    std::string weight_col;             // empty = unit weights
    std::string cluster = "individual"; // key dimension or numeric column
    bool mundlak = false;
    std::string filter_col; // keep rows where this column is nonzero
};

struct FitResult {
    std::vector<std::string> names;
    Eigen::VectorXd coef;
    Eigen::MatrixXd vcov;
    std::vector<double> residuals;          // aligned with sample_rows
    std::vector<double> fitted;             // aligned with sample_rows
    std::vector<std::size_t> sample_rows;   // panel rows used in the fit
    std::size_t n_obs = 0;
    double r_squared = std::numeric_limits<double>::quiet_NaN();
    long long dof = 0;
    std::map<std::string, double> diagnostics;

    std::ptrdiff_t index_of(const std::string& name) const {
        for (std::size_t j = 0; j < names.size(); ++j)
            if (names[j] == name) return static_cast<std::ptrdiff_t>(j);
        return -1;
    }
    double coef_of(const std::string& name) const {
        auto j = index_of(name);
        if (j < 0) throw DataError("no coefficient named '" + name + "'");
        return coef(j);
    }
    double se_of(const std::string& name) const {
        auto j = index_of(name);
        if (j < 0) throw DataError("no coefficient named '" + name + "'");
        return std::sqrt(vcov(j, j));
    }
};

namespace detail {

/// Dense group ids for one categorical key column.
struct GroupIndex {
    std::vector<int> group_of_row;
    int n_groups = 0;
};

inline GroupIndex make_group_index(const std::vector<long long>& keys,
                                   const std::vector<std::size_t>& rows) {
    GroupIndex g;
    g.group_of_row.resize(rows.size());
    std::map<long long, int> ids;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto [it, inserted] = ids.emplace(keys[rows[r]], g.n_groups);
        if (inserted) ++g.n_groups;
        g.group_of_row[r] = it->second;
    }
    return g;
}

inline constexpr double kAbsorbTol = 1e-10;
inline constexpr int kAbsorbMaxSweeps = 10'000;
inline constexpr double kAbsorbMeanTol = 1e-8;
inline constexpr double kRankTol = 1e-10;

/// Weighted demeaning by alternating projections across FE dimensions.
/// Columns are demeaned on an internal unit max-abs scale, so tolerances
/// are relative to each column's magnitude. Throws when the sweep cap is
/// reached before group means vanish.
inline int absorb_columns(std::vector<std::vector<double>>& cols,
                          const std::vector<GroupIndex>& dims, const std::vector<double>& w) {
    if (dims.empty() || cols.empty()) return 0;
    const std::size_t n = w.size();
    std::vector<double> scale(cols.size(), 1.0);
    for (std::size_t c = 0; c < cols.size(); ++c) {
        double m = 0.0;
        for (double v : cols[c]) m = std::max(m, std::fabs(v));
        scale[c] = m > 0.0 ? m : 1.0;
        for (auto& v : cols[c]) v /= scale[c];
    }
    std::vector<std::vector<double>> gw(dims.size());
    for (std::size_t d = 0; d < dims.size(); ++d) {
        gw[d].assign(dims[d].n_groups, 0.0);
        for (std::size_t i = 0; i < n; ++i) gw[d][dims[d].group_of_row[i]] += w[i];
    }
    int sweeps = 0;
    double change = std::numeric_limits<double>::infinity();
    std::vector<double> means;
    while (change >= kAbsorbTol && sweeps < kAbsorbMaxSweeps) {
        change = 0.0;
        for (std::size_t d = 0; d < dims.size(); ++d) {
            const auto& gidx = dims[d].group_of_row;
            for (auto& col : cols) {
                means.assign(dims[d].n_groups, 0.0);
                for (std::size_t i = 0; i < n; ++i) means[gidx[i]] += w[i] * col[i];
                for (int g = 0; g < dims[d].n_groups; ++g)
                    means[g] = gw[d][g] > 0.0 ? means[g] / gw[d][g] : 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    col[i] -= means[gidx[i]];
                    change = std::max(change, std::fabs(means[gidx[i]]));
                }
            }
        }
        ++sweeps;
        if (dims.size() == 1) break; // single projection is exact
    }
    double worst = 0.0;
    for (std::size_t d = 0; d < dims.size(); ++d) {
        const auto& gidx = dims[d].group_of_row;
        for (auto& col : cols) {
            means.assign(dims[d].n_groups, 0.0);
            for (std::size_t i = 0; i < n; ++i) means[gidx[i]] += w[i] * col[i];
            for (int g = 0; g < dims[d].n_groups; ++g)
                if (gw[d][g] > 0.0) worst = std::max(worst, std::fabs(means[g] / gw[d][g]));
        }
    }
    if (worst > kAbsorbMeanTol)
        throw NumericError("fixed-effect absorption did not converge in " +
                           std::to_string(sweeps) + " sweeps; max residual group mean " +
                           format_double(worst));
    for (std::size_t c = 0; c < cols.size(); ++c)
        for (auto& v : cols[c]) v *= scale[c];
    return sweeps;
}

/// Rows whose group is a singleton in any FE dimension, removed iteratively
/// until every remaining group has at least two rows. Returns kept rows.
inline std::vector<std::size_t> drop_singletons(const PanelDataset& panel,
                                                const std::vector<std::string>& fe_dims,
                                                std::vector<std::size_t> rows,
                                                std::size_t* n_dropped) {
    if (n_dropped) *n_dropped = 0;
    if (fe_dims.empty()) return rows;
    bool again = true;
    while (again && !rows.empty()) {
        again = false;
        for (const auto& dim : fe_dims) {
            const auto& keys = panel.key(dim);
            std::map<long long, int> count;
            for (auto r : rows) ++count[keys[r]];
            std::vector<std::size_t> kept;
            kept.reserve(rows.size());
            for (auto r : rows) {
                if (count[keys[r]] > 1) {
                    kept.push_back(r);
                } else {
                    if (n_dropped) ++(*n_dropped);
                    again = true;
                }
            }
            rows = std::move(kept);
        }
    }
    return rows;
}

inline std::vector<long long> cluster_labels(const PanelDataset& panel,
                                             const std::string& cluster,
                                             const std::vector<std::size_t>& rows) {
    std::vector<long long> labels(rows.size());
    if (cluster == "individual" || cluster == "state" || cluster == "year") {
        const auto& keys = panel.key(cluster);
        for (std::size_t r = 0; r < rows.size(); ++r) labels[r] = keys[rows[r]];
        return labels;
    }
    if (cluster == "observation") {
        for (std::size_t r = 0; r < rows.size(); ++r)
            labels[r] = static_cast<long long>(rows[r]);
        return labels;
    }
    const auto& col = panel.col(cluster);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        double v = col[rows[r]];
        if (std::isnan(v)) throw DataError("missing cluster label in '" + cluster + "'");
        labels[r] = static_cast<long long>(std::llround(v));
    }
    return labels;
}

} // namespace detail

/// Weighted within-group demeaning of a set of columns across one or more
/// categorical dimensions. Returned columns have group weighted means of at
/// most 1e-8 relative to each column's magnitude.
inline std::vector<std::vector<double>> absorb_fe(
    const std::vector<std::vector<double>>& columns,
    const std::vector<std::vector<long long>>& fe_keys, const std::vector<double>& weights) {
    if (columns.empty()) return {};
    const std::size_t n = columns.front().size();
    for (const auto& c : columns)
        if (c.size() != n) throw DataError("absorb_fe: column length mismatch");
    if (weights.size() != n) throw DataError("absorb_fe: weight length mismatch");
    for (double w : weights)
        if (std::isnan(w) || w < 0.0) throw DataError("absorb_fe: weights must be nonnegative");
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    std::vector<detail::GroupIndex> dims;
    for (const auto& keys : fe_keys) {
        if (keys.size() != n) throw DataError("absorb_fe: key length mismatch");
        dims.push_back(detail::make_group_index(keys, rows));
    }
    auto cols = columns;
    detail::absorb_columns(cols, dims, weights);
    return cols;
}

/// Cluster-robust sandwich covariance for a weighted least-squares fit.
/// X holds the (absorbed) regressor values, residuals and weights are
/// per-row, and s_g sums w_i * e_i * x_i within each cluster. With
/// dof_adjust the result is scaled by G/(G-1) * (N-1)/(N-K); n_params
/// overrides K when the model has absorbed parameters beyond X's columns.
inline Eigen::MatrixXd cluster_vcov(const Eigen::MatrixXd& X, const std::vector<double>& residuals,
                                    const std::vector<double>& weights,
                                    const std::vector<long long>& cluster, bool dof_adjust,
                                    std::size_t n_params = 0) {
    const std::size_t n = residuals.size();
    if (static_cast<std::size_t>(X.rows()) != n || weights.size() != n || cluster.size() != n)
        throw DataError("cluster_vcov: dimension mismatch");
    const std::size_t k = static_cast<std::size_t>(X.cols());
    if (n_params == 0) n_params = k;

    Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < n; ++i)
        xtwx.noalias() += weights[i] * X.row(i).transpose() * X.row(i);
    Eigen::MatrixXd bread = xtwx.ldlt().solve(Eigen::MatrixXd::Identity(k, k));

    std::map<long long, Eigen::VectorXd> scores;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = scores.find(cluster[i]);
        if (it == scores.end()) it = scores.emplace(cluster[i], Eigen::VectorXd::Zero(k)).first;
        it->second.noalias() += weights[i] * residuals[i] * X.row(i).transpose();
    }
    if (scores.size() < 2) throw DataError("cluster_vcov: fewer than 2 clusters");
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (const auto& kv : scores) meat.noalias() += kv.second * kv.second.transpose();

    Eigen::MatrixXd v = bread * meat * bread;
    if (dof_adjust) {
        double G = static_cast<double>(scores.size());
        double N = static_cast<double>(n);
        double K = static_cast<double>(n_params);
        double denom = N - K;
        if (denom <= 0.0) denom = 1.0;
        v *= (G / (G - 1.0)) * ((N - 1.0) / denom);
    }
    return 0.5 * (v + v.transpose());
}

/// Appends, for each named column, its within-individual unweighted time
/// mean as `<column>_imean`, constant across an individual's waves.
inline PanelDataset mundlak_augment(const PanelDataset& panel,
                                    const std::vector<std::string>& columns) {
    PanelDataset out = panel;
    for (const auto& name : columns) {
        const auto& src = panel.col(name);
        std::vector<double> means(panel.n_rows(), std::numeric_limits<double>::quiet_NaN());
        for (auto [b, e] : panel.individual_runs()) {
            double sum = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = b; i < e; ++i) {
                if (std::isnan(src[i])) continue;
                sum += src[i];
                ++cnt;
            }
            double m = cnt ? sum / static_cast<double>(cnt)
                           : std::numeric_limits<double>::quiet_NaN();
            for (std::size_t i = b; i < e; ++i) means[i] = m;
        }
        out.cols.set(name + "_imean", std::move(means));
    }
    return out;
}

namespace detail {

/// Shared WLS solve on prepared (possibly absorbed) data. Columns arrive on
/// the original scale; the solver scales internally for conditioning.
struct WlsCore {
    Eigen::VectorXd coef;
    Eigen::MatrixXd xtwx_inv;
    std::vector<double> residuals;
    double condition = std::numeric_limits<double>::quiet_NaN();
    std::size_t rank = 0;
};

inline WlsCore wls_solve(const std::vector<std::vector<double>>& xcols,
                         const std::vector<double>& y, const std::vector<double>& w,
                         const std::vector<std::string>& names) {
    const std::size_t n = y.size();
    const std::size_t k = xcols.size();
    Eigen::MatrixXd B(n, k);
    Eigen::VectorXd Y(n);
    std::vector<double> colscale(k, 1.0);
    for (std::size_t j = 0; j < k; ++j) {
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m = std::max(m, std::fabs(xcols[j][i]));
        colscale[j] = m > 0.0 ? m : 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
        double sw = std::sqrt(w[i]);
        Y(i) = y[i] * sw;
        for (std::size_t j = 0; j < k; ++j) B(i, j) = xcols[j][i] / colscale[j] * sw;
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
    qr.setThreshold(kRankTol);
    WlsCore out;
    out.rank = static_cast<std::size_t>(qr.rank());
    if (out.rank < k) {
        auto perm = qr.colsPermutation().indices();
        std::string dropped;
        for (std::size_t j = out.rank; j < k; ++j) {
            if (!dropped.empty()) dropped += ", ";
            dropped += names[static_cast<std::size_t>(perm(static_cast<Eigen::Index>(j)))];
        }
        throw NumericError("design matrix is rank deficient; collinear columns: " + dropped);
    }
    Eigen::VectorXd beta_scaled = qr.solve(Y);
    {
        Eigen::MatrixXd R = qr.matrixR()
                                .topLeftCorner(static_cast<Eigen::Index>(k),
                                               static_cast<Eigen::Index>(k))
                                .triangularView<Eigen::Upper>();
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
        double smin = svd.singularValues().minCoeff();
        double smax = svd.singularValues().maxCoeff();
        out.condition = smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity();
    }
    out.coef.resize(k);
    for (std::size_t j = 0; j < k; ++j) out.coef(j) = beta_scaled(j) / colscale[j];
    out.residuals.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0.0;
        for (std::size_t j = 0; j < k; ++j) fit += xcols[j][i] * out.coef(j);
        out.residuals[i] = y[i] - fit;
    }
    Eigen::MatrixXd xtwx = Eigen::MatrixXd::Zero(k, k);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::VectorXd xi(k);
        for (std::size_t j = 0; j < k; ++j) xi(j) = xcols[j][i];
        xtwx.noalias() += w[i] * xi * xi.transpose();
    }
    out.xtwx_inv = xtwx.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
    return out;
}

/// Sample rows with finite outcome, regressors, and positive weight.
inline std::vector<std::size_t> complete_rows(const PanelDataset& panel,
                                              const std::string& outcome,
                                              const std::vector<std::string>& regressors,
                                              const std::string& weight_col,
                                              const std::string& filter_col) {
    std::vector<const std::vector<double>*> needed;
    if (!outcome.empty()) needed.push_back(&panel.col(outcome));
    for (const auto& r : regressors) needed.push_back(&panel.col(r));
    const std::vector<double>* w = weight_col.empty() ? nullptr : &panel.col(weight_col);
    const std::vector<double>* f = filter_col.empty() ? nullptr : &panel.col(filter_col);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < panel.n_rows(); ++i) {
        bool ok = true;
        for (auto* c : needed)
            if (std::isnan((*c)[i])) ok = false;
        if (w && (std::isnan((*w)[i]) || (*w)[i] <= 0.0)) ok = false;
        if (f && (std::isnan((*f)[i]) || (*f)[i] == 0.0)) ok = false;
        if (ok) rows.push_back(i);
    }
    return rows;
}

/// Count of absorbed parameters: full levels for the first dimension, one
/// redundancy removed for each additional dimension (exact when the FE
/// graph is connected).
inline long long fe_param_count(const PanelDataset& panel,
                                const std::vector<std::string>& fe_dims,
                                const std::vector<std::size_t>& rows) {
    long long total = 0;
    bool first = true;
    for (const auto& dim : fe_dims) {
        auto g = make_group_index(panel.key(dim), rows);
        total += g.n_groups - (first ? 0 : 1);
        first = false;
    }
    return total;
}

} // namespace detail

/// Weighted least squares with fixed-effect absorption, Mundlak
/// augmentation, and cluster-robust covariance.
inline FitResult wls_fit(const ModelSpec& spec, const PanelDataset& panel) {
    for (const auto& r : spec.regressors)
        if (r == spec.outcome)
            throw DataError("outcome '" + spec.outcome + "' cannot appear among regressors");
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
    std::vector<std::string> regressors = spec.regressors;
    if (spec.mundlak) {
        augmented = mundlak_augment(panel, spec.regressors);
        data = &augmented;
        for (const auto& r : spec.regressors) regressors.push_back(r + "_imean");
    }

    auto rows = detail::complete_rows(*data, spec.outcome, regressors, spec.weight_col,
                                      spec.filter_col);
    std::size_t singletons = 0;
    rows = detail::drop_singletons(*data, spec.fe_dims, std::move(rows), &singletons);
    if (rows.size() < regressors.size() + 1)
        throw DataError("too few usable rows (" + std::to_string(rows.size()) + ") for " +
                        std::to_string(regressors.size()) + " regressors");

    const std::size_t n = rows.size();
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
        const auto& yc = data->col(spec.outcome);
        for (std::size_t i = 0; i < n; ++i) y[i] = yc[rows[i]];
    }
    std::vector<std::string> names = regressors;
    std::vector<std::vector<double>> xcols(names.size(), std::vector<double>(n));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto& c = data->col(names[j]);
        for (std::size_t i = 0; i < n; ++i) xcols[j][i] = c[rows[i]];
    }

    const bool has_fe = !spec.fe_dims.empty();
    int sweeps = 0;
    std::vector<double> y_abs = y;
    if (has_fe) {
        std::vector<detail::GroupIndex> dims;
        for (const auto& d : spec.fe_dims)
            dims.push_back(detail::make_group_index(data->key(d), rows));
        std::vector<std::vector<double>> all;
        all.reserve(xcols.size() + 1);
        all.push_back(std::move(y_abs));
        for (auto& c : xcols) all.push_back(std::move(c));
        sweeps = detail::absorb_columns(all, dims, w);
        y_abs = std::move(all.front());
        for (std::size_t j = 0; j < xcols.size(); ++j) xcols[j] = std::move(all[j + 1]);
    } else {
        names.insert(names.begin(), "(intercept)");
        xcols.insert(xcols.begin(), std::vector<double>(n, 1.0));
    }

    auto core = detail::wls_solve(xcols, y_abs, w, names);

    FitResult fit;
    fit.names = std::move(names);
    fit.coef = core.coef;
    fit.sample_rows = rows;
    fit.n_obs = n;
    fit.residuals = core.residuals;
    fit.fitted.resize(n);
    for (std::size_t i = 0; i < n; ++i) fit.fitted[i] = y[i] - core.residuals[i];

    long long fe_params = has_fe ? detail::fe_param_count(panel, spec.fe_dims, rows) : 0;
    long long k_total = static_cast<long long>(core.rank) + fe_params;
    fit.dof = static_cast<long long>(n) - k_total;

    double ss_res = 0.0, ss_tot = 0.0;
    {
        double ymean = 0.0;
        if (!has_fe) {
            double sw = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                ymean += w[i] * y_abs[i];
                sw += w[i];
            }
            ymean /= sw;
        }
        for (std::size_t i = 0; i < n; ++i) {
            ss_res += w[i] * core.residuals[i] * core.residuals[i];
            double d = y_abs[i] - ymean;
            ss_tot += w[i] * d * d;
        }
    }
    fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot
                                 : std::numeric_limits<double>::quiet_NaN();

    Eigen::MatrixXd X(n, xcols.size());
    for (std::size_t j = 0; j < xcols.size(); ++j)
        for (std::size_t i = 0; i < n; ++i) X(i, j) = xcols[j][i];
    auto labels = detail::cluster_labels(*data, spec.cluster, rows);
    fit.vcov = cluster_vcov(X, core.residuals, w, labels, true,
                            static_cast<std::size_t>(k_total));

    std::set<long long> distinct(labels.begin(), labels.end());
    fit.diagnostics["n_clusters"] = static_cast<double>(distinct.size());
    fit.diagnostics["condition_number"] = core.condition;
    fit.diagnostics["singletons_dropped"] = static_cast<double>(singletons);
    fit.diagnostics["absorb_sweeps"] = static_cast<double>(sweeps);
    fit.diagnostics["fe_params"] = static_cast<double>(fe_params);
    return fit;
}

} // namespace foodsec
