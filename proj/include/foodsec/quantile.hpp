#pragma once

// Quantile regression and distributional-effect profiles: a weighted check
// loss solver (interior point on the linear-programming form, with exact
// closed forms for intercept-only and saturated two-value designs),
// within-individual demeaning, per-tau effect profiles, and per-bin first
// stages across the outcome distribution.

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
#include "foodsec/regress.hpp"
#include "foodsec/special.hpp"
#include "foodsec/stats.hpp"

namespace foodsec {

/// Weighted check loss sum w_i * rho_tau(r_i), rho_tau(u) = u*(tau - 1{u<0}).
inline double check_loss(double tau, const std::vector<double>& residuals,
                         const std::vector<double>& weights) {
    if (residuals.size() != weights.size()) throw DataError("check_loss: length mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < residuals.size(); ++i) {
        double r = residuals[i];
        total += weights[i] * r * (r >= 0.0 ? tau : tau - 1.0);
    }
    return total;
}

/// Hall-Sheather bandwidth on the probability scale for a tau-quantile fit
/// on n observations, at the 5 percent level.
inline double hall_sheather_bandwidth(double tau, std::size_t n) {
    if (!(tau > 0.0) || !(tau < 1.0)) throw DataError("bandwidth: tau outside (0,1)");
    if (n == 0) throw DataError("bandwidth: empty sample");
    const double z = norm_ppf(0.975);
    const double q = norm_ppf(tau);
    double dens = norm_pdf(q);
    double core = 1.5 * dens * dens / (2.0 * q * q + 1.0);
    return std::pow(static_cast<double>(n), -1.0 / 3.0) * std::pow(z, 2.0 / 3.0) *
           std::cbrt(core);
}

/// Subtracts the within-individual mean (over non-NaN rows) from each named
/// column. NaN entries stay NaN; an individual with no valid rows keeps NaN.
inline PanelDataset demean_within(const PanelDataset& panel,
                                  const std::vector<std::string>& columns) {
    PanelDataset out = panel;
    for (const auto& name : columns) {
        std::vector<double> vals = panel.col(name);
        for (auto [b, e] : panel.individual_runs()) {
            double sum = 0.0;
            std::size_t cnt = 0;
            for (std::size_t i = b; i < e; ++i) {
                if (std::isnan(vals[i])) continue;
                sum += vals[i];
                ++cnt;
            }
            if (cnt == 0) continue;
            double m = sum / static_cast<double>(cnt);
            for (std::size_t i = b; i < e; ++i) vals[i] -= m;
        }
        out.cols.set(name, std::move(vals));
    }
    return out;
}

struct QregSpec {
    std::string outcome;
    std::vector<std::string> regressors;
    double tau = 0.5;
    std::string weight_col;             // empty = unit weights
    std::string cluster = "individual"; // key dimension or numeric column
    std::string filter_col;
    double tol = 1e-9;
    int max_iter = 200;
};

namespace detail {

struct QregCore {
    Eigen::VectorXd coef;
    double gap = 0.0;
    int iterations = 0;
    double condition = std::numeric_limits<double>::quiet_NaN();
};

/// Frisch-Newton primal-dual interior point on the dual of the check-loss
/// problem: max ytil'a subject to Mtil'a = (1-tau) Mtil'1, a in [0,1]^n,
/// where ytil and Mtil carry the row weights (rho_tau is positively
/// homogeneous, so weighted rows fold into the data). The equality
/// multiplier is the coefficient vector.
inline QregCore qreg_interior_point(const std::vector<std::vector<double>>& xcols,
                                    const std::vector<double>& y,
                                    const std::vector<double>& w, double tau, double tol,
                                    int max_iter, const std::vector<std::string>& names) {
    const std::size_t n = y.size();
    const std::size_t k = xcols.size();

    // Rank check and warm start from the weighted least-squares solution.
    auto ols = wls_solve(xcols, y, w, names);

    Eigen::MatrixXd m(n, k);
    Eigen::VectorXd ytil(n);
    for (std::size_t i = 0; i < n; ++i) {
        ytil(static_cast<Eigen::Index>(i)) = w[i] * y[i];
        for (std::size_t j = 0; j < k; ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = w[i] * xcols[j][i];
    }
    Eigen::VectorXd colscale(k);
    for (std::size_t j = 0; j < k; ++j) {
        double s = m.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff();
        colscale(static_cast<Eigen::Index>(j)) = s > 0.0 ? s : 1.0;
    }
    for (std::size_t j = 0; j < k; ++j) m.col(static_cast<Eigen::Index>(j)) /= colscale(j);

    Eigen::VectorXd b = ols.coef.cwiseProduct(colscale);
    Eigen::VectorXd r = ytil - m * b;

    Eigen::ArrayXd a = Eigen::ArrayXd::Constant(n, 1.0 - tau);
    Eigen::ArrayXd s = Eigen::ArrayXd::Constant(n, tau);
    const double eps0 = 1e-5 * (1.0 + r.cwiseAbs().maxCoeff());
    Eigen::ArrayXd v = r.array().max(0.0) + eps0;
    Eigen::ArrayXd z = (-r.array()).max(0.0) + eps0;

    const double obj0 = 1.0 + std::abs(ytil.cwiseAbs().sum());
    const double tol_gap = tol * obj0;
    const double beta = 0.9995;

    double gap = (a * z).sum() + (s * v).sum();
    int iter = 0;
    auto step_len = [n](const Eigen::ArrayXd& val, const Eigen::ArrayXd& dir) {
        double alpha = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = dir(static_cast<Eigen::Index>(i));
            if (d < 0.0)
                alpha = std::min(alpha, -val(static_cast<Eigen::Index>(i)) / d);
        }
        return alpha;
    };

    while (gap > tol_gap && iter < max_iter) {
        ++iter;
        Eigen::ArrayXd q = 1.0 / (z / a + v / s);
        Eigen::VectorXd rvec = (z - v).matrix();

        Eigen::MatrixXd h = m.transpose() * q.matrix().asDiagonal() * m;
        Eigen::LDLT<Eigen::MatrixXd> hf(h);
        if (hf.info() != Eigen::Success)
            throw NumericError("quantile solver: Newton system is singular");

        // Affine predictor.
        Eigen::VectorXd db = hf.solve(m.transpose() * (q * rvec.array()).matrix());
        Eigen::ArrayXd da = q * (m * db - rvec).array();
        Eigen::ArrayXd dz = -z - (z / a) * da;
        Eigen::ArrayXd dv = -v + (v / s) * da;
        Eigen::ArrayXd ds = -da;
        double ap = std::min(1.0, beta * std::min(step_len(a, da), step_len(s, ds)));
        double ad = std::min(1.0, beta * std::min(step_len(z, dz), step_len(v, dv)));
        double gap_aff =
            ((a + ap * da) * (z + ad * dz)).sum() + ((s + ap * ds) * (v + ad * dv)).sum();
        double sigma = gap_aff / gap;
        sigma = std::min(1.0, std::max(0.0, sigma * sigma * sigma));
        double mu = sigma * gap / (2.0 * static_cast<double>(n));

        // Mehrotra corrector.
        Eigen::ArrayXd za = (mu - da * dz) / a;
        Eigen::ArrayXd vs = (mu - ds * dv) / s;
        Eigen::VectorXd rcorr = (rvec.array() - za + vs).matrix();
        Eigen::VectorXd db2 = hf.solve(m.transpose() * (q * rcorr.array()).matrix());
        Eigen::ArrayXd da2 = q * (m * db2 - rcorr).array();
        Eigen::ArrayXd dz2 = za - z - (z / a) * da2;
        Eigen::ArrayXd dv2 = vs - v + (v / s) * da2;
        Eigen::ArrayXd ds2 = -da2;

        ap = std::min(1.0, beta * std::min(step_len(a, da2), step_len(s, ds2)));
        ad = std::min(1.0, beta * std::min(step_len(z, dz2), step_len(v, dv2)));
        a += ap * da2;
        s += ap * ds2;
        z += ad * dz2;
        v += ad * dv2;
        b += ad * db2;
        gap = (a * z).sum() + (s * v).sum();
        if (!std::isfinite(gap))
            throw NumericError("quantile solver: iteration diverged");
    }
    if (gap > tol_gap)
        throw NumericError("quantile solver did not converge in " + std::to_string(max_iter) +
                           " iterations");

    QregCore out;
    out.coef = (b.array() / colscale.array()).matrix();
    out.gap = gap;
    out.iterations = iter;
    out.condition = ols.condition;
    return out;
}

} // namespace detail

/// Weighted quantile regression. An intercept is always included ahead of
/// the listed regressors. Intercept-only fits return the exact
/// left-continuous weighted quantile; a single two-valued regressor is
/// solved by exact per-group quantiles (the check loss separates, and ties
/// resolve to the lower endpoint); other designs use the interior-point
/// solver. Confidence bands use the Powell kernel sandwich with the
/// Hall-Sheather bandwidth, clustered per `spec.cluster`.
inline FitResult qreg_fit(const QregSpec& spec, const PanelDataset& panel) {
    if (!(spec.tau > 0.0) || !(spec.tau < 1.0))
        throw DataError("qreg: tau must lie strictly inside (0,1)");
    for (const auto& r : spec.regressors)
        if (r == spec.outcome)
            throw DataError("outcome '" + spec.outcome + "' cannot appear among regressors");

    auto rows = detail::complete_rows(panel, spec.outcome, spec.regressors, spec.weight_col,
                                      spec.filter_col);
    if (!spec.weight_col.empty()) {
        const auto& wc = panel.col(spec.weight_col);
        std::vector<std::size_t> kept;
        kept.reserve(rows.size());
        for (auto r : rows) {
            if (wc[r] < 0.0) throw DataError("qreg: negative weight");
            if (wc[r] > 0.0) kept.push_back(r);
        }
        rows = std::move(kept);
    }
    if (rows.size() < spec.regressors.size() + 2)
        throw DataError("too few usable rows (" + std::to_string(rows.size()) + ") for " +
                        std::to_string(spec.regressors.size() + 1) + " coefficients");
    const std::size_t n = rows.size();

    std::vector<double> y(n), w(n, 1.0);
    {
        const auto& yc = panel.col(spec.outcome);
        for (std::size_t i = 0; i < n; ++i) y[i] = yc[rows[i]];
    }
    if (!spec.weight_col.empty()) {
        const auto& wc = panel.col(spec.weight_col);
        for (std::size_t i = 0; i < n; ++i) w[i] = wc[rows[i]];
    }

    std::vector<std::string> names = {"(intercept)"};
    for (const auto& r : spec.regressors) names.push_back(r);
    std::vector<std::vector<double>> xcols;
    xcols.emplace_back(n, 1.0);
    for (const auto& name : spec.regressors) {
        const auto& c = panel.col(name);
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = c[rows[i]];
        xcols.push_back(std::move(col));
    }
    const std::size_t k = xcols.size();

    FitResult fit;
    fit.names = names;
    fit.sample_rows = rows;
    fit.n_obs = n;
    fit.coef.resize(static_cast<Eigen::Index>(k));
    bool closed_form = false;

    if (k == 1) {
        fit.coef(0) = weighted_quantile(y, w, spec.tau);
        closed_form = true;
    } else if (k == 2) {
        std::set<double> distinct(xcols[1].begin(), xcols[1].end());
        if (distinct.size() == 2) {
            double v0 = *distinct.begin();
            double v1 = *std::next(distinct.begin());
            std::vector<double> y0, w0, y1, w1;
            for (std::size_t i = 0; i < n; ++i) {
                if (xcols[1][i] == v0) {
                    y0.push_back(y[i]);
                    w0.push_back(w[i]);
                } else {
                    y1.push_back(y[i]);
                    w1.push_back(w[i]);
                }
            }
            double q0 = weighted_quantile(y0, w0, spec.tau);
            double q1 = weighted_quantile(y1, w1, spec.tau);
            double slope = (q1 - q0) / (v1 - v0);
            fit.coef(1) = slope;
            fit.coef(0) = q0 - slope * v0;
            closed_form = true;
        }
    }
    if (!closed_form) {
        auto core = detail::qreg_interior_point(xcols, y, w, spec.tau, spec.tol, spec.max_iter,
                                                names);
        fit.coef = core.coef;
        fit.diagnostics["duality_gap"] = core.gap;
        fit.diagnostics["iterations"] = static_cast<double>(core.iterations);
        fit.diagnostics["condition_number"] = core.condition;
    }
    fit.diagnostics["interior_point"] = closed_form ? 0.0 : 1.0;

    fit.residuals.resize(n);
    fit.fitted.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double pred = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            pred += fit.coef(static_cast<Eigen::Index>(j)) * xcols[j][i];
        fit.fitted[i] = pred;
        fit.residuals[i] = y[i] - pred;
    }
    fit.dof = static_cast<long long>(n) - static_cast<long long>(k);

    double loss = check_loss(spec.tau, fit.residuals, w);
    fit.diagnostics["objective"] = loss;
    {
        double q = weighted_quantile(y, w, spec.tau);
        std::vector<double> null_resid(n);
        for (std::size_t i = 0; i < n; ++i) null_resid[i] = y[i] - q;
        double loss0 = check_loss(spec.tau, null_resid, w);
        fit.r_squared = loss0 > 0.0 ? 1.0 - loss / loss0
                                    : std::numeric_limits<double>::quiet_NaN();
    }

    // Powell sandwich: uniform-kernel density bread on a residual-scale
    // window from the Hall-Sheather probability bandwidth.
    double h = hall_sheather_bandwidth(spec.tau, n);
    double lo = std::max(1e-4, spec.tau - h);
    double hi = std::min(1.0 - 1e-4, spec.tau + h);
    double delta = 0.5 * (weighted_quantile(fit.residuals, w, hi) -
                          weighted_quantile(fit.residuals, w, lo));
    double max_abs = 0.0;
    for (double r : fit.residuals) max_abs = std::max(max_abs, std::abs(r));
    delta = std::max(delta, 1e-8 * (1.0 + max_abs));

    Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                                  static_cast<Eigen::Index>(k));
    std::size_t in_window = 0;
    Eigen::VectorXd xi(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(fit.residuals[i]) > delta) continue;
        ++in_window;
        for (std::size_t j = 0; j < k; ++j) xi(static_cast<Eigen::Index>(j)) = xcols[j][i];
        bread.noalias() += (w[i] / (2.0 * delta)) * xi * xi.transpose();
    }
    auto labels = detail::cluster_labels(panel, spec.cluster, rows);
    std::map<long long, Eigen::VectorXd> scores;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = scores.find(labels[i]);
        if (it == scores.end())
            it = scores.emplace(labels[i], Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k)))
                     .first;
        double psi = spec.tau - (fit.residuals[i] < 0.0 ? 1.0 : 0.0);
        for (std::size_t j = 0; j < k; ++j) xi(static_cast<Eigen::Index>(j)) = xcols[j][i];
        it->second.noalias() += w[i] * psi * xi;
    }
    if (scores.size() < 2) throw DataError("qreg: fewer than 2 clusters");
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k),
                                                 static_cast<Eigen::Index>(k));
    for (const auto& kv : scores) meat.noalias() += kv.second * kv.second.transpose();
    Eigen::MatrixXd binv = bread.ldlt().solve(
        Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k)));
    Eigen::MatrixXd vc = binv * meat * binv;
    {
        double G = static_cast<double>(scores.size());
        double N = static_cast<double>(n);
        double K = static_cast<double>(k);
        double denom = N - K;
        if (denom <= 0.0) denom = 1.0;
        vc *= (G / (G - 1.0)) * ((N - 1.0) / denom);
    }
    fit.vcov = 0.5 * (vc + vc.transpose());
    fit.diagnostics["bandwidth"] = delta;
    fit.diagnostics["kernel_rows"] = static_cast<double>(in_window);
    fit.diagnostics["n_clusters"] = static_cast<double>(scores.size());
    return fit;
}

/// Per-tau effect profile with pointwise 95 percent bands.
struct QuantileProfile {
    std::vector<double> taus;
    std::vector<double> estimates;
    std::vector<double> ses;
    std::vector<double> ci_low;
    std::vector<double> ci_high;
    std::size_t n_obs = 0;
};

inline std::vector<double> default_tau_grid() {
    std::vector<double> taus;
    for (int i = 1; i <= 9; ++i) taus.push_back(static_cast<double>(i) / 10.0);
    return taus;
}

/// Quantile regression of the outcome on a treatment column plus controls,
/// after within-individual demeaning of outcome, treatment, and controls,
/// one fit per tau. The tracked coefficient is the treatment's.
inline QuantileProfile quantile_effect_profile(const std::string& outcome,
                                               const std::string& participation,
                                               const std::vector<std::string>& controls,
                                               const std::vector<double>& tau_grid,
                                               const PanelDataset& panel,
                                               const std::string& weight_col = "",
                                               const std::string& cluster = "individual") {
    if (tau_grid.empty()) throw DataError("quantile profile: empty tau grid");
    for (std::size_t i = 0; i < tau_grid.size(); ++i) {
        if (!(tau_grid[i] > 0.0) || !(tau_grid[i] < 1.0))
            throw DataError("quantile profile: tau outside (0,1)");
        if (i > 0 && !(tau_grid[i] > tau_grid[i - 1]))
            throw DataError("quantile profile: taus must be strictly increasing");
    }
    std::vector<std::string> demean_cols = {outcome, participation};
    demean_cols.insert(demean_cols.end(), controls.begin(), controls.end());
    PanelDataset demeaned = demean_within(panel, demean_cols);

    QuantileProfile profile;
    const double zcrit = norm_ppf(0.975);
    for (double tau : tau_grid) {
        QregSpec spec;
        spec.outcome = outcome;
        spec.regressors = {participation};
        spec.regressors.insert(spec.regressors.end(), controls.begin(), controls.end());
        spec.tau = tau;
        spec.weight_col = weight_col;
        spec.cluster = cluster;
        auto fit = qreg_fit(spec, demeaned);
        double est = fit.coef_of(participation);
        double se = fit.se_of(participation);
        profile.taus.push_back(tau);
        profile.estimates.push_back(est);
        profile.ses.push_back(se);
        profile.ci_low.push_back(est - zcrit * se);
        profile.ci_high.push_back(est + zcrit * se);
        profile.n_obs = fit.n_obs;
    }
    return profile;
}

inline void write_profile_csv(const std::filesystem::path& path,
                              const QuantileProfile& profile) {
    CsvTable t;
    t.header = {"tau", "estimate", "se", "ci_low", "ci_high"};
    for (std::size_t i = 0; i < profile.taus.size(); ++i)
        t.rows.push_back({format_double(profile.taus[i]), format_double(profile.estimates[i]),
                          format_double(profile.ses[i]), format_double(profile.ci_low[i]),
                          format_double(profile.ci_high[i])});
    write_csv(path, t);
}

/// Per-bin first-stage slopes: the treatment regressed on the instrument
/// interacted with quantile-bin indicators of a ranking column, bins fully
/// saturated (bin intercepts included), so each slope matches the
/// within-bin regression.
struct BinFirstStage {
    std::vector<double> cutpoints;   // n_bins - 1 interior quantile cuts
    std::vector<double> coef;        // instrument slope per bin
    std::vector<double> se;
    std::vector<std::size_t> counts; // rows per bin
    FitResult fit;
};

inline BinFirstStage pfs_bin_first_stage(const PanelDataset& panel, const std::string& spi_col,
                                         const std::string& ranking_col, int n_bins,
                                         const std::string& participation_col = "snap",
                                         const std::string& weight_col = "",
                                         const std::string& cluster = "individual") {
    if (n_bins < 2) throw DataError("bin first stage: need at least 2 bins");
    std::vector<std::string> needed = {spi_col, ranking_col};
    auto rows = detail::complete_rows(panel, participation_col, needed, weight_col, "");
    if (rows.empty()) throw DataError("bin first stage: no usable rows");

    std::vector<double> rank_vals, rank_w;
    rank_vals.reserve(rows.size());
    const auto& rank_col = panel.col(ranking_col);
    for (auto r : rows) rank_vals.push_back(rank_col[r]);
    if (weight_col.empty()) {
        rank_w.assign(rows.size(), 1.0);
    } else {
        const auto& wc = panel.col(weight_col);
        for (auto r : rows) rank_w.push_back(wc[r]);
    }

    std::vector<double> cuts;
    for (int j = 1; j < n_bins; ++j)
        cuts.push_back(weighted_quantile(rank_vals, rank_w,
                                         static_cast<double>(j) / static_cast<double>(n_bins)));

    auto bin_of = [&cuts](double v) {
        int b = 0;
        for (double c : cuts)
            if (v >= c) ++b;
        return b;
    };

    const std::size_t n_all = panel.n_rows();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> bin_ind(static_cast<std::size_t>(n_bins),
                                             std::vector<double>(n_all, nan));
    std::vector<std::vector<double>> spi_bin(static_cast<std::size_t>(n_bins),
                                             std::vector<double>(n_all, nan));
    std::vector<std::size_t> counts(static_cast<std::size_t>(n_bins), 0);
    const auto& spi_vals = panel.col(spi_col);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        auto r = rows[i];
        int b = bin_of(rank_vals[i]);
        ++counts[static_cast<std::size_t>(b)];
        for (int j = 0; j < n_bins; ++j) {
            double ind = j == b ? 1.0 : 0.0;
            bin_ind[static_cast<std::size_t>(j)][r] = ind;
            spi_bin[static_cast<std::size_t>(j)][r] = ind * spi_vals[r];
        }
    }
    for (int j = 0; j < n_bins; ++j)
        if (counts[static_cast<std::size_t>(j)] == 0)
            throw DataError("bin first stage: bin " + std::to_string(j) + " is empty");

    PanelDataset work = panel;
    std::vector<std::string> regressors;
    for (int j = 0; j < n_bins; ++j) {
        std::string name = "__spi_bin_" + std::to_string(j);
        work.cols.set(name, spi_bin[static_cast<std::size_t>(j)]);
        regressors.push_back(name);
    }
    for (int j = 1; j < n_bins; ++j) {
        std::string name = "__bin_" + std::to_string(j);
        work.cols.set(name, bin_ind[static_cast<std::size_t>(j)]);
        regressors.push_back(name);
    }

    ModelSpec spec;
    spec.outcome = participation_col;
    spec.regressors = regressors;
    spec.weight_col = weight_col;
    spec.cluster = cluster;
    auto fit = wls_fit(spec, work);

    BinFirstStage out;
    out.cutpoints = cuts;
    out.counts = counts;
    for (int j = 0; j < n_bins; ++j) {
        std::string name = "__spi_bin_" + std::to_string(j);
        out.coef.push_back(fit.coef_of(name));
        out.se.push_back(fit.se_of(name));
    }
    out.fit = std::move(fit);
    return out;
}

} // namespace foodsec
