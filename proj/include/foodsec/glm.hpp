#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "foodsec/regress.hpp"

namespace foodsec {

enum class Family { poisson, logit };

struct GlmSpec : ModelSpec {
    Family family = Family::poisson;
    int max_iter = 100;
    double tol = 1e-8;
};

namespace detail {

inline constexpr double kLogitClamp = 1e-10;
inline constexpr double kSeparationEta = 30.0;

inline double glm_mu(Family f, double eta) {
    if (f == Family::poisson) return std::exp(eta);
    if (eta >= 0.0) {
        double e = std::exp(-eta);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(eta);
    return e / (1.0 + e);
}

inline double glm_mu_prime(Family f, double mu) {
    if (f == Family::poisson) return mu;
    return mu * (1.0 - mu);
}

inline double glm_deviance(Family f, const std::vector<double>& y, const std::vector<double>& mu,
                           const std::vector<double>& w) {
    double d = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (f == Family::poisson) {
            double term = -(y[i] - mu[i]);
            if (y[i] > 0.0) term += y[i] * std::log(y[i] / mu[i]);
            d += 2.0 * w[i] * term;
        } else {
            double m = std::clamp(mu[i], kLogitClamp, 1.0 - kLogitClamp);
            d -= 2.0 * w[i] * (y[i] * std::log(m) + (1.0 - y[i]) * std::log1p(-m));
        }
    }
    return d;
}

} // namespace detail

namespace detail {

struct GlmInternal {
    FitResult fit;
    std::vector<double> mu; // aligned with fit.sample_rows
};

/// IRLS with fixed-effect absorption re-applied to the working regression
/// at every step. Convergence is declared when the absorbed score
/// max_k |sum_i w_i x~_ik (y_i - mu_i)| falls below tol times that
/// coordinate's natural scale 1 + sum_i w_i |x~_ik| |y_i|; one extra
/// Newton step then polishes the solution.
inline GlmInternal glm_irls(const GlmSpec& spec, const PanelDataset& panel) {
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
    if (spec.max_iter < 1) throw DataError("max_iter must be at least 1");
    if (!(spec.tol > 0.0)) throw DataError("tol must be positive");

    const PanelDataset* data = &panel;
    PanelDataset augmented;
    std::vector<std::string> regressors = spec.regressors;
    if (spec.mundlak) {
        augmented = mundlak_augment(panel, spec.regressors);
        data = &augmented;
        for (const auto& r : spec.regressors) regressors.push_back(r + "_imean");
    }

    auto rows = complete_rows(*data, spec.outcome, regressors, spec.weight_col, spec.filter_col);

    // Outcome domain checks happen before any dropping so errors name the
    // underlying data problem, not its knock-on effects.
    {
        const auto& yc = data->col(spec.outcome);
        for (auto r : rows) {
            if (spec.family == Family::poisson && yc[r] < 0.0)
                throw DataError("poisson outcome must be nonnegative");
            if (spec.family == Family::logit && yc[r] != 0.0 && yc[r] != 1.0)
                throw DataError("logit outcome must be 0 or 1");
        }
    }

    std::size_t const_outcome_dropped = 0;
    if (spec.family == Family::logit && absorbs_individual) {
        const auto& yc = data->col(spec.outcome);
        std::map<long long, std::pair<bool, bool>> seen; // has 0, has 1
        for (auto r : rows) {
            auto& s = seen[data->individual_id[r]];
            (yc[r] == 0.0 ? s.first : s.second) = true;
        }
        std::vector<std::size_t> kept;
        std::set<long long> dropped_ids;
        for (auto r : rows) {
            const auto& s = seen[data->individual_id[r]];
            if (s.first && s.second) kept.push_back(r);
            else dropped_ids.insert(data->individual_id[r]);
        }
        const_outcome_dropped = dropped_ids.size();
        rows = std::move(kept);
    }

    std::size_t singletons = 0;
    rows = drop_singletons(*data, spec.fe_dims, std::move(rows), &singletons);
    if (rows.size() < regressors.size() + 1)
        throw DataError("too few usable rows (" + std::to_string(rows.size()) + ") for " +
                        std::to_string(regressors.size()) + " regressors");

    const std::size_t n = rows.size();
    std::vector<double> w(n, 1.0);
    if (!spec.weight_col.empty()) {
        const auto& wc = data->col(spec.weight_col);
        for (std::size_t i = 0; i < n; ++i) w[i] = wc[rows[i]];
    }
    std::vector<double> y(n);
    {
        const auto& yc = data->col(spec.outcome);
        for (std::size_t i = 0; i < n; ++i) y[i] = yc[rows[i]];
    }

    double wsum = 0.0, wysum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        wsum += w[i];
        wysum += w[i] * y[i];
    }
    if (wsum <= 0.0) throw DataError("zero total weight");
    double ybar = wysum / wsum;
    if (spec.family == Family::poisson && ybar <= 0.0)
        throw DataError("poisson outcome is zero everywhere");

    // Constant regressors carry no signal beyond the intercept or absorbed
    // effects; dropping them keeps degenerate panels fittable.
    std::size_t constant_dropped = 0;
    {
        std::vector<std::string> kept;
        for (const auto& name : regressors) {
            const auto& c = data->col(name);
            double lo = c[rows[0]], hi = c[rows[0]];
            for (auto r : rows) {
                lo = std::min(lo, c[r]);
                hi = std::max(hi, c[r]);
            }
            if (hi - lo <= 1e-12 * (1.0 + std::fabs(lo) + std::fabs(hi))) ++constant_dropped;
            else kept.push_back(name);
        }
        regressors = std::move(kept);
    }

    std::vector<std::string> names = regressors;
    std::vector<std::vector<double>> xraw(names.size(), std::vector<double>(n));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto& c = data->col(names[j]);
        for (std::size_t i = 0; i < n; ++i) xraw[j][i] = c[rows[i]];
    }
    const bool has_fe = !spec.fe_dims.empty();
    std::vector<GroupIndex> dims;
    if (has_fe)
        for (const auto& d : spec.fe_dims) dims.push_back(make_group_index(data->key(d), rows));
    if (!has_fe) {
        names.insert(names.begin(), "(intercept)");
        xraw.insert(xraw.begin(), std::vector<double>(n, 1.0));
    }
    const std::size_t k = names.size();

    std::vector<double> eta(n);
    {
        double eta0;
        if (spec.family == Family::poisson) {
            eta0 = std::log(ybar + 1e-8);
        } else {
            double p0 = std::clamp(ybar, 1e-6, 1.0 - 1e-6);
            eta0 = std::log(p0 / (1.0 - p0));
        }
        std::fill(eta.begin(), eta.end(), eta0);
    }

    std::vector<double> mu(n), ww(n), z(n);
    auto update_mu = [&](const std::vector<double>& e) {
        for (std::size_t i = 0; i < n; ++i) mu[i] = glm_mu(spec.family, e[i]);
    };
    update_mu(eta);
    double deviance = glm_deviance(spec.family, y, mu, w);
    const double deviance_initial = deviance;
    double max_increase = 0.0;

    WlsCore core;
    std::vector<std::vector<double>> xabs;
    bool converged = false;
    int iter = 0;
    int polish_left = 1;
    for (; iter < spec.max_iter; ++iter) {
        for (std::size_t i = 0; i < n; ++i) {
            double mp = glm_mu_prime(spec.family,
                                     spec.family == Family::logit
                                         ? std::clamp(mu[i], kLogitClamp, 1.0 - kLogitClamp)
                                         : mu[i]);
            ww[i] = w[i] * mp;
            z[i] = eta[i] + (y[i] - mu[i]) / mp;
        }
        std::vector<double> zt = z;
        xabs = xraw;
        if (has_fe) {
            std::vector<std::vector<double>> all;
            all.reserve(k + 1);
            all.push_back(std::move(zt));
            for (auto& c : xabs) all.push_back(std::move(c));
            absorb_columns(all, dims, ww);
            zt = std::move(all.front());
            for (std::size_t j = 0; j < k; ++j) xabs[j] = std::move(all[j + 1]);
        }
        if (k > 0) {
            core = wls_solve(xabs, zt, ww, names);
        } else {
            core = WlsCore{};
            core.coef = Eigen::VectorXd(0);
            core.condition = 1.0;
        }

        std::vector<double> eta_new(n);
        for (std::size_t i = 0; i < n; ++i) {
            double xb = 0.0;
            for (std::size_t j = 0; j < k; ++j) xb += xabs[j][i] * core.coef(j);
            eta_new[i] = has_fe ? xb + (z[i] - zt[i]) : xb;
        }

        // Step-halving keeps the deviance monotone.
        std::vector<double> mu_new(n);
        double dev_new;
        int halvings = 0;
        for (;;) {
            for (std::size_t i = 0; i < n; ++i) mu_new[i] = glm_mu(spec.family, eta_new[i]);
            dev_new = glm_deviance(spec.family, y, mu_new, w);
            if (dev_new <= deviance * (1.0 + 1e-12) + 1e-12 || halvings >= 50) break;
            for (std::size_t i = 0; i < n; ++i) eta_new[i] = 0.5 * (eta_new[i] + eta[i]);
            ++halvings;
        }
        max_increase = std::max(max_increase, dev_new - deviance);
        eta = std::move(eta_new);
        mu = std::move(mu_new);
        deviance = dev_new;

        bool small_score = true;
        for (std::size_t j = 0; j < k; ++j) {
            double score = 0.0, scale = 1.0;
            for (std::size_t i = 0; i < n; ++i) {
                score += w[i] * xabs[j][i] * (y[i] - mu[i]);
                scale += w[i] * std::fabs(xabs[j][i]) * std::fabs(y[i]);
            }
            if (std::fabs(score) > spec.tol * scale) small_score = false;
        }
        if (k == 0) {
            // Pure fixed-effects fit: converge on the per-group scores.
            for (const auto& dim : dims) {
                std::vector<double> gsum(dim.n_groups, 0.0), gscale(dim.n_groups, 1.0);
                for (std::size_t i = 0; i < n; ++i) {
                    gsum[dim.group_of_row[i]] += w[i] * (y[i] - mu[i]);
                    gscale[dim.group_of_row[i]] += w[i] * std::fabs(y[i]);
                }
                for (int g = 0; g < dim.n_groups; ++g)
                    if (std::fabs(gsum[g]) > spec.tol * gscale[g]) small_score = false;
            }
        }
        if (small_score) {
            if (polish_left > 0) {
                --polish_left;
                continue;
            }
            converged = true;
            ++iter;
            break;
        }

        if (spec.family == Family::logit) {
            double max_eta = 0.0;
            for (double e : eta) max_eta = std::max(max_eta, std::fabs(e));
            if (max_eta > kSeparationEta)
                throw NumericError(
                    "complete separation detected in logit fit (diverging linear "
                    "predictor with monotone likelihood); no estimates returned");
        }
    }
    if (!converged)
        throw NumericError("IRLS did not converge in " + std::to_string(spec.max_iter) +
                           " iterations");

    GlmInternal out;
    FitResult& fit = out.fit;
    fit.names = names;
    fit.coef = core.coef;
    fit.sample_rows = rows;
    fit.n_obs = n;
    fit.residuals.resize(n);
    fit.fitted.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        fit.fitted[i] = mu[i];
        fit.residuals[i] = y[i] - mu[i];
    }
    long long fe_params = has_fe ? fe_param_count(*data, spec.fe_dims, rows) : 0;
    long long k_total = static_cast<long long>(core.rank) + fe_params;
    fit.dof = static_cast<long long>(n) - k_total;
    fit.r_squared = std::numeric_limits<double>::quiet_NaN();

    // Robust sandwich: expected-information bread at the final weights,
    // score meat clustered like the linear case.
    {
        Eigen::MatrixXd X(n, k);
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t i = 0; i < n; ++i) X(i, j) = xabs[j][i];
        Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
        for (std::size_t i = 0; i < n; ++i)
            info.noalias() += ww[i] * X.row(i).transpose() * X.row(i);
        Eigen::MatrixXd bread = info.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
        auto labels = cluster_labels(*data, spec.cluster, rows);
        std::map<long long, Eigen::VectorXd> scores;
        for (std::size_t i = 0; i < n; ++i) {
            auto it = scores.find(labels[i]);
            if (it == scores.end())
                it = scores.emplace(labels[i], Eigen::VectorXd::Zero(k)).first;
            it->second.noalias() += w[i] * fit.residuals[i] * X.row(i).transpose();
        }
        if (scores.size() < 2) throw DataError("cluster_vcov: fewer than 2 clusters");
        Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
        for (const auto& kv : scores) meat.noalias() += kv.second * kv.second.transpose();
        double G = static_cast<double>(scores.size());
        double N = static_cast<double>(n);
        double K = static_cast<double>(k_total);
        double denom = N - K > 0.0 ? N - K : 1.0;
        Eigen::MatrixXd v =
            (G / (G - 1.0)) * ((N - 1.0) / denom) * bread * meat * bread;
        fit.vcov = 0.5 * (v + v.transpose());
        fit.diagnostics["n_clusters"] = static_cast<double>(scores.size());
    }

    fit.diagnostics["deviance"] = deviance;
    fit.diagnostics["deviance_initial"] = deviance_initial;
    fit.diagnostics["deviance_max_increase"] = std::max(0.0, max_increase);
    fit.diagnostics["irls_iterations"] = static_cast<double>(iter);
    fit.diagnostics["condition_number"] = core.condition;
    fit.diagnostics["singletons_dropped"] = static_cast<double>(singletons);
    fit.diagnostics["constant_regressors_dropped"] = static_cast<double>(constant_dropped);
    fit.diagnostics["constant_outcome_dropped"] = static_cast<double>(const_outcome_dropped);
    fit.diagnostics["fe_params"] = static_cast<double>(fe_params);
    out.mu = mu;
    return out;
}

} // namespace detail

/// Poisson quasi-maximum-likelihood fit; consistent for any nonnegative
/// outcome with a correctly specified conditional mean exp(x'b + fe).
inline FitResult poisson_qmle(GlmSpec spec, const PanelDataset& panel) {
    spec.family = Family::poisson;
    return detail::glm_irls(spec, panel).fit;
}

/// Weighted logit fit. With individual fixed effects, individuals whose
/// outcome never varies are dropped and counted in diagnostics.
inline FitResult logit_fit(GlmSpec spec, const PanelDataset& panel) {
    spec.family = Family::logit;
    return detail::glm_irls(spec, panel).fit;
}

/// Mean response from a fit's coefficients on new rows. Absorbed fixed
/// effects are not recoverable for new data, so the linear predictor is the
/// coefficient part only; fits made without FE (intercept or Mundlak form)
/// predict the full mean.
inline std::vector<double> predict_response(const FitResult& fit, const PanelDataset& panel,
                                            Family family) {
    std::vector<const std::vector<double>*> cols(fit.names.size(), nullptr);
    for (std::size_t j = 0; j < fit.names.size(); ++j) {
        if (fit.names[j] == "(intercept)") continue;
        if (!panel.has(fit.names[j]))
            throw DataError("missing regressor column '" + fit.names[j] + "'");
        cols[j] = &panel.col(fit.names[j]);
    }
    std::vector<double> out(panel.n_rows());
    for (std::size_t i = 0; i < panel.n_rows(); ++i) {
        double eta = 0.0;
        bool missing = false;
        for (std::size_t j = 0; j < fit.names.size(); ++j) {
            double v = cols[j] ? (*cols[j])[i] : 1.0;
            if (std::isnan(v)) missing = true;
            eta += fit.coef(static_cast<Eigen::Index>(j)) * v;
        }
        out[i] = missing ? std::numeric_limits<double>::quiet_NaN()
                         : detail::glm_mu(family, eta);
    }
    return out;
}

} // namespace foodsec
