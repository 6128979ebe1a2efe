#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "foodsec/csv.hpp"
#include "foodsec/dataset.hpp"
#include "foodsec/glm.hpp"
#include "foodsec/special.hpp"
#include "foodsec/stats.hpp"

namespace foodsec {

struct GammaParams {
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double beta = std::numeric_limits<double>::quiet_NaN();
};

/// Method-of-moments Gamma parameters from a mean and variance:
/// alpha*beta reproduces the mean, alpha*beta^2 the variance.
inline GammaParams gamma_params(double w_hat, double sigma2_hat) {
    if (!(w_hat > 0.0)) throw DataError("gamma_params: mean must be positive");
    if (!(sigma2_hat > 0.0)) throw DataError("gamma_params: variance must be positive");
    return {w_hat * w_hat / sigma2_hat, sigma2_hat / w_hat};
}

/// Regularized lower incomplete gamma P(alpha, x) as the CDF kernel.
inline double gamma_cdf_reg(double alpha, double x) {
    if (x < 0.0) throw DataError("gamma_cdf_reg: x must be nonnegative");
    return gamma_p(alpha, x);
}

/// Cost-of-living adjustment of the food-plan threshold; coli is an index
/// with national average 100.
inline double adjust_tfp(double tfp_cost, double coli) {
    if (!(tfp_cost > 0.0)) throw DataError("adjust_tfp: tfp_cost must be positive");
    if (!(coli > 0.0)) throw DataError("adjust_tfp: coli must be positive");
    return tfp_cost * coli / 100.0;
}

inline constexpr double kDegenerateVariance = 1e-12;

/// Probability that expenditure meets or exceeds the threshold under the
/// calibrated Gamma distribution; a (near-)zero variance collapses to a
/// point mass at the mean.
inline double compute_pfs(double w_hat, double sigma2_hat, double threshold) {
    if (!(w_hat > 0.0)) throw DataError("compute_pfs: w_hat must be positive");
    if (sigma2_hat <= kDegenerateVariance) return w_hat >= threshold ? 1.0 : 0.0;
    auto g = gamma_params(w_hat, sigma2_hat);
    if (threshold <= 0.0) return 1.0;
    return 1.0 - gamma_p(g.alpha, threshold / g.beta);
}

inline bool flag_food_insecure(double pfs, double cutoff) { return pfs < cutoff; }

struct CutoffSchedule {
    std::map<long long, CutoffResult> by_year;

    double cutoff(long long year) const {
        auto it = by_year.find(year);
        if (it == by_year.end())
            throw DataError("no cutoff calibrated for year " + std::to_string(year));
        return it->second.cutoff;
    }
};

/// Year-specific cutoffs such that the weighted share with pfs < cutoff
/// matches each year's target rate as closely as the data's granularity
/// allows; the per-year attainable flag records misses wider than the
/// largest single observation weight.
inline CutoffSchedule calibrate_cutoffs(const std::vector<long long>& years,
                                        const std::vector<double>& pfs,
                                        const std::vector<double>& weights,
                                        const std::map<long long, double>& target_rates) {
    if (years.size() != pfs.size())
        throw DataError("calibrate_cutoffs: years and pfs lengths differ");
    if (!weights.empty() && weights.size() != pfs.size())
        throw DataError("calibrate_cutoffs: weights length mismatch");
    std::map<long long, std::pair<std::vector<double>, std::vector<double>>> buckets;
    for (std::size_t i = 0; i < pfs.size(); ++i) {
        auto& b = buckets[years[i]];
        b.first.push_back(pfs[i]);
        b.second.push_back(weights.empty() ? 1.0 : weights[i]);
    }
    for (const auto& kv : target_rates)
        if (buckets.find(kv.first) == buckets.end())
            throw DataError("calibrate_cutoffs: no observations for year " +
                            std::to_string(kv.first));
    CutoffSchedule sched;
    for (const auto& kv : buckets) {
        auto it = target_rates.find(kv.first);
        if (it == target_rates.end())
            throw DataError("calibrate_cutoffs: no target rate for year " +
                            std::to_string(kv.first));
        if (it->second < 0.0 || it->second > 1.0)
            throw DataError("calibrate_cutoffs: target rate for year " +
                            std::to_string(kv.first) + " outside [0,1]");
        sched.by_year[kv.first] = calibrate_cutoff(kv.second.first, kv.second.second, it->second);
    }
    return sched;
}

struct PfsRecord {
    long long individual_id = 0;
    long long wave_year = 0;
    double w_hat = std::numeric_limits<double>::quiet_NaN();
    double sigma2_hat = std::numeric_limits<double>::quiet_NaN();
    double alpha = std::numeric_limits<double>::quiet_NaN();
    double beta = std::numeric_limits<double>::quiet_NaN();
    double threshold = std::numeric_limits<double>::quiet_NaN();
    double pfs = std::numeric_limits<double>::quiet_NaN();
    int food_insecure = 0;
};

/// A GLM fit plus its per-panel-row prediction (NaN on rows outside the
/// estimation sample) and the count of excluded rows.
struct ConditionalFit {
    FitResult fit;
    std::vector<double> prediction;
    std::size_t n_excluded = 0;
};

/// Conditional expenditure mean by Poisson QMLE with the caller's lag
/// polynomial, controls, and fixed effects in `spec`. Rows missing the lag
/// (or any regressor) fall out of the sample and are counted.
inline ConditionalFit fit_conditional_mean(const PanelDataset& panel, const GlmSpec& spec) {
    ConditionalFit out;
    out.fit = poisson_qmle(spec, panel);
    out.prediction.assign(panel.n_rows(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < out.fit.sample_rows.size(); ++i)
        out.prediction[out.fit.sample_rows[i]] = out.fit.fitted[i];
    out.n_excluded = panel.n_rows() - out.fit.n_obs;
    return out;
}

/// Conditional variance: squared mean-fit residuals regressed on the same
/// covariates, predictions passed through an absolute value.
inline ConditionalFit fit_conditional_variance(const PanelDataset& panel,
                                               const ConditionalFit& mean_fit,
                                               const GlmSpec& spec) {
    ConditionalFit out;
    out.prediction.assign(panel.n_rows(), std::numeric_limits<double>::quiet_NaN());

    std::vector<double> usq(panel.n_rows(), std::numeric_limits<double>::quiet_NaN());
    double max_abs_resid = 0.0, max_fitted = 0.0;
    for (std::size_t i = 0; i < mean_fit.fit.sample_rows.size(); ++i) {
        double u = mean_fit.fit.residuals[i];
        usq[mean_fit.fit.sample_rows[i]] = u * u;
        max_abs_resid = std::max(max_abs_resid, std::fabs(u));
        max_fitted = std::max(max_fitted, std::fabs(mean_fit.fit.fitted[i]));
    }
    if (max_abs_resid <= 1e-10 * (1.0 + max_fitted)) {
        for (auto r : mean_fit.fit.sample_rows) out.prediction[r] = 0.0;
        out.fit.n_obs = mean_fit.fit.sample_rows.size();
        out.fit.sample_rows = mean_fit.fit.sample_rows;
        out.fit.residuals.assign(out.fit.n_obs, 0.0);
        out.fit.fitted.assign(out.fit.n_obs, 0.0);
        out.fit.diagnostics["all_zero_residuals"] = 1.0;
        out.n_excluded = panel.n_rows() - out.fit.n_obs;
        return out;
    }

    PanelDataset work = panel;
    work.cols.set("__sq_resid", usq);
    ModelSpec ms = static_cast<const ModelSpec&>(spec);
    ms.outcome = "__sq_resid";
    // Mirror the GLM's tolerance for constant regressors.
    {
        std::vector<std::string> kept;
        for (const auto& name : ms.regressors) {
            const auto& c = work.col(name);
            double lo = std::numeric_limits<double>::infinity(), hi = -lo;
            for (auto r : mean_fit.fit.sample_rows) {
                lo = std::min(lo, c[r]);
                hi = std::max(hi, c[r]);
            }
            if (hi - lo > 1e-12 * (1.0 + std::fabs(lo) + std::fabs(hi))) kept.push_back(name);
        }
        ms.regressors = std::move(kept);
    }
    out.fit = wls_fit(ms, work);
    for (std::size_t i = 0; i < out.fit.sample_rows.size(); ++i)
        out.prediction[out.fit.sample_rows[i]] = std::fabs(out.fit.fitted[i]);
    out.n_excluded = panel.n_rows() - out.fit.n_obs;
    return out;
}

/// Per-row PFS records for every panel row with both predictions available.
/// The insecurity flag is left at 0 until cutoffs are applied.
inline std::vector<PfsRecord> build_pfs_records(const PanelDataset& panel,
                                                const std::vector<double>& w_hat,
                                                const std::vector<double>& sigma2_hat) {
    if (w_hat.size() != panel.n_rows() || sigma2_hat.size() != panel.n_rows())
        throw DataError("build_pfs_records: prediction length mismatch");
    const auto& tfp = panel.col("tfp_cost");
    const auto& coli = panel.col("coli");
    std::vector<PfsRecord> records;
    for (std::size_t r = 0; r < panel.n_rows(); ++r) {
        if (std::isnan(w_hat[r]) || std::isnan(sigma2_hat[r])) continue;
        PfsRecord rec;
        rec.individual_id = panel.individual_id[r];
        rec.wave_year = panel.wave_year[r];
        rec.w_hat = w_hat[r];
        rec.sigma2_hat = sigma2_hat[r];
        rec.threshold = adjust_tfp(tfp[r], coli[r]);
        if (rec.sigma2_hat > kDegenerateVariance) {
            auto g = gamma_params(rec.w_hat, rec.sigma2_hat);
            rec.alpha = g.alpha;
            rec.beta = g.beta;
        }
        rec.pfs = compute_pfs(rec.w_hat, rec.sigma2_hat, rec.threshold);
        records.push_back(rec);
    }
    return records;
}

inline void apply_cutoffs(std::vector<PfsRecord>& records, const CutoffSchedule& sched) {
    for (auto& rec : records)
        rec.food_insecure = flag_food_insecure(rec.pfs, sched.cutoff(rec.wave_year)) ? 1 : 0;
}

inline void write_pfs_csv(const std::string& path, const std::vector<PfsRecord>& records) {
    CsvTable t;
    t.header = {"individual_id", "wave_year", "w_hat", "sigma2_hat", "alpha",
                "beta",          "threshold", "pfs",   "food_insecure"};
    for (const auto& rec : records)
        t.rows.push_back({std::to_string(rec.individual_id), std::to_string(rec.wave_year),
                          format_double(rec.w_hat), format_double(rec.sigma2_hat),
                          format_double(rec.alpha), format_double(rec.beta),
                          format_double(rec.threshold), format_double(rec.pfs),
                          std::to_string(rec.food_insecure)});
    write_csv(path, t);
}

/// Reads a year -> rate table (columns `year`, `rate`).
inline std::map<long long, double> read_target_rates(const std::string& path) {
    auto t = read_csv(path);
    auto yc = t.col_index("year");
    auto rc = t.col_index("rate");
    if (yc < 0 || rc < 0)
        throw DataError("target rate file " + path + " must have columns 'year' and 'rate'");
    std::map<long long, double> rates;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        double yraw = parse_double(t.rows[i][static_cast<std::size_t>(yc)], i + 2,
                                   "year");
        long long year = std::llround(yraw);
        if (std::isnan(yraw) || static_cast<double>(year) != yraw)
            throw DataError("target rate file row " + std::to_string(i + 2) +
                            ": year must be an integer");
        double rate = parse_double(t.rows[i][static_cast<std::size_t>(rc)], i + 2, "rate");
        if (!rates.emplace(year, rate).second)
            throw DataError("target rate file row " + std::to_string(i + 2) +
                            ": duplicate year " + std::to_string(year));
    }
    return rates;
}

} // namespace foodsec
