#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <utility>
#include <vector>

#include "foodsec/error.hpp"

namespace foodsec {

struct WeightedMoments {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double sd = std::numeric_limits<double>::quiet_NaN();
    double sum_w = 0.0;
    std::size_t n = 0;
};

/// Weighted mean and population-convention standard deviation
/// (denominator sum of weights, so a single observation has sd 0).
/// NaN values and their weights are skipped.
inline WeightedMoments weighted_moments(const std::vector<double>& x,
                                        const std::vector<double>& w) {
    if (x.size() != w.size()) throw DataError("weighted_moments: length mismatch");
    WeightedMoments m;
    double sw = 0.0, swx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(w[i])) continue;
        if (w[i] < 0.0) throw DataError("weighted_moments: negative weight");
        if (w[i] == 0.0) continue;
        sw += w[i];
        swx += w[i] * x[i];
        ++m.n;
    }
    m.sum_w = sw;
    if (sw <= 0.0) return m;
    m.mean = swx / sw;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(w[i]) || w[i] == 0.0) continue;
        double d = x[i] - m.mean;
        ss += w[i] * d * d;
    }
    m.sd = std::sqrt(ss / sw);
    return m;
}

namespace detail {

/// Sorted (value, weight) pairs with NaN/zero-weight entries removed.
inline std::vector<std::pair<double, double>> sorted_weighted(const std::vector<double>& x,
                                                              const std::vector<double>& w) {
    if (x.size() != w.size()) throw DataError("weighted quantile: length mismatch");
    std::vector<std::pair<double, double>> v;
    v.reserve(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(w[i])) continue;
        if (w[i] < 0.0) throw DataError("weighted quantile: negative weight");
        if (w[i] == 0.0) continue;
        v.emplace_back(x[i], w[i]);
    }
    std::sort(v.begin(), v.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return v;
}

} // namespace detail

/// Left-continuous weighted quantile: the smallest sorted value whose
/// cumulative weight reaches p * (total weight). A relative slack absorbs
/// floating-point error in the cumulative sum so exact ties (e.g. unit
/// weights at p = k/n) resolve to the lower value.
inline double weighted_quantile(const std::vector<double>& x, const std::vector<double>& w,
                                double p) {
    if (p < 0.0 || p > 1.0) throw DataError("weighted quantile: p outside [0,1]");
    auto v = detail::sorted_weighted(x, w);
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (const auto& e : v) total += e.second;
    const double target = p * total;
    const double slack = 1e-12 * total;
    double cum = 0.0;
    for (const auto& e : v) {
        cum += e.second;
        if (cum >= target - slack) return e.first;
    }
    return v.back().first;
}

/// Weighted share of observations strictly below v.
inline double weighted_share_below(const std::vector<double>& x, const std::vector<double>& w,
                                   double v) {
    double sw = 0.0, below = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(w[i]) || w[i] <= 0.0) continue;
        sw += w[i];
        if (x[i] < v) below += w[i];
    }
    if (sw <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return below / sw;
}

struct CutoffResult {
    double cutoff = std::numeric_limits<double>::quiet_NaN();
    double achieved_share = std::numeric_limits<double>::quiet_NaN();
    bool attainable = false;
};

/// Smallest observed value v such that the weighted share of observations
/// strictly below v reaches the target. If no candidate reaches the target,
/// falls back to the candidate whose share is closest to it. The result is
/// flagged attainable when the achieved share is within the largest single
/// observation's weight share of the target (the best any threshold on this
/// sample can do).
inline CutoffResult calibrate_cutoff(const std::vector<double>& x, const std::vector<double>& w,
                                     double target) {
    if (target < 0.0 || target > 1.0) throw DataError("calibrate_cutoff: target outside [0,1]");
    auto v = detail::sorted_weighted(x, w);
    CutoffResult r;
    if (v.empty()) return r;
    double total = 0.0, wmax = 0.0;
    for (const auto& e : v) {
        total += e.second;
        wmax = std::max(wmax, e.second);
    }
    // Candidates are the unique observed values; share below the k-th unique
    // value is the cumulative weight of all strictly smaller values.
    double cum = 0.0;
    double best_cut = v.front().first, best_share = 0.0;
    double best_gap = std::numeric_limits<double>::infinity();
    bool found = false;
    std::size_t i = 0;
    while (i < v.size()) {
        double val = v[i].first;
        double share = cum / total;
        if (!found && share >= target - 1e-12) {
            r.cutoff = val;
            r.achieved_share = share;
            found = true;
        }
        double gap = std::fabs(share - target);
        if (gap < best_gap) {
            best_gap = gap;
            best_cut = val;
            best_share = share;
        }
        while (i < v.size() && v[i].first == val) {
            cum += v[i].second;
            ++i;
        }
    }
    if (!found) {
        // No observed candidate reaches the target; keep the closest one.
        // Candidates stay within the observed values so a degenerate
        // distribution yields share 0 rather than flagging everything.
        r.cutoff = best_cut;
        r.achieved_share = best_share;
    }
    r.attainable = std::fabs(r.achieved_share - target) <= wmax / total + 1e-12;
    return r;
}

struct Correlation {
    double r = std::numeric_limits<double>::quiet_NaN();
    double p_value = std::numeric_limits<double>::quiet_NaN();
    std::size_t n = 0;
};

/// Pearson correlation of the pairwise-complete rows of x and y.
/// The p-value is filled in by callers that know the test to apply.
inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y,
                        std::size_t* n_used = nullptr) {
    if (x.size() != y.size()) throw DataError("pearson_r: length mismatch");
    double sx = 0, sy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(y[i])) continue;
        sx += x[i];
        sy += y[i];
        ++n;
    }
    if (n_used) *n_used = n;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    double mx = sx / static_cast<double>(n), my = sy / static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::isnan(x[i]) || std::isnan(y[i])) continue;
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

} // namespace foodsec
