#pragma once

// Slow, independent reference implementations used only by the tests.
// Each oracle computes its quantity from the mathematical definition by a
// route disjoint from the library code under test.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <vector>

namespace oracle {

namespace detail {

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa,
                      double fm, double fb, double whole, double tol, int depth) {
    double m = 0.5 * (a + b);
    double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
    double flm = f(lm), frm = f(rm);
    double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    double delta = left + right - whole;
    if (depth <= 0 || std::fabs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
    return simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
           simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol) {
    if (b <= a) return 0.0;
    double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
    double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return simpson(f, a, b, fa, fm, fb, whole, tol, 60);
}

} // namespace detail

// Lower regularized incomplete gamma by adaptive Simpson quadrature.
// For shape < 1 the substitution t = u^(1/a) removes the endpoint
// singularity: P(a,x) = 1/Gamma(a+1) * Int_0^{x^a} exp(-u^(1/a)) du.
inline double gamma_p_quadrature(double a, double x) {
    if (x <= 0.0) return 0.0;
    if (a < 1.0) {
        double upper = std::pow(x, a);
        auto g = [a](double u) { return std::exp(-std::pow(u, 1.0 / a)); };
        double integral = detail::integrate(g, 0.0, upper, 1e-13);
        return integral * std::exp(-std::lgamma(a + 1.0));
    }
    double lga = std::lgamma(a);
    auto f = [a, lga](double t) {
        if (t <= 0.0) return a == 1.0 ? std::exp(-lga) : 0.0;
        return std::exp((a - 1.0) * std::log(t) - t - lga);
    };
    double mode = a - 1.0;
    double split = std::min(x, std::max(mode, 1.0));
    return detail::integrate(f, 0.0, split, 5e-14) + detail::integrate(f, split, x, 5e-14);
}

// OLS with fixed effects spelled out as dummy columns: first dimension gets
// a full set of dummies, later dimensions drop one level each. Returns the
// slope coefficients and their cluster-robust covariance block.
struct DummyOlsResult {
    std::vector<double> coef;
    Eigen::MatrixXd vcov;
    std::vector<double> residuals;
    std::ptrdiff_t n_params = 0;
};

inline DummyOlsResult dummy_ols(const std::vector<double>& y,
                                const std::vector<std::vector<double>>& x_cols,
                                const std::vector<std::vector<long long>>& fe_dims,
                                const std::vector<double>& w,
                                const std::vector<long long>& cluster) {
    const std::size_t n = y.size();
    const std::size_t p = x_cols.size();
    std::vector<std::vector<double>> design;
    for (const auto& c : x_cols) design.push_back(c);
    bool first_dim = true;
    for (const auto& dim : fe_dims) {
        std::map<long long, std::size_t> levels;
        std::size_t next = 0;
        for (auto g : dim)
            if (levels.emplace(g, next).second) ++next;
        std::size_t start = first_dim ? 0 : 1;
        for (std::size_t l = start; l < levels.size(); ++l) {
            std::vector<double> d(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                if (levels.at(dim[i]) == l) d[i] = 1.0;
            design.push_back(std::move(d));
        }
        first_dim = false;
    }
    if (fe_dims.empty()) design.push_back(std::vector<double>(n, 1.0));
    const std::size_t k = design.size();
    Eigen::MatrixXd X(n, k);
    Eigen::VectorXd Y(n), sw(n);
    for (std::size_t i = 0; i < n; ++i) {
        sw(i) = std::sqrt(w[i]);
        Y(i) = y[i] * sw(i);
        for (std::size_t j = 0; j < k; ++j) X(i, j) = design[j][i] * sw(i);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
    Eigen::VectorXd beta = qr.solve(Y);
    Eigen::VectorXd resid_w = Y - X * beta;

    DummyOlsResult out;
    out.n_params = qr.rank();
    out.coef.resize(p);
    for (std::size_t j = 0; j < p; ++j) out.coef[j] = beta(j);
    out.residuals.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.residuals[i] = resid_w(i) / sw(i);

    Eigen::MatrixXd bread = (X.transpose() * X).inverse();
    std::map<long long, Eigen::VectorXd> scores;
    for (std::size_t i = 0; i < n; ++i) {
        auto it = scores.find(cluster[i]);
        if (it == scores.end())
            it = scores.emplace(cluster[i], Eigen::VectorXd::Zero(k)).first;
        it->second += X.row(i).transpose() * resid_w(i);
    }
    Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
    for (const auto& kv : scores) meat += kv.second * kv.second.transpose();
    double G = static_cast<double>(scores.size());
    double N = static_cast<double>(n);
    double K = static_cast<double>(out.n_params);
    double adj = (G / (G - 1.0)) * ((N - 1.0) / (N - K));
    Eigen::MatrixXd V = adj * bread * meat * bread;
    out.vcov = V.topLeftCorner(p, p);
    return out;
}

// Weighted check loss at quantile tau.
inline double check_loss(const std::vector<double>& resid, const std::vector<double>& w,
                         double tau) {
    double s = 0.0;
    for (std::size_t i = 0; i < resid.size(); ++i) {
        double r = resid[i];
        s += w[i] * r * (tau - (r < 0.0 ? 1.0 : 0.0));
    }
    return s;
}

// Weighted quantile by direct minimization of the check loss over the
// observed values (ties broken toward the smaller value).
inline double quantile_by_enumeration(const std::vector<double>& x,
                                      const std::vector<double>& w, double tau) {
    double best = std::numeric_limits<double>::quiet_NaN();
    double best_loss = std::numeric_limits<double>::infinity();
    std::vector<double> cand(x);
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    for (double c : cand) {
        std::vector<double> r(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) r[i] = x[i] - c;
        double loss = check_loss(r, w, tau);
        if (std::isinf(best_loss) || loss < best_loss - 1e-12 * (1.0 + std::fabs(loss))) {
            best_loss = loss;
            best = c;
        }
    }
    return best;
}

} // namespace oracle
