#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "foodsec/csv.hpp"
#include "foodsec/iv.hpp"
#include "foodsec/regress.hpp"
#include "foodsec/rng.hpp"

using namespace foodsec;

namespace {

PanelDataset make_panel(const std::vector<long long>& ids, const std::vector<long long>& years,
                        const std::vector<long long>& states) {
    PanelDataset p;
    p.individual_id = ids;
    p.wave_year = years;
    p.state_id = states;
    p.cols = DataTable(ids.size());
    return p;
}

/// Cross-section style panel: one row per individual, confounded treatment.
/// d loads on the instrument z, the control x, and a latent u that also
/// drives y, so least squares on d is biased while z stays clean.
PanelDataset cross_panel(std::uint64_t seed, int n) {
    std::vector<long long> ids(n), years(n, 2000), states(n);
    for (int i = 0; i < n; ++i) {
        ids[i] = i;
        states[i] = i % 5;
    }
    auto p = make_panel(ids, years, states);
    std::vector<double> z(n), x(n), d(n), y(n), w(n), ones(n, 1.0);
    PhiloxStream s(seed, 0, 0, 0);
    for (int i = 0; i < n; ++i) {
        z[i] = s.normal();
        x[i] = s.normal();
        double u = s.normal();
        d[i] = 0.6 * z[i] + 0.4 * x[i] + 0.5 * u + 0.5 * s.normal();
        y[i] = 0.8 * d[i] - 0.3 * x[i] + 0.7 * u + 0.4 * s.normal();
        w[i] = 0.5 + s.uniform();
    }
    p.cols.add("z", z);
    p.cols.add("x", x);
    p.cols.add("d", d);
    p.cols.add("y", y);
    p.cols.add("w", w);
    p.cols.add("ones", ones);
    return p;
}

/// Multi-wave panel with the same confounding structure, for fixed-effect
/// and Mundlak variants.
PanelDataset wave_panel(std::uint64_t seed, int n_individuals, int n_waves) {
    std::vector<long long> ids, years, states;
    for (int i = 0; i < n_individuals; ++i)
        for (int t = 0; t < n_waves; ++t) {
            ids.push_back(i);
            years.push_back(2000 + t);
            states.push_back(i % 6);
        }
    auto p = make_panel(ids, years, states);
    const std::size_t n = ids.size();
    std::vector<double> z(n), x(n), d(n), y(n), w(n);
    for (std::size_t r = 0; r < n; ++r) {
        auto id = static_cast<std::uint32_t>(ids[r]);
        auto yr = static_cast<std::uint32_t>(years[r]);
        PhiloxStream s(seed, id, yr, 0);
        double hetero = 0.1 * static_cast<double>(ids[r] % 4);
        z[r] = s.normal() + hetero;
        x[r] = s.normal();
        double u = s.normal();
        d[r] = 0.7 * z[r] + 0.3 * x[r] + 0.5 * u + hetero + 0.4 * s.normal();
        y[r] = 0.8 * d[r] - 0.2 * x[r] + 0.6 * u + 2.0 * hetero +
               0.05 * static_cast<double>(years[r] - 2000) + 0.4 * s.normal();
        w[r] = 0.5 + s.uniform();
    }
    p.cols.add("z", z);
    p.cols.add("x", x);
    p.cols.add("d", d);
    p.cols.add("y", y);
    p.cols.add("w", w);
    return p;
}

ModelSpec controls_only(std::vector<std::string> regressors) {
    ModelSpec spec;
    spec.regressors = std::move(regressors);
    return spec;
}

} // namespace

TEST_CASE("six-row toy fit matches the covariance ratio") {
    auto p = make_panel({1, 2, 3, 4, 5, 6}, std::vector<long long>(6, 2000),
                        {1, 1, 1, 2, 2, 2});
    p.cols.add("z", {0, 1, 2, 3, 4, 5});
    p.cols.add("d", {1, 3, 2, 5, 4, 6});
    p.cols.add("y", {2, 4, 3, 7, 8, 9});

    auto iv = tsls_fit("y", "d", {"z"}, controls_only({}), p);
    REQUIRE(iv.mode == IvMode::linear_2sls);
    REQUIRE(std::string(iv_mode_name(iv.mode)) == "linear_2sls");
    REQUIRE(iv.n_obs == 6);
    REQUIRE(iv.mean_outcome == Catch::Approx(5.5).margin(1e-12));
    REQUIRE(iv.structural.coef_of("d") == Catch::Approx(1.6451612903225807).margin(1e-10));
    REQUIRE(iv.structural.coef_of("(intercept)") == Catch::Approx(-0.2580645161290329).margin(1e-10));
    REQUIRE(iv.first_stages.size() == 1);
    REQUIRE(iv.structural.sample_rows == iv.first_stages[0].sample_rows);
    REQUIRE(iv.structural.diagnostics.at("kp_f") == iv.kp_f);
}

TEST_CASE("instrumenting a column with itself reproduces least squares") {
    auto p = cross_panel(17, 200);
    std::vector<double> copy = p.col("d");
    p.cols.add("d_copy", copy);

    auto iv = tsls_fit("y", "d", {"d_copy"}, controls_only({"x"}), p);
    ModelSpec ols;
    ols.outcome = "y";
    ols.regressors = {"d", "x"};
    auto ls = wls_fit(ols, p);

    REQUIRE(iv.structural.names == ls.names);
    for (Eigen::Index j = 0; j < ls.coef.size(); ++j)
        REQUIRE(iv.structural.coef(j) == Catch::Approx(ls.coef(j)).margin(1e-10));
    for (Eigen::Index j = 0; j < ls.coef.size(); ++j)
        REQUIRE(iv.structural.se_of(ls.names[static_cast<std::size_t>(j)]) ==
                Catch::Approx(ls.se_of(ls.names[static_cast<std::size_t>(j)])).epsilon(1e-8));
    REQUIRE(std::isinf(iv.kp_f));
    REQUIRE(first_stage_F(iv) == iv.kp_f);
}

TEST_CASE("just-identified estimate equals the reduced-form ratio") {
    for (std::uint64_t seed : {3, 4, 5}) {
        auto p = cross_panel(seed, 250);
        ModelSpec spec = controls_only({"x"});
        spec.weight_col = "w";

        auto iv = tsls_fit("y", "d", {"z"}, spec, p);
        ModelSpec rf = spec;
        rf.outcome = "y";
        rf.regressors = {"z", "x"};
        ModelSpec fs = rf;
        fs.outcome = "d";
        double ratio = wls_fit(rf, p).coef_of("z") / wls_fit(fs, p).coef_of("z");
        REQUIRE(iv.structural.coef_of("d") == Catch::Approx(ratio).margin(1e-8));
    }
    // Same identity under absorbed year effects.
    auto p = wave_panel(9, 80, 4);
    ModelSpec spec = controls_only({"x"});
    spec.fe_dims = {"year"};
    auto iv = tsls_fit("y", "d", {"z"}, spec, p);
    ModelSpec rf = spec;
    rf.outcome = "y";
    rf.regressors = {"z", "x"};
    ModelSpec fs = rf;
    fs.outcome = "d";
    double ratio = wls_fit(rf, p).coef_of("z") / wls_fit(fs, p).coef_of("z");
    REQUIRE(iv.structural.coef_of("d") == Catch::Approx(ratio).margin(1e-8));
}

TEST_CASE("instrument rescaling leaves the fit unchanged") {
    auto p = cross_panel(21, 300);
    std::vector<double> scaled = p.col("z");
    for (auto& v : scaled) v *= 7.0;
    p.cols.add("z7", scaled);
    ModelSpec spec = controls_only({"x"});
    spec.weight_col = "w";

    auto a = tsls_fit("y", "d", {"z"}, spec, p);
    auto b = tsls_fit("y", "d", {"z7"}, spec, p);
    for (Eigen::Index j = 0; j < a.structural.coef.size(); ++j)
        REQUIRE(a.structural.coef(j) == Catch::Approx(b.structural.coef(j)).margin(1e-10));
    REQUIRE(a.structural.se_of("d") == Catch::Approx(b.structural.se_of("d")).epsilon(1e-9));
    REQUIRE(a.kp_f == Catch::Approx(b.kp_f).epsilon(1e-8));
}

TEST_CASE("single-instrument strength equals the squared robust t") {
    auto p = wave_panel(13, 60, 4);
    ModelSpec spec = controls_only({"x"});
    spec.fe_dims = {"individual", "year"};
    spec.weight_col = "w";

    auto iv = tsls_fit("y", "d", {"z"}, spec, p);
    const auto& fs = iv.first_stages.at(0);
    double t = fs.coef_of("z") / fs.se_of("z");
    REQUIRE(iv.kp_f == Catch::Approx(t * t).epsilon(1e-8));
    REQUIRE(first_stage_F(iv) == iv.kp_f);
    REQUIRE(iv.kp_f >= 0.0);

    IVResult empty;
    REQUIRE_THROWS_AS(first_stage_F(empty), DataError);
}

TEST_CASE("irrelevant instrument yields strength near one on average") {
    double total = 0.0;
    const int reps = 120;
    const int n = 300;
    for (int rep = 0; rep < reps; ++rep) {
        std::vector<long long> ids(n), years(n, 2000), states(n, 0);
        for (int i = 0; i < n; ++i) ids[i] = i;
        auto p = make_panel(ids, years, states);
        std::vector<double> z(n), d(n), y(n);
        PhiloxStream s(900, static_cast<std::uint32_t>(rep), 0, 0);
        for (int i = 0; i < n; ++i) {
            z[i] = s.normal();
            d[i] = s.normal();
            y[i] = s.normal();
        }
        p.cols.add("z", z);
        p.cols.add("d", d);
        p.cols.add("y", y);
        total += tsls_fit("y", "d", {"z"}, controls_only({}), p).kp_f;
    }
    double mean_f = total / reps;
    REQUIRE(mean_f > 0.6);
    REQUIRE(mean_f < 1.6);
}

TEST_CASE("negative selection flips least squares but not the instrumented fit") {
    const int n = 6000;
    std::vector<long long> ids(n), years(n, 2000), states(n);
    for (int i = 0; i < n; ++i) {
        ids[i] = i;
        states[i] = i % 48;
    }
    auto p = make_panel(ids, years, states);
    std::vector<double> z(n), d(n), y(n);
    PhiloxStream s(31, 0, 0, 0);
    for (int i = 0; i < n; ++i) {
        z[i] = s.normal();
        double u = s.normal();
        double latent = 1.5 * z[i] - 1.2 * u + 0.5 * s.normal();
        d[i] = latent > 0.0 ? 1.0 : 0.0;
        y[i] = 0.1 * d[i] + 0.8 * u + 0.3 * s.normal();
    }
    p.cols.add("z", z);
    p.cols.add("d", d);
    p.cols.add("y", y);

    ModelSpec ols;
    ols.outcome = "y";
    ols.regressors = {"d"};
    REQUIRE(wls_fit(ols, p).coef_of("d") < 0.0);

    auto iv = tsls_fit("y", "d", {"z"}, controls_only({}), p);
    REQUIRE(std::abs(iv.structural.coef_of("d") - 0.1) < 0.15);
    REQUIRE(iv.kp_f > 100.0);
    // Linear projection of a binary treatment strays outside [0,1].
    double lo = 1.0, hi = 0.0;
    for (double f : iv.first_stages[0].fitted) {
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    REQUIRE(lo < 0.0);
    REQUIRE(hi > 1.0);
}

TEST_CASE("interaction fit decouples into per-group fits") {
    const int n = 400;
    std::vector<long long> ids(n), years(n, 2000), states(n, 0);
    for (int i = 0; i < n; ++i) ids[i] = i;
    auto p = make_panel(ids, years, states);
    std::vector<double> g(n), z(n), d(n), y(n);
    PhiloxStream s(57, 0, 0, 0);
    for (int i = 0; i < n; ++i) {
        g[i] = i < n / 2 ? 0.0 : 1.0;
        z[i] = s.normal();
        double u = s.normal();
        d[i] = 0.7 * z[i] + 0.5 * u + 0.6 * s.normal();
        double slope = g[i] == 0.0 ? 0.5 : 1.2;
        y[i] = slope * d[i] + 0.3 + 0.4 * g[i] + 0.6 * u;
    }
    p.cols.add("g", g);
    p.cols.add("z", z);
    p.cols.add("d", d);
    p.cols.add("y", y);

    auto iv = interaction_iv("y", "d", "g", {"z"}, controls_only({"g"}), p);
    REQUIRE(iv.mode == IvMode::interaction_2sls);
    REQUIRE(iv.first_stages.size() == 2);
    double gamma1 = iv.structural.coef_of("d");
    double gamma2 = iv.structural.coef_of("d_x_g");

    std::vector<std::size_t> rows0, rows1;
    for (int i = 0; i < n; ++i)
        (g[i] == 0.0 ? rows0 : rows1).push_back(static_cast<std::size_t>(i));
    auto b0 =
        tsls_fit("y", "d", {"z"}, controls_only({}), p.select_rows(rows0)).structural.coef_of(
            "d");
    auto b1 =
        tsls_fit("y", "d", {"z"}, controls_only({}), p.select_rows(rows1)).structural.coef_of(
            "d");
    REQUIRE(gamma1 == Catch::Approx(b0).margin(1e-6));
    REQUIRE(gamma1 + gamma2 == Catch::Approx(b1).margin(1e-6));
    REQUIRE(iv.kp_f > 10.0);
    REQUIRE(iv.structural.diagnostics.at("weak_instruments") == 0.0);
}

TEST_CASE("degenerate group flags reduce or fail") {
    auto p = cross_panel(23, 150);
    std::vector<double> zeros(p.n_rows(), 0.0), ones(p.n_rows(), 1.0),
        frac(p.n_rows(), 0.0);
    frac[3] = 0.5;
    p.cols.add("g0", zeros);
    p.cols.add("g1", ones);
    p.cols.add("gf", frac);

    auto reduced = interaction_iv("y", "d", "g0", {"z"}, controls_only({"x"}), p);
    auto plain = tsls_fit("y", "d", {"z"}, controls_only({"x"}), p);
    REQUIRE(reduced.mode == IvMode::interaction_2sls);
    REQUIRE(reduced.structural.index_of("d_x_g0") == -1);
    REQUIRE(reduced.structural.names == plain.structural.names);
    for (Eigen::Index j = 0; j < plain.structural.coef.size(); ++j)
        REQUIRE(reduced.structural.coef(j) == Catch::Approx(plain.structural.coef(j)).margin(1e-14));

    REQUIRE_THROWS_AS(interaction_iv("y", "d", "g1", {"z"}, controls_only({"x"}), p),
                      DataError);
    REQUIRE_THROWS_AS(interaction_iv("y", "d", "gf", {"z"}, controls_only({"x"}), p),
                      DataError);
}

TEST_CASE("three-step probabilities stay inside the unit interval") {
    const int n = 3000;
    std::vector<long long> ids(n), years(n, 2000), states(n, 0);
    for (int i = 0; i < n; ++i) ids[i] = i;
    auto p = make_panel(ids, years, states);
    std::vector<double> z(n), d(n), y(n);
    PhiloxStream s(67, 0, 0, 0);
    for (int i = 0; i < n; ++i) {
        z[i] = 1.6 * s.normal();
        double eta = -0.5 + 1.6 * z[i];
        d[i] = s.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
        y[i] = 0.5 * d[i] + 0.5 * s.normal();
    }
    p.cols.add("z", z);
    p.cols.add("d", d);
    p.cols.add("y", y);

    auto ts = three_step_iv("y", "d", {"z"}, controls_only({}), p);
    REQUIRE(ts.mode == IvMode::three_step);
    REQUIRE(ts.first_stages.size() == 2);
    for (double prob : ts.first_stages[0].fitted) {
        REQUIRE(prob > 0.0);
        REQUIRE(prob < 1.0);
    }
    REQUIRE(ts.kp_f > 100.0);

    // The linear first stage on identical data leaves the interval.
    auto lin = tsls_fit("y", "d", {"z"}, controls_only({}), p);
    double lo = 1.0, hi = 0.0;
    for (double f : lin.first_stages[0].fitted) {
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    REQUIRE(lo < 0.0);
    REQUIRE(hi > 1.0);

    REQUIRE_THROWS_AS(three_step_iv("y", "x", {"z"}, controls_only({}), p), DataError);
}

TEST_CASE("three-step keeps the logit sample under absorbed effects") {
    const int n_ind = 150, waves = 4;
    std::vector<long long> ids, years, states;
    for (int i = 0; i < n_ind; ++i)
        for (int t = 0; t < waves; ++t) {
            ids.push_back(i);
            years.push_back(2000 + t);
            states.push_back(i % 6);
        }
    auto p = make_panel(ids, years, states);
    const std::size_t n = ids.size();
    std::vector<double> z(n), d(n), y(n);
    for (std::size_t r = 0; r < n; ++r) {
        PhiloxStream s(71, static_cast<std::uint32_t>(ids[r]),
                       static_cast<std::uint32_t>(years[r]), 0);
        z[r] = s.normal();
        double u = s.normal();
        double eta = -0.2 + 1.2 * z[r] + 0.3 * u;
        d[r] = s.uniform() < 1.0 / (1.0 + std::exp(-eta)) ? 1.0 : 0.0;
        y[r] = 0.4 * d[r] + 0.5 * u + 0.3 * s.normal();
    }
    p.cols.add("z", z);
    p.cols.add("d", d);
    p.cols.add("y", y);

    ModelSpec spec = controls_only({});
    spec.fe_dims = {"individual", "year"};
    auto ts = three_step_iv("y", "d", {"z"}, spec, p);
    REQUIRE(ts.first_stages.size() == 2);
    const auto& step1 = ts.first_stages[0];
    REQUIRE(step1.diagnostics.count("constant_outcome_dropped") == 1);
    REQUIRE(ts.n_obs == step1.n_obs);
    REQUIRE(ts.structural.sample_rows == step1.sample_rows);
}

TEST_CASE("three-step approaches the linear fit in the near-linear regime") {
    auto avg_gap = [](double eps, std::uint64_t seed) {
        double total = 0.0;
        const int reps = 10, n = 4000;
        for (int rep = 0; rep < reps; ++rep) {
            std::vector<long long> ids(n), years(n, 2000), states(n, 0);
            for (int i = 0; i < n; ++i) ids[i] = i;
            auto p = make_panel(ids, years, states);
            std::vector<double> z(n), d(n), y(n);
            PhiloxStream s(seed, static_cast<std::uint32_t>(rep), 0, 0);
            for (int i = 0; i < n; ++i) {
                z[i] = s.normal();
                double prob = 1.0 / (1.0 + std::exp(-eps * z[i]));
                d[i] = s.uniform() < prob ? 1.0 : 0.0;
                y[i] = 0.3 * d[i] + 0.5 * s.normal();
            }
            p.cols.add("z", z);
            p.cols.add("d", d);
            p.cols.add("y", y);
            ModelSpec spec;
            double lam = three_step_iv("y", "d", {"z"}, spec, p).structural.coef_of("d");
            double beta = tsls_fit("y", "d", {"z"}, spec, p).structural.coef_of("d");
            total += std::abs(lam - beta);
        }
        return total / reps;
    };
    double wide = avg_gap(2.0, 81);
    double flat = avg_gap(0.2, 81);
    REQUIRE(flat < 0.5 * wide);
    REQUIRE(flat < 0.003);
}

TEST_CASE("mundlak device augments both stages") {
    auto p = wave_panel(43, 70, 4);
    ModelSpec spec = controls_only({"x"});
    spec.fe_dims = {"year"};
    spec.mundlak = true;

    auto iv = tsls_fit("y", "d", {"z"}, spec, p);
    REQUIRE(iv.first_stages[0].index_of("x_imean") >= 0);
    REQUIRE(iv.first_stages[0].index_of("z_imean") >= 0);
    REQUIRE(iv.structural.index_of("x_imean") >= 0);
    REQUIRE(iv.structural.index_of("z_imean") >= 0);
    REQUIRE(iv.structural.index_of("d_imean") == -1);

    ModelSpec bad = spec;
    bad.fe_dims = {"individual"};
    REQUIRE_THROWS_AS(tsls_fit("y", "d", {"z"}, bad, p), DataError);
}

TEST_CASE("weights scale out and unit weights match none") {
    auto p = cross_panel(47, 220);
    std::vector<double> doubled = p.col("w");
    for (auto& v : doubled) v *= 2.0;
    p.cols.add("w2", doubled);

    ModelSpec sw = controls_only({"x"});
    sw.weight_col = "w";
    ModelSpec sw2 = sw;
    sw2.weight_col = "w2";
    auto a = tsls_fit("y", "d", {"z"}, sw, p);
    auto b = tsls_fit("y", "d", {"z"}, sw2, p);
    for (Eigen::Index j = 0; j < a.structural.coef.size(); ++j)
        REQUIRE(a.structural.coef(j) == Catch::Approx(b.structural.coef(j)).margin(1e-12));
    REQUIRE(a.structural.se_of("d") == Catch::Approx(b.structural.se_of("d")).epsilon(1e-10));

    ModelSpec unit = controls_only({"x"});
    unit.weight_col = "ones";
    ModelSpec none = controls_only({"x"});
    auto u = tsls_fit("y", "d", {"z"}, unit, p);
    auto v = tsls_fit("y", "d", {"z"}, none, p);
    for (Eigen::Index j = 0; j < u.structural.coef.size(); ++j)
        REQUIRE(u.structural.coef(j) == v.structural.coef(j));
    REQUIRE(u.structural.vcov(1, 1) == v.structural.vcov(1, 1));
    REQUIRE(u.kp_f == v.kp_f);
}

TEST_CASE("ill-posed instrument sets are rejected") {
    auto p = cross_panel(53, 120);
    std::vector<double> copy = p.col("z");
    p.cols.add("z_dup", copy);

    REQUIRE_THROWS_AS(tsls_fit("y", "d", {}, controls_only({}), p), DataError);
    REQUIRE_THROWS_AS(tsls_fit("y", "d", {"d"}, controls_only({}), p), DataError);
    REQUIRE_THROWS_AS(tsls_fit("y", "d", {"z"}, controls_only({"z"}), p), DataError);
    REQUIRE_THROWS_AS(tsls_fit("y", "y", {"z"}, controls_only({}), p), DataError);
    REQUIRE_THROWS_AS(tsls_fit("y", "d", {"z", "z_dup"}, controls_only({}), p),
                      NumericError);
}

TEST_CASE("exogeneity diagnostic matches hand arithmetic") {
    std::vector<double> x = {0.3, -0.1, 0.4, 0.0, -0.2};
    std::vector<double> y = {0.1, 0.2, -0.3, 0.05, 0.0};
    auto diag = exogeneity_diag(x, y);
    REQUIRE(diag.n == 5);
    REQUIRE(diag.r == Catch::Approx(-0.5843772254664733).margin(1e-12));
    REQUIRE(diag.p_value == Catch::Approx(0.3007851793276047).margin(1e-10));

    auto self = exogeneity_diag(x, x);
    REQUIRE(self.r == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(self.p_value < 1e-12);
    std::vector<double> neg = x;
    for (auto& v : neg) v = -v;
    auto anti = exogeneity_diag(x, neg);
    REQUIRE(anti.r == Catch::Approx(-1.0).margin(1e-12));
    REQUIRE(anti.p_value < 1e-12);

    std::vector<double> with_nan = x, other = y;
    with_nan.push_back(std::numeric_limits<double>::quiet_NaN());
    other.push_back(0.2);
    REQUIRE(exogeneity_diag(with_nan, other).n == 5);

    REQUIRE_THROWS_AS(exogeneity_diag({1.0, 2.0}, {3.0, 4.0}), DataError);
    REQUIRE_THROWS_AS(exogeneity_diag({1.0, 1.0, 1.0}, {1.0, 2.0, 3.0}), DataError);
    REQUIRE_THROWS_AS(exogeneity_diag({1.0, 2.0, 3.0}, {1.0, 2.0}), DataError);
}

TEST_CASE("semi-elasticity scales the coefficient by mean income") {
    FitResult fit;
    fit.names = {"(intercept)", "ln_income"};
    fit.coef.resize(2);
    fit.coef << 0.5, 0.009;
    REQUIRE(semi_elasticity(fit, "ln_income", 3.12) == Catch::Approx(0.02808).margin(1e-15));
    REQUIRE(std::abs(semi_elasticity(fit, "ln_income", 3.12) - 0.027) < 0.0015);

    fit.coef(1) = 0.020;
    REQUIRE(semi_elasticity(fit, "ln_income", 1.73) == Catch::Approx(0.0346).margin(1e-15));
    REQUIRE(std::abs(semi_elasticity(fit, "ln_income", 1.73) - 0.035) < 5e-4);

    fit.coef(1) = 0.0;
    REQUIRE(semi_elasticity(fit, "ln_income", 9.9) == 0.0);
    REQUIRE_THROWS_AS(semi_elasticity(fit, "absent", 1.0), DataError);
}

TEST_CASE("estimate summary serializes the headline statistics") {
    auto p = cross_panel(61, 180);
    ModelSpec spec = controls_only({"x"});
    spec.weight_col = "w";
    auto iv = tsls_fit("y", "d", {"z"}, spec, p);

    auto rows = estimate_summary(iv, "d");
    REQUIRE(rows.size() == 5);
    REQUIRE(rows[0].first == "coefficient");
    REQUIRE(rows[0].second == iv.structural.coef_of("d"));
    REQUIRE(rows[1].first == "se");
    REQUIRE(rows[1].second == iv.structural.se_of("d"));
    REQUIRE(rows[2].first == "n");
    REQUIRE(rows[2].second == static_cast<double>(iv.n_obs));
    REQUIRE(rows[3].first == "mean_outcome");
    REQUIRE(rows[4].first == "f_stat");
    REQUIRE(rows[4].second == iv.kp_f);

    auto dir = std::filesystem::temp_directory_path() / "foodsec_iv_tests";
    std::filesystem::create_directories(dir);
    auto path = dir / "estimates.csv";
    rows.emplace_back("empty_when_missing", std::numeric_limits<double>::quiet_NaN());
    write_estimates_csv(path, rows);
    auto t = read_csv(path);
    REQUIRE(t.header == std::vector<std::string>{"statistic", "value"});
    REQUIRE(t.n_rows() == 6);
    REQUIRE(t.rows[0][0] == "coefficient");
    REQUIRE(parse_double(t.rows[0][1], 0, "value") == iv.structural.coef_of("d"));
    REQUIRE(t.rows[5][1].empty());
    std::filesystem::remove_all(dir);
}
