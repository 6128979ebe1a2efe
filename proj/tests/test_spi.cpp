#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "foodsec/rng.hpp"
#include "foodsec/spi.hpp"
#include "foodsec/stats.hpp"

using namespace foodsec;

namespace {

PolicyRecord all_generous_some() {
    PolicyRecord r;
    r.vehicle_exempt_some = 1.0;
    r.bbce = r.simplified_reporting = r.online_application = 1.0;
    r.ebt_share = r.outreach_ad = 1.0;
    return r;
}

PolicyRecord all_restrictive() {
    PolicyRecord r;
    r.noncitizen_restriction = r.short_recert_share = r.fingerprint_required = 1.0;
    return r;
}

/// States differ in a latent generosity propensity, which makes policies
/// co-move the way real adoption patterns do.
std::vector<PolicyRecord> random_policy_panel(std::uint64_t seed, int n_states, int n_years) {
    std::vector<PolicyRecord> records;
    for (int s = 0; s < n_states; ++s) {
        PhiloxStream rng(seed, static_cast<std::uint64_t>(s), 0, 0);
        double g = rng.uniform();
        double p_gen = 0.2 + 0.6 * g;
        double p_res = 0.8 - 0.6 * g;
        for (int y = 0; y < n_years; ++y) {
            PolicyRecord r;
            r.state_id = s + 1;
            r.year = 1997 + y;
            r.vehicle_exempt_some = rng.bernoulli(p_gen) ? 1.0 : 0.0;
            if (r.vehicle_exempt_some == 0.0)
                r.vehicle_exempt_all = rng.bernoulli(0.5 * p_gen) ? 1.0 : 0.0;
            r.bbce = rng.bernoulli(p_gen) ? 1.0 : 0.0;
            r.simplified_reporting = rng.bernoulli(p_gen) ? 1.0 : 0.0;
            r.online_application = rng.bernoulli(p_gen) ? 1.0 : 0.0;
            r.outreach_ad = rng.bernoulli(p_gen) ? 1.0 : 0.0;
            r.noncitizen_restriction = rng.bernoulli(p_res) ? 1.0 : 0.0;
            r.fingerprint_required = rng.bernoulli(p_res) ? 1.0 : 0.0;
            r.short_recert_share = rng.uniform() * (0.2 + 0.8 * (1.0 - g));
            r.ebt_share = rng.uniform() * (0.4 + 0.6 * g);
            records.push_back(r);
        }
    }
    return records;
}

} // namespace

TEST_CASE("unweighted SPI hits the exact endpoints") {
    CHECK(unweighted_spi(all_generous_some()) == 10.0);
    auto gen_all = all_generous_some();
    gen_all.vehicle_exempt_some = 0.0;
    gen_all.vehicle_exempt_all = 1.0;
    CHECK(unweighted_spi(gen_all) == 10.0);
    CHECK(unweighted_spi(all_restrictive()) == 1.0);
    CHECK(unweighted_spi(PolicyRecord{}) == 4.0);
}

TEST_CASE("weighted SPI reproduces the endpoint arithmetic") {
    double hi_raw = 1.624 + 1.828 + 1.132 + 0.456 + 0.276 + 0.148;
    double lo_raw = -(4.800 + 3.180 + 1.864);
    CHECK(hi_raw == Catch::Approx(5.464).margin(1e-12));
    CHECK(lo_raw == Catch::Approx(-9.844).margin(1e-12));
    CHECK(std::fabs(weighted_spi(all_generous_some()) - 10.0) <= 1e-12);
    CHECK(std::fabs(weighted_spi(all_restrictive()) - 1.0) <= 1e-12);
    CHECK(weighted_spi(PolicyRecord{}) == Catch::Approx(6.787562059054089).epsilon(1e-13));
}

TEST_CASE("weighted SPI with the smaller vehicle exemption stays below 10") {
    auto r = all_generous_some();
    r.vehicle_exempt_some = 0.0;
    r.vehicle_exempt_all = 1.0;
    CHECK(weighted_spi(r) == Catch::Approx(9.9576691925790435).epsilon(1e-13));
}

TEST_CASE("fractional policies contribute their share to both indices") {
    PolicyRecord r;
    r.vehicle_exempt_some = 1.0;
    r.bbce = 1.0;
    r.ebt_share = 0.25;
    r.noncitizen_restriction = 1.0;
    r.short_recert_share = 0.4;
    CHECK(unweighted_spi(r) == Catch::Approx(4.85).epsilon(1e-13));
    CHECK(weighted_spi(r) == Catch::Approx(5.287758035014372).epsilon(1e-13));
}

TEST_CASE("SPI rejects invalid records") {
    PolicyRecord both;
    both.vehicle_exempt_some = both.vehicle_exempt_all = 1.0;
    CHECK_THROWS_AS(unweighted_spi(both), DataError);
    CHECK_THROWS_AS(weighted_spi(both), DataError);

    PolicyRecord frac;
    frac.bbce = 0.5;
    CHECK_THROWS_AS(unweighted_spi(frac), DataError);

    PolicyRecord share;
    share.ebt_share = 1.2;
    CHECK_THROWS_AS(weighted_spi(share), DataError);
}

TEST_CASE("both indices are monotone in each policy") {
    auto records = random_policy_panel(7, 25, 3);
    for (auto r : records) {
        auto flip_up = [&](double PolicyRecord::*field, bool generous) {
            auto base = r;
            if (field == &PolicyRecord::vehicle_exempt_some ||
                field == &PolicyRecord::vehicle_exempt_all)
                base.vehicle_exempt_some = base.vehicle_exempt_all = 0.0;
            base.*field = 0.0;
            auto flipped = base;
            flipped.*field = 1.0;
            double du = unweighted_spi(flipped) - unweighted_spi(base);
            double dw = weighted_spi(flipped) - weighted_spi(base);
            if (generous) {
                CHECK(du >= 0.0);
                CHECK(dw >= 0.0);
            } else {
                CHECK(du <= 0.0);
                CHECK(dw <= 0.0);
            }
        };
        flip_up(&PolicyRecord::vehicle_exempt_some, true);
        flip_up(&PolicyRecord::vehicle_exempt_all, true);
        flip_up(&PolicyRecord::bbce, true);
        flip_up(&PolicyRecord::simplified_reporting, true);
        flip_up(&PolicyRecord::online_application, true);
        flip_up(&PolicyRecord::outreach_ad, true);
        flip_up(&PolicyRecord::noncitizen_restriction, false);
        flip_up(&PolicyRecord::fingerprint_required, false);

        auto base = r;
        base.short_recert_share = 0.1;
        auto up = base;
        up.short_recert_share = 0.9;
        CHECK(unweighted_spi(up) <= unweighted_spi(base));
        CHECK(weighted_spi(up) <= weighted_spi(base));
        base.ebt_share = 0.1;
        up = base;
        up.ebt_share = 0.9;
        CHECK(unweighted_spi(up) >= unweighted_spi(base));
        CHECK(weighted_spi(up) >= weighted_spi(base));
    }
}

TEST_CASE("scaled indices stay inside [1, 10] on random panels") {
    for (const auto& r : random_policy_panel(11, 40, 6)) {
        double u = unweighted_spi(r);
        double w = weighted_spi(r);
        CHECK(u >= 1.0);
        CHECK(u <= 10.0);
        CHECK(w >= 1.0);
        CHECK(w <= 10.0);
    }
}

TEST_CASE("weighted and unweighted indices correlate strongly") {
    auto records = random_policy_panel(13, 60, 8);
    std::vector<double> u, w;
    for (const auto& r : records) {
        u.push_back(unweighted_spi(r));
        w.push_back(weighted_spi(r));
    }
    CHECK(pearson_r(u, w) > 0.8);
}

TEST_CASE("validate_policy_panel reports duplicates, violations, and gaps") {
    auto clean = random_policy_panel(17, 5, 4);
    CHECK(validate_policy_panel(clean).empty());

    auto records = clean;
    records.push_back(records.front()); // duplicate state-year
    PolicyRecord bad;
    bad.state_id = 99;
    bad.year = 2001;
    bad.vehicle_exempt_some = bad.vehicle_exempt_all = 1.0;
    records.push_back(bad);
    PolicyRecord gap_a;
    gap_a.state_id = 50;
    gap_a.year = 2000;
    PolicyRecord gap_b = gap_a;
    gap_b.year = 2003;
    records.push_back(gap_a);
    records.push_back(gap_b);

    auto report = validate_policy_panel(records);
    REQUIRE(report.size() == 3);
    bool has_dup = false, has_excl = false, has_gap = false;
    for (const auto& msg : report) {
        if (msg.find("duplicate") != std::string::npos) has_dup = true;
        if (msg.find("mutually exclusive") != std::string::npos &&
            msg.find("state 99") != std::string::npos)
            has_excl = true;
        if (msg.find("2001..2002 missing") != std::string::npos &&
            msg.find("state 50") != std::string::npos)
            has_gap = true;
    }
    CHECK(has_dup);
    CHECK(has_excl);
    CHECK(has_gap);
}

TEST_CASE("policy and SPI tables round trip through CSV") {
    auto records = random_policy_panel(19, 6, 3);
    std::string policy_path = "policy_roundtrip_test.csv";
    write_policy_csv(policy_path, records);
    auto back = read_policy_csv(policy_path);
    std::remove(policy_path.c_str());
    REQUIRE(back.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(back[i].state_id == records[i].state_id);
        CHECK(back[i].year == records[i].year);
        CHECK(back[i].short_recert_share == records[i].short_recert_share);
        CHECK(back[i].ebt_share == records[i].ebt_share);
        CHECK(back[i].noncitizen_restriction == records[i].noncitizen_restriction);
    }

    auto table = compute_spi_table(records);
    REQUIRE(table.size() == records.size());
    for (std::size_t i = 1; i < table.size(); ++i)
        CHECK(std::tie(table[i - 1].state_id, table[i - 1].year) <
              std::tie(table[i].state_id, table[i].year));

    std::string spi_path = "spi_roundtrip_test.csv";
    write_spi_csv(spi_path, table);
    auto t = read_csv(spi_path);
    std::remove(spi_path.c_str());
    REQUIRE(t.header == std::vector<std::string>{"state", "year", "spi_unweighted",
                                                 "spi_weighted"});
    REQUIRE(t.rows.size() == table.size());
    CHECK(parse_double(t.rows[0][2], 2, "spi_unweighted") ==
          Catch::Approx(table[0].spi_unweighted).epsilon(1e-14));
}

TEST_CASE("join_spi attaches the chosen variant by state and year") {
    auto records = random_policy_panel(23, 3, 2);
    auto table = compute_spi_table(records);

    PanelDataset p;
    p.individual_id = {1, 2, 3};
    p.wave_year = {1997, 1998, 1997};
    p.state_id = {1, 2, 3};
    p.cols = DataTable(3);
    auto joined = join_spi(p, table, true);
    REQUIRE(joined.has("spi"));
    for (std::size_t i = 0; i < joined.n_rows(); ++i) {
        for (const auto& row : table)
            if (row.state_id == p.state_id[i] && row.year == p.wave_year[i])
                CHECK(joined.col("spi")[i] == row.spi_weighted);
    }
    auto unweighted = join_spi(p, table, false, "spi_u");
    CHECK(unweighted.col("spi_u")[0] ==
          compute_spi_table({records[0]}).front().spi_unweighted);

    PanelDataset missing = p;
    missing.wave_year[1] = 1890;
    CHECK_THROWS_AS(join_spi(missing, table, true), DataError);

    auto dup = table;
    dup.push_back(table.front());
    CHECK_THROWS_AS(join_spi(p, dup, true), DataError);
}
