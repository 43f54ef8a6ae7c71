#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "metrik/rng.hpp"
#include "metrik/select.hpp"

using namespace metrik;
using nlohmann::json;

namespace {

PerfScore score(const std::string& name, double point, double lower, double upper) {
    PerfScore s;
    s.name = name;
    s.point = point;
    s.lower = lower;
    s.upper = upper;
    return s;
}

ScoredCandidate continuous_candidate(const std::string& id, double eff, double point,
                                     double half_width,
                                     ScoredCandidate::Origin origin = ScoredCandidate::Origin::learned) {
    ScoredCandidate c;
    c.imputer_id = "imp-" + id;
    c.pmd_id = "pmd-" + id;
    c.efficiency = eff;
    c.origin = origin;
    c.perf = {score("neg_nrmsd", point, point - half_width, point + half_width)};
    return c;
}

ScoredCandidate categorical_candidate(const std::string& id, double eff, double acc_lo,
                                      double acc_hi, double f1_lo, double f1_hi) {
    ScoredCandidate c;
    c.imputer_id = "imp-" + id;
    c.pmd_id = "pmd-" + id;
    c.efficiency = eff;
    c.perf = {score("pacc", 0.5 * (acc_lo + acc_hi), acc_lo, acc_hi),
              score("pmf1", 0.5 * (f1_lo + f1_hi), f1_lo, f1_hi)};
    return c;
}

// Key construction mirroring the documented ordering, for the brute-force oracle.
std::vector<double> oracle_key(const ScoredCandidate& c, DesignObjective::Mode mode) {
    std::vector<double> perf;
    for (const char* name : {"neg_nrmsd", "pacc", "pmf1"})
        for (const PerfScore& s : c.perf)
            if (s.name == name) perf.push_back(s.lower);
    std::vector<double> key;
    if (mode == DesignObjective::Mode::max_efficiency) {
        key.push_back(c.efficiency);
        key.insert(key.end(), perf.begin(), perf.end());
    } else {
        key = perf;
        key.push_back(c.efficiency);
    }
    return key;
}

bool oracle_eligible(const ScoredCandidate& cand, const ScoredCandidate& ref) {
    if (!(cand.efficiency > ref.efficiency)) return false;
    for (const PerfScore& rs : ref.perf) {
        const PerfScore* cs = nullptr;
        for (const PerfScore& s : cand.perf)
            if (s.name == rs.name) cs = &s;
        if (!cs || !(cs->lower > rs.upper)) return false;
    }
    return true;
}

// First-in-insertion-order argmax over eligible candidates.
Solution oracle_choose(const ScoredCandidate& ref, const std::vector<ScoredCandidate>& candidates,
                       DesignObjective::Mode mode) {
    Solution sol;
    sol.reference = ref;
    sol.chosen = ref;
    sol.fallback = true;
    std::vector<double> best_key;
    for (const ScoredCandidate& c : candidates) {
        if (!oracle_eligible(c, ref)) continue;
        const auto key = oracle_key(c, mode);
        if (sol.fallback || key > best_key) {
            sol.chosen = c;
            sol.fallback = false;
            best_key = key;
        }
    }
    return sol;
}

}  // namespace

TEST_CASE("eligible requires higher efficiency and non-overlapping intervals") {
    const ScoredCandidate ref = continuous_candidate("ref", 0.3, -0.10, 0.02);

    // Clears both gates: eff 0.5 > 0.3, lower -0.07 > upper -0.08.
    CHECK(eligible(continuous_candidate("a", 0.5, -0.05, 0.02), ref));
    // Interval overlap: lower -0.09 <= upper -0.08.
    CHECK_FALSE(eligible(continuous_candidate("b", 0.5, -0.07, 0.02), ref));
    // Equal efficiency fails the strict inequality.
    CHECK_FALSE(eligible(continuous_candidate("c", 0.3, -0.01, 0.001), ref));
    // Lower efficiency fails regardless of performance.
    CHECK_FALSE(eligible(continuous_candidate("d", 0.1, -0.01, 0.001), ref));
    // Touching bounds (lower == upper) are not strictly greater.
    ScoredCandidate touch = continuous_candidate("e", 0.5, -0.06, 0.02);
    touch.perf[0].lower = ref.perf[0].upper;
    CHECK_FALSE(eligible(touch, ref));
}

TEST_CASE("categorical eligibility needs both pooled scores to clear") {
    const ScoredCandidate ref = categorical_candidate("ref", 0.3, 0.60, 0.70, 0.50, 0.60);
    CHECK(eligible(categorical_candidate("a", 0.5, 0.71, 0.80, 0.61, 0.70), ref));
    // pacc clears but pmf1 overlaps.
    CHECK_FALSE(eligible(categorical_candidate("b", 0.5, 0.71, 0.80, 0.55, 0.70), ref));
    // pmf1 clears but pacc overlaps.
    CHECK_FALSE(eligible(categorical_candidate("c", 0.5, 0.65, 0.80, 0.61, 0.70), ref));
}

TEST_CASE("choose picks by objective-ordered lower bounds and falls back to the reference") {
    const ScoredCandidate ref = continuous_candidate("ref", 0.3, -0.10, 0.01,
                                                     ScoredCandidate::Origin::reference);
    const std::vector<ScoredCandidate> candidates = {
        continuous_candidate("lo_eff_good_perf", 0.4, -0.02, 0.01),
        continuous_candidate("hi_eff_ok_perf", 0.7, -0.05, 0.01),
    };

    SUBCASE("max_efficiency prefers the higher-efficiency survivor") {
        const auto sols =
            choose({ref}, candidates, {DesignObjective::Mode::max_efficiency});
        REQUIRE(sols.size() == 1);
        CHECK_FALSE(sols[0].fallback);
        CHECK(sols[0].chosen.pmd_id == "pmd-hi_eff_ok_perf");
    }
    SUBCASE("max_performance prefers the better-performing survivor") {
        const auto sols =
            choose({ref}, candidates, {DesignObjective::Mode::max_performance});
        REQUIRE(sols.size() == 1);
        CHECK(sols[0].chosen.pmd_id == "pmd-lo_eff_good_perf");
    }
    SUBCASE("no survivors emits the reference pair") {
        const std::vector<ScoredCandidate> weak = {
            continuous_candidate("worse", 0.5, -0.12, 0.01)};
        const auto sols = choose({ref}, weak, {DesignObjective::Mode::max_efficiency});
        REQUIRE(sols.size() == 1);
        CHECK(sols[0].fallback);
        CHECK(sols[0].chosen.pmd_id == ref.pmd_id);
        CHECK(sols[0].chosen.imputer_id == ref.imputer_id);
    }
    SUBCASE("one solution per reference, in reference order") {
        const ScoredCandidate ref2 = continuous_candidate("ref2", 0.65, -0.03, 0.005,
                                                          ScoredCandidate::Origin::reference);
        const auto sols =
            choose({ref, ref2}, candidates, {DesignObjective::Mode::max_efficiency});
        REQUIRE(sols.size() == 2);
        CHECK(sols[0].reference.pmd_id == ref.pmd_id);
        CHECK(sols[1].reference.pmd_id == ref2.pmd_id);
        // Against ref2 only the 0.7-efficiency candidate clears the efficiency
        // gate, and its interval overlaps, so ref2 falls back.
        CHECK(sols[1].fallback);
    }
}

TEST_CASE("ties keep insertion order, making selection stable") {
    const ScoredCandidate ref = continuous_candidate("ref", 0.1, -0.50, 0.01,
                                                     ScoredCandidate::Origin::reference);
    // Identical keys; the first inserted must win.
    std::vector<ScoredCandidate> candidates = {
        continuous_candidate("first", 0.5, -0.05, 0.01),
        continuous_candidate("second", 0.5, -0.05, 0.01),
    };
    auto sols = choose({ref}, candidates, {DesignObjective::Mode::max_efficiency});
    CHECK(sols[0].chosen.pmd_id == "pmd-first");
    sols = choose({ref}, candidates, {DesignObjective::Mode::max_performance});
    CHECK(sols[0].chosen.pmd_id == "pmd-first");

    std::swap(candidates[0], candidates[1]);
    sols = choose({ref}, candidates, {DesignObjective::Mode::max_efficiency});
    CHECK(sols[0].chosen.pmd_id == "pmd-second");
}

TEST_CASE("choose agrees with a brute-force oracle on random candidate sets") {
    Rng rng(1234);
    for (int trial = 0; trial < 400; ++trial) {
        const bool categorical = trial % 2 == 1;
        auto random_candidate = [&](const std::string& id) {
            if (!categorical) {
                const double point = -0.5 * rng.uniform();
                return continuous_candidate(id, 0.05 + 0.9 * rng.uniform(), point,
                                            0.1 * rng.uniform());
            }
            const double a = rng.uniform(), f = rng.uniform();
            return categorical_candidate(id, 0.05 + 0.9 * rng.uniform(), a, a + 0.2 * rng.uniform(),
                                         f, f + 0.2 * rng.uniform());
        };
        ScoredCandidate ref = random_candidate("ref");
        ref.origin = ScoredCandidate::Origin::reference;
        std::vector<ScoredCandidate> candidates;
        const int n = 1 + static_cast<int>(rng.uniform_index(12));
        for (int i = 0; i < n; ++i) candidates.push_back(random_candidate(std::to_string(i)));
        // Coin-flip duplicates to exercise tie handling.
        if (rng.uniform() < 0.3 && !candidates.empty())
            candidates.push_back(candidates[rng.uniform_index(candidates.size())]);

        for (DesignObjective::Mode mode :
             {DesignObjective::Mode::max_efficiency, DesignObjective::Mode::max_performance}) {
            const auto sols = choose({ref}, candidates, {mode});
            const Solution expect = oracle_choose(ref, candidates, mode);
            REQUIRE(sols.size() == 1);
            INFO("trial ", trial, " categorical ", categorical);
            CHECK(sols[0].fallback == expect.fallback);
            CHECK(sols[0].chosen.pmd_id == expect.chosen.pmd_id);
            CHECK(sols[0].chosen.efficiency == expect.chosen.efficiency);
        }
    }
}

TEST_CASE("the two objectives are consistent and selection is idempotent") {
    Rng rng(777);
    for (int trial = 0; trial < 200; ++trial) {
        ScoredCandidate ref = continuous_candidate("ref", 0.2 + 0.2 * rng.uniform(),
                                                   -0.3 - 0.2 * rng.uniform(), 0.02);
        ref.origin = ScoredCandidate::Origin::reference;
        std::vector<ScoredCandidate> candidates;
        for (int i = 0; i < 8; ++i) {
            const double point = -0.4 * rng.uniform();
            candidates.push_back(continuous_candidate(std::to_string(i),
                                                      0.05 + 0.9 * rng.uniform(), point,
                                                      0.05 * rng.uniform()));
        }
        const auto eff_sol = choose({ref}, candidates, {DesignObjective::Mode::max_efficiency});
        const auto perf_sol = choose({ref}, candidates, {DesignObjective::Mode::max_performance});
        // Both objectives drew from the same eligible set, so each dominates
        // the other on its own criterion.
        CHECK(eff_sol[0].chosen.efficiency >= perf_sol[0].chosen.efficiency);
        CHECK(perf_sol[0].chosen.perf[0].lower >= eff_sol[0].chosen.perf[0].lower);
        CHECK(eff_sol[0].fallback == perf_sol[0].fallback);

        // Re-running selection on {chosen} yields the chosen pair again: the
        // solution set is a fixed point.
        for (const auto& sols : {eff_sol, perf_sol}) {
            const auto again = choose({ref}, {sols[0].chosen},
                                      {DesignObjective::Mode::max_efficiency});
            if (!sols[0].fallback) {
                CHECK_FALSE(again[0].fallback);
                CHECK(again[0].chosen.pmd_id == sols[0].chosen.pmd_id);
            } else {
                CHECK(again[0].chosen.pmd_id == ref.pmd_id);
            }
        }
    }
}

TEST_CASE("with_point_intervals collapses bounds so gating uses points") {
    const ScoredCandidate ref0 = continuous_candidate("ref", 0.3, -0.10, 0.05);
    const ScoredCandidate cand0 = continuous_candidate("c", 0.5, -0.08, 0.05);
    // Wide intervals overlap, so the candidate is blocked...
    CHECK_FALSE(eligible(cand0, ref0));
    // ...until intervals collapse to points: -0.08 > -0.10.
    CHECK(eligible(with_point_intervals(cand0), with_point_intervals(ref0)));

    const ScoredCandidate flat = with_point_intervals(cand0);
    CHECK(flat.perf[0].lower == flat.perf[0].point);
    CHECK(flat.perf[0].upper == flat.perf[0].point);
}

TEST_CASE("rank_report lists every candidate with rank, eligibility and the chosen flag") {
    const ScoredCandidate ref = continuous_candidate("ref", 0.3, -0.10, 0.01,
                                                     ScoredCandidate::Origin::reference);
    const std::vector<ScoredCandidate> candidates = {
        continuous_candidate("a", 0.4, -0.02, 0.01),
        continuous_candidate("b", 0.7, -0.05, 0.01),
        continuous_candidate("c", 0.2, -0.30, 0.01),
    };
    const auto report = rank_report({ref}, candidates, {DesignObjective::Mode::max_efficiency});
    REQUIRE(report.size() == 1);
    REQUIRE(report[0].rows.size() == 3);
    CHECK(report[0].reference.pmd_id == "pmd-ref");

    // Ordered by descending (efficiency, lower): b, a, c.
    CHECK(report[0].rows[0].candidate.pmd_id == "pmd-b");
    CHECK(report[0].rows[1].candidate.pmd_id == "pmd-a");
    CHECK(report[0].rows[2].candidate.pmd_id == "pmd-c");
    for (size_t i = 0; i < 3; ++i) CHECK(report[0].rows[i].rank == static_cast<int>(i) + 1);
    CHECK(report[0].rows[0].is_eligible);
    CHECK(report[0].rows[0].chosen);
    CHECK(report[0].rows[1].is_eligible);
    CHECK_FALSE(report[0].rows[1].chosen);
    CHECK_FALSE(report[0].rows[2].is_eligible);

    // The chosen row matches what choose() returns.
    const auto sols = choose({ref}, candidates, {DesignObjective::Mode::max_efficiency});
    CHECK(sols[0].chosen.pmd_id == report[0].rows[0].candidate.pmd_id);
}

TEST_CASE("solution_set_json exposes ids, efficiency, scores and the fallback flag") {
    const ScoredCandidate ref = continuous_candidate("ref", 0.3, -0.10, 0.01,
                                                     ScoredCandidate::Origin::reference);
    const std::vector<ScoredCandidate> candidates = {
        continuous_candidate("win", 0.5, -0.02, 0.01)};
    const auto sols = choose({ref}, candidates, {DesignObjective::Mode::max_efficiency});
    const json j = json::parse(solution_set_json(sols));

    REQUIRE(j.is_array());
    REQUIRE(j.size() == 1);
    CHECK(j[0].at("reference_id") == "pmd-ref");
    CHECK(j[0].at("fallback") == false);
    CHECK(j[0].at("chosen").at("pmd_id") == "pmd-win");
    CHECK(j[0].at("chosen").at("imputer_id") == "imp-win");
    CHECK(j[0].at("chosen").at("efficiency").get<double>() == 0.5);
    REQUIRE(j[0].at("chosen").at("scores").size() == 1);
    CHECK(j[0].at("chosen").at("scores")[0].at("name") == "neg_nrmsd");
}

TEST_CASE("audit_table_csv emits one row per candidate with score and audit columns") {
    ScoredCandidate ref = continuous_candidate("ref", 0.3, -0.10, 0.01,
                                               ScoredCandidate::Origin::reference);
    ScoredCandidate a = continuous_candidate("a", 0.4, -0.02, 0.01);
    a.per_metric["hr.nrmsd"] = 0.031;
    ScoredCandidate b = continuous_candidate("b", 0.7, -0.05, 0.01);
    const auto report = rank_report({ref}, {a, b}, {DesignObjective::Mode::max_efficiency});
    const std::string csv = audit_table_csv(report);

    const auto header_end = csv.find('\n');
    const std::string header = csv.substr(0, header_end);
    CHECK(header.find("reference_pmd") == 0);
    CHECK(header.find("neg_nrmsd_point") != std::string::npos);
    CHECK(header.find("neg_nrmsd_lower") != std::string::npos);
    CHECK(header.find("hr.nrmsd") != std::string::npos);
    CHECK(header.find(",eligible,chosen") != std::string::npos);

    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 rows
    CHECK(csv.find("pmd-b") != std::string::npos);
    CHECK(csv.find(",learned,") != std::string::npos);
    CHECK(csv.find("0.031") != std::string::npos);
}
