#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <vector>

#include "metrik/dataset.hpp"
#include "metrik/errors.hpp"

using namespace metrik;

namespace {

SynthConfig small_config() {
    SynthConfig c;
    c.n_subjects = 12;
    c.n_timepoints = 5;
    c.n_metrics = 8;
    c.block_sizes = {4, 4};
    return c;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, sa = 0, sb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        sa += (a[i] - ma) * (a[i] - ma);
        sb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(sa * sb);
}

}  // namespace

TEST_CASE("synthesize produces the requested shape and is seed-deterministic") {
    const SynthConfig c = small_config();
    const RctDataset a = synthesize(c, 7);
    const RctDataset b = synthesize(c, 7);
    const RctDataset d = synthesize(c, 8);

    CHECK(a.n_subjects() == 12);
    CHECK(a.n_timepoints() == 5);
    CHECK(a.n_metrics() == 8);
    CHECK(a.metrics.size() == 8);
    CHECK(a.subject_ids.size() == 12);
    CHECK_FALSE(a.preprocessed);
    CHECK(a.values == b.values);
    CHECK(a.subject_ids == b.subject_ids);
    CHECK_FALSE(a.values == d.values);
}

TEST_CASE("synthesize blocks correlate internally but not across blocks") {
    SynthConfig c;
    c.n_subjects = 60;
    c.n_timepoints = 6;
    c.n_metrics = 8;
    c.block_sizes = {4, 4};
    c.noise_sd = 0.05;
    const RctDataset data = synthesize(c, 3);

    auto column = [&](int m) {
        std::vector<double> v;
        for (int i = 0; i < data.n_subjects(); ++i)
            for (int t = 0; t < data.n_timepoints(); ++t) v.push_back(data.values(i, t, m));
        return v;
    };
    // Metrics 0 and 1 share a latent series; metrics 0 and 4 do not.
    CHECK(pearson(column(0), column(1)) > 0.8);
    CHECK(std::abs(pearson(column(0), column(4))) < 0.2);
}

TEST_CASE("synthesize honors categorical fraction and category layout") {
    SynthConfig c = small_config();
    c.fraction_categorical = 0.5;
    c.n_categories = 3;
    const RctDataset data = synthesize(c, 11);

    int n_cat = 0;
    for (const MetricSpec& m : data.metrics)
        if (m.kind == MetricKind::categorical) {
            ++n_cat;
            CHECK(m.category_count() == 3);
        }
    CHECK(n_cat == 4);
    for (int i = 0; i < data.n_subjects(); ++i)
        for (int t = 0; t < data.n_timepoints(); ++t)
            for (int m = 0; m < data.n_metrics(); ++m)
                if (data.metrics[m].kind == MetricKind::categorical && data.observed.collected(i, t, m)) {
                    const double v = data.values(i, t, m);
                    CHECK(v == std::floor(v));
                    CHECK(v >= 0.0);
                    CHECK(v <= 2.0);
                }
}

TEST_CASE("synthesize native missingness marks cells unobserved with NaN values") {
    SynthConfig c = small_config();
    c.n_subjects = 40;
    c.native_missing_rate = 0.2;
    const RctDataset data = synthesize(c, 5);

    int missing = 0, total = 0;
    for (int i = 0; i < data.n_subjects(); ++i)
        for (int t = 0; t < data.n_timepoints(); ++t)
            for (int m = 0; m < data.n_metrics(); ++m) {
                ++total;
                if (!data.observed.collected(i, t, m)) {
                    ++missing;
                    CHECK(std::isnan(data.values(i, t, m)));
                } else {
                    CHECK_FALSE(std::isnan(data.values(i, t, m)));
                }
            }
    const double rate = static_cast<double>(missing) / total;
    CHECK(rate > 0.15);
    CHECK(rate < 0.25);
}

TEST_CASE("synthesize protocol eligibility rate shapes the protocol mask") {
    SynthConfig c = small_config();
    const RctDataset full = synthesize(c, 2);
    CHECK(full.protocol.eligible_count() == c.n_timepoints * c.n_metrics);

    c.protocol_eligible_rate = 0.5;
    const RctDataset half = synthesize(c, 2);
    const int n = half.protocol.eligible_count();
    CHECK(n > 0);
    CHECK(n < c.n_timepoints * c.n_metrics);
}

TEST_CASE("compute_stats matches hand computation on a tiny dataset") {
    RctDataset data;
    data.values = Cube(2, 2, 2);
    data.metrics.resize(2);
    data.metrics[0].name = "bp";
    data.metrics[1].name = "grade";
    data.metrics[1].kind = MetricKind::categorical;
    data.metrics[1].categories = {"a", "b", "c"};
    data.subject_ids = {"s0", "s1"};
    data.protocol.eligible = BinaryMatrix(2, 2);
    data.protocol.eligible.fill(1);
    data.observed.collected = BinaryCube(2, 2, 2);
    data.observed.collected.fill(1);

    // subject 0: bp = {10, 20}, grade = {0, 2}; subject 1: bp = {30, 40}, grade = {2, 2}
    data.values(0, 0, 0) = 10;
    data.values(0, 1, 0) = 20;
    data.values(1, 0, 0) = 30;
    data.values(1, 1, 0) = 40;
    data.values(0, 0, 1) = 0;
    data.values(0, 1, 1) = 2;
    data.values(1, 0, 1) = 2;
    data.values(1, 1, 1) = 2;
    data.observed.collected(1, 1, 0) = 0;  // bp 40 unobserved

    const NormStats all = compute_stats(data);
    CHECK(all.per_metric[0].fill == doctest::Approx(20.0));  // (10+20+30)/3
    CHECK(all.per_metric[0].min == 10.0);
    CHECK(all.per_metric[0].max == 30.0);
    CHECK(all.per_metric[1].fill == 2.0);  // mode
    CHECK(all.per_metric[1].min == 0.0);
    CHECK(all.per_metric[1].max == 2.0);

    const NormStats first = compute_stats(data, {0});
    CHECK(first.per_metric[0].fill == doctest::Approx(15.0));
    CHECK(first.per_metric[0].max == 20.0);
    CHECK(first.per_metric[1].fill == 0.0);  // tie 0 vs 2 -> lowest index

    SUBCASE("metric with no observed entries in the subset is rejected") {
        data.observed.collected(0, 0, 0) = 0;
        data.observed.collected(0, 1, 0) = 0;
        CHECK_THROWS_AS(compute_stats(data, {0}), EvalError);
    }
}

TEST_CASE("preprocess fills missing cells and min-max normalizes continuous metrics") {
    SynthConfig c = small_config();
    c.native_missing_rate = 0.15;
    c.fraction_categorical = 0.25;
    const RctDataset raw = synthesize(c, 9);
    const RctDataset done = preprocess(raw);

    CHECK(done.preprocessed);
    CHECK(done.observed.collected == raw.observed.collected);  // mask survives filling
    bool saw_zero = false, saw_one = false;
    for (int m = 0; m < done.n_metrics(); ++m) {
        if (done.metrics[m].kind != MetricKind::continuous) continue;
        CHECK(done.metrics[m].observed_min == 0.0);
        CHECK(done.metrics[m].observed_max == 1.0);
        for (int i = 0; i < done.n_subjects(); ++i)
            for (int t = 0; t < done.n_timepoints(); ++t) {
                const double v = done.values(i, t, m);
                CHECK_FALSE(std::isnan(v));
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
                if (v == 0.0) saw_zero = true;
                if (v == 1.0) saw_one = true;
            }
    }
    CHECK(saw_zero);
    CHECK(saw_one);
}

TEST_CASE("preprocess with external stats can push values outside the unit interval") {
    const SynthConfig c = small_config();
    const RctDataset raw = synthesize(c, 4);
    const std::vector<int> head = {0, 1, 2, 3, 4, 5};
    const NormStats stats = compute_stats(raw, head);
    const RctDataset done = preprocess(raw, &stats);

    // Subjects outside `head` may exceed the pilot-train extremes.
    double mn = 1e9, mx = -1e9;
    for (int i = 6; i < done.n_subjects(); ++i)
        for (int t = 0; t < done.n_timepoints(); ++t)
            for (int m = 0; m < done.n_metrics(); ++m) {
                mn = std::min(mn, done.values(i, t, m));
                mx = std::max(mx, done.values(i, t, m));
            }
    CHECK((mn < 0.0 || mx > 1.0));

    // The head subjects themselves stay inside [0, 1].
    for (int i : head)
        for (int t = 0; t < done.n_timepoints(); ++t)
            for (int m = 0; m < done.n_metrics(); ++m) {
                CHECK(done.values(i, t, m) >= 0.0);
                CHECK(done.values(i, t, m) <= 1.0);
            }
}

TEST_CASE("preprocess mode-fills categorical metrics without rescaling them") {
    RctDataset data;
    data.values = Cube(1, 3, 1);
    data.metrics.resize(1);
    data.metrics[0].name = "grade";
    data.metrics[0].kind = MetricKind::categorical;
    data.metrics[0].categories = {"a", "b", "c", "d"};
    data.subject_ids = {"s0"};
    data.protocol.eligible = BinaryMatrix(3, 1);
    data.protocol.eligible.fill(1);
    data.observed.collected = BinaryCube(1, 3, 1);
    data.observed.collected.fill(1);
    data.values(0, 0, 0) = 3;
    data.values(0, 1, 0) = 3;
    data.values(0, 2, 0) = std::numeric_limits<double>::quiet_NaN();
    data.observed.collected(0, 2, 0) = 0;

    const RctDataset done = preprocess(data);
    CHECK(done.values(0, 0, 0) == 3.0);  // indices untouched
    CHECK(done.values(0, 2, 0) == 3.0);  // filled with mode
}

TEST_CASE("split uses the floor rule and keeps subjects disjoint") {
    SynthConfig c;
    c.n_subjects = 60;
    c.n_timepoints = 4;
    c.n_metrics = 6;
    c.block_sizes = {3, 3};
    const RctDataset data = synthesize(c, 1);

    auto [train, val] = split(data, 0.8, 42);
    CHECK(train.n_subjects() == 48);
    CHECK(val.n_subjects() == 12);

    std::set<std::string> ids;
    for (const auto& id : train.subject_ids) ids.insert(id);
    for (const auto& id : val.subject_ids) CHECK(ids.count(id) == 0);
    for (const auto& id : val.subject_ids) ids.insert(id);
    CHECK(ids.size() == 60);

    auto [train2, val2] = split(data, 0.8, 42);
    CHECK(train.subject_ids == train2.subject_ids);
    auto [train3, val3] = split(data, 0.8, 43);
    CHECK(train.subject_ids != train3.subject_ids);

    SUBCASE("degenerate fractions are rejected") {
        CHECK_THROWS_AS(split(data, 0.0, 1), ConfigError);
        CHECK_THROWS_AS(split(data, 1.0, 1), ConfigError);
    }
}

TEST_CASE("shuffled_subjects is a deterministic permutation") {
    const std::vector<int> a = shuffled_subjects(10, 5);
    const std::vector<int> b = shuffled_subjects(10, 5);
    CHECK(a == b);
    std::set<int> seen(a.begin(), a.end());
    CHECK(seen.size() == 10);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == 9);
    CHECK(shuffled_subjects(10, 6) != a);
}

TEST_CASE("subset_subjects preserves the given order and slices every field") {
    const RctDataset data = synthesize(small_config(), 13);
    const RctDataset sub = subset_subjects(data, {5, 2, 9});
    CHECK(sub.n_subjects() == 3);
    CHECK(sub.subject_ids[0] == data.subject_ids[5]);
    CHECK(sub.subject_ids[1] == data.subject_ids[2]);
    CHECK(sub.subject_ids[2] == data.subject_ids[9]);
    for (int t = 0; t < sub.n_timepoints(); ++t)
        for (int m = 0; m < sub.n_metrics(); ++m) {
            CHECK(sub.values(0, t, m) == data.values(5, t, m));
            CHECK(sub.values(2, t, m) == data.values(9, t, m));
        }
    CHECK(sub.protocol.eligible == data.protocol.eligible);
}

TEST_CASE("subset_metrics slices values, specs and protocol columns") {
    SynthConfig c = small_config();
    c.fraction_categorical = 0.5;
    c.protocol_eligible_rate = 0.7;
    const RctDataset data = synthesize(c, 17);

    const std::vector<int> cont = metric_indices_of_kind(data, MetricKind::continuous);
    const std::vector<int> cat = metric_indices_of_kind(data, MetricKind::categorical);
    CHECK(cont.size() + cat.size() == static_cast<size_t>(data.n_metrics()));

    const RctDataset sub = subset_metrics(data, cat);
    CHECK(sub.n_metrics() == static_cast<int>(cat.size()));
    CHECK(sub.n_subjects() == data.n_subjects());
    for (size_t j = 0; j < cat.size(); ++j) {
        CHECK(sub.metrics[j].name == data.metrics[cat[j]].name);
        CHECK(sub.metrics[j].kind == MetricKind::categorical);
        for (int t = 0; t < data.n_timepoints(); ++t) {
            CHECK(sub.protocol.eligible(t, static_cast<int>(j)) == data.protocol.eligible(t, cat[j]));
            CHECK(sub.values(1, t, static_cast<int>(j)) == data.values(1, t, cat[j]));
        }
    }
}
