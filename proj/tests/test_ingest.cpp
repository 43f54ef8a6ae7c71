#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "metrik/dataset.hpp"
#include "metrik/dataset_io.hpp"
#include "metrik/errors.hpp"
#include "test_util.hpp"

using namespace metrik;

namespace {

RctDataset ingest(const std::string& csv, const IngestMetadata& meta = {},
                  std::vector<std::string>* dropped = nullptr) {
    std::istringstream in(csv);
    return ingest_csv(in, meta, dropped);
}

std::string thrown_message(const std::string& csv, const IngestMetadata& meta = {}) {
    try {
        ingest(csv, meta);
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

// hr carries a fractional value so auto-detection keeps it continuous.
const std::string kTinyCsv =
    "subject_id,visit,metric,value\n"
    "s1,0,hr,60\n"
    "s1,1,hr,70.5\n"
    "s2,0,hr,80\n"
    "s2,1,hr,\n"
    "s1,0,grade,mild\n"
    "s1,1,grade,severe\n"
    "s2,0,grade,mild\n"
    "s2,1,grade,mild\n";

}  // namespace

TEST_CASE("ingest_csv builds subjects, visits and metrics from long-format rows") {
    const RctDataset data = ingest(kTinyCsv);
    CHECK(data.n_subjects() == 2);
    CHECK(data.n_timepoints() == 2);
    CHECK(data.n_metrics() == 2);
    CHECK(data.subject_ids == std::vector<std::string>{"s1", "s2"});
    CHECK(data.metrics[0].name == "hr");
    CHECK(data.metrics[0].kind == MetricKind::continuous);
    CHECK(data.metrics[0].observed_min == 60.0);
    CHECK(data.metrics[0].observed_max == 80.0);
    CHECK(data.metrics[1].name == "grade");
    CHECK(data.metrics[1].kind == MetricKind::categorical);
    CHECK(data.metrics[1].categories == std::vector<std::string>{"mild", "severe"});

    CHECK(data.values(0, 1, 0) == 70.5);
    CHECK(data.values(0, 1, 1) == 1.0);  // "severe"
    CHECK(std::isnan(data.values(1, 1, 0)));
    CHECK(data.observed.collected(1, 1, 0) == 0);
    CHECK(data.observed.collected(1, 0, 0) == 1);
}

TEST_CASE("ingest_csv auto-detects few-level integer columns as categorical") {
    const std::string csv =
        "subject_id,visit,metric,value\n"
        "s1,0,stage,1\n"
        "s1,1,stage,2\n"
        "s2,0,stage,2\n"
        "s2,1,stage,3\n"
        "s1,0,dose,1.5\n"
        "s1,1,dose,2.25\n"
        "s2,0,dose,3.75\n"
        "s2,1,dose,0.5\n";
    const RctDataset data = ingest(csv);
    CHECK(data.metrics[0].name == "stage");
    CHECK(data.metrics[0].kind == MetricKind::categorical);
    CHECK(data.metrics[0].categories == std::vector<std::string>{"1", "2", "3"});
    CHECK(data.metrics[1].kind == MetricKind::continuous);

    SUBCASE("a declared kind overrides auto-detection") {
        IngestMetadata meta;
        meta.declared["stage"].kind = MetricKind::continuous;
        const RctDataset forced = ingest(csv, meta);
        CHECK(forced.metrics[0].kind == MetricKind::continuous);
        CHECK(forced.metrics[0].observed_min == 1.0);
        CHECK(forced.metrics[0].observed_max == 3.0);
    }
    SUBCASE("many distinct integer levels fall back to continuous") {
        IngestMetadata meta;
        meta.max_auto_categories = 2;
        const RctDataset forced = ingest(csv, meta);
        CHECK(forced.metrics[0].kind == MetricKind::continuous);
    }
}

TEST_CASE("ingest_csv respects declared category label order") {
    IngestMetadata meta;
    meta.declared["grade"].kind = MetricKind::categorical;
    meta.declared["grade"].categories = {"severe", "mild"};
    const RctDataset data = ingest(kTinyCsv, meta);
    CHECK(data.metrics[1].categories == std::vector<std::string>{"severe", "mild"});
    CHECK(data.values(0, 0, 1) == 1.0);  // "mild" is now index 1
    CHECK(data.values(0, 1, 1) == 0.0);
}

TEST_CASE("ingest_csv rejects malformed input naming the offending row") {
    SUBCASE("bad header") {
        const std::string msg = thrown_message("id,visit,metric,value\ns1,0,hr,60\n");
        CHECK(msg.find("header") != std::string::npos);
    }
    SUBCASE("wrong field count") {
        const std::string msg = thrown_message("subject_id,visit,metric,value\ns1,0,hr\n");
        CHECK(msg.find("row 2") != std::string::npos);
    }
    SUBCASE("duplicate cell") {
        const std::string csv =
            "subject_id,visit,metric,value\n"
            "s1,0,hr,60\n"
            "s1,0,hr,61\n";
        const std::string msg = thrown_message(csv);
        CHECK(msg.find("row 3") != std::string::npos);
        CHECK(msg.find("duplicate") != std::string::npos);
    }
    SUBCASE("mixed data types") {
        const std::string csv =
            "subject_id,visit,metric,value\n"
            "s1,0,hr,60\n"
            "s1,1,hr,high\n"
            "s2,0,hr,70\n";
        const std::string msg = thrown_message(csv);
        CHECK(msg.find("row 3") != std::string::npos);
        CHECK(msg.find("mixed") != std::string::npos);
    }
    SUBCASE("non-integer visit") {
        const std::string msg =
            thrown_message("subject_id,visit,metric,value\ns1,first,hr,60\n");
        CHECK(msg.find("row 2") != std::string::npos);
        CHECK(msg.find("visit") != std::string::npos);
    }
    SUBCASE("visit beyond the declared count") {
        IngestMetadata meta;
        meta.n_visits = 2;
        const std::string msg =
            thrown_message("subject_id,visit,metric,value\ns1,5,hr,60\n", meta);
        CHECK(msg.find("row 2") != std::string::npos);
    }
    SUBCASE("value outside a declared category set") {
        IngestMetadata meta;
        meta.declared["grade"].kind = MetricKind::categorical;
        meta.declared["grade"].categories = {"mild"};
        const std::string msg = thrown_message(kTinyCsv, meta);
        CHECK(msg.find("not in category set") != std::string::npos);
    }
    SUBCASE("no data rows") {
        CHECK_THROWS_AS(ingest("subject_id,visit,metric,value\n"), IngestError);
    }
}

TEST_CASE("ingest_csv drops degenerate metrics and reports them") {
    const std::string csv =
        "subject_id,visit,metric,value\n"
        "s1,0,hr,60.5\n"
        "s1,1,hr,70.5\n"
        "s2,0,hr,62.5\n"
        "s2,1,hr,72.5\n"
        "s1,0,flat,5\n"
        "s1,1,flat,5\n"
        "s2,0,flat,5\n"
        "s1,0,gone,\n"
        "s2,1,gone,\n";
    std::vector<std::string> dropped;
    const RctDataset data = ingest(csv, {}, &dropped);
    CHECK(data.n_metrics() == 1);
    CHECK(data.metrics[0].name == "hr");
    REQUIRE(dropped.size() == 2);
    CHECK(dropped[0].find("flat") != std::string::npos);
    CHECK(dropped[0].find("constant") != std::string::npos);
    CHECK(dropped[1].find("gone") != std::string::npos);
    CHECK(dropped[1].find("missing") != std::string::npos);

    SUBCASE("an all-degenerate input is an error") {
        const std::string only_flat =
            "subject_id,visit,metric,value\n"
            "s1,0,flat,5\n"
            "s1,1,flat,5\n";
        CHECK_THROWS_AS(ingest(only_flat), IngestError);
    }
}

TEST_CASE("ingest_csv derives the protocol from per-cell missingness") {
    // Visit 1 of metric "hr" is missing for 2 of 4 subjects (rate 0.5).
    std::string csv = "subject_id,visit,metric,value\n";
    for (int s = 1; s <= 4; ++s) {
        csv += "p" + std::to_string(s) + ",0,hr," + std::to_string(50 + s) + "\n";
        if (s <= 2) csv += "p" + std::to_string(s) + ",1,hr," + std::to_string(60 + s) + "\n";
    }
    IngestMetadata meta;
    meta.protocol_missingness_threshold = 0.2;
    const RctDataset strict = ingest(csv, meta);
    CHECK(strict.protocol.eligible(0, 0) == 1);
    CHECK(strict.protocol.eligible(1, 0) == 0);

    meta.protocol_missingness_threshold = 0.6;
    const RctDataset lax = ingest(csv, meta);
    CHECK(lax.protocol.eligible(1, 0) == 1);
}

TEST_CASE("ingest_csv accepts an explicit protocol and validates it") {
    IngestMetadata meta;
    meta.protocol["hr"] = {1, 0};
    meta.protocol["grade"] = {1, 1};
    const RctDataset data = ingest(kTinyCsv, meta);
    CHECK(data.protocol.eligible(0, 0) == 1);
    CHECK(data.protocol.eligible(1, 0) == 0);
    CHECK(data.protocol.eligible(1, 1) == 1);

    SUBCASE("missing metric row") {
        IngestMetadata bad;
        bad.protocol["hr"] = {1, 1};
        CHECK_THROWS_AS(ingest(kTinyCsv, bad), ConfigError);
    }
    SUBCASE("wrong row length") {
        IngestMetadata bad;
        bad.protocol["hr"] = {1, 1, 1};
        bad.protocol["grade"] = {1, 1};
        CHECK_THROWS_AS(ingest(kTinyCsv, bad), ConfigError);
    }
}

TEST_CASE("parse_ingest_metadata reads kinds, categories, protocol and options") {
    const std::string text = R"({
        "n_visits": 3,
        "protocol_missingness_threshold": 0.35,
        "max_auto_categories": 5,
        "metrics": {
            "grade": {"kind": "categorical", "categories": ["lo", "hi"]},
            "hr": {"kind": "continuous"}
        },
        "protocol": {"hr": [1, 1, 0]}
    })";
    const IngestMetadata meta = parse_ingest_metadata(text);
    CHECK(meta.n_visits == 3);
    CHECK(meta.protocol_missingness_threshold == 0.35);
    CHECK(meta.max_auto_categories == 5);
    REQUIRE(meta.declared.count("grade") == 1);
    CHECK(meta.declared.at("grade").kind == MetricKind::categorical);
    CHECK(meta.declared.at("grade").categories == std::vector<std::string>{"lo", "hi"});
    CHECK(meta.declared.at("hr").kind == MetricKind::continuous);
    REQUIRE(meta.protocol.count("hr") == 1);
    CHECK(meta.protocol.at("hr") == std::vector<int>{1, 1, 0});

    CHECK_THROWS_AS(parse_ingest_metadata("{oops"), ConfigError);
    CHECK_THROWS_AS(parse_ingest_metadata(R"({"metrics": {"x": {"kind": "fancy"}}})"),
                    ConfigError);
}

TEST_CASE("snapshot save/load round-trips a dataset bit-exactly") {
    SynthConfig c;
    c.n_subjects = 10;
    c.n_timepoints = 4;
    c.n_metrics = 6;
    c.block_sizes = {3, 3};
    c.fraction_categorical = 0.5;
    c.native_missing_rate = 0.1;
    c.protocol_eligible_rate = 0.8;
    const RctDataset data = synthesize(c, 21);

    testutil::TempDir dir("snapshot");
    save_snapshot(data, dir.path());
    const RctDataset back = load_snapshot(dir.path());

    CHECK(back.n_subjects() == data.n_subjects());
    CHECK(back.subject_ids == data.subject_ids);
    CHECK(back.preprocessed == data.preprocessed);
    CHECK(back.protocol.eligible == data.protocol.eligible);
    CHECK(back.observed.collected == data.observed.collected);
    REQUIRE(back.metrics.size() == data.metrics.size());
    for (size_t m = 0; m < data.metrics.size(); ++m) {
        CHECK(back.metrics[m].name == data.metrics[m].name);
        CHECK(back.metrics[m].kind == data.metrics[m].kind);
        CHECK(back.metrics[m].categories == data.metrics[m].categories);
        CHECK(back.metrics[m].observed_min == data.metrics[m].observed_min);
        CHECK(back.metrics[m].observed_max == data.metrics[m].observed_max);
    }
    for (int i = 0; i < data.n_subjects(); ++i)
        for (int t = 0; t < data.n_timepoints(); ++t)
            for (int m = 0; m < data.n_metrics(); ++m) {
                const double a = data.values(i, t, m), b = back.values(i, t, m);
                // NaN-tolerant bitwise equality
                CHECK(((std::isnan(a) && std::isnan(b)) || a == b));
            }

    SUBCASE("export, import, export is byte-identical") {
        testutil::TempDir dir2("snapshot2");
        save_snapshot(back, dir2.path());
        for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
            const auto name = entry.path().filename();
            std::ifstream f1(entry.path(), std::ios::binary);
            std::ifstream f2(dir2.path() / name, std::ios::binary);
            REQUIRE(f2.good());
            const std::string b1((std::istreambuf_iterator<char>(f1)), {});
            const std::string b2((std::istreambuf_iterator<char>(f2)), {});
            CHECK(b1 == b2);
        }
    }
}

TEST_CASE("dataset_fingerprint is stable and content-sensitive") {
    const SynthConfig c;
    RctDataset a = synthesize(c, 30);
    const std::string fp = dataset_fingerprint(a);
    CHECK(fp.size() == 16);
    CHECK(fp.find_first_not_of("0123456789abcdef") == std::string::npos);
    CHECK(dataset_fingerprint(a) == fp);

    RctDataset b = a;
    b.values(0, 0, 0) += 1e-9;
    CHECK(dataset_fingerprint(b) != fp);
    RctDataset d = a;
    d.subject_ids[0] = "renamed";
    CHECK(dataset_fingerprint(d) != fp);
}
