#include "metrik/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "metrik/errors.hpp"
#include "metrik/rng.hpp"
#include "metrik/text.hpp"

namespace metrik {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

bool is_missing_field(std::string_view s) {
    if (s.empty()) return true;
    if (s.size() == 3) {
        auto low = [](char c) { return static_cast<char>(c | 0x20); };
        return low(s[0]) == 'n' && low(s[1]) == 'a' && low(s[2]) == 'n';
    }
    return false;
}

std::string kind_name(MetricKind k) {
    return k == MetricKind::continuous ? "continuous" : "categorical";
}

}  // namespace

IngestMetadata parse_ingest_metadata(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("metadata JSON parse error: ") + e.what());
    }
    IngestMetadata meta;
    if (j.contains("n_visits")) meta.n_visits = j.at("n_visits").get<int>();
    if (j.contains("protocol_missingness_threshold"))
        meta.protocol_missingness_threshold = j.at("protocol_missingness_threshold").get<double>();
    if (j.contains("min_normalized_variance"))
        meta.min_normalized_variance = j.at("min_normalized_variance").get<double>();
    if (j.contains("max_auto_categories"))
        meta.max_auto_categories = j.at("max_auto_categories").get<int>();
    if (j.contains("metrics")) {
        for (auto& [name, decl] : j.at("metrics").items()) {
            IngestMetadata::Declared d;
            const std::string kind = decl.value("kind", "continuous");
            if (kind == "continuous") {
                d.kind = MetricKind::continuous;
            } else if (kind == "categorical") {
                d.kind = MetricKind::categorical;
                if (decl.contains("categories"))
                    d.categories = decl.at("categories").get<std::vector<std::string>>();
            } else {
                throw ConfigError("metadata: unknown metric kind '" + kind + "' for '" + name + "'");
            }
            meta.declared[name] = std::move(d);
        }
    }
    if (j.contains("protocol")) {
        for (auto& [name, row] : j.at("protocol").items())
            meta.protocol[name] = row.get<std::vector<int>>();
    }
    return meta;
}

RctDataset ingest_csv(std::istream& rows, const IngestMetadata& meta,
                      std::vector<std::string>* dropped) {
    std::string line;
    if (!std::getline(rows, line)) throw IngestError("empty CSV input");
    {
        auto header = split_csv_line(line);
        if (header.size() != 4 || trim(header[0]) != "subject_id" || trim(header[1]) != "visit" ||
            trim(header[2]) != "metric" || trim(header[3]) != "value")
            throw IngestError("CSV header must be 'subject_id,visit,metric,value'");
    }

    struct CellValue {
        std::string raw;
        bool missing = false;
        long row_number = 0;
    };
    std::vector<std::string> subject_order, metric_order;
    std::map<std::string, int> subject_index, metric_index;
    // (subject, visit, metric) -> value
    std::map<std::tuple<int, int, int>, CellValue> cells;
    int max_visit = -1;
    long row_number = 1;

    while (std::getline(rows, line)) {
        ++row_number;
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 4)
            throw IngestError("row " + std::to_string(row_number) + ": expected 4 fields, got " +
                              std::to_string(fields.size()));
        const std::string subject(trim(fields[0]));
        const std::string visit_str(trim(fields[1]));
        const std::string metric(trim(fields[2]));
        const std::string value(trim(fields[3]));
        if (subject.empty() || metric.empty())
            throw IngestError("row " + std::to_string(row_number) + ": empty subject_id or metric");

        long visit = -1;
        {
            auto v = parse_double(visit_str);
            if (!v || *v != std::floor(*v) || *v < 0)
                throw IngestError("row " + std::to_string(row_number) + ": invalid visit index '" +
                                  visit_str + "'");
            visit = static_cast<long>(*v);
        }
        if (meta.n_visits && visit >= *meta.n_visits)
            throw IngestError("row " + std::to_string(row_number) + ": unknown visit index " +
                              std::to_string(visit) + " (n_visits=" + std::to_string(*meta.n_visits) + ")");
        max_visit = std::max(max_visit, static_cast<int>(visit));

        auto sub_it = subject_index.find(subject);
        if (sub_it == subject_index.end()) {
            sub_it = subject_index.emplace(subject, static_cast<int>(subject_order.size())).first;
            subject_order.push_back(subject);
        }
        auto met_it = metric_index.find(metric);
        if (met_it == metric_index.end()) {
            met_it = metric_index.emplace(metric, static_cast<int>(metric_order.size())).first;
            metric_order.push_back(metric);
        }
        auto key = std::make_tuple(sub_it->second, static_cast<int>(visit), met_it->second);
        if (cells.count(key))
            throw IngestError("row " + std::to_string(row_number) + ": duplicate entry for (" +
                              subject + ", " + std::to_string(visit) + ", " + metric + ")");
        cells[key] = CellValue{value, is_missing_field(value), row_number};
    }
    if (subject_order.empty()) throw IngestError("CSV contains no data rows");

    const int n_s = static_cast<int>(subject_order.size());
    const int n_t = meta.n_visits ? *meta.n_visits : max_visit + 1;
    const int n_m_all = static_cast<int>(metric_order.size());

    // classify each metric and build its value column
    struct Column {
        MetricSpec spec;
        std::vector<double> values;  // n_s * n_t, NaN = missing
        bool keep = true;
        std::string drop_reason;
    };
    std::vector<Column> columns(n_m_all);

    for (int m = 0; m < n_m_all; ++m) {
        Column& col = columns[m];
        col.spec.name = metric_order[m];
        col.values.assign(static_cast<std::size_t>(n_s) * n_t, kNan);

        struct Obs {
            int s, t;
            std::string raw;
            long row_number;
        };
        std::vector<Obs> observed;
        for (int s = 0; s < n_s; ++s)
            for (int t = 0; t < n_t; ++t) {
                auto it = cells.find(std::make_tuple(s, t, m));
                if (it == cells.end() || it->second.missing) continue;
                observed.push_back({s, t, it->second.raw, it->second.row_number});
            }
        if (observed.empty()) {
            col.keep = false;
            col.drop_reason = "entirely missing";
            continue;
        }

        auto declared_it = meta.declared.find(col.spec.name);
        const bool has_decl = declared_it != meta.declared.end();

        bool numeric_all = true, numeric_any = false;
        long first_non_numeric_row = 0;
        for (const auto& o : observed) {
            if (parse_double(o.raw)) {
                numeric_any = true;
            } else {
                numeric_all = false;
                if (first_non_numeric_row == 0) first_non_numeric_row = o.row_number;
            }
        }

        MetricKind kind;
        if (has_decl) {
            kind = declared_it->second.kind;
            if (kind == MetricKind::continuous && !numeric_all)
                throw IngestError("row " + std::to_string(first_non_numeric_row) +
                                  ": mixed data types in continuous metric '" + col.spec.name + "'");
        } else {
            if (numeric_any && !numeric_all) {
                // name the row that made the column mixed
                long offending = first_non_numeric_row;
                throw IngestError("row " + std::to_string(offending) +
                                  ": mixed data types in metric '" + col.spec.name + "'");
            }
            if (!numeric_any) {
                kind = MetricKind::categorical;
            } else {
                bool integral = true;
                std::set<double> distinct;
                for (const auto& o : observed) {
                    const double v = *parse_double(o.raw);
                    if (v != std::floor(v)) integral = false;
                    distinct.insert(v);
                }
                kind = (integral && static_cast<int>(distinct.size()) <= meta.max_auto_categories)
                           ? MetricKind::categorical
                           : MetricKind::continuous;
            }
        }
        col.spec.kind = kind;

        if (kind == MetricKind::continuous) {
            double mn = std::numeric_limits<double>::infinity(), mx = -mn;
            for (const auto& o : observed) {
                const double v = *parse_double(o.raw);
                col.values[static_cast<std::size_t>(o.s) * n_t + o.t] = v;
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            col.spec.observed_min = mn;
            col.spec.observed_max = mx;
            if (mn == mx) {
                col.keep = false;
                col.drop_reason = "constant";
                continue;
            }
            // near-constant metrics break normalization downstream
            double mean = 0.0;
            for (const auto& o : observed) mean += (*parse_double(o.raw) - mn) / (mx - mn);
            mean /= static_cast<double>(observed.size());
            double var = 0.0;
            for (const auto& o : observed) {
                const double z = (*parse_double(o.raw) - mn) / (mx - mn) - mean;
                var += z * z;
            }
            var /= static_cast<double>(observed.size());
            if (var < meta.min_normalized_variance) {
                col.keep = false;
                col.drop_reason = "near-constant (normalized variance " + format_double(var) + ")";
                continue;
            }
        } else {
            std::vector<std::string> labels;
            if (has_decl && !declared_it->second.categories.empty()) {
                labels = declared_it->second.categories;
            } else {
                std::set<std::string> distinct;
                for (const auto& o : observed) distinct.insert(o.raw);
                if (numeric_all) {
                    std::vector<double> vals;
                    for (const auto& s : distinct) vals.push_back(*parse_double(s));
                    std::sort(vals.begin(), vals.end());
                    for (double v : vals) labels.push_back(format_double(v));
                } else {
                    labels.assign(distinct.begin(), distinct.end());
                }
            }
            std::map<std::string, int> label_index;
            for (int c = 0; c < static_cast<int>(labels.size()); ++c) label_index[labels[c]] = c;
            // numeric raw fields must match their canonical label text
            for (const auto& o : observed) {
                std::string key = o.raw;
                if (numeric_all) key = format_double(*parse_double(o.raw));
                auto it = label_index.find(key);
                if (it == label_index.end())
                    throw IngestError("row " + std::to_string(o.row_number) + ": value '" + o.raw +
                                      "' not in category set of metric '" + col.spec.name + "'");
                col.values[static_cast<std::size_t>(o.s) * n_t + o.t] = it->second;
            }
            col.spec.categories = labels;
            if (labels.size() < 2) {
                col.keep = false;
                col.drop_reason = "constant";
                continue;
            }
        }
    }

    std::vector<int> kept;
    for (int m = 0; m < n_m_all; ++m) {
        if (columns[m].keep) {
            kept.push_back(m);
        } else if (dropped) {
            dropped->push_back(columns[m].spec.name + " (" + columns[m].drop_reason + ")");
        }
    }
    if (kept.empty()) throw IngestError("all metrics were dropped during ingestion");

    RctDataset out;
    out.subject_ids = subject_order;
    const int n_m = static_cast<int>(kept.size());
    out.values = Cube(n_s, n_t, n_m);
    out.observed.collected = BinaryCube(n_s, n_t, n_m);
    for (int c = 0; c < n_m; ++c) {
        const Column& col = columns[kept[c]];
        out.metrics.push_back(col.spec);
        for (int s = 0; s < n_s; ++s)
            for (int t = 0; t < n_t; ++t) {
                const double v = col.values[static_cast<std::size_t>(s) * n_t + t];
                out.values(s, t, c) = v;
                out.observed.collected(s, t, c) = std::isnan(v) ? 0 : 1;
            }
    }

    out.protocol.eligible = BinaryMatrix(n_t, n_m);
    if (!meta.protocol.empty()) {
        for (int c = 0; c < n_m; ++c) {
            auto it = meta.protocol.find(out.metrics[c].name);
            if (it == meta.protocol.end())
                throw ConfigError("metadata protocol missing metric '" + out.metrics[c].name + "'");
            if (static_cast<int>(it->second.size()) != n_t)
                throw ConfigError("metadata protocol row for '" + out.metrics[c].name +
                                  "' has length " + std::to_string(it->second.size()) +
                                  ", expected " + std::to_string(n_t));
            for (int t = 0; t < n_t; ++t) {
                const int e = it->second[t];
                if (e != 0 && e != 1) throw ConfigError("protocol entries must be 0 or 1");
                out.protocol.eligible(t, c) = static_cast<std::uint8_t>(e);
            }
        }
    } else {
        // eligible iff the cell's missingness rate across subjects is low enough
        for (int t = 0; t < n_t; ++t)
            for (int c = 0; c < n_m; ++c) {
                int missing = 0;
                for (int s = 0; s < n_s; ++s)
                    if (!out.observed.collected(s, t, c)) ++missing;
                const double rate = static_cast<double>(missing) / n_s;
                out.protocol.eligible(t, c) = rate <= meta.protocol_missingness_threshold ? 1 : 0;
            }
    }
    if (out.protocol.eligible_count() == 0)
        throw IngestError("protocol has no eligible entries");
    return out;
}

RctDataset ingest_csv_file(const fs::path& csv_path, const fs::path& metadata_json_path,
                           std::vector<std::string>* dropped) {
    std::ifstream csv(csv_path);
    if (!csv) throw IngestError("cannot open CSV file: " + csv_path.string());
    IngestMetadata meta;
    if (!metadata_json_path.empty()) {
        std::ifstream mf(metadata_json_path);
        if (!mf) throw ConfigError("cannot open metadata file: " + metadata_json_path.string());
        std::stringstream ss;
        ss << mf.rdbuf();
        meta = parse_ingest_metadata(ss.str());
    }
    return ingest_csv(csv, meta, dropped);
}

namespace {

std::map<std::string, std::string> snapshot_files(const RctDataset& data) {
    std::map<std::string, std::string> files;

    json meta;
    meta["format"] = "metrik-snapshot";
    meta["version"] = 1;
    meta["preprocessed"] = data.preprocessed;
    meta["n_subjects"] = data.n_subjects();
    meta["n_timepoints"] = data.n_timepoints();
    meta["n_metrics"] = data.n_metrics();
    meta["subject_ids"] = data.subject_ids;
    json metrics = json::array();
    for (const auto& spec : data.metrics) {
        json jm;
        jm["name"] = spec.name;
        jm["kind"] = kind_name(spec.kind);
        if (spec.kind == MetricKind::categorical) {
            jm["categories"] = spec.categories;
        } else {
            jm["observed_min"] = spec.observed_min;
            jm["observed_max"] = spec.observed_max;
        }
        metrics.push_back(jm);
    }
    meta["metrics"] = metrics;
    json protocol = json::array();
    for (int t = 0; t < data.n_timepoints(); ++t) {
        json row = json::array();
        for (int m = 0; m < data.n_metrics(); ++m)
            row.push_back(static_cast<int>(data.protocol.eligible(t, m)));
        protocol.push_back(row);
    }
    meta["protocol"] = protocol;
    files["meta.json"] = meta.dump(2) + "\n";

    std::string header = "subject_id";
    for (const auto& spec : data.metrics) header += "," + csv_escape(spec.name);
    header += "\n";
    for (int t = 0; t < data.n_timepoints(); ++t) {
        std::string values = header, observed = header;
        for (int s = 0; s < data.n_subjects(); ++s) {
            values += csv_escape(data.subject_ids[s]);
            observed += csv_escape(data.subject_ids[s]);
            for (int m = 0; m < data.n_metrics(); ++m) {
                values += "," + format_double(data.values(s, t, m));
                observed += data.observed.collected(s, t, m) ? ",1" : ",0";
            }
            values += "\n";
            observed += "\n";
        }
        files["values_t" + std::to_string(t) + ".csv"] = std::move(values);
        files["observed_t" + std::to_string(t) + ".csv"] = std::move(observed);
    }
    return files;
}

}  // namespace

void save_snapshot(const RctDataset& data, const fs::path& dir) {
    fs::create_directories(dir);
    for (const auto& [name, content] : snapshot_files(data)) {
        std::ofstream f(dir / name, std::ios::binary);
        if (!f) throw ConfigError("cannot write snapshot file: " + (dir / name).string());
        f << content;
    }
}

RctDataset load_snapshot(const fs::path& dir) {
    std::ifstream mf(dir / "meta.json");
    if (!mf) throw ConfigError("cannot open snapshot meta: " + (dir / "meta.json").string());
    json meta;
    try {
        meta = json::parse(mf);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("snapshot meta parse error: ") + e.what());
    }
    if (meta.value("format", "") != "metrik-snapshot")
        throw ConfigError("not a metrik snapshot: " + dir.string());

    RctDataset data;
    const int n_s = meta.at("n_subjects").get<int>();
    const int n_t = meta.at("n_timepoints").get<int>();
    const int n_m = meta.at("n_metrics").get<int>();
    data.preprocessed = meta.value("preprocessed", false);
    data.subject_ids = meta.at("subject_ids").get<std::vector<std::string>>();
    for (const auto& jm : meta.at("metrics")) {
        MetricSpec spec;
        spec.name = jm.at("name").get<std::string>();
        spec.kind = jm.at("kind").get<std::string>() == "categorical" ? MetricKind::categorical
                                                                      : MetricKind::continuous;
        if (spec.kind == MetricKind::categorical)
            spec.categories = jm.at("categories").get<std::vector<std::string>>();
        else {
            spec.observed_min = jm.at("observed_min").get<double>();
            spec.observed_max = jm.at("observed_max").get<double>();
        }
        data.metrics.push_back(std::move(spec));
    }
    data.protocol.eligible = BinaryMatrix(n_t, n_m);
    {
        const auto& protocol = meta.at("protocol");
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m)
                data.protocol.eligible(t, m) =
                    static_cast<std::uint8_t>(protocol.at(t).at(m).get<int>());
    }

    data.values = Cube(n_s, n_t, n_m);
    data.observed.collected = BinaryCube(n_s, n_t, n_m);
    for (int t = 0; t < n_t; ++t) {
        for (const char* prefix : {"values_t", "observed_t"}) {
            const fs::path path = dir / (prefix + std::to_string(t) + ".csv");
            std::ifstream f(path);
            if (!f) throw ConfigError("missing snapshot file: " + path.string());
            std::string line;
            std::getline(f, line);  // header
            for (int s = 0; s < n_s; ++s) {
                if (!std::getline(f, line))
                    throw ConfigError("snapshot file truncated: " + path.string());
                auto fields = split_csv_line(line);
                if (static_cast<int>(fields.size()) != n_m + 1)
                    throw ConfigError("snapshot row width mismatch in " + path.string());
                for (int m = 0; m < n_m; ++m) {
                    auto v = parse_double(fields[m + 1]);
                    if (!v) throw ConfigError("bad numeric field in " + path.string());
                    if (prefix[0] == 'v')
                        data.values(s, t, m) = *v;
                    else
                        data.observed.collected(s, t, m) = *v != 0.0 ? 1 : 0;
                }
            }
        }
    }
    return data;
}

std::string dataset_fingerprint(const RctDataset& data) {
    std::uint64_t h = 14695981039346656037ull;
    for (const auto& [name, content] : snapshot_files(data)) {
        h = fnv1a64(name, h);
        h = fnv1a64(std::string_view("\0", 1), h);
        h = fnv1a64(content, h);
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace metrik
