#include "metrik/pmd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "metrik/errors.hpp"
#include "metrik/rng.hpp"
#include "metrik/text.hpp"

namespace metrik {

namespace {

void check_shapes(const Pmd& design, const ProtocolMask& protocol) {
    if (!design.collect.same_shape(protocol.eligible))
        throw EvalError("design and protocol shapes differ");
}

unsigned long long binomial(int n, int d) {
    // Pascal row; n stays small (timepoint counts)
    if (d < 0 || d > n) return 0;
    std::vector<unsigned long long> row(static_cast<std::size_t>(d) + 1, 0);
    row[0] = 1;
    for (int i = 1; i <= n; ++i)
        for (int j = std::min(i, d); j >= 1; --j) row[j] += row[j - 1];
    return row[d];
}

/// Lexicographic d-subset of {0..n-1} with the given rank.
std::vector<int> unrank_combination(int n, int d, unsigned long long rank) {
    std::vector<int> out;
    int next = 0;
    for (int slot = d; slot >= 1; --slot) {
        for (int v = next; v < n; ++v) {
            const unsigned long long with_v = binomial(n - v - 1, slot - 1);
            if (rank < with_v) {
                out.push_back(v);
                next = v + 1;
                break;
            }
            rank -= with_v;
        }
    }
    return out;
}

}  // namespace

double efficiency(const Pmd& design, const ProtocolMask& protocol) {
    check_shapes(design, protocol);
    long eligible = 0, dropped = 0;
    for (int t = 0; t < protocol.eligible.rows(); ++t)
        for (int m = 0; m < protocol.eligible.cols(); ++m) {
            if (!protocol.eligible(t, m)) continue;
            ++eligible;
            if (!design.collect(t, m)) ++dropped;
        }
    if (eligible == 0) throw EvalError("protocol has no eligible entries");
    return static_cast<double>(dropped) / static_cast<double>(eligible);
}

double efficiency(const std::vector<Pmd>& per_subject, const ProtocolMask& protocol) {
    if (per_subject.empty()) throw EvalError("efficiency of empty design list");
    double sum = 0.0;
    for (const Pmd& p : per_subject) sum += efficiency(p, protocol);
    return sum / static_cast<double>(per_subject.size());
}

Pmd rsd_sample(double e, const ProtocolMask& protocol, std::uint64_t seed) {
    const int n_t = protocol.eligible.rows(), n_m = protocol.eligible.cols();
    Rng rng(seed);
    Pmd out;
    out.collect = BinaryMatrix(n_t, n_m);
    for (int t = 0; t < n_t; ++t)
        for (int m = 0; m < n_m; ++m) {
            const double u = rng.uniform();  // drawn unconditionally: protocol-independent stream
            out.collect(t, m) = (protocol.eligible(t, m) && u < e) ? 0 : 1;
        }
    out.efficiency = efficiency(out, protocol);
    return out;
}

std::vector<std::uint8_t> FormSet::kept_metrics(int form, int n_m) const {
    std::vector<std::uint8_t> kept(static_cast<std::size_t>(n_m), 0);
    for (int set_index : forms[static_cast<std::size_t>(form)])
        for (int m : item_sets[static_cast<std::size_t>(set_index)])
            kept[static_cast<std::size_t>(m)] = 1;
    return kept;
}

FormSet mf_build(int n_m, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("multiform requires k >= 2");
    if (k > n_m) throw ConfigError("multiform k exceeds metric count");
    std::vector<int> order(static_cast<std::size_t>(n_m));
    for (int m = 0; m < n_m; ++m) order[static_cast<std::size_t>(m)] = m;
    Rng rng(seed);
    for (int i = n_m - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[rng.uniform_index(static_cast<std::size_t>(i) + 1)]);

    FormSet out;
    out.k = k;
    const int base = n_m / k, extra = n_m % k;
    std::size_t pos = 0;
    for (int set = 0; set < k; ++set) {
        const int size = base + (set < extra ? 1 : 0);
        std::vector<int> items(order.begin() + pos, order.begin() + pos + size);
        std::sort(items.begin(), items.end());
        out.item_sets.push_back(std::move(items));
        pos += static_cast<std::size_t>(size);
    }
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) out.forms.push_back({i, j});
    return out;
}

namespace {

Pmd pmd_from_kept(const std::vector<std::uint8_t>& kept, const ProtocolMask& protocol) {
    const int n_t = protocol.eligible.rows(), n_m = protocol.eligible.cols();
    Pmd p;
    p.collect = BinaryMatrix(n_t, n_m);
    for (int t = 0; t < n_t; ++t)
        for (int m = 0; m < n_m; ++m)
            p.collect(t, m) =
                (!protocol.eligible(t, m) || kept[static_cast<std::size_t>(m)]) ? 1 : 0;
    p.efficiency = efficiency(p, protocol);
    return p;
}

}  // namespace

std::vector<Pmd> mf_assign(const FormSet& forms, int n_s, const ProtocolMask& protocol,
                           std::uint64_t seed) {
    const int n_m = protocol.eligible.cols();
    Rng rng(seed);
    std::vector<Pmd> out;
    out.reserve(static_cast<std::size_t>(n_s));
    for (int s = 0; s < n_s; ++s) {
        const int form = static_cast<int>(rng.uniform_index(forms.forms.size()));
        out.push_back(pmd_from_kept(forms.kept_metrics(form, n_m), protocol));
    }
    return out;
}

std::vector<Pmd> mfl_assign(const FormSet& forms, int n_s, int n_t, const ProtocolMask& protocol,
                            std::uint64_t seed) {
    const int n_m = protocol.eligible.cols();
    if (n_t != protocol.eligible.rows()) throw ConfigError("timepoint count mismatch");
    Rng rng(seed);
    std::vector<Pmd> out;
    out.reserve(static_cast<std::size_t>(n_s));
    for (int s = 0; s < n_s; ++s) {
        Pmd p;
        p.collect = BinaryMatrix(n_t, n_m);
        for (int t = 0; t < n_t; ++t) {
            const int form = static_cast<int>(rng.uniform_index(forms.forms.size()));
            const auto kept = forms.kept_metrics(form, n_m);
            for (int m = 0; m < n_m; ++m)
                p.collect(t, m) =
                    (!protocol.eligible(t, m) || kept[static_cast<std::size_t>(m)]) ? 1 : 0;
        }
        p.efficiency = efficiency(p, protocol);
        out.push_back(std::move(p));
    }
    return out;
}

WaveConfig make_wave_config(int n_t, int d, bool include_endpoints) {
    WaveConfig cfg;
    cfg.d = d;
    cfg.include_endpoints = include_endpoints;
    const int first = include_endpoints ? 0 : 1;
    const int last = include_endpoints ? n_t - 1 : n_t - 2;
    for (int t = first; t <= last; ++t) cfg.eligible_timepoints.push_back(t);
    if (d > static_cast<int>(cfg.eligible_timepoints.size()))
        throw ConfigError("wave drop count exceeds droppable timepoints");
    return cfg;
}

Pmd wave_sample(const WaveConfig& config, const ProtocolMask& protocol, std::uint64_t seed) {
    const int n_t = protocol.eligible.rows(), n_m = protocol.eligible.cols();
    if (config.d < 0 || config.d > static_cast<int>(config.eligible_timepoints.size()))
        throw ConfigError("wave drop count exceeds droppable timepoints");
    Pmd out;
    out.collect = BinaryMatrix(n_t, n_m);
    out.collect.fill(1);
    if (config.d > 0) {
        const int n = static_cast<int>(config.eligible_timepoints.size());
        Rng rng(seed);
        const auto rank = rng.uniform_index(static_cast<std::size_t>(binomial(n, config.d)));
        for (int i : unrank_combination(n, config.d, rank)) {
            const int t = config.eligible_timepoints[static_cast<std::size_t>(i)];
            for (int m = 0; m < n_m; ++m)
                if (protocol.eligible(t, m)) out.collect(t, m) = 0;
        }
    }
    out.efficiency = efficiency(out, protocol);
    return out;
}

std::string strategy_name(Strategy s) {
    switch (s) {
        case Strategy::rsd: return "rsd";
        case Strategy::mf: return "mf";
        case Strategy::mfl: return "mfl";
        case Strategy::wave: return "wave";
        case Strategy::wave_plus: return "wave_plus";
    }
    return "unknown";
}

std::optional<Strategy> strategy_from_name(const std::string& name) {
    for (Strategy s : {Strategy::rsd, Strategy::mf, Strategy::mfl, Strategy::wave,
                       Strategy::wave_plus})
        if (strategy_name(s) == name) return s;
    return std::nullopt;
}

FeasibleChoice nearest_feasible_efficiency(Strategy strategy, double target_e,
                                           const ProtocolMask& protocol, double tolerance) {
    FeasibleChoice out;
    const int n_t = protocol.eligible.rows(), n_m = protocol.eligible.cols();
    if (strategy == Strategy::rsd) {
        out.feasible = true;
        out.efficiency = target_e;
        return out;
    }
    if (strategy == Strategy::mf || strategy == Strategy::mfl) {
        const int k_max = std::min(20, n_m);
        double best_dist = std::numeric_limits<double>::infinity();
        for (int k = 3; k <= k_max; ++k) {
            const double e = static_cast<double>(k - 2) / k;
            const double dist = std::abs(e - target_e);
            // tie toward lower efficiency: the k grid is increasing, keep the first
            if (dist < best_dist) {
                best_dist = dist;
                out.parameter = k;
                out.efficiency = e;
            }
        }
        out.feasible = best_dist <= tolerance;
        return out;
    }
    // wave variants: nearest d >= 1, expectation over the uniform pattern choice
    const bool endpoints = strategy == Strategy::wave_plus;
    const int first = endpoints ? 0 : 1;
    const int last = endpoints ? n_t - 1 : n_t - 2;
    long droppable_eligible = 0, total_eligible = 0;
    int n_droppable = 0;
    for (int t = 0; t < n_t; ++t) {
        long row = 0;
        for (int m = 0; m < n_m; ++m)
            if (protocol.eligible(t, m)) ++row;
        total_eligible += row;
        if (t >= first && t <= last) {
            droppable_eligible += row;
            ++n_droppable;
        }
    }
    if (n_droppable == 0 || total_eligible == 0) return out;  // infeasible
    double best_dist = std::numeric_limits<double>::infinity();
    for (int d = 1; d <= n_droppable; ++d) {
        const double e = (static_cast<double>(d) / n_droppable) *
                         (static_cast<double>(droppable_eligible) / total_eligible);
        const double dist = std::abs(e - target_e);
        if (dist < best_dist) {
            best_dist = dist;
            out.parameter = d;
            out.efficiency = e;
        }
    }
    out.feasible = true;
    return out;
}

using nlohmann::json;

std::string pmd_csv(const Pmd& design, const std::vector<std::string>& metric_names) {
    if (static_cast<int>(metric_names.size()) != design.n_metrics())
        throw ConfigError("metric name count does not match design width");
    std::string out = "timepoint";
    for (const auto& name : metric_names) out += "," + csv_escape(name);
    out += "\n";
    for (int t = 0; t < design.n_timepoints(); ++t) {
        out += std::to_string(t);
        for (int m = 0; m < design.n_metrics(); ++m)
            out += design.collect(t, m) ? ",1" : ",0";
        out += "\n";
    }
    return out;
}

void save_pmd(const Pmd& design, const std::vector<std::string>& metric_names,
              const std::filesystem::path& csv_path, const PmdSidecar& sidecar) {
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw ConfigError("cannot write design file: " + csv_path.string());
    csv << pmd_csv(design, metric_names);

    json j;
    j["efficiency"] = sidecar.efficiency;
    j["seed"] = sidecar.seed;
    j["strategy"] = sidecar.strategy;
    if (sidecar.e_seed) j["e_seed"] = *sidecar.e_seed;
    if (sidecar.lambda_mw) j["lambda_mw"] = *sidecar.lambda_mw;
    if (sidecar.eta) j["eta"] = *sidecar.eta;
    for (const auto& [name, value] : sidecar.params) j[name] = value;
    std::filesystem::path side = csv_path;
    side.replace_extension(".json");
    std::ofstream sf(side, std::ios::binary);
    if (!sf) throw ConfigError("cannot write design sidecar: " + side.string());
    sf << j.dump(2) << "\n";
}

Pmd load_pmd_csv(const std::filesystem::path& csv_path) {
    std::ifstream csv(csv_path);
    if (!csv) throw ConfigError("cannot open design file: " + csv_path.string());
    std::string line;
    if (!std::getline(csv, line)) throw ConfigError("empty design file: " + csv_path.string());
    const int n_m = static_cast<int>(split_csv_line(line).size()) - 1;
    if (n_m <= 0) throw ConfigError("design file has no metric columns");
    std::vector<std::vector<std::uint8_t>> rows;
    while (std::getline(csv, line)) {
        if (trim(line).empty()) continue;
        auto fields = split_csv_line(line);
        if (static_cast<int>(fields.size()) != n_m + 1)
            throw ConfigError("design row width mismatch in " + csv_path.string());
        std::vector<std::uint8_t> row;
        for (int m = 0; m < n_m; ++m) {
            const auto& f = fields[static_cast<std::size_t>(m) + 1];
            if (f != "0" && f != "1") throw ConfigError("design entries must be 0 or 1");
            row.push_back(f == "1" ? 1 : 0);
        }
        rows.push_back(std::move(row));
    }
    Pmd out;
    out.collect = BinaryMatrix(static_cast<int>(rows.size()), n_m);
    for (int t = 0; t < out.collect.rows(); ++t)
        for (int m = 0; m < n_m; ++m)
            out.collect(t, m) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(m)];
    return out;
}

PmdSidecar load_pmd_sidecar(const std::filesystem::path& json_path) {
    std::ifstream f(json_path);
    if (!f) throw ConfigError("cannot open design sidecar: " + json_path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("design sidecar parse error: ") + e.what());
    }
    PmdSidecar out;
    out.efficiency = j.value("efficiency", 0.0);
    out.seed = j.value("seed", std::uint64_t{0});
    out.strategy = j.value("strategy", "");
    if (j.contains("e_seed")) out.e_seed = j.at("e_seed").get<double>();
    if (j.contains("lambda_mw")) out.lambda_mw = j.at("lambda_mw").get<double>();
    if (j.contains("eta")) out.eta = j.at("eta").get<double>();
    for (auto& [name, value] : j.items())
        if (value.is_number() && name != "efficiency" && name != "seed" && name != "e_seed" &&
            name != "lambda_mw" && name != "eta")
            out.params[name] = value.get<double>();
    return out;
}

}  // namespace metrik
