#include "metrik/select.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "metrik/errors.hpp"
#include "metrik/text.hpp"

namespace metrik {

namespace {

const PerfScore* find_score(const ScoredCandidate& c, const std::string& name) {
    for (const PerfScore& s : c.perf)
        if (s.name == name) return &s;
    return nullptr;
}

/// Sort keys, most significant first: lower confidence bounds, with
/// efficiency placed first or last depending on the objective.
std::vector<double> sort_key(const ScoredCandidate& c, DesignObjective objective) {
    std::vector<double> performance;
    if (const PerfScore* s = find_score(c, "neg_nrmsd")) {
        performance.push_back(s->lower);
    } else {
        const PerfScore* acc = find_score(c, "pacc");
        const PerfScore* f1 = find_score(c, "pmf1");
        if (!acc || !f1) throw ConfigError("candidate lacks performance scores");
        performance.push_back(acc->lower);
        performance.push_back(f1->lower);
    }
    std::vector<double> key;
    if (objective.mode == DesignObjective::Mode::max_efficiency) {
        key.push_back(c.efficiency);
        key.insert(key.end(), performance.begin(), performance.end());
    } else {
        key = performance;
        key.push_back(c.efficiency);
    }
    return key;
}

}  // namespace

bool eligible(const ScoredCandidate& candidate, const ScoredCandidate& reference) {
    if (!(candidate.efficiency > reference.efficiency)) return false;
    for (const PerfScore& ref_score : reference.perf) {
        const PerfScore* cand_score = find_score(candidate, ref_score.name);
        if (!cand_score) throw ConfigError("candidate lacks score '" + ref_score.name + "'");
        if (!(cand_score->lower > ref_score.upper)) return false;
    }
    return true;
}

ScoredCandidate with_point_intervals(ScoredCandidate candidate) {
    for (PerfScore& s : candidate.perf) {
        s.lower = s.point;
        s.upper = s.point;
    }
    return candidate;
}

std::vector<RankSection> rank_report(const std::vector<ScoredCandidate>& references,
                                     const std::vector<ScoredCandidate>& candidates,
                                     DesignObjective objective) {
    if (references.empty()) throw ConfigError("selection requires a non-empty reference set");
    std::vector<RankSection> out;
    for (const ScoredCandidate& ref : references) {
        RankSection section;
        section.reference = ref;
        std::vector<std::size_t> order(candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::vector<std::vector<double>> keys;
        keys.reserve(candidates.size());
        for (const ScoredCandidate& c : candidates) keys.push_back(sort_key(c, objective));
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return keys[a] > keys[b];  // descending lexicographic
        });
        bool chosen_marked = false;
        int rank = 1;  // 1-based: the audit table shows these directly
        for (std::size_t i : order) {
            RankRow row;
            row.rank = rank++;
            row.candidate = candidates[i];
            row.is_eligible = eligible(candidates[i], ref);
            if (row.is_eligible && !chosen_marked) {
                row.chosen = true;
                chosen_marked = true;
            }
            section.rows.push_back(std::move(row));
        }
        out.push_back(std::move(section));
    }
    return out;
}

std::vector<Solution> choose(const std::vector<ScoredCandidate>& references,
                             const std::vector<ScoredCandidate>& candidates,
                             DesignObjective objective) {
    std::vector<Solution> out;
    for (const RankSection& section : rank_report(references, candidates, objective)) {
        Solution sol;
        sol.reference = section.reference;
        sol.fallback = true;
        sol.chosen = section.reference;
        for (const RankRow& row : section.rows)
            if (row.chosen) {
                sol.chosen = row.candidate;
                sol.fallback = false;
                break;
            }
        out.push_back(std::move(sol));
    }
    return out;
}

std::string solution_set_json(const std::vector<Solution>& solutions) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Solution& sol : solutions) {
        nlohmann::json j;
        j["reference_id"] = sol.reference.pmd_id;
        nlohmann::json chosen;
        chosen["pmd_id"] = sol.chosen.pmd_id;
        chosen["imputer_id"] = sol.chosen.imputer_id;
        chosen["efficiency"] = sol.chosen.efficiency;
        nlohmann::json scores = nlohmann::json::array();
        for (const PerfScore& s : sol.chosen.perf) {
            nlohmann::json js;
            js["name"] = s.name;
            js["point"] = s.point;
            js["lower"] = s.lower;
            js["upper"] = s.upper;
            scores.push_back(js);
        }
        chosen["scores"] = scores;
        j["chosen"] = chosen;
        j["fallback"] = sol.fallback;
        arr.push_back(std::move(j));
    }
    return arr.dump(2) + "\n";
}

std::string audit_table_csv(const std::vector<RankSection>& sections) {
    std::set<std::string> score_names, per_metric_names;
    for (const RankSection& section : sections)
        for (const RankRow& row : section.rows) {
            for (const PerfScore& s : row.candidate.perf) score_names.insert(s.name);
            for (const auto& [name, value] : row.candidate.per_metric)
                per_metric_names.insert(name);
        }
    std::string out = "reference_pmd,rank,pmd_id,imputer_id,origin,efficiency";
    for (const std::string& name : score_names)
        out += "," + name + "_point," + name + "_lower," + name + "_upper";
    for (const std::string& name : per_metric_names) out += "," + csv_escape(name);
    out += ",eligible,chosen\n";
    for (const RankSection& section : sections) {
        for (const RankRow& row : section.rows) {
            out += csv_escape(section.reference.pmd_id);
            out += "," + std::to_string(row.rank);
            out += "," + csv_escape(row.candidate.pmd_id);
            out += "," + csv_escape(row.candidate.imputer_id);
            out += row.candidate.origin == ScoredCandidate::Origin::reference ? ",reference"
                                                                              : ",learned";
            out += "," + format_double(row.candidate.efficiency);
            for (const std::string& name : score_names) {
                const PerfScore* s = find_score(row.candidate, name);
                if (s) {
                    out += "," + format_double(s->point) + "," + format_double(s->lower) + "," +
                           format_double(s->upper);
                } else {
                    out += ",,,";
                }
            }
            for (const std::string& name : per_metric_names) {
                auto it = row.candidate.per_metric.find(name);
                out += ",";
                if (it != row.candidate.per_metric.end()) out += format_double(it->second);
            }
            out += row.is_eligible ? ",1" : ",0";
            out += row.chosen ? ",1\n" : ",0\n";
        }
    }
    return out;
}

}  // namespace metrik
