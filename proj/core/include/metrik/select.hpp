#pragma once

#include <map>
#include <string>
#include <vector>

#include "metrik/evaluate.hpp"

namespace metrik {

struct ScoredCandidate {
    std::string imputer_id;
    std::string pmd_id;
    double efficiency = 0.0;
    std::vector<PerfScore> perf;  // neg_nrmsd, or pacc + pmf1
    enum class Origin { reference, learned } origin = Origin::learned;
    std::map<std::string, double> per_metric;  // audit columns from evaluation
};

struct DesignObjective {
    enum class Mode { max_efficiency, max_performance } mode = Mode::max_efficiency;
};

/// True iff the candidate's efficiency is strictly higher and, for every
/// performance score, its lower confidence bound strictly exceeds the
/// reference's upper bound (categorical: both pacc and pmf1 must clear).
bool eligible(const ScoredCandidate& candidate, const ScoredCandidate& reference);

/// Collapse intervals onto the point estimate; selection then gates and
/// sorts on points alone.
ScoredCandidate with_point_intervals(ScoredCandidate candidate);

struct Solution {
    ScoredCandidate reference;
    ScoredCandidate chosen;  // the reference itself when fallback
    bool fallback = false;
};

/// Per reference pair: gate candidates through `eligible`, stable-sort the
/// survivors (descending lower bounds; max_efficiency keys efficiency before
/// performance, max_performance the reverse; categorical performance is pacc
/// with pmf1 as tiebreaker; remaining ties keep insertion order), and take
/// the first. No eligible candidate -> the reference pair is emitted.
std::vector<Solution> choose(const std::vector<ScoredCandidate>& references,
                             const std::vector<ScoredCandidate>& candidates,
                             DesignObjective objective);

struct RankRow {
    int rank = 0;
    ScoredCandidate candidate;
    bool is_eligible = false;
    bool chosen = false;
};

struct RankSection {
    ScoredCandidate reference;
    std::vector<RankRow> rows;  // every candidate, in selection order
};

/// Full ranked listing per reference with eligibility flags; the ordering is
/// the one `choose` selects from.
std::vector<RankSection> rank_report(const std::vector<ScoredCandidate>& references,
                                     const std::vector<ScoredCandidate>& candidates,
                                     DesignObjective objective);

/// JSON array of {reference_id, chosen: {pmd_id, imputer_id, efficiency,
/// scores}, fallback}.
std::string solution_set_json(const std::vector<Solution>& solutions);

/// CSV audit table; per-metric validation score columns appear for every
/// metric present in any row.
std::string audit_table_csv(const std::vector<RankSection>& sections);

}  // namespace metrik
