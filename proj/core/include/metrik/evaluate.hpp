#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "metrik/dataset.hpp"
#include "metrik/imputer.hpp"
#include "metrik/metrics.hpp"
#include "metrik/pmd.hpp"

namespace metrik {

/// One CI-bounded performance score, oriented so greater is better. The
/// deviation statistic is stored negated under the name "neg_nrmsd".
struct PerfScore {
    std::string name;  // "neg_nrmsd" | "pacc" | "pmf1"
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    bool degenerate_ci = false;  // fewer than 2 scored subjects: zero width
};

struct EvalOptions {
    int sample_budget = 10000;  // hidden-element cap, applied when subsample = true
    bool subsample = false;     // enabled for randomized designs only
    int n_boot = 1000;
    double level = 0.95;  // two-sided confidence level
    std::uint64_t seed = 0;
    bool squared_deviation = false;  // square the normalized deviation (off: as-is)
};

struct Evaluation {
    double efficiency = 0.0;
    std::vector<PerfScore> scores;  // one (continuous) or two (categorical)
    long n_elements = 0;
    std::uint64_t seed = 0;
    // per-metric audit values over the full scored element set
    std::map<std::string, double> per_metric;  // "<metric>.nrmsd" / ".acc" / ".mf1"
};

/// Applies the design deterministically, imputes the hidden cells, scores
/// the elements that are dropped, protocol-eligible, and natively observed,
/// and bootstraps subject-level confidence intervals. Subsampling (when
/// enabled and the hidden set exceeds the budget) draws without replacement
/// from a stream derived from the seed. Throws when the design hides nothing.
Evaluation evaluate_pair(const Imputer& model, const DesignAssignment& design,
                         const RctDataset& test, const EvalOptions& options);

/// Report layout: {pmd_id, imputer_id, efficiency, scores, n_elements, seed,
/// per_metric}.
std::string evaluation_report_json(const std::string& pmd_id, const std::string& imputer_id,
                                   const Evaluation& evaluation);

}  // namespace metrik
