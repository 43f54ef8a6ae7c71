#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace metrik {

/// Midpoint-of-two-middle-values median. Input is copied and sorted.
double median(std::vector<double> values);

/// Empirical quantile with linear interpolation between order statistics
/// (position q * (n - 1)). `sorted` must be ascending and non-empty.
double quantile_sorted(const std::vector<double>& sorted, double q);

/// Root of the mean normalized deviation. Each entry is |pred - truth| / range
/// of its metric, or the square of that ratio when the squared variant is
/// selected upstream.
double nrmsd_from_deviations(const std::vector<double>& normalized_deviations);

/// Fraction of positions where predicted == truth.
double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted);

/// Macro F1 over the classes that occur in `truth` or `predicted`; classes
/// absent from both are excluded from the average. A class with no true and
/// no predicted instances would have an undefined F1, not a zero one.
double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted, int n_classes);

/// Hidden-element predictions for one design, grouped so subject-level
/// bootstrap resampling can re-aggregate them.
struct EvalSample {
    struct Continuous {
        int subject = 0;
        int metric = 0;
        double deviation = 0.0;  // |pred - truth| / range, or its square
    };
    struct Categorical {
        int subject = 0;
        int metric = 0;
        int truth = 0;
        int predicted = 0;
    };
    std::vector<Continuous> continuous;
    std::vector<Categorical> categorical;
    int n_subjects = 0;                 // subjects in the evaluation split
    std::vector<int> classes_of_metric; // per metric index: category count, 0 = continuous

    bool empty() const { return continuous.empty() && categorical.empty(); }
};

/// Deviation pooled over every continuous element; accuracy and macro F1
/// computed per categorical metric and pooled by median. A score is absent
/// when no element of its kind exists.
struct PooledScores {
    std::optional<double> nrmsd;
    std::optional<double> acc;
    std::optional<double> mf1;
};

PooledScores pooled_scores(const EvalSample& sample);

struct ScoreCI {
    double point = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

struct PerfSummary {
    std::optional<ScoreCI> nrmsd;
    std::optional<ScoreCI> acc;
    std::optional<ScoreCI> mf1;
};

struct BootstrapConfig {
    int n_resamples = 1000;
    double lower_q = 0.025;
    double upper_q = 0.975;
    std::uint64_t seed = 0;
};

/// Percentile confidence intervals from subject-level resampling with
/// replacement. Resample r draws from a stream derived as (seed, "bootstrap",
/// r), so results do not depend on execution order or worker count. Resamples
/// where a score is undefined (no element of its kind drawn) are skipped for
/// that score's interval.
PerfSummary bootstrap_scores(const EvalSample& sample, const BootstrapConfig& config);

}  // namespace metrik
