#include "metrik/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "metrik/errors.hpp"
#include "metrik/rng.hpp"

namespace metrik {

double median(std::vector<double> values) {
    if (values.empty()) throw EvalError("median of empty set");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw EvalError("quantile of empty set");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

double nrmsd_from_deviations(const std::vector<double>& normalized_deviations) {
    if (normalized_deviations.empty()) throw EvalError("deviation score of empty set");
    double sum = 0.0;
    for (double d : normalized_deviations) sum += d;
    return std::sqrt(sum / static_cast<double>(normalized_deviations.size()));
}

double accuracy(const std::vector<int>& truth, const std::vector<int>& predicted) {
    if (truth.empty() || truth.size() != predicted.size())
        throw EvalError("accuracy inputs empty or size-mismatched");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (truth[i] == predicted[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(truth.size());
}

double macro_f1(const std::vector<int>& truth, const std::vector<int>& predicted, int n_classes) {
    if (truth.empty() || truth.size() != predicted.size())
        throw EvalError("macro F1 inputs empty or size-mismatched");
    std::vector<long> tp(n_classes, 0), n_true(n_classes, 0), n_pred(n_classes, 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++n_true[truth[i]];
        ++n_pred[predicted[i]];
        if (truth[i] == predicted[i]) ++tp[truth[i]];
    }
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (n_true[c] + n_pred[c] == 0) continue;
        // denominator = 2TP + FP + FN = n_true + n_pred, positive for present classes
        sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(n_true[c] + n_pred[c]);
        ++present;
    }
    return sum / static_cast<double>(present);
}

namespace {

/// Per-subject element indices, so one subject draw pulls all its elements.
struct SubjectGroups {
    std::vector<std::vector<int>> continuous;   // indices into sample.continuous
    std::vector<std::vector<int>> categorical;  // indices into sample.categorical
};

SubjectGroups group_by_subject(const EvalSample& sample) {
    SubjectGroups g;
    g.continuous.resize(sample.n_subjects);
    g.categorical.resize(sample.n_subjects);
    for (int i = 0; i < static_cast<int>(sample.continuous.size()); ++i)
        g.continuous[sample.continuous[i].subject].push_back(i);
    for (int i = 0; i < static_cast<int>(sample.categorical.size()); ++i)
        g.categorical[sample.categorical[i].subject].push_back(i);
    return g;
}

/// Pooled scores over a multiset of subjects. Confusion counts are pooled per
/// metric, then accuracy / macro F1 per metric are combined by median.
PooledScores scores_of_subjects(const EvalSample& sample, const SubjectGroups& groups,
                                const std::vector<int>& subjects,
                                std::vector<std::vector<int>>& truth_buf,
                                std::vector<std::vector<int>>& pred_buf) {
    PooledScores out;
    double dev_sum = 0.0;
    long dev_n = 0;
    for (auto& v : truth_buf) v.clear();
    for (auto& v : pred_buf) v.clear();
    for (int s : subjects) {
        for (int i : groups.continuous[s]) {
            dev_sum += sample.continuous[i].deviation;
            ++dev_n;
        }
        for (int i : groups.categorical[s]) {
            const auto& e = sample.categorical[i];
            truth_buf[e.metric].push_back(e.truth);
            pred_buf[e.metric].push_back(e.predicted);
        }
    }
    if (dev_n > 0) out.nrmsd = std::sqrt(dev_sum / static_cast<double>(dev_n));
    std::vector<double> accs, f1s;
    for (std::size_t m = 0; m < truth_buf.size(); ++m) {
        if (truth_buf[m].empty()) continue;
        accs.push_back(accuracy(truth_buf[m], pred_buf[m]));
        f1s.push_back(macro_f1(truth_buf[m], pred_buf[m], sample.classes_of_metric[m]));
    }
    if (!accs.empty()) {
        out.acc = median(accs);
        out.mf1 = median(f1s);
    }
    return out;
}

}  // namespace

PooledScores pooled_scores(const EvalSample& sample) {
    SubjectGroups groups = group_by_subject(sample);
    std::vector<int> all(sample.n_subjects);
    for (int s = 0; s < sample.n_subjects; ++s) all[s] = s;
    std::vector<std::vector<int>> truth_buf(sample.classes_of_metric.size());
    std::vector<std::vector<int>> pred_buf(sample.classes_of_metric.size());
    return scores_of_subjects(sample, groups, all, truth_buf, pred_buf);
}

PerfSummary bootstrap_scores(const EvalSample& sample, const BootstrapConfig& config) {
    if (sample.n_subjects <= 0) throw EvalError("bootstrap requires at least one subject");
    SubjectGroups groups = group_by_subject(sample);
    std::vector<std::vector<int>> truth_buf(sample.classes_of_metric.size());
    std::vector<std::vector<int>> pred_buf(sample.classes_of_metric.size());

    std::vector<int> all(sample.n_subjects);
    for (int s = 0; s < sample.n_subjects; ++s) all[s] = s;
    const PooledScores point = scores_of_subjects(sample, groups, all, truth_buf, pred_buf);

    std::vector<double> nrmsds, accs, f1s;
    std::vector<int> drawn(sample.n_subjects);
    for (int r = 0; r < config.n_resamples; ++r) {
        Rng rng(derive_seed(config.seed, "bootstrap", r));
        for (int s = 0; s < sample.n_subjects; ++s)
            drawn[s] = static_cast<int>(rng.uniform_index(sample.n_subjects));
        const PooledScores ps = scores_of_subjects(sample, groups, drawn, truth_buf, pred_buf);
        if (ps.nrmsd) nrmsds.push_back(*ps.nrmsd);
        if (ps.acc) accs.push_back(*ps.acc);
        if (ps.mf1) f1s.push_back(*ps.mf1);
    }

    auto interval = [&](std::optional<double> pt, std::vector<double>& stats) {
        std::optional<ScoreCI> ci;
        if (!pt) return ci;
        ScoreCI out;
        out.point = *pt;
        if (stats.empty()) {
            out.lower = out.upper = *pt;
        } else {
            std::sort(stats.begin(), stats.end());
            out.lower = quantile_sorted(stats, config.lower_q);
            out.upper = quantile_sorted(stats, config.upper_q);
        }
        ci = out;
        return ci;
    };
    PerfSummary summary;
    summary.nrmsd = interval(point.nrmsd, nrmsds);
    summary.acc = interval(point.acc, accs);
    summary.mf1 = interval(point.mf1, f1s);
    return summary;
}

}  // namespace metrik
