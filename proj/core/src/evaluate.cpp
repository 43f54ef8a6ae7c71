#include "metrik/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <json.hpp>

#include "metrik/errors.hpp"
#include "metrik/rng.hpp"
#include "metrik/text.hpp"

namespace metrik {

namespace {

struct Element {
    int subject, timepoint, metric;
};

}  // namespace

Evaluation evaluate_pair(const Imputer& model, const DesignAssignment& design,
                         const RctDataset& test, const EvalOptions& options) {
    if (!test.preprocessed) throw EvalError("evaluation requires preprocessed data");
    const int n_s = test.n_subjects(), n_t = test.n_timepoints(), n_m = test.n_metrics();
    if (!design.shared() && static_cast<int>(design.masks.size()) != n_s)
        throw EvalError("design list does not cover the evaluation subjects");

    Evaluation out;
    out.seed = options.seed;
    out.efficiency = design.mean_efficiency(test.protocol);

    std::vector<int> subjects(static_cast<std::size_t>(n_s));
    std::vector<const Pmd*> design_ptrs(static_cast<std::size_t>(n_s));
    for (int s = 0; s < n_s; ++s) {
        subjects[static_cast<std::size_t>(s)] = s;
        design_ptrs[static_cast<std::size_t>(s)] = &design.of_subject(s);
    }
    const BatchTensors batch = build_batch(test, subjects, design_ptrs);

    std::vector<Element> elements;
    for (int s = 0; s < n_s; ++s)
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m)
                if (batch.loss_mask(s, t, m)) elements.push_back({s, t, m});
    if (elements.empty()) throw EvalError("empty evaluation: the design hides nothing scoreable");

    if (options.subsample && static_cast<int>(elements.size()) > options.sample_budget) {
        // partial Fisher-Yates prefix, then restore canonical order
        Rng rng(derive_seed(options.seed, "subsample"));
        std::vector<std::size_t> index(elements.size());
        for (std::size_t i = 0; i < index.size(); ++i) index[i] = i;
        for (int i = 0; i < options.sample_budget; ++i) {
            const std::size_t j =
                static_cast<std::size_t>(i) +
                rng.uniform_index(index.size() - static_cast<std::size_t>(i));
            std::swap(index[static_cast<std::size_t>(i)], index[j]);
        }
        index.resize(static_cast<std::size_t>(options.sample_budget));
        std::sort(index.begin(), index.end());
        std::vector<Element> kept;
        kept.reserve(index.size());
        for (std::size_t i : index) kept.push_back(elements[i]);
        elements = std::move(kept);
    }
    out.n_elements = static_cast<long>(elements.size());

    const Cube raw_pred = forward(model, batch.input, batch.visibility);
    const Cube pred = decode(model, raw_pred);

    // per-metric normalization ranges from natively observed ground truth
    std::vector<double> range(static_cast<std::size_t>(n_m), 0.0);
    if (model.config.metric_kind == MetricKind::continuous) {
        for (int m = 0; m < n_m; ++m) {
            double mn = std::numeric_limits<double>::infinity(), mx = -mn;
            for (int s = 0; s < n_s; ++s)
                for (int t = 0; t < n_t; ++t)
                    if (test.observed.collected(s, t, m)) {
                        mn = std::min(mn, test.values(s, t, m));
                        mx = std::max(mx, test.values(s, t, m));
                    }
            range[static_cast<std::size_t>(m)] = mx - mn;
        }
    }

    EvalSample sample;
    sample.n_subjects = n_s;
    for (const auto& spec : test.metrics)
        sample.classes_of_metric.push_back(
            spec.kind == MetricKind::categorical ? static_cast<int>(spec.categories.size()) : 0);
    for (const Element& e : elements) {
        const auto& spec = test.metrics[static_cast<std::size_t>(e.metric)];
        if (spec.kind == MetricKind::continuous) {
            const double r = range[static_cast<std::size_t>(e.metric)];
            if (!(r > 0.0))
                throw EvalError("zero observed range for metric '" + spec.name + "'");
            const double dev =
                std::abs(pred(e.subject, e.timepoint, e.metric) -
                         test.values(e.subject, e.timepoint, e.metric)) /
                r;
            sample.continuous.push_back(
                {e.subject, e.metric, options.squared_deviation ? dev * dev : dev});
        } else {
            sample.categorical.push_back(
                {e.subject, e.metric,
                 static_cast<int>(test.values(e.subject, e.timepoint, e.metric)),
                 static_cast<int>(pred(e.subject, e.timepoint, e.metric))});
        }
    }

    std::set<int> scored_subjects;
    for (const Element& e : elements) scored_subjects.insert(e.subject);
    const bool degenerate = scored_subjects.size() < 2;

    PerfSummary summary;
    if (degenerate) {
        const PooledScores point = pooled_scores(sample);
        auto zero_width = [](std::optional<double> p) {
            std::optional<ScoreCI> ci;
            if (p) ci = ScoreCI{*p, *p, *p};
            return ci;
        };
        summary.nrmsd = zero_width(point.nrmsd);
        summary.acc = zero_width(point.acc);
        summary.mf1 = zero_width(point.mf1);
    } else {
        BootstrapConfig bc;
        bc.n_resamples = options.n_boot;
        bc.lower_q = (1.0 - options.level) / 2.0;
        bc.upper_q = 1.0 - bc.lower_q;
        bc.seed = derive_seed(options.seed, "bootstrap-stream");
        summary = bootstrap_scores(sample, bc);
    }

    if (summary.nrmsd) {
        PerfScore s;
        s.name = "neg_nrmsd";
        s.point = -summary.nrmsd->point;
        s.lower = -summary.nrmsd->upper;
        s.upper = -summary.nrmsd->lower;
        s.degenerate_ci = degenerate;
        out.scores.push_back(s);
    }
    if (summary.acc) {
        PerfScore s;
        s.name = "pacc";
        s.point = summary.acc->point;
        s.lower = summary.acc->lower;
        s.upper = summary.acc->upper;
        s.degenerate_ci = degenerate;
        out.scores.push_back(s);
        PerfScore f;
        f.name = "pmf1";
        f.point = summary.mf1->point;
        f.lower = summary.mf1->lower;
        f.upper = summary.mf1->upper;
        f.degenerate_ci = degenerate;
        out.scores.push_back(f);
    }

    // per-metric audit columns over the full scored set
    for (int m = 0; m < n_m; ++m) {
        const auto& spec = test.metrics[static_cast<std::size_t>(m)];
        if (spec.kind == MetricKind::continuous) {
            double sum = 0.0;
            long n = 0;
            for (const auto& c : sample.continuous)
                if (c.metric == m) {
                    sum += c.deviation;
                    ++n;
                }
            if (n > 0) out.per_metric[spec.name + ".nrmsd"] = std::sqrt(sum / n);
        } else {
            std::vector<int> truth, predicted;
            for (const auto& c : sample.categorical)
                if (c.metric == m) {
                    truth.push_back(c.truth);
                    predicted.push_back(c.predicted);
                }
            if (!truth.empty()) {
                out.per_metric[spec.name + ".acc"] = accuracy(truth, predicted);
                out.per_metric[spec.name + ".mf1"] =
                    macro_f1(truth, predicted, static_cast<int>(spec.categories.size()));
            }
        }
    }
    return out;
}

std::string evaluation_report_json(const std::string& pmd_id, const std::string& imputer_id,
                                   const Evaluation& evaluation) {
    nlohmann::json j;
    j["pmd_id"] = pmd_id;
    j["imputer_id"] = imputer_id;
    j["efficiency"] = evaluation.efficiency;
    j["n_elements"] = evaluation.n_elements;
    j["seed"] = evaluation.seed;
    nlohmann::json scores = nlohmann::json::array();
    for (const PerfScore& s : evaluation.scores) {
        nlohmann::json js;
        js["name"] = s.name;
        js["point"] = s.point;
        js["lower"] = s.lower;
        js["upper"] = s.upper;
        if (s.degenerate_ci) js["degenerate_ci"] = true;
        scores.push_back(js);
    }
    j["scores"] = scores;
    nlohmann::json per_metric = nlohmann::json::object();
    for (const auto& [name, value] : evaluation.per_metric) per_metric[name] = value;
    j["per_metric"] = per_metric;
    return j.dump(2) + "\n";
}

}  // namespace metrik
