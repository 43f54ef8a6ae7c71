#include "metrik/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "metrik/errors.hpp"
#include "metrik/rng.hpp"

namespace metrik {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

// Inverse standard normal CDF by bisection on erf; used for category bin edges.
double normal_quantile(double p) {
    double lo = -10.0, hi = 10.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double cdf = 0.5 * (1.0 + std::erf(mid / std::sqrt(2.0)));
        (cdf < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

int ProtocolMask::eligible_count() const {
    int n = 0;
    for (int t = 0; t < eligible.rows(); ++t)
        for (int m = 0; m < eligible.cols(); ++m) n += eligible(t, m);
    return n;
}

NormStats compute_stats(const RctDataset& data, const std::vector<int>& subjects) {
    std::vector<int> subs = subjects;
    if (subs.empty()) {
        subs.resize(data.n_subjects());
        std::iota(subs.begin(), subs.end(), 0);
    }
    NormStats stats;
    stats.per_metric.resize(data.n_metrics());
    for (int m = 0; m < data.n_metrics(); ++m) {
        const MetricSpec& spec = data.metrics[m];
        auto& st = stats.per_metric[m];
        if (spec.kind == MetricKind::continuous) {
            double sum = 0.0, mn = std::numeric_limits<double>::infinity(), mx = -mn;
            long count = 0;
            for (int i : subs)
                for (int t = 0; t < data.n_timepoints(); ++t)
                    if (data.observed.collected(i, t, m)) {
                        const double v = data.values(i, t, m);
                        sum += v;
                        mn = std::min(mn, v);
                        mx = std::max(mx, v);
                        ++count;
                    }
            if (count == 0)
                throw EvalError("metric '" + spec.name + "' has no observed entries; cannot compute mean");
            st.fill = sum / static_cast<double>(count);
            st.min = mn;
            st.max = mx;
        } else {
            std::vector<long> counts(spec.categories.size(), 0);
            long total = 0;
            for (int i : subs)
                for (int t = 0; t < data.n_timepoints(); ++t)
                    if (data.observed.collected(i, t, m)) {
                        const int idx = static_cast<int>(data.values(i, t, m));
                        if (idx >= 0 && idx < static_cast<int>(counts.size())) ++counts[idx];
                        ++total;
                    }
            if (total == 0)
                throw EvalError("metric '" + spec.name + "' has no observed entries; cannot compute mode");
            // lowest index wins ties
            int mode = 0;
            for (int c = 1; c < static_cast<int>(counts.size()); ++c)
                if (counts[c] > counts[mode]) mode = c;
            st.fill = static_cast<double>(mode);
            st.min = 0.0;
            st.max = static_cast<double>(spec.categories.size() - 1);
        }
    }
    return stats;
}

RctDataset preprocess(const RctDataset& raw, const NormStats* stats_in) {
    NormStats local;
    if (stats_in == nullptr) {
        local = compute_stats(raw);
        stats_in = &local;
    }
    if (static_cast<int>(stats_in->per_metric.size()) != raw.n_metrics())
        throw ConfigError("preprocess: stats metric count does not match dataset");

    RctDataset out = raw;
    for (int m = 0; m < raw.n_metrics(); ++m) {
        const MetricSpec& spec = raw.metrics[m];
        const auto& st = stats_in->per_metric[m];
        if (spec.kind == MetricKind::continuous) {
            const double range = st.max - st.min;
            if (!(range > 0.0))
                throw ConfigError("metric '" + spec.name + "' has zero range; constant metrics are rejected at ingestion");
            for (int i = 0; i < raw.n_subjects(); ++i)
                for (int t = 0; t < raw.n_timepoints(); ++t) {
                    double v = raw.observed.collected(i, t, m) ? raw.values(i, t, m) : st.fill;
                    out.values(i, t, m) = (v - st.min) / range;
                }
            out.metrics[m].observed_min = 0.0;
            out.metrics[m].observed_max = 1.0;
        } else {
            for (int i = 0; i < raw.n_subjects(); ++i)
                for (int t = 0; t < raw.n_timepoints(); ++t)
                    if (!raw.observed.collected(i, t, m)) out.values(i, t, m) = st.fill;
        }
    }
    out.preprocessed = true;
    return out;
}

std::vector<int> shuffled_subjects(int n_subjects, std::uint64_t seed) {
    std::vector<int> idx(n_subjects);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "subject-shuffle"));
    for (int i = n_subjects - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[i], idx[j]);
    }
    return idx;
}

std::pair<RctDataset, RctDataset> split(const RctDataset& data, double train_fraction,
                                        std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("split: train_fraction must lie in (0, 1)");
    const int n = data.n_subjects();
    const int n_train = static_cast<int>(std::floor(train_fraction * n));
    if (n_train == 0 || n_train == n)
        throw ConfigError("split: partition would leave an empty side (n_subjects=" +
                          std::to_string(n) + ", fraction=" + std::to_string(train_fraction) + ")");
    std::vector<int> idx = shuffled_subjects(n, seed);
    std::vector<int> train(idx.begin(), idx.begin() + n_train);
    std::vector<int> val(idx.begin() + n_train, idx.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {subset_subjects(data, train), subset_subjects(data, val)};
}

RctDataset subset_subjects(const RctDataset& data, const std::vector<int>& subjects) {
    RctDataset out;
    out.metrics = data.metrics;
    out.protocol = data.protocol;
    out.preprocessed = data.preprocessed;
    const int n_t = data.n_timepoints(), n_m = data.n_metrics();
    out.values = Cube(static_cast<int>(subjects.size()), n_t, n_m);
    out.observed.collected = BinaryCube(static_cast<int>(subjects.size()), n_t, n_m);
    out.subject_ids.reserve(subjects.size());
    for (int r = 0; r < static_cast<int>(subjects.size()); ++r) {
        const int i = subjects[r];
        out.subject_ids.push_back(data.subject_ids[i]);
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m) {
                out.values(r, t, m) = data.values(i, t, m);
                out.observed.collected(r, t, m) = data.observed.collected(i, t, m);
            }
    }
    return out;
}

RctDataset subset_metrics(const RctDataset& data, const std::vector<int>& metric_indices) {
    RctDataset out;
    out.subject_ids = data.subject_ids;
    out.preprocessed = data.preprocessed;
    const int n_s = data.n_subjects(), n_t = data.n_timepoints();
    const int n_m = static_cast<int>(metric_indices.size());
    out.values = Cube(n_s, n_t, n_m);
    out.observed.collected = BinaryCube(n_s, n_t, n_m);
    out.protocol.eligible = BinaryMatrix(n_t, n_m);
    out.metrics.reserve(metric_indices.size());
    for (int c = 0; c < n_m; ++c) {
        const int m = metric_indices[c];
        out.metrics.push_back(data.metrics[m]);
        for (int t = 0; t < n_t; ++t) out.protocol.eligible(t, c) = data.protocol.eligible(t, m);
        for (int i = 0; i < n_s; ++i)
            for (int t = 0; t < n_t; ++t) {
                out.values(i, t, c) = data.values(i, t, m);
                out.observed.collected(i, t, c) = data.observed.collected(i, t, m);
            }
    }
    return out;
}

std::vector<int> metric_indices_of_kind(const RctDataset& data, MetricKind kind) {
    std::vector<int> out;
    for (int m = 0; m < data.n_metrics(); ++m)
        if (data.metrics[m].kind == kind) out.push_back(m);
    return out;
}

RctDataset synthesize(const SynthConfig& cfg, std::uint64_t seed) {
    int block_total = 0;
    for (int b : cfg.block_sizes) block_total += b;
    if (block_total != cfg.n_metrics)
        throw ConfigError("synthesize: block sizes sum to " + std::to_string(block_total) +
                          ", expected n_metrics=" + std::to_string(cfg.n_metrics));
    if (cfg.n_subjects < 1 || cfg.n_timepoints < 1)
        throw ConfigError("synthesize: need at least one subject and timepoint");
    if (cfg.fraction_categorical > 0.0 && cfg.n_categories < 2)
        throw ConfigError("synthesize: categorical metrics need at least 2 categories");

    const int n_s = cfg.n_subjects, n_t = cfg.n_timepoints, n_m = cfg.n_metrics;

    // block id and kind per metric; within each block the trailing metrics are
    // categorical so both sub-pipelines keep correlated groups
    std::vector<int> block_of(n_m);
    std::vector<MetricKind> kind_of(n_m, MetricKind::continuous);
    {
        int m = 0;
        for (int b = 0; b < static_cast<int>(cfg.block_sizes.size()); ++b) {
            const int sz = cfg.block_sizes[b];
            const int n_cat = static_cast<int>(std::lround(cfg.fraction_categorical * sz));
            for (int j = 0; j < sz; ++j, ++m) {
                block_of[m] = b;
                if (j >= sz - n_cat) kind_of[m] = MetricKind::categorical;
            }
        }
    }

    std::vector<double> bin_edges;  // thresholds between the k equiprobable bins
    for (int c = 1; c < cfg.n_categories; ++c)
        bin_edges.push_back(normal_quantile(static_cast<double>(c) / cfg.n_categories));

    RctDataset out;
    out.values = Cube(n_s, n_t, n_m);
    out.observed.collected = BinaryCube(n_s, n_t, n_m, 1);
    out.protocol.eligible = BinaryMatrix(n_t, n_m, 1);

    Rng latent_rng(derive_seed(seed, "synth-latent"));
    Rng noise_rng(derive_seed(seed, "synth-noise"));
    Rng miss_rng(derive_seed(seed, "synth-missing"));
    Rng proto_rng(derive_seed(seed, "synth-protocol"));

    const int n_blocks = static_cast<int>(cfg.block_sizes.size());
    const double ar = cfg.ar_coefficient;
    const double innovation_sd = std::sqrt(std::max(0.0, 1.0 - ar * ar));
    Cube latent(n_s, n_blocks, n_t);
    for (int i = 0; i < n_s; ++i)
        for (int b = 0; b < n_blocks; ++b) {
            double z = latent_rng.normal();
            latent(i, b, 0) = z;
            for (int t = 1; t < n_t; ++t) {
                z = ar * z + innovation_sd * latent_rng.normal();
                latent(i, b, t) = z;
            }
        }

    for (int i = 0; i < n_s; ++i)
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m) {
                const double z = latent(i, block_of[m], t) + cfg.noise_sd * noise_rng.normal();
                if (kind_of[m] == MetricKind::continuous) {
                    out.values(i, t, m) = z;
                } else {
                    int cat = 0;
                    while (cat < static_cast<int>(bin_edges.size()) && z >= bin_edges[cat]) ++cat;
                    out.values(i, t, m) = static_cast<double>(cat);
                }
            }

    if (cfg.protocol_eligible_rate < 1.0) {
        for (int t = 0; t < n_t; ++t)
            for (int m = 0; m < n_m; ++m)
                out.protocol.eligible(t, m) = proto_rng.uniform() < cfg.protocol_eligible_rate ? 1 : 0;
        if (out.protocol.eligible_count() == 0) out.protocol.eligible(0, 0) = 1;
    }
    if (cfg.native_missing_rate > 0.0) {
        for (int i = 0; i < n_s; ++i)
            for (int t = 0; t < n_t; ++t)
                for (int m = 0; m < n_m; ++m)
                    if (miss_rng.uniform() < cfg.native_missing_rate) {
                        out.observed.collected(i, t, m) = 0;
                        out.values(i, t, m) = kNan;
                    }
    }

    out.metrics.resize(n_m);
    for (int m = 0; m < n_m; ++m) {
        MetricSpec& spec = out.metrics[m];
        spec.name = "metric_" + std::to_string(m);
        spec.kind = kind_of[m];
        if (spec.kind == MetricKind::categorical) {
            for (int c = 0; c < cfg.n_categories; ++c) spec.categories.push_back("c" + std::to_string(c));
        } else {
            double mn = std::numeric_limits<double>::infinity(), mx = -mn;
            for (int i = 0; i < n_s; ++i)
                for (int t = 0; t < n_t; ++t)
                    if (out.observed.collected(i, t, m)) {
                        mn = std::min(mn, out.values(i, t, m));
                        mx = std::max(mx, out.values(i, t, m));
                    }
            spec.observed_min = mn;
            spec.observed_max = mx;
        }
    }

    out.subject_ids.resize(n_s);
    for (int i = 0; i < n_s; ++i) out.subject_ids[i] = "S" + std::to_string(i);
    return out;
}

}  // namespace metrik
