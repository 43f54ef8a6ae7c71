#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metrik/array.hpp"

namespace metrik {

enum class MetricKind { continuous, categorical };

/// Static description of one monitored metric.
struct MetricSpec {
    std::string name;
    MetricKind kind = MetricKind::continuous;
    std::vector<std::string> categories;  // categorical only
    double observed_min = 0.0;            // continuous only, raw units
    double observed_max = 0.0;

    int category_count() const { return static_cast<int>(categories.size()); }
};

/// Which (timepoint, metric) cells of the collection protocol a design may drop.
struct ProtocolMask {
    BinaryMatrix eligible;  // [n_t, n_m]

    int eligible_count() const;
};

/// Which cells were actually observed per subject (native missingness).
struct SubjectMask {
    BinaryCube collected;  // [n_s, n_t, n_m]
};

/// Longitudinal trial data: subjects x timepoints x metrics.
///
/// Continuous metrics hold raw values after ingestion and min-max normalized
/// values after preprocess(); categorical metrics hold dense category indices
/// throughout. Unobserved cells hold NaN until preprocess() fills them.
struct RctDataset {
    Cube values;  // [n_s, n_t, n_m]
    std::vector<MetricSpec> metrics;
    std::vector<std::string> subject_ids;
    ProtocolMask protocol;
    SubjectMask observed;
    bool preprocessed = false;

    int n_subjects() const { return values.dim0(); }
    int n_timepoints() const { return values.dim1(); }
    int n_metrics() const { return values.dim2(); }
};

/// Per-metric statistics used by preprocess(): fill values and normalization
/// bounds. Computed over observed entries only, optionally of a subject
/// subset so pilot-training statistics can be reused on validation/test data.
struct NormStats {
    struct MetricStats {
        double fill = 0.0;  // mean (continuous, raw units) or mode index (categorical)
        double min = 0.0;
        double max = 1.0;
    };
    std::vector<MetricStats> per_metric;
};

/// Compute fill/normalization statistics over the observed entries of the
/// given subjects (all subjects when the list is empty).
/// Throws EvalError if a metric has no observed entry in the subset.
NormStats compute_stats(const RctDataset& data, const std::vector<int>& subjects = {});

/// Fill natively missing entries (mean/mode) and min-max normalize continuous
/// metrics. The observed mask is preserved so losses can exclude filled cells.
/// When stats is null they are computed from `raw` itself.
RctDataset preprocess(const RctDataset& raw, const NormStats* stats = nullptr);

/// Subject-level partition: (train, validation). Train size = floor(fraction * n_s).
/// Deterministic under a fixed seed. Throws ConfigError if either side is empty.
std::pair<RctDataset, RctDataset> split(const RctDataset& data, double train_fraction,
                                        std::uint64_t seed);

/// Deterministic subject-index partition backing split(); exposed for fold
/// construction. Returns shuffled subject indices.
std::vector<int> shuffled_subjects(int n_subjects, std::uint64_t seed);

/// Restrict a dataset to a subject subset (order preserved as given).
RctDataset subset_subjects(const RctDataset& data, const std::vector<int>& subjects);

/// Restrict a dataset to a metric subset (protocol columns sliced accordingly).
RctDataset subset_metrics(const RctDataset& data, const std::vector<int>& metric_indices);

std::vector<int> metric_indices_of_kind(const RctDataset& data, MetricKind kind);

/// Synthetic correlated trial generator. Metrics are grouped into blocks; all
/// metrics of a block follow one latent AR(1) time-series plus independent
/// noise, so within-block correlation is high and cross-block correlation is
/// zero. Categorical metrics quantize the same latent into equiprobable bins.
struct SynthConfig {
    int n_subjects = 80;
    int n_timepoints = 6;
    int n_metrics = 24;
    std::vector<int> block_sizes = {6, 6, 6, 6};
    double fraction_categorical = 0.0;
    int n_categories = 4;
    double noise_sd = 0.1;
    double native_missing_rate = 0.0;
    double protocol_eligible_rate = 1.0;
    double ar_coefficient = 0.6;
};

RctDataset synthesize(const SynthConfig& config, std::uint64_t seed);

}  // namespace metrik
