#pragma once

#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metrik/dataset.hpp"

namespace metrik {

/// Ingestion descriptor. Metrics absent from `declared` are auto-detected
/// (all-numeric with few integer levels -> categorical, otherwise continuous;
/// all-non-numeric -> categorical by label).
struct IngestMetadata {
    struct Declared {
        MetricKind kind = MetricKind::continuous;
        std::vector<std::string> categories;  // categorical only; label order preserved
    };
    std::optional<int> n_visits;
    std::map<std::string, Declared> declared;
    /// Explicit protocol rows per metric name (length n_visits each). When
    /// absent, the protocol is derived from per-cell missingness rates.
    std::map<std::string, std::vector<int>> protocol;
    double protocol_missingness_threshold = 0.2;
    double min_normalized_variance = 1e-6;
    int max_auto_categories = 10;
};

IngestMetadata parse_ingest_metadata(const std::string& json_text);

/// Read long-format rows `subject_id,visit,metric,value` (header required,
/// empty field or NaN = missing) into a raw dataset. Constant, all-missing
/// and near-constant metrics are dropped (names reported via `dropped`).
/// Throws IngestError naming the offending row on duplicates, mixed data
/// types, or invalid visit indices.
RctDataset ingest_csv(std::istream& rows, const IngestMetadata& meta,
                      std::vector<std::string>* dropped = nullptr);

RctDataset ingest_csv_file(const std::filesystem::path& csv_path,
                           const std::filesystem::path& metadata_json_path,
                           std::vector<std::string>* dropped = nullptr);

/// Dataset snapshot: `meta.json` plus one wide CSV per timepoint
/// (`values_t<j>.csv`, `observed_t<j>.csv`). Doubles are written in
/// shortest-round-trip form, so export -> import -> export is byte-identical.
void save_snapshot(const RctDataset& data, const std::filesystem::path& dir);
RctDataset load_snapshot(const std::filesystem::path& dir);

/// 16-hex-digit hash over the canonical snapshot serialization, used for
/// content addressing.
std::string dataset_fingerprint(const RctDataset& data);

}  // namespace metrik
