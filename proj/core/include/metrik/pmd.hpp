#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metrik/dataset.hpp"

namespace metrik {

/// Planned missing design over the (timepoint, metric) grid. 1 = collect,
/// 0 = skip. Protocol-ineligible entries are always 1: only eligible
/// measurements may be dropped, and efficiency counts only eligible entries.
struct Pmd {
    BinaryMatrix collect;
    double efficiency = 0.0;  // realized against the generating protocol

    int n_timepoints() const { return collect.rows(); }
    int n_metrics() const { return collect.cols(); }
};

/// Fraction of protocol-eligible entries the design drops.
double efficiency(const Pmd& design, const ProtocolMask& protocol);

/// Subject-randomized designs (one mask per subject): mean of the per-subject
/// efficiencies.
double efficiency(const std::vector<Pmd>& per_subject, const ProtocolMask& protocol);

/// Design applied to a cohort: a single shared mask or one mask per subject.
struct DesignAssignment {
    std::vector<Pmd> masks;  // size 1 = shared

    bool shared() const { return masks.size() == 1; }
    const Pmd& of_subject(int s) const {
        return shared() ? masks[0] : masks[static_cast<std::size_t>(s)];
    }
    double mean_efficiency(const ProtocolMask& protocol) const {
        return shared() ? metrik::efficiency(masks[0], protocol)
                        : metrik::efficiency(masks, protocol);
    }
};

/// Each eligible entry dropped independently with probability e; ineligible
/// entries stay collected.
Pmd rsd_sample(double e, const ProtocolMask& protocol, std::uint64_t seed);

/// Multiform item-set partition: metrics split randomly into k near-equal
/// sets (sizes differ by at most 1); each form keeps the union of one pair of
/// sets, all C(k,2) pairs enumerated.
struct FormSet {
    int k = 0;
    std::vector<std::vector<int>> item_sets;  // partition of {0..n_m-1}
    std::vector<std::array<int, 2>> forms;    // kept item-set index pairs

    /// Metrics kept by form f (union of its two item sets), as a 0/1 row.
    std::vector<std::uint8_t> kept_metrics(int form, int n_m) const;
};

FormSet mf_build(int n_m, int k, std::uint64_t seed);

/// One uniformly chosen form per subject, fixed across timepoints.
std::vector<Pmd> mf_assign(const FormSet& forms, int n_s, const ProtocolMask& protocol,
                           std::uint64_t seed);

/// Independent uniform form choice per (subject, timepoint).
std::vector<Pmd> mfl_assign(const FormSet& forms, int n_s, int n_t, const ProtocolMask& protocol,
                            std::uint64_t seed);

/// Wave designs drop d whole timepoints chosen uniformly from the droppable
/// set; the plain variant never drops the first or last timepoint.
struct WaveConfig {
    int d = 0;
    bool include_endpoints = false;
    std::vector<int> eligible_timepoints;
};

WaveConfig make_wave_config(int n_t, int d, bool include_endpoints);

Pmd wave_sample(const WaveConfig& config, const ProtocolMask& protocol, std::uint64_t seed);

enum class Strategy { rsd, mf, mfl, wave, wave_plus };

std::string strategy_name(Strategy s);
std::optional<Strategy> strategy_from_name(const std::string& name);

/// Parameterization whose expected efficiency is closest to the target.
/// RSD is exact for any target. MF/MFL search k in [3, min(20, n_m)] and
/// are marked infeasible when the closest achievable efficiency is more than
/// `tolerance` away (the k grid bottoms out near 1/3, so a 30% target stays
/// feasible while 5% and 10% do not). Wave picks the nearest d >= 1 and is
/// infeasible only when no timepoint is droppable. Distance ties break toward
/// lower efficiency (collect more data).
struct FeasibleChoice {
    bool feasible = false;
    double efficiency = 0.0;
    int parameter = 0;  // k for MF/MFL, d for Wave; unused otherwise
};

FeasibleChoice nearest_feasible_efficiency(Strategy strategy, double target_e,
                                           const ProtocolMask& protocol, double tolerance = 0.05);

/// Sidecar metadata stored next to an exported design grid.
struct PmdSidecar {
    double efficiency = 0.0;
    std::uint64_t seed = 0;
    std::string strategy;  // "learned" or a generator name
    std::optional<double> e_seed;
    std::optional<double> lambda_mw;
    std::optional<double> eta;
    std::map<std::string, double> params;
};

/// CSV 0/1 grid serialization: header "timepoint,<names...>", one row per
/// timepoint.
std::string pmd_csv(const Pmd& design, const std::vector<std::string>& metric_names);

/// Writes the CSV grid plus a JSON sidecar at the same path with extension
/// ".json".
void save_pmd(const Pmd& design, const std::vector<std::string>& metric_names,
              const std::filesystem::path& csv_path, const PmdSidecar& sidecar);
Pmd load_pmd_csv(const std::filesystem::path& csv_path);
PmdSidecar load_pmd_sidecar(const std::filesystem::path& json_path);

}  // namespace metrik
