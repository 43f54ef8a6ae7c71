#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metrik/dataset.hpp"
#include "metrik/evaluate.hpp"
#include "metrik/imputer.hpp"
#include "metrik/pmd.hpp"
#include "metrik/select.hpp"
#include "metrik/store.hpp"

namespace metrik {

/// Full-run configuration. The canonical JSON form (run_config_json) feeds
/// the manifest's config hash; it deliberately excludes `workers` and
/// `store_dir`, which must not change any result.
struct RunConfig {
    std::vector<double> efficiency_grid = {0.05, 0.10, 0.30, 0.50, 0.70, 0.90};
    std::vector<double> lambda_grid = {1e-7, 1e-6, 1e-5};
    std::vector<double> eta_grid = {0.1, 0.5, 1.0, 5.0, 10.0};
    DesignObjective objective;
    int folds = 5;
    int pilot_size = 60;
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    std::vector<Strategy> baselines = {Strategy::rsd, Strategy::mf, Strategy::mfl,
                                       Strategy::wave, Strategy::wave_plus};
    int workers = 0;  ///< <= 0: hardware concurrency; METRIK_WORKERS overrides either way.
    ImputerConfig imputer;  ///< metric_kind and learning_rate are adjusted per sub-pipeline.
    double categorical_learning_rate = 1e-4;
    int mask_epochs = 0;  ///< epoch budget for mask learning; 0 = imputer.epochs
    EvalOptions eval;     ///< subsample and seed are set per evaluation
    double feasibility_tolerance = 0.05;
    enum class Ablation { none, random_candidate_pool, no_confidence_intervals };
    Ablation ablation = Ablation::none;
    std::string store_dir;  ///< artifact store root; empty = "<out>/store"
};

/// Parses a config JSON object; unknown keys and out-of-range values throw
/// ConfigError. Missing keys keep their defaults.
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

SynthConfig parse_synth_config(const std::string& json_text);

/// A design is either the fixed grid a mask learner emitted, or a generator
/// that draws fresh assignments for each subject set it is evaluated on.
struct DesignSpec {
    bool learned = false;
    Pmd shared;                         // learned only
    Strategy strategy = Strategy::rsd;  // generators only
    double efficiency = 0.0;            // generator target; realized for learned
    int parameter = 0;                  // k (MF/MFL) or d (Wave)
    std::uint64_t seed = 0;             // generator stream
    bool randomized() const { return !learned; }
};

/// Draws the concrete per-subject assignment for an evaluation set. The
/// `stage` tag ("val", "test", ...) decorrelates draws across stages while
/// keeping them reproducible; learned specs ignore it.
DesignAssignment materialize(const DesignSpec& spec, int n_subjects, const ProtocolMask& protocol,
                             const std::string& stage);

/// One trained (imputer, design) pair with its artifact ids and
/// validation-set scores.
struct PipelinePair {
    std::string label;
    double target_efficiency = 0.0;
    std::optional<double> lambda_mw;
    std::optional<double> eta;
    std::string checkpoint_id;
    std::string pmd_id;
    DesignSpec design;
    ScoredCandidate scored;
    int selected_epoch = 0;
    double final_objective = 0.0;
    bool diverged = false;
};

struct CandidateSets {
    std::vector<PipelinePair> references;  ///< one per efficiency level, in grid order
    std::vector<PipelinePair> candidates;  ///< surviving pool entries, grid-major order
    std::vector<std::string> dropped;      ///< labels of diverged pool entries
};

/// Label -> object id pairs destined for the run manifest. Only the
/// coordinator writes here.
struct ArtifactLog {
    std::map<std::string, std::string> entries;
    void add(const std::string& label, const std::string& id);
};

/// Trains the reference set M (one initial imputer + sampled design per
/// efficiency level; a diverged run aborts) and the candidate pool M* (one
/// mask-learning run per grid cell, or generator draws under the
/// random-candidate-pool ablation; diverged runs are dropped with a
/// warning), scoring everything on the validation set. `pilot_train` and
/// `pilot_val` must be preprocessed, single-kind datasets. Completed work is
/// cached in the store and skipped on re-runs.
CandidateSets generate_candidates(const RctDataset& pilot_train, const RctDataset& pilot_val,
                                  const RunConfig& config, const std::string& label_prefix,
                                  ArtifactStore& store, ArtifactLog& log);

struct RunResult {
    std::string report_json;
    std::string manifest_json;
    int n_test_evaluations = 0;  ///< designs actually evaluated on test sets
    int n_infeasible = 0;        ///< (level, baseline) combinations skipped as infeasible
};

/// Cross-validated end-to-end run on a raw dataset: per fold, rotate a pilot
/// cohort out of the shuffled subject list, normalize everything from the
/// pilot-train statistics, run candidate generation and selection per metric
/// kind, then score the chosen pairs and every feasible baseline on the
/// held-out test subjects. Writes report.json and manifest.json under
/// `out_dir` and returns their bytes. Throws InfeasibleOnly when no design
/// at all could be evaluated.
RunResult run_experiment(const RctDataset& data, const RunConfig& config,
                         const std::filesystem::path& out_dir);

/// run_experiment with the given ablation applied; reports share the normal
/// schema.
RunResult ablate(const RctDataset& data, RunConfig config, RunConfig::Ablation mode,
                 const std::filesystem::path& out_dir);

/// JSON round-trip for scored candidate lists (the `select` subcommand's
/// input format).
std::string scored_candidates_json(const std::vector<ScoredCandidate>& candidates);
std::vector<ScoredCandidate> scored_candidates_from_json(const std::string& json_text);

}  // namespace metrik
