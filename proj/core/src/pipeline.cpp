#include "metrik/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "metrik/checkpoint.hpp"
#include "metrik/dataset_io.hpp"
#include "metrik/errors.hpp"
#include "metrik/masklayer.hpp"
#include "metrik/metrics.hpp"
#include "metrik/rng.hpp"
#include "metrik/text.hpp"
#include "metrik/worker_pool.hpp"

namespace metrik {
namespace {

using nlohmann::json;

std::string fd(double v) { return format_double(v); }

std::string hex16(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return std::string(buf);
}

std::string kind_name(MetricKind kind) {
    return kind == MetricKind::continuous ? "continuous" : "categorical";
}

const char* objective_name(DesignObjective objective) {
    return objective.mode == DesignObjective::Mode::max_efficiency ? "max-eff" : "max-perf";
}

const char* ablation_name(RunConfig::Ablation mode) {
    switch (mode) {
        case RunConfig::Ablation::none: return "none";
        case RunConfig::Ablation::random_candidate_pool: return "random_candidate_pool";
        case RunConfig::Ablation::no_confidence_intervals: return "no_confidence_intervals";
    }
    return "none";
}

// ---- JSON round-trips ------------------------------------------------------

json perf_scores_json(const std::vector<PerfScore>& scores) {
    json arr = json::array();
    for (const PerfScore& s : scores) {
        json js;
        js["name"] = s.name;
        js["point"] = s.point;
        js["lower"] = s.lower;
        js["upper"] = s.upper;
        if (s.degenerate_ci) js["degenerate_ci"] = true;
        arr.push_back(js);
    }
    return arr;
}

std::vector<PerfScore> perf_scores_from(const json& arr) {
    std::vector<PerfScore> out;
    for (const json& js : arr) {
        PerfScore s;
        s.name = js.at("name").get<std::string>();
        s.point = js.at("point").get<double>();
        s.lower = js.at("lower").get<double>();
        s.upper = js.at("upper").get<double>();
        s.degenerate_ci = js.value("degenerate_ci", false);
        out.push_back(std::move(s));
    }
    return out;
}

json scored_to_json(const ScoredCandidate& c) {
    json j;
    j["imputer_id"] = c.imputer_id;
    j["pmd_id"] = c.pmd_id;
    j["efficiency"] = c.efficiency;
    j["origin"] = c.origin == ScoredCandidate::Origin::reference ? "reference" : "learned";
    j["perf"] = perf_scores_json(c.perf);
    json pm = json::object();
    for (const auto& [name, value] : c.per_metric) pm[name] = value;
    j["per_metric"] = pm;
    return j;
}

ScoredCandidate scored_from_json(const json& j) {
    ScoredCandidate c;
    c.imputer_id = j.at("imputer_id").get<std::string>();
    c.pmd_id = j.at("pmd_id").get<std::string>();
    c.efficiency = j.at("efficiency").get<double>();
    c.origin = j.at("origin").get<std::string>() == "reference"
                   ? ScoredCandidate::Origin::reference
                   : ScoredCandidate::Origin::learned;
    c.perf = perf_scores_from(j.at("perf"));
    for (const auto& [name, value] : j.at("per_metric").items())
        c.per_metric[name] = value.get<double>();
    return c;
}

json design_spec_json(const DesignSpec& spec) {
    json j;
    j["learned"] = spec.learned;
    j["strategy"] = strategy_name(spec.strategy);
    j["efficiency"] = spec.efficiency;
    j["parameter"] = spec.parameter;
    j["seed"] = spec.seed;
    if (spec.learned) {
        json grid = json::array();
        for (int t = 0; t < spec.shared.n_timepoints(); ++t) {
            std::string row(static_cast<std::size_t>(spec.shared.n_metrics()), '0');
            for (int m = 0; m < spec.shared.n_metrics(); ++m)
                if (spec.shared.collect(t, m)) row[static_cast<std::size_t>(m)] = '1';
            grid.push_back(row);
        }
        j["grid"] = grid;
        j["grid_efficiency"] = spec.shared.efficiency;
    }
    return j;
}

DesignSpec design_spec_from_json(const json& j) {
    DesignSpec spec;
    spec.learned = j.at("learned").get<bool>();
    if (auto s = strategy_from_name(j.at("strategy").get<std::string>()))
        spec.strategy = *s;
    else
        throw ConfigError("unknown strategy in design spec");
    spec.efficiency = j.at("efficiency").get<double>();
    spec.parameter = j.at("parameter").get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    if (spec.learned) {
        const json& grid = j.at("grid");
        const int n_t = static_cast<int>(grid.size());
        if (n_t == 0) throw ConfigError("empty design grid");
        const int n_m = static_cast<int>(grid[0].get<std::string>().size());
        spec.shared.collect = BinaryMatrix(n_t, n_m);
        for (int t = 0; t < n_t; ++t) {
            std::string row = grid[static_cast<std::size_t>(t)].get<std::string>();
            if (static_cast<int>(row.size()) != n_m) throw ConfigError("ragged design grid");
            for (int m = 0; m < n_m; ++m)
                spec.shared.collect(t, m) = row[static_cast<std::size_t>(m)] == '1' ? 1 : 0;
        }
        spec.shared.efficiency = j.at("grid_efficiency").get<double>();
    }
    return spec;
}

Evaluation evaluation_from_json(const json& j) {
    Evaluation ev;
    ev.efficiency = j.at("efficiency").get<double>();
    ev.n_elements = j.at("n_elements").get<long>();
    ev.seed = j.at("seed").get<std::uint64_t>();
    ev.scores = perf_scores_from(j.at("scores"));
    for (const auto& [name, value] : j.at("per_metric").items())
        ev.per_metric[name] = value.get<double>();
    return ev;
}

json pair_to_json(const PipelinePair& p) {
    json j;
    j["label"] = p.label;
    j["target_efficiency"] = p.target_efficiency;
    if (p.lambda_mw) j["lambda_mw"] = *p.lambda_mw;
    if (p.eta) j["eta"] = *p.eta;
    j["diverged"] = p.diverged;
    if (p.diverged) return j;
    j["checkpoint_id"] = p.checkpoint_id;
    j["pmd_id"] = p.pmd_id;
    j["design"] = design_spec_json(p.design);
    j["scored"] = scored_to_json(p.scored);
    j["selected_epoch"] = p.selected_epoch;
    j["final_objective"] = p.final_objective;
    return j;
}

PipelinePair pair_from_json(const json& j) {
    PipelinePair p;
    p.label = j.at("label").get<std::string>();
    p.target_efficiency = j.at("target_efficiency").get<double>();
    if (j.contains("lambda_mw")) p.lambda_mw = j.at("lambda_mw").get<double>();
    if (j.contains("eta")) p.eta = j.at("eta").get<double>();
    p.diverged = j.at("diverged").get<bool>();
    if (p.diverged) return p;
    p.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    p.pmd_id = j.at("pmd_id").get<std::string>();
    p.design = design_spec_from_json(j.at("design"));
    p.scored = scored_from_json(j.at("scored"));
    p.selected_epoch = j.at("selected_epoch").get<int>();
    p.final_objective = j.at("final_objective").get<double>();
    return p;
}

// ---- config validation -----------------------------------------------------

void validate_run_config(const RunConfig& c) {
    if (c.efficiency_grid.empty()) throw ConfigError("efficiency_grid must be non-empty");
    for (double e : c.efficiency_grid)
        if (!(e > 0.0 && e < 1.0)) throw ConfigError("efficiency levels must lie in (0, 1)");
    if (c.lambda_grid.empty()) throw ConfigError("lambda_grid must be non-empty");
    for (double l : c.lambda_grid)
        if (!(l >= 0.0)) throw ConfigError("lambda_mw must be non-negative");
    if (c.eta_grid.empty()) throw ConfigError("eta_grid must be non-empty");
    for (double h : c.eta_grid)
        if (!(h > 0.0)) throw ConfigError("eta must be positive");
    if (c.folds < 1) throw ConfigError("folds must be at least 1");
    if (c.pilot_size < 2) throw ConfigError("pilot_size must be at least 2");
    if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
        throw ConfigError("train_fraction must lie in (0, 1)");
    const ImputerConfig& ic = c.imputer;
    if (ic.epochs < 0 || c.mask_epochs < 0) throw ConfigError("epoch counts must be non-negative");
    if (ic.n_blocks < 1 || ic.n_heads < 1 || ic.d_model < 1 || ic.d_ff < 1)
        throw ConfigError("architecture sizes must be positive");
    if (ic.d_model % ic.n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
    if (!(ic.learning_rate > 0.0) || !(c.categorical_learning_rate > 0.0))
        throw ConfigError("learning rates must be positive");
    if (ic.batch_size < 1 || ic.full_batch_limit < 0 || ic.validate_every < 1)
        throw ConfigError("batch settings out of range");
    if (c.eval.sample_budget < 1) throw ConfigError("sample_budget must be positive");
    if (c.eval.n_boot < 1) throw ConfigError("n_boot must be positive");
    if (!(c.eval.level > 0.0 && c.eval.level < 1.0))
        throw ConfigError("ci_level must lie in (0, 1)");
    if (!(c.feasibility_tolerance >= 0.0))
        throw ConfigError("feasibility_tolerance must be non-negative");
}

template <typename T>
T config_number(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("config key '") + key + "' must be a number");
    return v.get<T>();
}

std::vector<double> config_grid(const json& j, const char* key, std::vector<double> fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_array()) throw ConfigError(std::string("config key '") + key + "' must be an array");
    std::vector<double> out;
    for (const json& x : v) {
        if (!x.is_number()) throw ConfigError(std::string("config key '") + key + "' must hold numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

json parse_config_object(const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    return j;
}

// ---- aggregate statistics --------------------------------------------------

json spread_json(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    json j;
    j["median"] = quantile_sorted(values, 0.5);
    j["q1"] = quantile_sorted(values, 0.25);
    j["q3"] = quantile_sorted(values, 0.75);
    return j;
}

std::map<std::string, double> score_points(const Evaluation& ev) {
    std::map<std::string, double> out;
    for (const PerfScore& s : ev.scores) out[s.name] = s.point;
    return out;
}

}  // namespace

// ---- config ----------------------------------------------------------------

RunConfig parse_run_config(const std::string& json_text) {
    static const std::set<std::string> allowed = {
        "efficiency_grid", "lambda_grid", "eta_grid", "objective", "folds", "pilot_size",
        "train_fraction", "seed", "baselines", "workers", "epochs", "learning_rate",
        "n_blocks", "n_heads", "d_model", "d_ff", "batch_size", "full_batch_limit",
        "validate_every", "early_checkpointing", "categorical_learning_rate", "mask_epochs",
        "sample_budget", "n_boot", "ci_level", "squared_deviation", "feasibility_tolerance",
        "ablation", "store_dir"};
    json j = parse_config_object(json_text);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw ConfigError("unknown config key: " + key);
    }
    try {
        RunConfig c;
        c.efficiency_grid = config_grid(j, "efficiency_grid", c.efficiency_grid);
        c.lambda_grid = config_grid(j, "lambda_grid", c.lambda_grid);
        c.eta_grid = config_grid(j, "eta_grid", c.eta_grid);
        if (j.contains("objective")) {
            std::string o = j.at("objective").get<std::string>();
            if (o == "max-eff")
                c.objective.mode = DesignObjective::Mode::max_efficiency;
            else if (o == "max-perf")
                c.objective.mode = DesignObjective::Mode::max_performance;
            else
                throw ConfigError("objective must be \"max-eff\" or \"max-perf\"");
        }
        c.folds = config_number(j, "folds", c.folds);
        c.pilot_size = config_number(j, "pilot_size", c.pilot_size);
        c.train_fraction = config_number(j, "train_fraction", c.train_fraction);
        c.seed = config_number(j, "seed", c.seed);
        if (j.contains("baselines")) {
            c.baselines.clear();
            for (const json& name : j.at("baselines")) {
                auto s = strategy_from_name(name.get<std::string>());
                if (!s) throw ConfigError("unknown baseline strategy: " + name.get<std::string>());
                c.baselines.push_back(*s);
            }
        }
        c.workers = config_number(j, "workers", c.workers);
        c.imputer.epochs = config_number(j, "epochs", c.imputer.epochs);
        c.imputer.learning_rate = config_number(j, "learning_rate", c.imputer.learning_rate);
        c.imputer.n_blocks = config_number(j, "n_blocks", c.imputer.n_blocks);
        c.imputer.n_heads = config_number(j, "n_heads", c.imputer.n_heads);
        c.imputer.d_model = config_number(j, "d_model", c.imputer.d_model);
        c.imputer.d_ff = config_number(j, "d_ff", c.imputer.d_ff);
        c.imputer.batch_size = config_number(j, "batch_size", c.imputer.batch_size);
        c.imputer.full_batch_limit = config_number(j, "full_batch_limit", c.imputer.full_batch_limit);
        c.imputer.validate_every = config_number(j, "validate_every", c.imputer.validate_every);
        if (j.contains("early_checkpointing"))
            c.imputer.early_checkpointing = j.at("early_checkpointing").get<bool>();
        c.categorical_learning_rate =
            config_number(j, "categorical_learning_rate", c.categorical_learning_rate);
        c.mask_epochs = config_number(j, "mask_epochs", c.mask_epochs);
        c.eval.sample_budget = config_number(j, "sample_budget", c.eval.sample_budget);
        c.eval.n_boot = config_number(j, "n_boot", c.eval.n_boot);
        c.eval.level = config_number(j, "ci_level", c.eval.level);
        if (j.contains("squared_deviation"))
            c.eval.squared_deviation = j.at("squared_deviation").get<bool>();
        c.feasibility_tolerance =
            config_number(j, "feasibility_tolerance", c.feasibility_tolerance);
        if (j.contains("ablation")) {
            std::string a = j.at("ablation").get<std::string>();
            if (a == "none")
                c.ablation = RunConfig::Ablation::none;
            else if (a == "random_candidate_pool")
                c.ablation = RunConfig::Ablation::random_candidate_pool;
            else if (a == "no_confidence_intervals")
                c.ablation = RunConfig::Ablation::no_confidence_intervals;
            else
                throw ConfigError("unknown ablation mode: " + a);
        }
        if (j.contains("store_dir")) c.store_dir = j.at("store_dir").get<std::string>();
        validate_run_config(c);
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
}

std::string run_config_json(const RunConfig& c) {
    json j;
    j["efficiency_grid"] = c.efficiency_grid;
    j["lambda_grid"] = c.lambda_grid;
    j["eta_grid"] = c.eta_grid;
    j["objective"] = objective_name(c.objective);
    j["folds"] = c.folds;
    j["pilot_size"] = c.pilot_size;
    j["train_fraction"] = c.train_fraction;
    j["seed"] = c.seed;
    json bases = json::array();
    for (Strategy s : c.baselines) bases.push_back(strategy_name(s));
    j["baselines"] = bases;
    j["epochs"] = c.imputer.epochs;
    j["learning_rate"] = c.imputer.learning_rate;
    j["n_blocks"] = c.imputer.n_blocks;
    j["n_heads"] = c.imputer.n_heads;
    j["d_model"] = c.imputer.d_model;
    j["d_ff"] = c.imputer.d_ff;
    j["batch_size"] = c.imputer.batch_size;
    j["full_batch_limit"] = c.imputer.full_batch_limit;
    j["validate_every"] = c.imputer.validate_every;
    j["early_checkpointing"] = c.imputer.early_checkpointing;
    j["categorical_learning_rate"] = c.categorical_learning_rate;
    j["mask_epochs"] = c.mask_epochs;
    j["sample_budget"] = c.eval.sample_budget;
    j["n_boot"] = c.eval.n_boot;
    j["ci_level"] = c.eval.level;
    j["squared_deviation"] = c.eval.squared_deviation;
    j["feasibility_tolerance"] = c.feasibility_tolerance;
    j["ablation"] = ablation_name(c.ablation);
    return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& config) {
    return hex16(fnv1a64(run_config_json(config)));
}

SynthConfig parse_synth_config(const std::string& json_text) {
    static const std::set<std::string> allowed = {
        "n_subjects", "n_timepoints", "n_metrics", "block_sizes", "fraction_categorical",
        "n_categories", "noise_sd", "native_missing_rate", "protocol_eligible_rate",
        "ar_coefficient"};
    json j = parse_config_object(json_text);
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (!allowed.count(key)) throw ConfigError("unknown synth config key: " + key);
    }
    try {
        SynthConfig c;
        c.n_subjects = config_number(j, "n_subjects", c.n_subjects);
        c.n_timepoints = config_number(j, "n_timepoints", c.n_timepoints);
        c.n_metrics = config_number(j, "n_metrics", c.n_metrics);
        if (j.contains("block_sizes")) {
            c.block_sizes.clear();
            for (const json& b : j.at("block_sizes")) c.block_sizes.push_back(b.get<int>());
        }
        c.fraction_categorical = config_number(j, "fraction_categorical", c.fraction_categorical);
        c.n_categories = config_number(j, "n_categories", c.n_categories);
        c.noise_sd = config_number(j, "noise_sd", c.noise_sd);
        c.native_missing_rate = config_number(j, "native_missing_rate", c.native_missing_rate);
        c.protocol_eligible_rate =
            config_number(j, "protocol_eligible_rate", c.protocol_eligible_rate);
        c.ar_coefficient = config_number(j, "ar_coefficient", c.ar_coefficient);

        if (c.n_subjects < 1 || c.n_timepoints < 1 || c.n_metrics < 1)
            throw ConfigError("synth config: subject, timepoint and metric counts must be >= 1");
        for (int b : c.block_sizes)
            if (b < 1) throw ConfigError("synth config: block sizes must be >= 1");
        if (c.fraction_categorical < 0.0 || c.fraction_categorical > 1.0)
            throw ConfigError("synth config: fraction_categorical must lie in [0, 1]");
        if (c.n_categories < 2) throw ConfigError("synth config: n_categories must be >= 2");
        if (c.noise_sd < 0.0) throw ConfigError("synth config: noise_sd must be >= 0");
        if (c.native_missing_rate < 0.0 || c.native_missing_rate >= 1.0)
            throw ConfigError("synth config: native_missing_rate must lie in [0, 1)");
        if (c.protocol_eligible_rate <= 0.0 || c.protocol_eligible_rate > 1.0)
            throw ConfigError("synth config: protocol_eligible_rate must lie in (0, 1]");
        if (std::abs(c.ar_coefficient) >= 1.0)
            throw ConfigError("synth config: ar_coefficient must lie in (-1, 1)");
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed synth config: ") + e.what());
    }
}

// ---- designs ---------------------------------------------------------------

DesignAssignment materialize(const DesignSpec& spec, int n_subjects, const ProtocolMask& protocol,
                             const std::string& stage) {
    DesignAssignment out;
    if (spec.learned) {
        out.masks = {spec.shared};
        return out;
    }
    const std::uint64_t stage_seed = derive_seed(spec.seed, stage);
    switch (spec.strategy) {
        case Strategy::rsd:
            out.masks = {rsd_sample(spec.efficiency, protocol, stage_seed)};
            break;
        case Strategy::mf: {
            // The item partition is part of the design identity; only the
            // subject assignment is redrawn per evaluation set.
            FormSet forms =
                mf_build(protocol.eligible.cols(), spec.parameter, derive_seed(spec.seed, "forms"));
            out.masks = mf_assign(forms, n_subjects, protocol, stage_seed);
            break;
        }
        case Strategy::mfl: {
            FormSet forms =
                mf_build(protocol.eligible.cols(), spec.parameter, derive_seed(spec.seed, "forms"));
            out.masks =
                mfl_assign(forms, n_subjects, protocol.eligible.rows(), protocol, stage_seed);
            break;
        }
        case Strategy::wave:
        case Strategy::wave_plus: {
            WaveConfig wc = make_wave_config(protocol.eligible.rows(), spec.parameter,
                                             spec.strategy == Strategy::wave_plus);
            out.masks.reserve(static_cast<std::size_t>(n_subjects));
            for (int s = 0; s < n_subjects; ++s)
                out.masks.push_back(wave_sample(wc, protocol, derive_seed(stage_seed, "subject", s)));
            break;
        }
    }
    return out;
}

void ArtifactLog::add(const std::string& label, const std::string& id) {
    auto [it, inserted] = entries.emplace(label, id);
    if (!inserted && it->second != id)
        throw std::logic_error("artifact label reused with different content: " + label);
}

// ---- candidate generation --------------------------------------------------

namespace {

struct TrainedSlot {
    PipelinePair pair;
    std::string ckpt_bytes;  // empty when cached or diverged
    std::string pmd_bytes;
    std::string env_bytes;
    bool cached = false;
};

std::string eval_options_fp(const EvalOptions& eval) {
    json j;
    j["sample_budget"] = eval.sample_budget;
    j["n_boot"] = eval.n_boot;
    j["level"] = eval.level;
    j["squared_deviation"] = eval.squared_deviation;
    return hex16(fnv1a64(j.dump()));
}

std::string train_config_fp(const ImputerConfig& base, int mask_epochs, std::uint64_t seed) {
    json j;
    j["n_blocks"] = base.n_blocks;
    j["n_heads"] = base.n_heads;
    j["d_model"] = base.d_model;
    j["d_ff"] = base.d_ff;
    j["epochs"] = base.epochs;
    j["learning_rate"] = base.learning_rate;
    j["batch_size"] = base.batch_size;
    j["full_batch_limit"] = base.full_batch_limit;
    j["validate_every"] = base.validate_every;
    j["early_checkpointing"] = base.early_checkpointing;
    j["mask_epochs"] = mask_epochs;
    j["seed"] = seed;
    return hex16(fnv1a64(j.dump()));
}

/// Validation-set scoring shared by references and candidates.
ScoredCandidate score_on(const Imputer& model, const DesignSpec& spec, const RctDataset& val,
                         const RunConfig& cfg, const std::string& label,
                         const std::string& imputer_id, const std::string& pmd_id,
                         ScoredCandidate::Origin origin) {
    DesignAssignment assignment = materialize(spec, val.n_subjects(), val.protocol, "val");
    EvalOptions options = cfg.eval;
    options.subsample = spec.randomized();
    options.seed = derive_seed(cfg.seed, "eval|val|" + label);
    Evaluation ev = evaluate_pair(model, assignment, val, options);
    ScoredCandidate scored;
    scored.imputer_id = imputer_id;
    scored.pmd_id = pmd_id;
    scored.efficiency = ev.efficiency;
    scored.perf = ev.scores;
    scored.origin = origin;
    scored.per_metric = ev.per_metric;
    return scored;
}

/// Coordinator-side store writeback for one finished slot.
void commit_slot(const TrainedSlot& slot, const std::string& key, ArtifactStore& store,
                 ArtifactLog& log) {
    if (!slot.cached) {
        if (!slot.ckpt_bytes.empty()) store.put(slot.ckpt_bytes, ".ckpt");
        if (!slot.pmd_bytes.empty()) store.put(slot.pmd_bytes, slot.pair.design.learned ? ".csv" : ".json");
        std::string env_id = store.put(slot.env_bytes, ".json");
        store.map_key(key, env_id);
    }
    std::string env_id = artifact_id(slot.env_bytes, ".json");
    log.add(slot.pair.label + ".meta", env_id);
    if (!slot.pair.diverged) {
        log.add(slot.pair.label + ".ckpt", slot.pair.checkpoint_id);
        log.add(slot.pair.label + ".design", slot.pair.pmd_id);
    }
}

}  // namespace

CandidateSets generate_candidates(const RctDataset& pilot_train, const RctDataset& pilot_val,
                                  const RunConfig& config, const std::string& label_prefix,
                                  ArtifactStore& store, ArtifactLog& log) {
    if (!pilot_train.preprocessed || !pilot_val.preprocessed)
        throw ConfigError("candidate generation expects preprocessed pilot splits");
    if (pilot_train.n_metrics() == 0) throw ConfigError("pilot has no metrics");
    const MetricKind kind = pilot_train.metrics[0].kind;
    for (const MetricSpec& m : pilot_train.metrics)
        if (m.kind != kind) throw ConfigError("candidate generation expects a single-kind dataset");
    validate_run_config(config);

    ImputerConfig base = config.imputer;
    base.metric_kind = kind;
    if (kind == MetricKind::categorical) base.learning_rate = config.categorical_learning_rate;
    ImputerConfig mask_cfg = base;
    if (config.mask_epochs > 0) mask_cfg.epochs = config.mask_epochs;

    const int workers = resolve_workers(config.workers);
    const std::string data_fp =
        dataset_fingerprint(pilot_train) + "+" + dataset_fingerprint(pilot_val);
    const std::string arch_fp = train_config_fp(base, config.mask_epochs, config.seed);
    const std::string eval_fp = eval_options_fp(config.eval);
    const ProtocolMask& protocol = pilot_train.protocol;
    std::vector<std::string> metric_names;
    for (const MetricSpec& m : pilot_train.metrics) metric_names.push_back(m.name);

    auto cache_key = [&](const std::string& phase, const std::string& label) {
        return phase + "|" + data_fp + "|" + arch_fp + "|" + eval_fp + "|" + label;
    };

    // ---- reference set M: one initial imputer per efficiency level ----
    const int n_e = static_cast<int>(config.efficiency_grid.size());
    std::vector<TrainedSlot> refs(static_cast<std::size_t>(n_e));
    std::vector<std::string> ref_keys(static_cast<std::size_t>(n_e));
    std::vector<int> ref_misses;
    for (int i = 0; i < n_e; ++i) {
        const double e = config.efficiency_grid[static_cast<std::size_t>(i)];
        const std::string label = label_prefix + ".ref.e" + fd(e);
        ref_keys[static_cast<std::size_t>(i)] = cache_key("init", label);
        if (auto id = store.lookup(ref_keys[static_cast<std::size_t>(i)])) {
            TrainedSlot& slot = refs[static_cast<std::size_t>(i)];
            slot.env_bytes = store.get(*id);
            slot.pair = pair_from_json(json::parse(slot.env_bytes));
            slot.cached = true;
        } else {
            ref_misses.push_back(i);
        }
    }
    run_parallel(static_cast<int>(ref_misses.size()), workers, [&](int task) {
        const int i = ref_misses[static_cast<std::size_t>(task)];
        const double e = config.efficiency_grid[static_cast<std::size_t>(i)];
        TrainedSlot& slot = refs[static_cast<std::size_t>(i)];
        PipelinePair& pair = slot.pair;
        pair.label = label_prefix + ".ref.e" + fd(e);
        pair.target_efficiency = e;
        MaskSource source = [e, &protocol](std::uint64_t s) { return rsd_sample(e, protocol, s); };
        auto [model, report] =
            train_mvts(pilot_train, pilot_val, base, source, derive_seed(config.seed, pair.label));
        if (report.diverged)
            throw TrainingDiverged("initial imputer diverged: " + pair.label,
                                   report.diverged_epoch);
        model = canonicalize(model);
        slot.ckpt_bytes = checkpoint_bytes(model);
        pair.checkpoint_id = artifact_id(slot.ckpt_bytes, ".ckpt");
        pair.design.learned = false;
        pair.design.strategy = Strategy::rsd;
        pair.design.efficiency = e;
        pair.design.seed = derive_seed(config.seed, pair.label + ".design");
        slot.pmd_bytes = design_spec_json(pair.design).dump(2) + "\n";
        pair.pmd_id = artifact_id(slot.pmd_bytes, ".json");
        pair.selected_epoch = report.selected_epoch;
        pair.final_objective = report.train_loss.empty() ? 0.0 : report.train_loss.back();
        pair.scored = score_on(model, pair.design, pilot_val, config, pair.label,
                               pair.checkpoint_id, pair.pmd_id, ScoredCandidate::Origin::reference);
        slot.env_bytes = pair_to_json(pair).dump(2) + "\n";
    });
    for (int i = 0; i < n_e; ++i)
        commit_slot(refs[static_cast<std::size_t>(i)], ref_keys[static_cast<std::size_t>(i)],
                    store, log);

    // Seed models for the pool, reloaded through the store so resumed and
    // fresh runs see bit-identical parameters.
    std::vector<Imputer> models;
    models.reserve(static_cast<std::size_t>(n_e));
    for (int i = 0; i < n_e; ++i)
        models.push_back(imputer_from_checkpoint_bytes(
            store.get(refs[static_cast<std::size_t>(i)].pair.checkpoint_id)));

    // ---- candidate pool M* ----
    struct PoolTask {
        int e_index = 0;
        std::string label;
        std::string key;
        double lambda = 0.0, eta = 0.0;  // learned pool only
        int draw = 0;                    // random pool only
        int parameter = 0;
        double target = 0.0;
    };
    std::vector<PoolTask> tasks;
    if (config.ablation == RunConfig::Ablation::random_candidate_pool) {
        const int n_draws =
            static_cast<int>(config.lambda_grid.size() * config.eta_grid.size());
        for (int i = 0; i < n_e; ++i) {
            const double e = config.efficiency_grid[static_cast<std::size_t>(i)];
            FeasibleChoice choice = nearest_feasible_efficiency(Strategy::mf, e, protocol,
                                                                config.feasibility_tolerance);
            if (!choice.feasible) continue;  // no random candidates at this level
            for (int r = 0; r < n_draws; ++r) {
                PoolTask t;
                t.e_index = i;
                t.draw = r;
                t.parameter = choice.parameter;
                t.target = choice.efficiency;
                t.label = label_prefix + ".rand.e" + fd(e) + ".i" + std::to_string(r);
                t.key = cache_key("rand", t.label);
                tasks.push_back(std::move(t));
            }
        }
    } else {
        for (int i = 0; i < n_e; ++i) {
            const double e = config.efficiency_grid[static_cast<std::size_t>(i)];
            for (double lambda : config.lambda_grid)
                for (double eta : config.eta_grid) {
                    PoolTask t;
                    t.e_index = i;
                    t.lambda = lambda;
                    t.eta = eta;
                    t.target = e;
                    t.label = label_prefix + ".cand.e" + fd(e) + ".l" + fd(lambda) + ".h" + fd(eta);
                    t.key = cache_key("cand", t.label);
                    tasks.push_back(std::move(t));
                }
        }
    }

    std::vector<TrainedSlot> pool(tasks.size());
    std::vector<int> pool_misses;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        if (auto id = store.lookup(tasks[i].key)) {
            pool[i].env_bytes = store.get(*id);
            pool[i].pair = pair_from_json(json::parse(pool[i].env_bytes));
            pool[i].cached = true;
        } else {
            pool_misses.push_back(static_cast<int>(i));
        }
    }
    const bool random_pool = config.ablation == RunConfig::Ablation::random_candidate_pool;
    run_parallel(static_cast<int>(pool_misses.size()), workers, [&](int task) {
        const std::size_t i = static_cast<std::size_t>(pool_misses[static_cast<std::size_t>(task)]);
        const PoolTask& t = tasks[i];
        TrainedSlot& slot = pool[i];
        PipelinePair& pair = slot.pair;
        pair.label = t.label;
        pair.target_efficiency =
            config.efficiency_grid[static_cast<std::size_t>(t.e_index)];
        if (random_pool) {
            pair.checkpoint_id = refs[static_cast<std::size_t>(t.e_index)].pair.checkpoint_id;
            pair.design.learned = false;
            pair.design.strategy = Strategy::mf;
            pair.design.efficiency = t.target;
            pair.design.parameter = t.parameter;
            pair.design.seed = derive_seed(config.seed, pair.label + ".design");
            slot.pmd_bytes = design_spec_json(pair.design).dump(2) + "\n";
            pair.pmd_id = artifact_id(slot.pmd_bytes, ".json");
            try {
                pair.scored = score_on(models[static_cast<std::size_t>(t.e_index)], pair.design,
                                       pilot_val, config, pair.label, pair.checkpoint_id,
                                       pair.pmd_id, ScoredCandidate::Origin::learned);
            } catch (const EvalError&) {
                // nothing scoreable on validation: dropped from the pool below
            }
        } else {
            pair.lambda_mw = t.lambda;
            pair.eta = t.eta;
            Imputer seed_model = models[static_cast<std::size_t>(t.e_index)];
            seed_model.config = mask_cfg;
            MaskHyperparams hp;
            hp.lambda_mw = t.lambda;
            hp.eta = t.eta;
            MaskedTrainResult result = train_masked_imputer(
                seed_model, t.target, hp, pilot_train, derive_seed(config.seed, pair.label));
            if (result.report.diverged) {
                pair.diverged = true;
            } else {
                Imputer model = canonicalize(result.imputer);
                slot.ckpt_bytes = checkpoint_bytes(model);
                pair.checkpoint_id = artifact_id(slot.ckpt_bytes, ".ckpt");
                pair.design.learned = true;
                pair.design.shared = result.design;
                pair.design.efficiency = result.design.efficiency;
                slot.pmd_bytes = pmd_csv(result.design, metric_names);
                pair.pmd_id = artifact_id(slot.pmd_bytes, ".csv");
                pair.selected_epoch = result.report.selected_epoch;
                pair.final_objective =
                    result.report.train_loss.empty() ? 0.0 : result.report.train_loss.back();
                // A mask that binarizes to keep-everything hides no cell, so
                // there is nothing to score; leave it unscored and drop it.
                if (pair.design.efficiency > 0.0) {
                    try {
                        pair.scored = score_on(model, pair.design, pilot_val, config, pair.label,
                                               pair.checkpoint_id, pair.pmd_id,
                                               ScoredCandidate::Origin::learned);
                    } catch (const EvalError&) {
                    }
                }
            }
        }
        slot.env_bytes = pair_to_json(pair).dump(2) + "\n";
    });
    for (std::size_t i = 0; i < tasks.size(); ++i) commit_slot(pool[i], tasks[i].key, store, log);

    CandidateSets out;
    for (auto& slot : refs) out.references.push_back(std::move(slot.pair));
    for (auto& slot : pool) {
        // A candidate without validation scores cannot be ranked or gated.
        if (slot.pair.diverged || slot.pair.scored.perf.empty())
            out.dropped.push_back(slot.pair.label);
        else
            out.candidates.push_back(std::move(slot.pair));
    }
    return out;
}

// ---- full experiment -------------------------------------------------------

namespace {

struct EvalSlot {
    std::string key;
    std::string ckpt_id;
    std::string pmd_id;
    DesignSpec design;
    bool subsample = false;
    // results
    Evaluation eval;
    std::string bytes;
    std::string id;
    bool cached = false;
};

/// Deduplicating collector for one fold+kind batch of test evaluations.
/// Jobs that share a cache key share one slot (and one artifact).
class EvalBatch {
public:
    EvalBatch(const RunConfig& cfg, const RctDataset& data, std::string stage,
              ArtifactStore& store)
        : cfg_(cfg), data_(data), stage_(std::move(stage)), store_(store) {
        data_fp_ = dataset_fingerprint(data);
        eval_fp_ = eval_options_fp(cfg.eval);
    }

    /// Registers an evaluation of (checkpoint, design) under a manifest
    /// label; returns the slot index.
    int add(const std::string& label, const std::string& ckpt_id, const std::string& pmd_id,
            const DesignSpec& design) {
        std::string key = "eval|" + ckpt_id + "|" + pmd_id + "|" + data_fp_ + "|" + eval_fp_ +
                          "|" + stage_;
        auto it = by_key_.find(key);
        int index;
        if (it != by_key_.end()) {
            index = it->second;
        } else {
            EvalSlot slot;
            slot.key = key;
            slot.ckpt_id = ckpt_id;
            slot.pmd_id = pmd_id;
            slot.design = design;
            slot.subsample = design.randomized();
            if (auto id = store_.lookup(key)) {
                slot.bytes = store_.get(*id);
                slot.id = *id;
                slot.eval = evaluation_from_json(json::parse(slot.bytes));
                slot.cached = true;
            }
            index = static_cast<int>(slots_.size());
            slots_.push_back(std::move(slot));
            by_key_.emplace(std::move(key), index);
        }
        labels_.emplace_back(label, index);
        return index;
    }

    /// Runs all pending slots in parallel, then commits artifacts and
    /// manifest labels in deterministic order.
    void run(int workers, ArtifactLog& log) {
        std::vector<int> misses;
        std::set<std::string> needed;
        for (std::size_t i = 0; i < slots_.size(); ++i)
            if (!slots_[i].cached) {
                misses.push_back(static_cast<int>(i));
                needed.insert(slots_[i].ckpt_id);
            }
        std::map<std::string, Imputer> loaded;
        for (const std::string& id : needed)
            loaded.emplace(id, imputer_from_checkpoint_bytes(store_.get(id)));
        run_parallel(static_cast<int>(misses.size()), workers, [&](int task) {
            EvalSlot& slot = slots_[static_cast<std::size_t>(misses[static_cast<std::size_t>(task)])];
            DesignAssignment assignment =
                materialize(slot.design, data_.n_subjects(), data_.protocol, stage_);
            EvalOptions options = cfg_.eval;
            options.subsample = slot.subsample;
            options.seed = derive_seed(cfg_.seed, slot.key);
            slot.eval = evaluate_pair(loaded.at(slot.ckpt_id), assignment, data_, options);
            slot.bytes = evaluation_report_json(slot.pmd_id, slot.ckpt_id, slot.eval);
            slot.id = artifact_id(slot.bytes, ".json");
        });
        for (int i : misses) {
            EvalSlot& slot = slots_[static_cast<std::size_t>(i)];
            store_.put(slot.bytes, ".json");
            store_.map_key(slot.key, slot.id);
        }
        for (const auto& [label, index] : labels_)
            log.add(label, slots_[static_cast<std::size_t>(index)].id);
    }

    const Evaluation& eval_of(int index) const {
        return slots_[static_cast<std::size_t>(index)].eval;
    }
    json eval_json(int index) const {
        return json::parse(slots_[static_cast<std::size_t>(index)].bytes);
    }

private:
    const RunConfig& cfg_;
    const RctDataset& data_;
    std::string stage_;
    ArtifactStore& store_;
    std::string data_fp_;
    std::string eval_fp_;
    std::vector<EvalSlot> slots_;
    std::map<std::string, int> by_key_;
    std::vector<std::pair<std::string, int>> labels_;
};

struct BaselineAcc {
    int feasible_folds = 0;
    std::vector<double> eff_delta;
    std::map<std::string, std::vector<double>> score_delta;
};

struct LevelAcc {
    int folds = 0;
    int fallbacks = 0;
    std::vector<double> emitted_efficiency;
    std::map<std::string, BaselineAcc> baselines;
};

}  // namespace

RunResult run_experiment(const RctDataset& data, const RunConfig& config,
                         const std::filesystem::path& out_dir) {
    validate_run_config(config);
    if (data.preprocessed)
        throw ConfigError("run expects a raw dataset snapshot; normalization is fold-local");
    const int n_s = data.n_subjects();
    if (n_s < config.pilot_size + 1)
        throw ConfigError("need at least pilot_size + 1 subjects per fold");
    if (config.folds > n_s) throw ConfigError("more folds than subjects");

    std::filesystem::create_directories(out_dir);
    ArtifactStore store(config.store_dir.empty() ? out_dir / "store"
                                                 : std::filesystem::path(config.store_dir));
    ArtifactLog log;
    const int workers = resolve_workers(config.workers);
    const int n_e = static_cast<int>(config.efficiency_grid.size());
    const std::vector<int> shuffled = shuffled_subjects(n_s, derive_seed(config.seed, "folds"));
    const int step = n_s / config.folds;

    // kind name -> per-level accumulator, for the aggregate section
    std::map<std::string, std::vector<LevelAcc>> agg;
    json folds_json = json::array();
    int n_eval = 0;
    int n_infeasible = 0;

    for (int f = 0; f < config.folds; ++f) {
        std::vector<int> pilot_idx, test_idx;
        for (int i = 0; i < config.pilot_size; ++i)
            pilot_idx.push_back(shuffled[static_cast<std::size_t>((f * step + i) % n_s)]);
        for (int i = config.pilot_size; i < n_s; ++i)
            test_idx.push_back(shuffled[static_cast<std::size_t>((f * step + i) % n_s)]);

        RctDataset pilot_raw = subset_subjects(data, pilot_idx);
        RctDataset test_raw = subset_subjects(data, test_idx);
        auto [train_raw, val_raw] =
            split(pilot_raw, config.train_fraction, derive_seed(config.seed, "pilot-split", f));
        NormStats stats = compute_stats(train_raw);
        RctDataset train = preprocess(train_raw, &stats);
        RctDataset val = preprocess(val_raw, &stats);
        RctDataset test = preprocess(test_raw, &stats);

        json fold_json;
        fold_json["fold"] = f;
        fold_json["pilot_subjects"] = pilot_raw.subject_ids;
        fold_json["test_subjects"] = test_raw.subject_ids;
        json kinds_json = json::object();

        for (MetricKind kind : {MetricKind::continuous, MetricKind::categorical}) {
            std::vector<int> kind_idx = metric_indices_of_kind(data, kind);
            if (kind_idx.empty()) continue;
            RctDataset tr = subset_metrics(train, kind_idx);
            RctDataset va = subset_metrics(val, kind_idx);
            RctDataset te = subset_metrics(test, kind_idx);
            const std::string prefix =
                "f" + std::to_string(f) + (kind == MetricKind::continuous ? ".cont" : ".cat");

            CandidateSets sets = generate_candidates(tr, va, config, prefix, store, log);

            // Selection runs on the validation scores; the no-CI ablation
            // collapses every interval first.
            std::vector<ScoredCandidate> gate_refs, gate_cands;
            for (const PipelinePair& p : sets.references) gate_refs.push_back(p.scored);
            for (const PipelinePair& p : sets.candidates) gate_cands.push_back(p.scored);
            if (config.ablation == RunConfig::Ablation::no_confidence_intervals) {
                for (ScoredCandidate& c : gate_refs) c = with_point_intervals(c);
                for (ScoredCandidate& c : gate_cands) c = with_point_intervals(c);
            }
            std::vector<Solution> solutions = choose(gate_refs, gate_cands, config.objective);
            std::vector<RankSection> sections =
                rank_report(gate_refs, gate_cands, config.objective);
            log.add(prefix + ".audit", store.put(audit_table_csv(sections), ".csv"));
            log.add(prefix + ".solutions", store.put(solution_set_json(solutions), ".json"));

            // id pair -> pipeline pair, to map chosen candidates back
            std::map<std::string, const PipelinePair*> by_ids;
            for (const PipelinePair& p : sets.references)
                by_ids.emplace(p.scored.imputer_id + "|" + p.scored.pmd_id, &p);
            for (const PipelinePair& p : sets.candidates)
                by_ids.emplace(p.scored.imputer_id + "|" + p.scored.pmd_id, &p);

            EvalBatch batch(config, te, "test", store);
            std::vector<int> ref_slot(static_cast<std::size_t>(n_e));
            std::vector<int> chosen_slot(static_cast<std::size_t>(n_e));
            // baseline slots per level, -1 = infeasible
            std::vector<std::vector<int>> base_slots(
                static_cast<std::size_t>(n_e),
                std::vector<int>(config.baselines.size(), -1));
            std::vector<std::vector<FeasibleChoice>> base_choice(
                static_cast<std::size_t>(n_e),
                std::vector<FeasibleChoice>(config.baselines.size()));

            for (int i = 0; i < n_e; ++i) {
                const double e = config.efficiency_grid[static_cast<std::size_t>(i)];
                const PipelinePair& ref = sets.references[static_cast<std::size_t>(i)];
                ref_slot[static_cast<std::size_t>(i)] = batch.add(
                    ref.label + ".test-eval", ref.checkpoint_id, ref.pmd_id, ref.design);

                const Solution& sol = solutions[static_cast<std::size_t>(i)];
                const PipelinePair* chosen =
                    by_ids.at(sol.chosen.imputer_id + "|" + sol.chosen.pmd_id);
                chosen_slot[static_cast<std::size_t>(i)] =
                    batch.add(chosen->label + ".test-eval", chosen->checkpoint_id,
                              chosen->pmd_id, chosen->design);

                for (std::size_t b = 0; b < config.baselines.size(); ++b) {
                    const Strategy strategy = config.baselines[b];
                    const std::string base_label =
                        prefix + ".base." + strategy_name(strategy) + ".e" + fd(e);
                    if (strategy == Strategy::rsd) {
                        // The reference pair IS the RSD baseline at this level.
                        FeasibleChoice c;
                        c.feasible = true;
                        c.efficiency = e;
                        base_choice[static_cast<std::size_t>(i)][b] = c;
                        base_slots[static_cast<std::size_t>(i)][b] =
                            batch.add(base_label + ".test-eval", ref.checkpoint_id, ref.pmd_id,
                                      ref.design);
                        continue;
                    }
                    FeasibleChoice choice = nearest_feasible_efficiency(
                        strategy, e, te.protocol, config.feasibility_tolerance);
                    base_choice[static_cast<std::size_t>(i)][b] = choice;
                    if (!choice.feasible) {
                        ++n_infeasible;
                        continue;
                    }
                    DesignSpec spec;
                    spec.learned = false;
                    spec.strategy = strategy;
                    spec.efficiency = choice.efficiency;
                    spec.parameter = choice.parameter;
                    spec.seed = derive_seed(config.seed, base_label + ".design");
                    std::string spec_bytes = design_spec_json(spec).dump(2) + "\n";
                    std::string spec_id = store.put(spec_bytes, ".json");
                    log.add(base_label + ".design", spec_id);
                    base_slots[static_cast<std::size_t>(i)][b] = batch.add(
                        base_label + ".test-eval", ref.checkpoint_id, spec_id, spec);
                }
            }
            batch.run(workers, log);

            // ---- fold report assembly + aggregation ----
            auto& kind_acc = agg[kind_name(kind)];
            if (kind_acc.empty()) kind_acc.resize(static_cast<std::size_t>(n_e));

            json kind_json;
            json metrics_json = json::array();
            for (int m : kind_idx) metrics_json.push_back(data.metrics[static_cast<std::size_t>(m)].name);
            kind_json["metrics"] = metrics_json;
            kind_json["dropped_candidates"] = sets.dropped;
            kind_json["rank_report_id"] = log.entries.at(prefix + ".audit");
            kind_json["solution_set_id"] = log.entries.at(prefix + ".solutions");

            json levels = json::array();
            for (int i = 0; i < n_e; ++i) {
                const double e = config.efficiency_grid[static_cast<std::size_t>(i)];
                const PipelinePair& ref = sets.references[static_cast<std::size_t>(i)];
                const Solution& sol = solutions[static_cast<std::size_t>(i)];
                const PipelinePair* chosen =
                    by_ids.at(sol.chosen.imputer_id + "|" + sol.chosen.pmd_id);
                const Evaluation& chosen_test =
                    batch.eval_of(chosen_slot[static_cast<std::size_t>(i)]);

                json level;
                level["target_efficiency"] = e;
                json ref_json;
                ref_json["label"] = ref.label;
                ref_json["checkpoint_id"] = ref.checkpoint_id;
                ref_json["pmd_id"] = ref.pmd_id;
                ref_json["validation"] = {{"efficiency", ref.scored.efficiency},
                                          {"scores", perf_scores_json(ref.scored.perf)}};
                ref_json["test"] = batch.eval_json(ref_slot[static_cast<std::size_t>(i)]);
                level["reference"] = ref_json;

                json chosen_json;
                chosen_json["label"] = chosen->label;
                chosen_json["checkpoint_id"] = chosen->checkpoint_id;
                chosen_json["pmd_id"] = chosen->pmd_id;
                chosen_json["fallback"] = sol.fallback;
                if (chosen->lambda_mw) chosen_json["lambda_mw"] = *chosen->lambda_mw;
                if (chosen->eta) chosen_json["eta"] = *chosen->eta;
                chosen_json["validation"] = {{"efficiency", chosen->scored.efficiency},
                                             {"scores", perf_scores_json(chosen->scored.perf)}};
                chosen_json["test"] = batch.eval_json(chosen_slot[static_cast<std::size_t>(i)]);
                level["chosen"] = chosen_json;
                ++n_eval;  // the chosen pair was evaluated

                LevelAcc& acc = kind_acc[static_cast<std::size_t>(i)];
                ++acc.folds;
                if (sol.fallback) ++acc.fallbacks;
                acc.emitted_efficiency.push_back(chosen_test.efficiency);

                json baselines = json::array();
                json deltas = json::array();
                std::map<std::string, double> chosen_points = score_points(chosen_test);
                for (std::size_t b = 0; b < config.baselines.size(); ++b) {
                    const Strategy strategy = config.baselines[b];
                    const FeasibleChoice& choice = base_choice[static_cast<std::size_t>(i)][b];
                    json bj;
                    bj["strategy"] = strategy_name(strategy);
                    bj["feasible"] = choice.feasible;
                    if (!choice.feasible) {
                        baselines.push_back(bj);
                        continue;
                    }
                    ++n_eval;
                    bj["parameter"] = choice.parameter;
                    bj["nominal_efficiency"] = choice.efficiency;
                    const int slot = base_slots[static_cast<std::size_t>(i)][b];
                    bj["test"] = batch.eval_json(slot);
                    baselines.push_back(bj);

                    const Evaluation& base_eval = batch.eval_of(slot);
                    json dj;
                    dj["strategy"] = strategy_name(strategy);
                    dj["efficiency"] = chosen_test.efficiency - base_eval.efficiency;
                    json ds = json::object();
                    BaselineAcc& bacc = acc.baselines[strategy_name(strategy)];
                    ++bacc.feasible_folds;
                    bacc.eff_delta.push_back(chosen_test.efficiency - base_eval.efficiency);
                    for (const PerfScore& s : base_eval.scores) {
                        auto it = chosen_points.find(s.name);
                        if (it == chosen_points.end()) continue;
                        const double d = it->second - s.point;
                        ds[s.name] = d;
                        bacc.score_delta[s.name].push_back(d);
                    }
                    dj["scores"] = ds;
                    deltas.push_back(dj);
                }
                level["baselines"] = baselines;
                level["deltas"] = deltas;
                levels.push_back(level);
            }
            kind_json["levels"] = levels;
            kinds_json[kind_name(kind)] = kind_json;
        }
        fold_json["kinds"] = kinds_json;
        folds_json.push_back(fold_json);
    }

    if (n_eval == 0) throw InfeasibleOnly("no design was feasible anywhere in the run");

    // ---- aggregate (median/IQR across folds) ----
    json agg_kinds = json::object();
    for (const auto& [kname, levels] : agg) {
        json agg_levels = json::array();
        for (int i = 0; i < n_e; ++i) {
            const LevelAcc& acc = levels[static_cast<std::size_t>(i)];
            json aj;
            aj["target_efficiency"] = config.efficiency_grid[static_cast<std::size_t>(i)];
            aj["folds"] = acc.folds;
            aj["fallback_rate"] =
                acc.folds == 0 ? 0.0 : static_cast<double>(acc.fallbacks) / acc.folds;
            if (!acc.emitted_efficiency.empty()) {
                double sum = 0.0;
                for (double v : acc.emitted_efficiency) sum += v;
                aj["mean_emitted_efficiency"] =
                    sum / static_cast<double>(acc.emitted_efficiency.size());
            }
            json abj = json::array();
            for (Strategy strategy : config.baselines) {
                auto it = acc.baselines.find(strategy_name(strategy));
                json bj;
                bj["strategy"] = strategy_name(strategy);
                if (it == acc.baselines.end()) {
                    bj["feasible_folds"] = 0;
                } else {
                    bj["feasible_folds"] = it->second.feasible_folds;
                    bj["efficiency_delta"] = spread_json(it->second.eff_delta);
                    json sd = json::object();
                    for (const auto& [name, values] : it->second.score_delta)
                        sd[name] = spread_json(values);
                    bj["score_deltas"] = sd;
                }
                abj.push_back(bj);
            }
            aj["baselines"] = abj;
            agg_levels.push_back(aj);
        }
        agg_kinds[kname] = {{"levels", agg_levels}};
    }

    json report;
    report["format"] = "metrik-run-report";
    report["version"] = 1;
    report["config_hash"] = config_hash(config);
    report["dataset_fingerprint"] = dataset_fingerprint(data);
    report["objective"] = objective_name(config.objective);
    report["ablation"] = ablation_name(config.ablation);
    report["folds"] = folds_json;
    report["aggregate"] = {{"kinds", agg_kinds}};
    report["n_test_evaluations"] = n_eval;
    report["n_infeasible"] = n_infeasible;

    RunResult result;
    result.report_json = report.dump(2) + "\n";
    result.n_test_evaluations = n_eval;
    result.n_infeasible = n_infeasible;
    const std::string report_id = store.put(result.report_json, ".json");

    json manifest;
    manifest["format"] = "metrik-run-manifest";
    manifest["version"] = 1;
    manifest["config"] = json::parse(run_config_json(config));
    manifest["config_hash"] = config_hash(config);
    manifest["dataset_fingerprint"] = dataset_fingerprint(data);
    json artifacts = json::array();
    for (const auto& [label, id] : log.entries) {
        json a;
        a["label"] = label;
        a["id"] = id;
        artifacts.push_back(a);
    }
    manifest["artifacts"] = artifacts;
    manifest["report_id"] = report_id;
    result.manifest_json = manifest.dump(2) + "\n";

    write_file_bytes(out_dir / "report.json", result.report_json);
    write_file_bytes(out_dir / "manifest.json", result.manifest_json);
    return result;
}

RunResult ablate(const RctDataset& data, RunConfig config, RunConfig::Ablation mode,
                 const std::filesystem::path& out_dir) {
    config.ablation = mode;
    return run_experiment(data, config, out_dir);
}

std::string scored_candidates_json(const std::vector<ScoredCandidate>& candidates) {
    json arr = json::array();
    for (const ScoredCandidate& c : candidates) arr.push_back(scored_to_json(c));
    return arr.dump(2) + "\n";
}

std::vector<ScoredCandidate> scored_candidates_from_json(const std::string& json_text) {
    json arr = json::parse(json_text, nullptr, false);
    if (arr.is_discarded() || !arr.is_array())
        throw ConfigError("scored candidate list must be a JSON array");
    std::vector<ScoredCandidate> out;
    try {
        for (const json& j : arr) out.push_back(scored_from_json(j));
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed scored candidate: ") + e.what());
    }
    return out;
}

}  // namespace metrik
