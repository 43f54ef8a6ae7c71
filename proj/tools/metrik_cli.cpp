// Command-line front end: dataset synthesis and ingestion, the individual
// pipeline stages, and the full cross-validated run.
//
// Exit codes: 0 success, 2 configuration/input error, 3 nothing requested was
// feasible, 4 numerical failure (divergence or an unevaluable design).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metrik/checkpoint.hpp"
#include "metrik/dataset.hpp"
#include "metrik/dataset_io.hpp"
#include "metrik/errors.hpp"
#include "metrik/evaluate.hpp"
#include "metrik/imputer.hpp"
#include "metrik/masklayer.hpp"
#include "metrik/pipeline.hpp"
#include "metrik/pmd.hpp"
#include "metrik/rng.hpp"
#include "metrik/select.hpp"
#include "metrik/store.hpp"
#include "metrik/text.hpp"
#include "metrik/viz.hpp"

namespace {

using json = nlohmann::json;
using namespace metrik;

struct Args {
    std::string config_path;
    std::string input;
    std::string checkpoint;
    std::string pmd_path;
    std::string out;
    std::string objective;
    std::string mode;
    std::string rows = "metrics";
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;
};

std::string config_text_or(const Args& args, const char* fallback) {
    if (args.config_path.empty()) return fallback;
    return read_file_bytes(args.config_path);
}

/// Pulls CLI-only keys out of a config object so the remainder parses as a
/// RunConfig. Returns the removed value, or nullopt.
std::optional<json> pop_key(json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end()) return std::nullopt;
    json value = *it;
    j.erase(it);
    return value;
}

MetricKind parse_kind(const std::string& name) {
    if (name == "continuous") return MetricKind::continuous;
    if (name == "categorical") return MetricKind::categorical;
    throw ConfigError("kind must be \"continuous\" or \"categorical\"");
}

DesignObjective objective_from(const std::string& name, DesignObjective fallback) {
    if (name.empty()) return fallback;
    DesignObjective o;
    if (name == "max-eff")
        o.mode = DesignObjective::Mode::max_efficiency;
    else if (name == "max-perf")
        o.mode = DesignObjective::Mode::max_performance;
    else
        throw ConfigError("objective must be \"max-eff\" or \"max-perf\"");
    return o;
}

double require_number(const std::optional<json>& v, const char* key) {
    if (!v || !v->is_number()) throw ConfigError(std::string("config requires numeric ") + key);
    return v->get<double>();
}

/// Subject split plus pilot-train-only normalization, shared by the
/// train-initial and learn-masks stages. Preprocessed snapshots are split
/// as-is; raw ones are normalized from the train side's statistics.
std::pair<RctDataset, RctDataset> split_and_normalize(const RctDataset& data,
                                                      double train_fraction,
                                                      std::uint64_t seed) {
    auto [train_raw, val_raw] = split(data, train_fraction, derive_seed(seed, "split"));
    if (data.preprocessed) return {std::move(train_raw), std::move(val_raw)};
    NormStats stats = compute_stats(train_raw);
    return {preprocess(train_raw, &stats), preprocess(val_raw, &stats)};
}

std::vector<std::string> metric_names(const RctDataset& data) {
    std::vector<std::string> names;
    for (const MetricSpec& m : data.metrics) names.push_back(m.name);
    return names;
}

void write_train_report(const std::filesystem::path& path, const TrainReport& report) {
    json j;
    j["seed"] = report.seed;
    j["selected_epoch"] = report.selected_epoch;
    j["diverged"] = report.diverged;
    if (report.diverged) j["diverged_epoch"] = report.diverged_epoch;
    if (!report.train_loss.empty()) j["final_train_loss"] = report.train_loss.back();
    json val = json::array();
    for (const auto& [epoch, loss] : report.val_loss) val.push_back({{"epoch", epoch}, {"loss", loss}});
    j["val_loss"] = val;
    write_file_bytes(path, j.dump(2) + "\n");
}

// ---- subcommands -----------------------------------------------------------

int cmd_synth(const Args& args) {
    SynthConfig config = parse_synth_config(config_text_or(args, "{}"));
    RctDataset data = synthesize(config, args.seed);
    save_snapshot(data, args.out);
    std::cout << "synthesized " << data.n_subjects() << " subjects x " << data.n_timepoints()
              << " timepoints x " << data.n_metrics() << " metrics, fingerprint "
              << dataset_fingerprint(data) << "\n";
    return 0;
}

int cmd_ingest(const Args& args) {
    IngestMetadata meta;
    if (!args.config_path.empty())
        meta = parse_ingest_metadata(read_file_bytes(args.config_path));
    std::vector<std::string> dropped;
    std::ifstream rows(args.input);
    if (!rows) throw ConfigError("cannot open input CSV: " + args.input);
    RctDataset data = ingest_csv(rows, meta, &dropped);
    for (const std::string& d : dropped) std::cerr << "warning: dropped metric " << d << "\n";
    save_snapshot(data, args.out);
    std::cout << "ingested " << data.n_subjects() << " subjects, " << data.n_metrics()
              << " metrics, fingerprint " << dataset_fingerprint(data) << "\n";
    return 0;
}

int cmd_preprocess(const Args& args) {
    RctDataset data = load_snapshot(args.input);
    if (data.preprocessed) throw ConfigError("snapshot is already preprocessed");
    save_snapshot(preprocess(data), args.out);
    std::cout << "preprocessed snapshot written to " << args.out << "\n";
    return 0;
}

int cmd_train_initial(const Args& args) {
    json j = json::parse(config_text_or(args, "{}"));
    const double e = require_number(pop_key(j, "efficiency"), "efficiency");
    MetricKind kind = MetricKind::continuous;
    if (auto k = pop_key(j, "kind")) kind = parse_kind(k->get<std::string>());
    RunConfig rc = parse_run_config(j.dump());
    const std::uint64_t seed = args.seed_set ? args.seed : rc.seed;

    RctDataset data = load_snapshot(args.input);
    std::vector<int> idx = metric_indices_of_kind(data, kind);
    if (idx.empty()) throw ConfigError("snapshot has no metrics of the requested kind");
    data = subset_metrics(data, idx);
    auto [train, val] = split_and_normalize(data, rc.train_fraction, seed);

    ImputerConfig ic = rc.imputer;
    ic.metric_kind = kind;
    if (kind == MetricKind::categorical) ic.learning_rate = rc.categorical_learning_rate;
    const ProtocolMask& protocol = train.protocol;
    MaskSource source = [e, &protocol](std::uint64_t s) { return rsd_sample(e, protocol, s); };
    auto [model, report] = train_mvts(train, val, ic, source, derive_seed(seed, "train-initial"));
    if (report.diverged)
        throw TrainingDiverged("initial imputer training diverged", report.diverged_epoch);
    model = canonicalize(model);

    std::filesystem::create_directories(args.out);
    save_checkpoint(model, std::filesystem::path(args.out) / "imputer.ckpt");
    write_train_report(std::filesystem::path(args.out) / "training.json", report);
    std::cout << "trained initial imputer at e=" << format_double(e) << ", selected epoch "
              << report.selected_epoch << "\n";
    return 0;
}

int cmd_learn_masks(const Args& args) {
    json j = json::parse(config_text_or(args, "{}"));
    const double e = require_number(pop_key(j, "efficiency"), "efficiency");
    MaskHyperparams hp;
    if (auto l = pop_key(j, "lambda_mw")) hp.lambda_mw = l->get<double>();
    if (auto h = pop_key(j, "eta")) hp.eta = h->get<double>();
    MetricKind kind = MetricKind::continuous;
    if (auto k = pop_key(j, "kind")) kind = parse_kind(k->get<std::string>());
    RunConfig rc = parse_run_config(j.dump());
    const std::uint64_t seed = args.seed_set ? args.seed : rc.seed;

    RctDataset data = load_snapshot(args.input);
    std::vector<int> idx = metric_indices_of_kind(data, kind);
    if (idx.empty()) throw ConfigError("snapshot has no metrics of the requested kind");
    data = subset_metrics(data, idx);
    auto [train, val] = split_and_normalize(data, rc.train_fraction, seed);
    (void)val;  // mask learning optimizes on the training split only

    Imputer model = load_checkpoint(args.checkpoint);
    model.config.epochs = rc.mask_epochs > 0 ? rc.mask_epochs : rc.imputer.epochs;
    model.config.learning_rate = kind == MetricKind::categorical ? rc.categorical_learning_rate
                                                                 : rc.imputer.learning_rate;
    MaskedTrainResult result =
        train_masked_imputer(model, e, hp, train, derive_seed(seed, "learn-masks"));
    if (result.report.diverged)
        throw TrainingDiverged("mask learning diverged", result.report.diverged_epoch);

    std::filesystem::create_directories(args.out);
    Imputer out_model = canonicalize(result.imputer);
    save_checkpoint(out_model, std::filesystem::path(args.out) / "imputer.ckpt");
    PmdSidecar sidecar;
    sidecar.efficiency = result.design.efficiency;
    sidecar.seed = seed;
    sidecar.strategy = "learned";
    sidecar.e_seed = e;
    sidecar.lambda_mw = hp.lambda_mw;
    sidecar.eta = hp.eta;
    save_pmd(result.design, metric_names(train), std::filesystem::path(args.out) / "pmd.csv",
             sidecar);
    write_train_report(std::filesystem::path(args.out) / "training.json", result.report);
    std::cout << "learned design with efficiency " << format_double(result.design.efficiency)
              << "\n";
    return 0;
}

int cmd_select(const Args& args) {
    json j = json::parse(read_file_bytes(args.input));
    if (!j.is_object() || !j.contains("references") || !j.contains("candidates"))
        throw ConfigError("select input must be {\"references\": [...], \"candidates\": [...]}");
    auto references = scored_candidates_from_json(j.at("references").dump());
    auto candidates = scored_candidates_from_json(j.at("candidates").dump());
    DesignObjective objective = objective_from(args.objective, DesignObjective{});

    std::vector<Solution> solutions = choose(references, candidates, objective);
    std::vector<RankSection> sections = rank_report(references, candidates, objective);
    std::filesystem::create_directories(args.out);
    write_file_bytes(std::filesystem::path(args.out) / "solutions.json",
                     solution_set_json(solutions));
    write_file_bytes(std::filesystem::path(args.out) / "audit.csv", audit_table_csv(sections));
    int fallbacks = 0;
    for (const Solution& s : solutions)
        if (s.fallback) ++fallbacks;
    std::cout << "selected " << solutions.size() << " pairs, " << fallbacks << " fallback(s)\n";
    return 0;
}

int cmd_evaluate(const Args& args) {
    json j = json::parse(config_text_or(args, "{}"));
    auto strategy_key = pop_key(j, "strategy");
    auto efficiency_key = pop_key(j, "efficiency");
    std::optional<MetricKind> kind;
    if (auto k = pop_key(j, "kind")) kind = parse_kind(k->get<std::string>());
    RunConfig rc = parse_run_config(j.dump());
    const std::uint64_t seed = args.seed_set ? args.seed : rc.seed;

    RctDataset data = load_snapshot(args.input);
    if (!data.preprocessed)
        throw ConfigError("evaluate expects a preprocessed snapshot (run preprocess first)");
    if (kind) {
        std::vector<int> idx = metric_indices_of_kind(data, *kind);
        if (idx.empty()) throw ConfigError("snapshot has no metrics of the requested kind");
        data = subset_metrics(data, idx);
    }

    DesignSpec spec;
    std::string pmd_id;
    if (!args.pmd_path.empty()) {
        spec.learned = true;
        spec.shared = load_pmd_csv(args.pmd_path);
        spec.shared.efficiency = efficiency(spec.shared, data.protocol);
        spec.efficiency = spec.shared.efficiency;
        pmd_id = args.pmd_path;
    } else if (strategy_key) {
        auto strategy = strategy_from_name(strategy_key->get<std::string>());
        if (!strategy) throw ConfigError("unknown strategy in config");
        const double target = require_number(efficiency_key, "efficiency");
        FeasibleChoice choice = nearest_feasible_efficiency(*strategy, target, data.protocol,
                                                            rc.feasibility_tolerance);
        if (!choice.feasible)
            throw InfeasibleOnly(strategy_name(*strategy) + " cannot reach efficiency " +
                                 format_double(target));
        spec.strategy = *strategy;
        spec.efficiency = choice.efficiency;
        spec.parameter = choice.parameter;
        spec.seed = derive_seed(seed, "design");
        pmd_id = strategy_name(*strategy) + ".e" + format_double(target);
    } else {
        throw ConfigError("evaluate needs --pmd or a config with strategy + efficiency");
    }

    Imputer model = load_checkpoint(args.checkpoint);
    DesignAssignment assignment = materialize(spec, data.n_subjects(), data.protocol, "eval");
    EvalOptions options = rc.eval;
    options.subsample = spec.randomized();
    options.seed = derive_seed(seed, "evaluate");
    Evaluation ev = evaluate_pair(model, assignment, data, options);

    std::filesystem::create_directories(args.out);
    write_file_bytes(std::filesystem::path(args.out) / "evaluation.json",
                     evaluation_report_json(pmd_id, args.checkpoint, ev));
    std::cout << "evaluated " << ev.n_elements << " elements at efficiency "
              << format_double(ev.efficiency);
    for (const PerfScore& s : ev.scores)
        std::cout << ", " << s.name << " " << format_double(s.point);
    std::cout << "\n";
    return 0;
}

RunConfig run_config_for(const Args& args) {
    RunConfig config = parse_run_config(config_text_or(args, "{}"));
    if (args.seed_set) config.seed = args.seed;
    config.objective = objective_from(args.objective, config.objective);
    if (args.workers > 0) config.workers = args.workers;
    return config;
}

int cmd_run(const Args& args) {
    RunConfig config = run_config_for(args);
    RctDataset data = load_snapshot(args.input);
    RunResult result = run_experiment(data, config, args.out);
    std::cout << "run complete: " << result.n_test_evaluations << " test evaluations, "
              << result.n_infeasible << " infeasible design(s); report at "
              << (std::filesystem::path(args.out) / "report.json").string() << "\n";
    return 0;
}

int cmd_ablate(const Args& args) {
    RunConfig config = run_config_for(args);
    RunConfig::Ablation mode;
    if (args.mode == "random_candidate_pool")
        mode = RunConfig::Ablation::random_candidate_pool;
    else if (args.mode == "no_confidence_intervals")
        mode = RunConfig::Ablation::no_confidence_intervals;
    else
        throw ConfigError("--mode must be random_candidate_pool or no_confidence_intervals");
    RctDataset data = load_snapshot(args.input);
    RunResult result = ablate(data, config, mode, args.out);
    std::cout << "ablation (" << args.mode << ") complete: " << result.n_test_evaluations
              << " test evaluations\n";
    return 0;
}

int cmd_viz(const Args& args) {
    std::string grid = read_file_bytes(args.pmd_path);
    const auto newline = grid.find('\n');
    if (newline == std::string::npos) throw ConfigError("design file has no header row");
    std::vector<std::string> header = split_csv_line(grid.substr(0, newline));
    if (header.size() < 2) throw ConfigError("design file has no metric columns");
    std::vector<std::string> names(header.begin() + 1, header.end());
    Pmd design = load_pmd_csv(args.pmd_path);

    VizOptions options;
    if (args.rows == "metrics")
        options.rows_are_metrics = true;
    else if (args.rows == "timepoints")
        options.rows_are_metrics = false;
    else
        throw ConfigError("--rows must be metrics or timepoints");
    std::filesystem::create_directories(args.out);
    save_pmd_viz(design, names, std::filesystem::path(args.out) / "pmd.svg",
                 std::filesystem::path(args.out) / "grid.csv", options);
    std::cout << "wrote " << (std::filesystem::path(args.out) / "pmd.svg").string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Planned missing design learning for longitudinal trials"};
    app.require_subcommand(1);
    Args args;
    int rc = 0;

    auto add_common = [&](CLI::App* sub, bool needs_out) {
        sub->add_option("--config", args.config_path, "JSON configuration file");
        auto* seed_opt = sub->add_option("--seed", args.seed, "Root random seed");
        sub->parse_complete_callback([&args, seed_opt] { args.seed_set = seed_opt->count() > 0; });
        auto* out = sub->add_option("--out", args.out, "Output directory");
        if (needs_out) out->required();
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic trial snapshot");
    add_common(synth, true);
    synth->callback([&] { rc = cmd_synth(args); });

    CLI::App* ingest = app.add_subcommand("ingest", "Ingest a long-format CSV into a snapshot");
    add_common(ingest, true);
    ingest->add_option("--input", args.input, "Long-format CSV file")->required();
    ingest->callback([&] { rc = cmd_ingest(args); });

    CLI::App* preprocess = app.add_subcommand("preprocess", "Fill and normalize a snapshot");
    add_common(preprocess, true);
    preprocess->add_option("--input", args.input, "Snapshot directory")->required();
    preprocess->callback([&] { rc = cmd_preprocess(args); });

    CLI::App* train = app.add_subcommand("train-initial", "Train an initial imputer at one efficiency");
    add_common(train, true);
    train->add_option("--input", args.input, "Snapshot directory")->required();
    train->callback([&] { rc = cmd_train_initial(args); });

    CLI::App* masks = app.add_subcommand("learn-masks", "Learn a design from a trained imputer");
    add_common(masks, true);
    masks->add_option("--input", args.input, "Snapshot directory")->required();
    masks->add_option("--checkpoint", args.checkpoint, "Initial imputer checkpoint")->required();
    masks->callback([&] { rc = cmd_learn_masks(args); });

    CLI::App* select = app.add_subcommand("select", "Pick dominant pairs from scored candidates");
    add_common(select, true);
    select->add_option("--input", args.input, "Scored candidate JSON")->required();
    select->add_option("--objective", args.objective, "max-eff or max-perf");
    select->callback([&] { rc = cmd_select(args); });

    CLI::App* evaluate = app.add_subcommand("evaluate", "Score an (imputer, design) pair");
    add_common(evaluate, true);
    evaluate->add_option("--input", args.input, "Preprocessed snapshot directory")->required();
    evaluate->add_option("--checkpoint", args.checkpoint, "Imputer checkpoint")->required();
    evaluate->add_option("--pmd", args.pmd_path, "Design grid CSV");
    evaluate->callback([&] { rc = cmd_evaluate(args); });

    CLI::App* run = app.add_subcommand("run", "Full cross-validated pipeline");
    add_common(run, true);
    run->add_option("--input", args.input, "Raw snapshot directory")->required();
    run->add_option("--objective", args.objective, "max-eff or max-perf");
    run->add_option("--workers", args.workers, "Worker thread count");
    run->callback([&] { rc = cmd_run(args); });

    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Run with one component removed");
    add_common(ablate_cmd, true);
    ablate_cmd->add_option("--input", args.input, "Raw snapshot directory")->required();
    ablate_cmd->add_option("--objective", args.objective, "max-eff or max-perf");
    ablate_cmd->add_option("--workers", args.workers, "Worker thread count");
    ablate_cmd->add_option("--mode", args.mode, "random_candidate_pool or no_confidence_intervals")
        ->required();
    ablate_cmd->callback([&] { rc = cmd_ablate(args); });

    CLI::App* viz = app.add_subcommand("viz", "Render a design grid as SVG");
    add_common(viz, true);
    viz->add_option("--pmd", args.pmd_path, "Design grid CSV")->required();
    viz->add_option("--rows", args.rows, "Grid rows: metrics or timepoints");
    viz->callback([&] { rc = cmd_viz(args); });

    try {
        app.parse(argc, argv);
        return rc;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IngestError& e) {
        std::cerr << "ingest error: " << e.what() << "\n";
        return 2;
    } catch (const InfeasibleOnly& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return 3;
    } catch (const TrainingDiverged& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const EvalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
