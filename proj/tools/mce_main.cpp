// Command-line harness: data generation, pretraining, joint training,
// subset evaluation, capability probes, Shapley tables, the component
// ablation grid and plot-ready reports. Every subcommand is deterministic
// for a given config and seed, and run directories carry a manifest that
// pins the config, the RNG realization and the content hashes of outputs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "mce/analysis.hpp"
#include "mce/config.hpp"
#include "mce/csv.hpp"
#include "mce/serialize.hpp"
#include "mce/trainer.hpp"

namespace fs = std::filesystem;
using namespace mce;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::optional<uint64_t> seed;
    std::string out_dir;
};

ExperimentConfig load_config(const CommonArgs& args) {
    ConfigText text = args.config_path.empty() ? ConfigText::parse_text("")
                                               : ConfigText::parse_file(args.config_path);
    for (const auto& o : args.overrides) text.set(o);
    ExperimentConfig cfg = ExperimentConfig::from(text);
    if (args.seed) {
        // One flag reseeds the whole experiment: data and training.
        cfg.data.seed = *args.seed;
        cfg.train.seed = *args.seed;
    }
    return cfg;
}

fs::path resolve_out(const CommonArgs& args, const ExperimentConfig& cfg) {
    fs::path out = args.out_dir.empty() ? fs::path("runs") / cfg.hash_hex() : fs::path(args.out_dir);
    fs::create_directories(out);
    return out;
}

std::string fmt(double v) { return format_double(v); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
}

/// Manifest: canonical config, RNG realization notes and output hashes.
void write_manifest(const fs::path& dir, const ExperimentConfig& cfg,
                    const std::vector<std::string>& outputs,
                    const std::string& data_fingerprint = "") {
    std::ostringstream os;
    os << "# run manifest\n";
    os << "config_hash = " << cfg.hash_hex() << "\n";
    os << "rng = mt19937_64; uniform: (x>>11)*2^-53; normal: box-muller; shuffle: fisher-yates\n";
    if (!data_fingerprint.empty()) os << "dataset_fingerprint = " << data_fingerprint << "\n";
    os << "\n" << cfg.canonical_text() << "\n";
    for (const auto& name : outputs) {
        os << "hash " << name << " = " << file_hash_hex((dir / name).string()) << "\n";
    }
    write_text(dir / "manifest.txt", os.str());
}

void write_losses_csv(const fs::path& dir, const RunLog& log) {
    CsvTable t;
    t.header = {"step", "task", "single", "sub", "aux", "total"};
    for (const auto& row : log.losses) {
        t.rows.push_back({std::to_string(row.step), fmt(row.task), fmt(row.single), fmt(row.sub),
                          fmt(row.aux), fmt(row.total)});
    }
    t.write_file((dir / "losses.csv").string());
}

void write_factors_csv(const fs::path& dir, const RunLog& log) {
    CsvTable t;
    t.header = {"step", "modality", "present_count", "u", "phi", "delta", "b"};
    for (const auto& row : log.factors) {
        t.rows.push_back({std::to_string(row.step), std::to_string(row.modality),
                          std::to_string(row.present_count), fmt(row.u), fmt(row.phi),
                          fmt(row.delta), fmt(row.b)});
    }
    t.write_file((dir / "factors.csv").string());
}

void write_eval_csv(const fs::path& dir, const std::vector<EvalRow>& rows,
                    const std::string& name = "eval.csv") {
    CsvTable t;
    t.header = {"epoch", "subset", "samples", "accuracy"};
    for (const auto& row : rows) {
        t.rows.push_back({std::to_string(row.epoch), std::to_string(row.subset),
                          std::to_string(row.samples), fmt(row.accuracy)});
    }
    t.write_file((dir / name).string());
}

void write_probes_csv(const fs::path& dir, const std::vector<ProbeRow>& rows) {
    CsvTable t;
    t.header = {"epoch", "modality", "capability", "upperbound"};
    for (const auto& row : rows) {
        t.rows.push_back({std::to_string(row.epoch), std::to_string(row.modality),
                          fmt(row.capability), fmt(row.upperbound)});
    }
    t.write_file((dir / "probes.csv").string());
}

void write_factor_a_csv(const fs::path& dir, const RunLog& log) {
    CsvTable t;
    t.header = {"modality", "raw", "normalized"};
    for (size_t m = 0; m < log.factor_a.size(); ++m) {
        t.rows.push_back({std::to_string(m), fmt(log.factor_a_raw[m]), fmt(log.factor_a[m])});
    }
    t.write_file((dir / "factor_a.csv").string());
}

void write_repr_csv(const fs::path& dir, const ReprQualityReport& rep) {
    CsvTable t;
    t.header = {"intra", "inter", "ratio", "cosine"};
    t.rows.push_back({fmt(rep.intra), fmt(rep.inter), fmt(rep.ratio), fmt(rep.cosine)});
    t.write_file((dir / "repr.csv").string());
}

void write_pretrain_csv(const fs::path& dir, const std::vector<UnimodalModel>& frozen,
                        const Dataset& train, const Dataset& test) {
    CsvTable t;
    t.header = {"modality", "train_accuracy", "test_accuracy"};
    for (size_t m = 0; m < frozen.size(); ++m) {
        t.rows.push_back({std::to_string(m), fmt(unimodal_accuracy(frozen[m], train)),
                          fmt(unimodal_accuracy(frozen[m], test))});
    }
    t.write_file((dir / "pretrain.csv").string());
}

int cmd_gen_data(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    fs::path out = resolve_out(args, cfg);
    Dataset train = cfg.make_train_split();
    Dataset test = cfg.make_test_split();
    save_dataset((out / "train").string(), train, cfg.data, "train");
    SynthConfig test_cfg = cfg.data;
    test_cfg.samples = cfg.samples_test;
    save_dataset((out / "test").string(), test, test_cfg, "test");
    dataset_to_csv((out / "train_preview.csv").string(), train);
    write_manifest(out, cfg,
                   {"train.bin", "train.meta", "test.bin", "test.meta", "train_preview.csv"},
                   dataset_fingerprint(train));
    std::cout << "wrote dataset splits under " << out.string() << "\n";
    return 0;
}

ModelConfig model_config_of(const ExperimentConfig& cfg) {
    ModelConfig mc = cfg.model;
    mc.modalities = cfg.data.modalities;
    mc.classes = cfg.data.classes;
    mc.input_dim = cfg.data.input_dim;
    return mc;
}

int cmd_pretrain(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    fs::path out = resolve_out(args, cfg);
    Dataset train = cfg.make_train_split();
    Dataset test = cfg.make_test_split();
    ModelConfig mcfg = model_config_of(cfg);
    auto frozen = pretrain_all(train, mcfg, cfg.train);
    std::vector<std::string> outputs = {"pretrain.csv"};
    for (size_t m = 0; m < frozen.size(); ++m) {
        std::string prefix = "unimodal_" + std::to_string(m);
        save_unimodal((out / prefix).string(), frozen[m], mcfg);
        outputs.push_back(prefix + ".manifest");
        outputs.push_back(prefix + ".bin");
    }
    write_pretrain_csv(out, frozen, train, test);
    write_manifest(out, cfg, outputs);
    for (size_t m = 0; m < frozen.size(); ++m) {
        std::cout << "modality " << m << " held-out accuracy "
                  << unimodal_accuracy(frozen[m], test) << "\n";
    }
    return 0;
}

/// Shared by `train` and `ablate`: the full pipeline into one directory.
SubsetReport run_training(const ExperimentConfig& cfg, const fs::path& out,
                          const std::vector<UnimodalModel>* frozen) {
    Dataset train = cfg.make_train_split();
    Dataset test = cfg.make_test_split();
    ModelConfig mcfg = model_config_of(cfg);

    TrainResult result = train_mce(train, test, mcfg, cfg.train, frozen);

    write_text(out / "config.cfg", cfg.canonical_text());
    write_losses_csv(out, result.log);
    write_factors_csv(out, result.log);
    write_factor_a_csv(out, result.log);
    write_probes_csv(out, result.log.probes);
    write_pretrain_csv(out, result.frozen, train, test);

    std::vector<std::string> outputs = {"config.cfg", "losses.csv", "factors.csv",
                                        "factor_a.csv", "probes.csv", "pretrain.csv"};

    SubsetReport report;
    if (!result.log.abort_reason.empty()) {
        save_checkpoint((out / "checkpoint_last_good").string(), result.model, cfg.train.seed,
                        result.log.abort_step);
        write_text(out / "diagnostics.txt",
                   "aborted at step " + std::to_string(result.log.abort_step) + ": " +
                       result.log.abort_reason + "\n");
        write_eval_csv(out, result.log.evals);
        outputs.insert(outputs.end(), {"eval.csv", "diagnostics.txt",
                                       "checkpoint_last_good.manifest", "checkpoint_last_good.bin"});
        write_manifest(out, cfg, outputs, dataset_fingerprint(train));
        std::cerr << "training aborted: " << result.log.abort_reason << "\n";
        return report;
    }

    save_checkpoint((out / "checkpoint").string(), result.model, cfg.train.seed, result.log.steps);
    write_eval_csv(out, result.log.evals);
    ReprQualityReport rep = repr_quality(fused_features(result.model, test), test.labels);
    write_repr_csv(out, rep);
    outputs.insert(outputs.end(),
                   {"eval.csv", "repr.csv", "checkpoint.manifest", "checkpoint.bin"});
    write_manifest(out, cfg, outputs, dataset_fingerprint(train));

    report = evaluate_all_subsets(result.model, test);
    return report;
}

int cmd_train(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    fs::path out = resolve_out(args, cfg);
    SubsetReport report = run_training(cfg, out, nullptr);
    if (report.rows.empty()) return 1;  // aborted
    for (const auto& row : report.rows) {
        std::cout << "subset " << row.subset << " samples " << row.samples << " accuracy "
                  << row.accuracy << "\n";
    }
    std::cout << "average subset accuracy " << report.average << "\n";
    std::cout << "run directory " << out.string() << "\n";
    return 0;
}

ExperimentConfig config_from_run_dir(const fs::path& run) {
    return ExperimentConfig::from(ConfigText::parse_file((run / "config.cfg").string()));
}

int cmd_eval(const CommonArgs& args, const std::string& run_dir, const std::string& checkpoint) {
    ExperimentConfig cfg;
    std::string ckpt = checkpoint;
    if (!run_dir.empty()) {
        cfg = config_from_run_dir(run_dir);
        if (ckpt.empty()) ckpt = (fs::path(run_dir) / "checkpoint").string();
    } else {
        cfg = load_config(args);
    }
    if (ckpt.empty()) throw ConfigError("eval: need --run DIR or --checkpoint PREFIX");
    MultiModalModel model = load_checkpoint(ckpt);
    Dataset test = cfg.make_test_split();
    SubsetReport report = evaluate_all_subsets(model, test);
    for (const auto& row : report.rows) {
        std::cout << "subset " << row.subset << " samples " << row.samples << " accuracy "
                  << row.accuracy << "\n";
    }
    std::cout << "average subset accuracy " << report.average << "\n";
    ReprQualityReport rep = repr_quality(fused_features(model, test), test.labels);
    std::cout << "repr intra " << rep.intra << " inter " << rep.inter << " ratio " << rep.ratio
              << " cosine " << rep.cosine << "\n";
    if (!args.out_dir.empty()) {
        fs::path out(args.out_dir);
        fs::create_directories(out);
        std::vector<EvalRow> rows = report.rows;
        rows.push_back(EvalRow{0, 0, 0, report.average});
        write_eval_csv(out, rows);
        write_repr_csv(out, rep);
    }
    return 0;
}

int cmd_probe(const CommonArgs& args, const std::string& run_dir, const std::string& checkpoint) {
    ExperimentConfig cfg;
    std::string ckpt = checkpoint;
    if (!run_dir.empty()) {
        cfg = config_from_run_dir(run_dir);
        if (ckpt.empty()) ckpt = (fs::path(run_dir) / "checkpoint").string();
    } else {
        cfg = load_config(args);
    }
    if (ckpt.empty()) throw ConfigError("probe: need --run DIR or --checkpoint PREFIX");
    MultiModalModel model = load_checkpoint(ckpt);
    Dataset train = cfg.make_train_split();
    Dataset test = cfg.make_test_split();

    // Upper bounds from the run's pretraining log when available.
    std::map<int, double> ceiling;
    if (!run_dir.empty() && fs::exists(fs::path(run_dir) / "pretrain.csv")) {
        CsvTable t = CsvTable::read_file((fs::path(run_dir) / "pretrain.csv").string());
        for (const auto& row : t.rows) {
            ceiling[static_cast<int>(parse_long(row[0], "modality"))] =
                parse_double(row[2], "test_accuracy");
        }
    }

    std::vector<ProbeRow> rows;
    for (int m = 0; m < model.config().modalities; ++m) {
        double cap = probe_capability(model.encoder(m), model.config(), train, test, m,
                                      cfg.train.probe_epochs, cfg.train.batch_size,
                                      cfg.train.learning_rate,
                                      mix_seed(stream_seed(cfg.train.seed, "probe"),
                                               static_cast<uint64_t>(m) * 1000003ull +
                                                   static_cast<uint64_t>(cfg.train.epochs)));
        double up = ceiling.count(m) ? ceiling[m] : 0.0;
        rows.push_back(ProbeRow{cfg.train.epochs, m, cap, up});
        std::cout << "modality " << m << " capability " << cap << " upperbound " << up << "\n";
    }
    if (!args.out_dir.empty()) {
        fs::path out(args.out_dir);
        fs::create_directories(out);
        write_probes_csv(out, rows);
    }
    return 0;
}

int cmd_shapley(const CommonArgs& args, const std::string& game_path, int mc_permutations) {
    CoalitionGame game = load_game_file(game_path);
    const int players = game.players;
    uint64_t full = (1ull << players) - 1;
    ShapleyResult exact = exact_shapley(game, full);
    std::optional<ShapleyResult> mc;
    if (mc_permutations > 0) {
        mc = mc_shapley(game, full, mc_permutations, args.seed.value_or(0));
    }
    for (int i = 0; i < players; ++i) {
        std::cout << "player " << i << " phi " << exact.phi[static_cast<size_t>(i)];
        if (mc) std::cout << " phi_mc " << mc->phi[static_cast<size_t>(i)];
        std::cout << "\n";
    }
    std::cout << "oracle_calls " << exact.oracle_calls;
    if (mc) std::cout << " mc_oracle_calls " << mc->oracle_calls;
    std::cout << "\n";
    if (!args.out_dir.empty()) {
        fs::path out(args.out_dir);
        fs::create_directories(out);
        CsvTable t;
        t.header = mc ? std::vector<std::string>{"player", "phi", "phi_mc"}
                      : std::vector<std::string>{"player", "phi"};
        for (int i = 0; i < players; ++i) {
            std::vector<std::string> row = {std::to_string(i), fmt(exact.phi[static_cast<size_t>(i)])};
            if (mc) row.push_back(fmt(mc->phi[static_cast<size_t>(i)]));
            t.rows.push_back(row);
        }
        t.write_file((out / "shapley.csv").string());
    }
    return 0;
}

int cmd_ablate(const CommonArgs& args) {
    ExperimentConfig base = load_config(args);
    fs::path out = resolve_out(args, base);

    // Shared data and pretrained models keep the rows comparable.
    Dataset train = base.make_train_split();
    Dataset test = base.make_test_split();
    ModelConfig mcfg = model_config_of(base);
    auto frozen = pretrain_all(train, mcfg, base.train);

    CsvTable grid;
    grid.header = {"row", "factor_a", "factor_b", "loss_single", "loss_sub", "loss_aux",
                   "avg_subset_accuracy"};
    for (const AblationRow& row : ablation_grid()) {
        ExperimentConfig cfg = base;
        cfg.train.use_factor_a = row.use_factor_a;
        cfg.train.use_factor_b = row.use_factor_b;
        cfg.train.lambdas.single = row.loss_single ? base.train.lambdas.single : 0.0;
        cfg.train.lambdas.sub = row.loss_sub ? base.train.lambdas.sub : 0.0;
        cfg.train.lambdas.aux = row.loss_aux ? base.train.lambdas.aux : 0.0;
        cfg.train.probe_at_end = false;

        TrainResult result = train_mce(train, test, mcfg, cfg.train, &frozen);
        if (!result.log.abort_reason.empty()) {
            throw NonFiniteError("ablation row " + std::string(1, row.label) +
                                 " diverged: " + result.log.abort_reason);
        }
        SubsetReport report = evaluate_all_subsets(result.model, test);
        grid.rows.push_back({std::string(1, row.label), row.use_factor_a ? "1" : "0",
                             row.use_factor_b ? "1" : "0", row.loss_single ? "1" : "0",
                             row.loss_sub ? "1" : "0", row.loss_aux ? "1" : "0",
                             fmt(report.average)});
        std::cout << "row " << row.label << " avg subset accuracy " << report.average << "\n";
    }
    grid.write_file((out / "ablation.csv").string());
    write_manifest(out, base, {"ablation.csv"});
    return 0;
}

int cmd_report(const CommonArgs& args, const std::string& run_dir,
               const std::vector<std::string>& compare) {
    fs::path out = args.out_dir.empty() ? fs::path(".") : fs::path(args.out_dir);
    fs::create_directories(out);

    std::vector<std::pair<std::string, fs::path>> runs;
    if (!compare.empty()) {
        if (compare.size() != 2) throw ConfigError("report: --compare takes exactly two run dirs");
        runs.emplace_back(fs::path(compare[0]).filename().string(), compare[0]);
        runs.emplace_back(fs::path(compare[1]).filename().string(), compare[1]);
    } else if (!run_dir.empty()) {
        runs.emplace_back(fs::path(run_dir).filename().string(), run_dir);
    } else {
        throw ConfigError("report: need --run DIR or --compare DIR DIR");
    }

    // Single-run reports keep the bare trajectory schema; compare mode
    // prefixes a run column to tell the two apart.
    const bool tagged = runs.size() > 1;
    CsvTable cap;
    cap.header = tagged
                     ? std::vector<std::string>{"run", "epoch", "modality", "capability", "upperbound"}
                     : std::vector<std::string>{"epoch", "modality", "capability", "upperbound"};
    for (const auto& [name, dir] : runs) {
        CsvTable probes = CsvTable::read_file((dir / "probes.csv").string());
        for (const auto& row : probes.rows) {
            if (tagged) {
                cap.rows.push_back({name, row[0], row[1], row[2], row[3]});
            } else {
                cap.rows.push_back({row[0], row[1], row[2], row[3]});
            }
        }
    }
    cap.write_file((out / "capability.csv").string());
    std::cout << "wrote " << (out / "capability.csv").string() << " (" << cap.rows.size()
              << " rows)\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shapley-guided multi-modal training harness"};
    app.require_subcommand(1);

    CommonArgs args;
    auto add_common = [&args](CLI::App* cmd) {
        cmd->add_option("--config", args.config_path, "config file (key = value under [sections])");
        cmd->add_option("--override", args.overrides, "override section.key=value (repeatable)");
        cmd->add_option("--seed", args.seed, "reseed the experiment (data and training)");
        cmd->add_option("--out", args.out_dir, "output directory (default runs/<config-hash>)");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate the synthetic dataset splits");
    add_common(gen);
    CLI::App* pre = app.add_subcommand("pretrain", "pretrain the frozen single-modality models");
    add_common(pre);
    CLI::App* train = app.add_subcommand("train", "run the full training pipeline");
    add_common(train);

    std::string run_dir, checkpoint;
    CLI::App* eval = app.add_subcommand("eval", "all-subset evaluation of a checkpoint");
    add_common(eval);
    eval->add_option("--run", run_dir, "run directory holding config.cfg and checkpoint");
    eval->add_option("--checkpoint", checkpoint, "checkpoint prefix");

    CLI::App* probe = app.add_subcommand("probe", "per-modality capability probes of a checkpoint");
    add_common(probe);
    probe->add_option("--run", run_dir, "run directory holding config.cfg and checkpoint");
    probe->add_option("--checkpoint", checkpoint, "checkpoint prefix");

    std::string game_path;
    int mc_permutations = 0;
    CLI::App* shap = app.add_subcommand("shapley", "attribution table of a characteristic function");
    add_common(shap);
    shap->add_option("--game", game_path, "game file: 'players = M' then 'bitmask value' lines")
        ->required();
    shap->add_option("--mc", mc_permutations, "also estimate with this many sampled permutations");

    CLI::App* ablate = app.add_subcommand("ablate", "run the component toggle grid (rows a..m)");
    add_common(ablate);

    std::vector<std::string> compare;
    CLI::App* report = app.add_subcommand("report", "assemble plot-ready tables from run logs");
    add_common(report);
    report->add_option("--run", run_dir, "run directory");
    report->add_option("--compare", compare, "two run directories to merge")->expected(2);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(args);
        if (pre->parsed()) return cmd_pretrain(args);
        if (train->parsed()) return cmd_train(args);
        if (eval->parsed()) return cmd_eval(args, run_dir, checkpoint);
        if (probe->parsed()) return cmd_probe(args, run_dir, checkpoint);
        if (shap->parsed()) return cmd_shapley(args, game_path, mc_permutations);
        if (ablate->parsed()) return cmd_ablate(args);
        if (report->parsed()) return cmd_report(args, run_dir, compare);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
