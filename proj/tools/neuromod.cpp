// neuromod command-line driver.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage / config / format error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "neuromod.hpp"

namespace fs = std::filesystem;
using namespace neuromod;

namespace {

struct Common {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    bool quiet = false;
};

std::optional<std::uint64_t> env_seed() {
    const char* v = std::getenv("NEUROMOD_SEED");
    if (v == nullptr || *v == '\0') return std::nullopt;
    try {
        return parse_u64(v);
    } catch (const FormatError&) {
        throw ConfigError(std::string("NEUROMOD_SEED is not an unsigned integer: '") + v + "'");
    }
}

/// Seed precedence: --seed, then the config's "seed", then NEUROMOD_SEED,
/// then the built-in default.
RunConfig load_config(const std::string& path, const Common& common, const std::optional<std::string>& variant) {
    json j = json::object();
    if (!path.empty()) j = parse_json_text(read_text_file(path), path);
    if (variant) {
        if (!j.is_object()) throw ConfigError("config must be a JSON object");
        j["variant"] = *variant;
    }
    RunConfig cfg = parse_run_config(j, env_seed());
    if (common.seed) cfg.seed = *common.seed;
    if (common.out_dir) cfg.out_dir = *common.out_dir;
    cfg.validate();
    return cfg;
}

void say(const Common& c, const std::string& msg) {
    if (!c.quiet) std::cout << msg << '\n';
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--seed", c.seed, "run seed (overrides config and NEUROMOD_SEED)");
    cmd->add_option("--out-dir", c.out_dir, "output directory (overrides config out_dir)");
    cmd->add_flag("--quiet,-q", c.quiet, "suppress progress output");
}

int cmd_train(const std::string& config, const Common& common, const std::optional<std::string>& variant) {
    const RunConfig cfg = load_config(config, common, variant);
    say(common, "train: variant=" + to_string(cfg.adapter.variant) + " seed=" + std::to_string(cfg.seed) +
                    " config_hash=" + config_hash(cfg));
    const auto res = run_train(cfg);
    for (const auto& m : res.metrics) {
        say(common, "  epoch " + std::to_string(m.epoch) + " task_loss=" + fmt("%.6e", m.task_loss) +
                        " orth_loss=" + fmt("%.6e", m.orth_loss) + " eval_score=" + fmt("%.6f", m.eval_score));
    }
    const auto files = write_train_outputs(cfg.out_dir, cfg, res);
    say(common, "wrote " + files.checkpoint.string() + ", " + files.metrics.string() + ", " + files.config.string());
    return 0;
}

int cmd_merge(const std::vector<std::string>& paths, const std::string& method, std::optional<double> scaling,
              double trim, const Common& common) {
    MergeRecipe recipe;
    try {
        recipe.method = parse_merge_method(method);
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    recipe.scaling = scaling.value_or(default_scaling(recipe.method, paths.size()));
    recipe.trim_fraction = trim;
    try {
        recipe.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(e.what());
    }
    std::vector<Checkpoint> sources;
    for (const auto& p : paths) sources.push_back(load_checkpoint(p));
    const auto res = run_merge(sources, recipe);

    const fs::path dir = common.out_dir.value_or("runs/merge");
    fs::create_directories(dir);
    save_checkpoint((dir / "checkpoint.json").string(), res.merged);
    json report = to_json(res.report);
    report["sources"] = paths;
    write_text_file((dir / "merge_report.json").string(), report.dump(2) + "\n");
    for (const auto& t : res.report.tasks) {
        say(common, t.task + ": individual=" + fmt("%.6f", t.individual) + " merged=" + fmt("%.6f", t.merged) +
                        " degradation=" + fmt("%.3f%%", 100.0 * t.relative_degradation));
    }
    say(common, "average degradation " + fmt("%.3f%%", 100.0 * res.report.mean_relative_degradation));
    say(common, "wrote " + (dir / "checkpoint.json").string() + ", " + (dir / "merge_report.json").string());
    return 0;
}

int cmd_continual(const std::string& config, const Common& common, const std::optional<std::string>& variant) {
    const RunConfig cfg = load_config(config, common, variant);
    const auto res = run_continual(cfg);
    fs::create_directories(cfg.out_dir);
    const fs::path out = fs::path(cfg.out_dir) / "continual_report.json";
    write_text_file(out.string(), to_json(res, cfg).dump(2) + "\n");
    for (std::size_t j = 0; j < res.accuracy.tasks(); ++j) {
        std::string row = "  after stage " + std::to_string(j) + ":";
        for (std::size_t i = 0; i <= j; ++i) row += " " + fmt("%.6f", *res.accuracy.get(j, i));
        say(common, row);
    }
    say(common, "BWT " + (res.bwt ? fmt("%.6e", *res.bwt) : std::string("n/a")));
    say(common, "wrote " + out.string());
    return 0;
}

int cmd_ablate(const std::string& config, const std::string& sweep_name, std::size_t replicates,
               const Common& common) {
    const Sweep sweep = parse_sweep(sweep_name);
    const RunConfig cfg = load_config(config, common, std::nullopt);
    const auto rep = run_ablate(cfg, sweep, replicates);
    fs::create_directories(cfg.out_dir);
    const fs::path base = fs::path(cfg.out_dir) / ("ablation_" + to_string(sweep));
    json j = to_json(rep);
    j["config"] = experiment_json(cfg);
    j["config_hash"] = config_hash(cfg);
    write_text_file(base.string() + ".json", j.dump(2) + "\n");
    const auto table = ablation_table(rep);
    write_text_file(base.string() + ".txt", table);
    if (!common.quiet) std::cout << table;
    say(common, "wrote " + base.string() + ".json, " + base.string() + ".txt");
    return 0;
}

int cmd_eval(const std::string& path, const std::string& config, const Common& common) {
    const Checkpoint ck = load_checkpoint(path);
    TaskDataset ds;
    if (config.empty()) {
        ds = provenance_task(ck);
    } else {
        const RunConfig cfg = load_config(config, common, std::nullopt);
        ds = make_family(cfg).at(cfg.task_index);
    }
    const json report = to_json(run_eval(ck, ds));
    if (common.out_dir) {
        fs::create_directories(*common.out_dir);
        write_text_file((fs::path(*common.out_dir) / "eval.json").string(), report.dump(2) + "\n");
    }
    std::cout << report.dump(2) << '\n';
    return 0;
}

int cmd_inspect(const std::string& path) {
    std::cout << inspect_summary(load_checkpoint(path));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"neuromod: neuromodulated sparse-expert adapters on synthetic tasks"};
    app.require_subcommand(1);

    Common common;
    std::string config;
    std::optional<std::string> variant;

    auto* train = app.add_subcommand("train", "train one adapter on one task");
    train->add_option("config", config, "run config JSON (defaults if omitted)")->check(CLI::ExistingFile);
    train->add_option("--variant", variant, "neurolora, flylora, static_gate or trainable_a");
    add_common(train, common);

    std::vector<std::string> ckpts;
    std::string method = "task_arithmetic";
    std::optional<double> scaling;
    double trim = kDefaultTrimFraction;
    auto* merge_cmd = app.add_subcommand("merge", "merge adapters that share a frozen projection");
    merge_cmd->add_option("checkpoints", ckpts, "checkpoint files")->required()->expected(2, -1)->check(
        CLI::ExistingFile);
    merge_cmd->add_option("--method", method, "task_arithmetic or ties")->capture_default_str();
    merge_cmd->add_option("--scaling", scaling, "merge coefficient (default 1/T for task_arithmetic, 1 for ties)");
    merge_cmd->add_option("--trim", trim, "TIES: fraction of each delta kept")->capture_default_str();
    add_common(merge_cmd, common);

    auto* continual = app.add_subcommand("continual", "train sequentially on a task family and report BWT");
    continual->add_option("config", config, "run config JSON")->check(CLI::ExistingFile);
    continual->add_option("--variant", variant, "adapter variant");
    add_common(continual, common);

    std::string sweep;
    std::size_t replicates = 3;
    auto* ablate = app.add_subcommand("ablate", "sweep one factor and tabulate final eval scores");
    ablate->add_option("config", config, "base run config JSON")->check(CLI::ExistingFile);
    ablate->add_option("--sweep", sweep, "gate, lambda, k or dh")->required();
    ablate->add_option("--replicates", replicates, "seed replicates per cell")->capture_default_str();
    add_common(ablate, common);

    std::string ckpt;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on its task's eval split");
    eval->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", config, "score on the task of this config instead")->check(CLI::ExistingFile);
    add_common(eval, common);

    auto* inspect = app.add_subcommand("inspect", "print a checkpoint summary");
    inspect->add_option("checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*train) return cmd_train(config, common, variant);
        if (*merge_cmd) return cmd_merge(ckpts, method, scaling, trim, common);
        if (*continual) return cmd_continual(config, common, variant);
        if (*ablate) return cmd_ablate(config, sweep, replicates, common);
        if (*eval) return cmd_eval(ckpt, config, common);
        if (*inspect) return cmd_inspect(ckpt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << '\n';
        return 2;
    } catch (const IncompatibleError& e) {
        std::cerr << "incompatible checkpoints: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
