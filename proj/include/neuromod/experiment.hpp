#pragma once

// Experiment protocols behind the CLI verbs. Every protocol is a pure function
// of its config (and input checkpoints); file writing is kept separate so the
// protocols can be driven from tests.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neuromod/continual.hpp"
#include "neuromod/io.hpp"
#include "neuromod/merging.hpp"

namespace neuromod {

inline std::vector<TaskDataset> make_family(const RunConfig& cfg) {
    return gen_task_family(cfg.task_spec(), cfg.family_size);
}

/// Adapter for `cfg` on a family whose base map is `base_seed`. The shuffle
/// stream is derived from the same run seed.
inline AdapterState make_adapter(const RunConfig& cfg, std::uint64_t base_seed) {
    return init_adapter(cfg.adapter, cfg.seed, base_seed);
}

inline Rng shuffle_rng(const RunConfig& cfg) { return Rng(derive_seed(cfg.seed, Stream::shuffle)); }

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochMetrics> metrics;
    EvalResult final_eval;
};

inline json final_metrics_json(const EpochMetrics& m) {
    return json{{"eval_loss", m.eval_loss},
                {"eval_score", m.eval_score},
                {"task_loss", m.task_loss},
                {"orth_loss", m.orth_loss},
                {"total_loss", m.total_loss},
                {"epochs", m.epoch}};
}

inline json provenance_json(const RunConfig& cfg, const TaskDataset& ds, const json& final_metrics) {
    return json{{"config", experiment_json(cfg)},
                {"config_hash", config_hash(cfg)},
                {"task", {{"name", ds.name}, {"index", ds.task_index}, {"family_size", cfg.family_size}}},
                {"final_metrics", final_metrics}};
}

/// Trains on one task and packages the result with provenance.
inline TrainResult train_on(const RunConfig& cfg, const TaskDataset& ds) {
    AdapterState s = make_adapter(cfg, ds.base_seed);
    Rng rng = shuffle_rng(cfg);
    auto metrics = train_epochs(s, ds, cfg.loss_config(), cfg.optimizer, cfg.optimizer.epochs, rng);
    const EvalResult ev{metrics.back().eval_loss, metrics.back().eval_score};
    json prov = provenance_json(cfg, ds, final_metrics_json(metrics.back()));
    return {Checkpoint{std::move(s), std::move(prov)}, std::move(metrics), ev};
}

inline TrainResult run_train(const RunConfig& cfg) {
    cfg.validate();
    const auto family = make_family(cfg);
    return train_on(cfg, family.at(cfg.task_index));
}

/// Rebuilds the run config stored in a checkpoint's provenance.
inline RunConfig provenance_config(const Checkpoint& ck) {
    if (!ck.provenance.is_object() || !ck.provenance.contains("config")) {
        throw FormatError("checkpoint carries no run config in its provenance");
    }
    try {
        return parse_run_config(ck.provenance.at("config"));
    } catch (const ConfigError& e) {
        throw FormatError(std::string("checkpoint provenance config is invalid: ") + e.what());
    }
}

/// The task a checkpoint was trained on, regenerated from its provenance.
inline TaskDataset provenance_task(const Checkpoint& ck) {
    const RunConfig cfg = provenance_config(ck);
    return make_family(cfg).at(cfg.task_index);
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalReport {
    std::string task;
    EvalResult result;
    Vector utilization;
};

inline EvalReport run_eval(const Checkpoint& ck, const TaskDataset& ds) {
    EvalReport rep{ds.name, evaluate(ck.state, ds), {}};
    std::vector<std::vector<std::size_t>> active;
    for (const auto& smp : ds.eval) active.push_back(adapter_forward(ck.state, smp.x).trace.active);
    rep.utilization = expert_utilization(active, ck.state.config.r);
    return rep;
}

inline json to_json(const EvalReport& r) {
    return json{{"task", r.task},
                {"eval_loss", r.result.loss},
                {"eval_score", r.result.score},
                {"utilization", r.utilization}};
}

// ---------------------------------------------------------------------------
// merge
// ---------------------------------------------------------------------------

struct MergeTaskScore {
    std::string task;
    double individual = 0.0;      // source adapter on its own task
    double stored_individual = 0.0; // as recorded at training time
    double merged = 0.0;
    double relative_degradation = 0.0; // (individual - merged) / individual
};

struct MergeReport {
    MergeRecipe recipe;
    std::vector<MergeTaskScore> tasks;
    double mean_individual = 0.0;
    double mean_merged = 0.0;
    double mean_relative_degradation = 0.0;
    OverlapReport overlap;
    std::vector<double> offpair_cos2; // per source adapter
};

struct MergeResult {
    Checkpoint merged;
    MergeReport report;
};

/// Scaling used when the caller gives none: 1/T for task arithmetic (the
/// merged delta is then the mean delta), 1 for TIES whose disjoint mean is
/// already an average.
inline double default_scaling(MergeMethod m, std::size_t tasks) {
    return m == MergeMethod::task_arithmetic ? 1.0 / static_cast<double>(tasks) : 1.0;
}

inline constexpr double kDefaultTrimFraction = 0.2;

/// Merges adapters and scores the merged adapter on every source task.
/// `tasks[i]` is the task of `sources[i]`.
inline MergeResult merge_and_score(std::span<const Checkpoint> sources, std::span<const TaskDataset> tasks,
                                   const MergeRecipe& recipe) {
    if (sources.size() < 2) throw EmptyInputError("merging needs at least two checkpoints");
    if (tasks.size() != sources.size()) throw DimensionError("one task per source checkpoint is required");
    std::vector<AdapterState> states;
    for (const auto& c : sources) states.push_back(c.state);
    AdapterState merged = merge(states, recipe);

    MergeReport rep{recipe, {}, 0.0, 0.0, 0.0, subspace_overlap_report(states), {}};
    for (const auto& s : states) rep.offpair_cos2.push_back(mean_offpair_cos2(s.b));
    for (std::size_t i = 0; i < sources.size(); ++i) {
        MergeTaskScore ts;
        ts.task = tasks[i].name;
        ts.individual = evaluate(states[i], tasks[i]).score;
        ts.stored_individual = ts.individual;
        const auto& prov = sources[i].provenance;
        if (prov.is_object() && prov.contains("final_metrics") && prov.at("final_metrics").contains("eval_score")) {
            ts.stored_individual = prov.at("final_metrics").at("eval_score").get<double>();
        }
        ts.merged = evaluate(merged, tasks[i]).score;
        ts.relative_degradation = (ts.individual - ts.merged) / ts.individual;
        rep.mean_individual += ts.individual;
        rep.mean_merged += ts.merged;
        rep.mean_relative_degradation += ts.relative_degradation;
        rep.tasks.push_back(std::move(ts));
    }
    const double n = static_cast<double>(sources.size());
    rep.mean_individual /= n;
    rep.mean_merged /= n;
    rep.mean_relative_degradation /= n;

    json prov{{"merged_from", json::array()},
              {"method", to_string(recipe.method)},
              {"scaling", recipe.scaling},
              {"trim_fraction", recipe.trim_fraction}};
    for (const auto& c : sources) {
        prov["merged_from"].push_back(c.provenance.is_object() && c.provenance.contains("config_hash")
                                          ? c.provenance.at("config_hash")
                                          : json(nullptr));
    }
    return {Checkpoint{std::move(merged), std::move(prov)}, std::move(rep)};
}

/// CLI flavour: tasks are regenerated from each checkpoint's provenance.
inline MergeResult run_merge(std::span<const Checkpoint> sources, const MergeRecipe& recipe) {
    std::vector<TaskDataset> tasks;
    for (const auto& c : sources) tasks.push_back(provenance_task(c));
    return merge_and_score(sources, tasks, recipe);
}

inline json matrix_rows_json(const Matrix& m) {
    json a = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const auto r = m.row(i);
        a.push_back(std::vector<double>(r.begin(), r.end()));
    }
    return a;
}

inline json to_json(const MergeReport& r) {
    json tasks = json::array();
    for (const auto& t : r.tasks) {
        tasks.push_back({{"task", t.task},
                         {"individual_score", t.individual},
                         {"stored_individual_score", t.stored_individual},
                         {"merged_score", t.merged},
                         {"relative_degradation", t.relative_degradation},
                         {"relative_degradation_percent", 100.0 * t.relative_degradation}});
    }
    return json{{"method", to_string(r.recipe.method)},
                {"scaling", r.recipe.scaling},
                {"trim_fraction", r.recipe.trim_fraction},
                {"tasks", tasks},
                {"average",
                 {{"individual_score", r.mean_individual},
                  {"merged_score", r.mean_merged},
                  {"relative_degradation", r.mean_relative_degradation},
                  {"relative_degradation_percent", 100.0 * r.mean_relative_degradation}}},
                {"overlap", {{"cross", matrix_rows_json(r.overlap.cross)}, {"matched", matrix_rows_json(r.overlap.matched)}}},
                {"offpair_cos2", r.offpair_cos2}};
}

// ---------------------------------------------------------------------------
// continual
// ---------------------------------------------------------------------------

inline ContinualResult run_continual(const RunConfig& cfg) {
    cfg.validate();
    const auto family = make_family(cfg);
    std::vector<TaskDataset> order;
    for (std::size_t i : cfg.resolved_sequence()) order.push_back(family.at(i));
    if (order.size() < 2) throw ConfigError("continual runs need at least two tasks in the sequence");
    AdapterState s = make_adapter(cfg, family.front().base_seed);
    Rng rng = shuffle_rng(cfg);
    return run_sequence(s, order, cfg.loss_config(), cfg.optimizer, rng);
}

inline json to_json(const ContinualResult& r, const RunConfig& cfg) {
    const std::size_t t = r.accuracy.tasks();
    json matrix = json::array();
    for (std::size_t j = 0; j < t; ++j) {
        json row = json::array();
        for (std::size_t i = 0; i < t; ++i) {
            const auto v = r.accuracy.get(j, i);
            row.push_back(v ? json(*v) : json(nullptr));
        }
        matrix.push_back(row);
    }
    json stages = json::array();
    for (const auto& st : r.stages) {
        json epochs = json::array();
        for (const auto& e : st.epochs) epochs.push_back(to_json(e));
        stages.push_back({{"stage", st.stage}, {"task", st.task}, {"epochs", epochs}});
    }
    json seq = json::array();
    for (std::size_t i : cfg.resolved_sequence()) seq.push_back(i);
    return json{{"variant", to_string(cfg.adapter.variant)},
                {"sequence", seq},
                {"accuracy_matrix", matrix},
                {"bwt", r.bwt ? json(*r.bwt) : json(nullptr)},
                {"stages", stages},
                {"config", experiment_json(cfg)},
                {"config_hash", config_hash(cfg)}};
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

enum class Sweep { gate, lambda, k, dh };

inline std::string to_string(Sweep s) {
    switch (s) {
    case Sweep::gate: return "gate";
    case Sweep::lambda: return "lambda";
    case Sweep::k: return "k";
    case Sweep::dh: return "dh";
    }
    return "?";
}

inline Sweep parse_sweep(std::string_view s) {
    if (s == "gate") return Sweep::gate;
    if (s == "lambda") return Sweep::lambda;
    if (s == "k") return Sweep::k;
    if (s == "dh") return Sweep::dh;
    throw ConfigError("unknown sweep '" + std::string(s) + "' (expected gate, lambda, k or dh)");
}

struct SweepCell {
    std::string label;
    RunConfig config; // replicate 0; replicates shift both seeds
};

/// Grid of one sweep around `base`.
inline std::vector<SweepCell> sweep_cells(const RunConfig& base, Sweep sweep) {
    std::vector<SweepCell> cells;
    auto add = [&](std::string label, auto&& edit) {
        RunConfig c = base;
        edit(c);
        cells.push_back({std::move(label), std::move(c)});
    };
    switch (sweep) {
    case Sweep::gate:
        for (Variant v : {Variant::neurolora, Variant::flylora, Variant::static_gate, Variant::trainable_a}) {
            add(to_string(v), [&](RunConfig& c) { c.adapter.variant = v; });
        }
        break;
    case Sweep::lambda:
        for (double l : {0.0, 0.01, 0.05, 0.1, 0.2}) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "lambda=%g", l);
            add(buf, [&](RunConfig& c) { c.loss.lambda = l; });
        }
        break;
    case Sweep::k:
        for (std::size_t k : {4, 8, 12, 16}) {
            add("k=" + std::to_string(k), [&](RunConfig& c) { c.adapter.k = k; });
        }
        break;
    case Sweep::dh: {
        const std::size_t h = base.adapter.d_h;
        for (std::size_t d : {std::max<std::size_t>(1, h / 2), h, 2 * h}) {
            add("d_h=" + std::to_string(d), [&](RunConfig& c) { c.adapter.d_h = d; });
        }
        break;
    }
    }
    for (auto& c : cells) c.config.validate();
    return cells;
}

inline RunConfig replicate_config(const RunConfig& c, std::size_t replicate) {
    RunConfig r = c;
    r.seed = c.seed + replicate;
    r.task.seed = c.task.seed + replicate;
    return r;
}

struct AblationCell {
    std::string label;
    std::vector<double> scores;
    std::vector<double> losses;
    double mean_score = 0.0;
    double mean_loss = 0.0;
};

struct AblationReport {
    Sweep sweep;
    std::size_t replicates = 0;
    std::vector<AblationCell> cells;
};

inline AblationReport run_ablate(const RunConfig& base, Sweep sweep, std::size_t replicates) {
    if (replicates < 1) throw ConfigError("ablation needs at least one replicate");
    base.validate();
    AblationReport rep{sweep, replicates, {}};
    for (const auto& cell : sweep_cells(base, sweep)) {
        AblationCell out{cell.label, {}, {}, 0.0, 0.0};
        for (std::size_t i = 0; i < replicates; ++i) {
            const auto res = run_train(replicate_config(cell.config, i));
            out.scores.push_back(res.final_eval.score);
            out.losses.push_back(res.final_eval.loss);
        }
        for (std::size_t i = 0; i < replicates; ++i) {
            out.mean_score += out.scores[i];
            out.mean_loss += out.losses[i];
        }
        out.mean_score /= static_cast<double>(replicates);
        out.mean_loss /= static_cast<double>(replicates);
        rep.cells.push_back(std::move(out));
    }
    return rep;
}

inline json to_json(const AblationReport& r) {
    json cells = json::array();
    for (const auto& c : r.cells) {
        cells.push_back({{"cell", c.label},
                         {"mean_eval_score", c.mean_score},
                         {"mean_eval_loss", c.mean_loss},
                         {"eval_scores", c.scores},
                         {"eval_losses", c.losses}});
    }
    return json{{"sweep", to_string(r.sweep)}, {"replicates", r.replicates}, {"cells", cells}};
}

inline std::string ablation_table(const AblationReport& r) {
    std::size_t w = 4;
    for (const auto& c : r.cells) w = std::max(w, c.label.size());
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-*s  %14s  %14s\n", static_cast<int>(w), "cell", "mean_score", "mean_loss");
    out += buf;
    for (const auto& c : r.cells) {
        std::snprintf(buf, sizeof buf, "%-*s  %14.6f  %14.6e\n", static_cast<int>(w), c.label.c_str(), c.mean_score,
                      c.mean_loss);
        out += buf;
    }
    return out;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

inline std::string inspect_summary(const Checkpoint& ck) {
    const auto& s = ck.state;
    const auto& c = s.config;
    std::string out;
    char buf[256];
    auto line = [&](const char* fmt, auto... args) {
        std::snprintf(buf, sizeof buf, fmt, args...);
        out += buf;
        out += '\n';
    };
    line("variant          %s", to_string(c.variant).c_str());
    line("shape            d_in=%zu d_out=%zu r=%zu k=%zu d_h=%zu alpha=%g", c.d_in, c.d_out, c.r, c.k, c.d_h,
         c.alpha);
    line("projection       seed=%s rho=%g nnz=%zu hash=%s", format_u64(s.projection.seed()).c_str(),
         s.projection.rho(), s.projection.entries().size(), hex64(s.projection.content_hash()).c_str());
    line("base             seed=%s", format_u64(s.base_seed).c_str());
    double dn = 0.0;
    for (double v : task_delta(s).flat()) dn += v * v;
    line("B                |B|=%.6g |B-B_init|=%.6g offpair_cos2=%.6g", norm2(s.b.flat()), std::sqrt(dn),
         mean_offpair_cos2(s.b));
    if (s.gate) {
        line("gate             |W1|=%.6g |W2|=%.6g mean_gamma=%.6g mean_beta=%.6g", norm2(s.gate->w1.flat()),
             norm2(s.gate->w2.flat()),
             std::accumulate(s.gate->gamma.begin(), s.gate->gamma.end(), 0.0) / static_cast<double>(c.r),
             std::accumulate(s.gate->beta.begin(), s.gate->beta.end(), 0.0) / static_cast<double>(c.r));
    } else {
        line("%s", "gate             none");
    }
    const auto& p = ck.provenance;
    if (p.is_object() && p.contains("config_hash")) {
        line("config_hash      %s", p.at("config_hash").get<std::string>().c_str());
    }
    if (p.is_object() && p.contains("task")) line("task             %s", p.at("task").at("name").get<std::string>().c_str());
    if (p.is_object() && p.contains("final_metrics")) {
        const auto& m = p.at("final_metrics");
        line("final            eval_score=%.6f eval_loss=%.6e", m.at("eval_score").get<double>(),
             m.at("eval_loss").get<double>());
    }
    if (p.is_object() && p.contains("merged_from")) {
        line("merged           method=%s from %zu checkpoints", p.at("method").get<std::string>().c_str(),
             p.at("merged_from").size());
    }
    return out;
}

// ---------------------------------------------------------------------------
// output files
// ---------------------------------------------------------------------------

struct TrainFiles {
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
    std::filesystem::path config;
};

inline TrainFiles write_train_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const TrainResult& r) {
    std::filesystem::create_directories(dir);
    TrainFiles f{dir / "checkpoint.json", dir / "metrics.jsonl", dir / "config.resolved.json"};
    save_checkpoint(f.checkpoint.string(), r.checkpoint);
    write_text_file(f.metrics.string(), metrics_jsonl(r.metrics));
    write_text_file(f.config.string(), to_json(cfg).dump(2) + "\n");
    return f;
}

} // namespace neuromod
