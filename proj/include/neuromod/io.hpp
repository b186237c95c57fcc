#pragma once

// JSON persistence: run configs, checkpoints and dataset dumps.
//
// Checkpoints store every float as a decimal string with 17 significant digits
// so that f64 values survive any JSON reader unchanged, and 64-bit seeds as
// decimal strings for the same reason. Objects are written with sorted keys,
// which makes load -> save byte-identical.

#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "neuromod/adapter.hpp"
#include "neuromod/error.hpp"
#include "neuromod/losses.hpp"
#include "neuromod/optim.hpp"
#include "neuromod/tasks.hpp"

namespace neuromod {

using json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointFormat = "neuromod-checkpoint";

// ---------------------------------------------------------------------------
// Scalars
// ---------------------------------------------------------------------------

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v)) {
        throw FormatError("invalid float literal '" + s + "'");
    }
    return v;
}

inline std::string format_u64(std::uint64_t v) { return std::to_string(v); }

inline std::uint64_t parse_u64(const std::string& s) {
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
        throw FormatError("invalid unsigned integer '" + s + "'");
    }
    errno = 0;
    const unsigned long long v = std::strtoull(s.c_str(), nullptr, 10);
    if (errno == ERANGE) throw FormatError("integer out of range '" + s + "'");
    return v;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

inline json vector_to_json(std::span<const double> v) {
    json a = json::array();
    for (double x : v) a.push_back(format_double(x));
    return a;
}

inline Vector vector_from_json(const json& j, std::size_t expected, const char* what) {
    if (!j.is_array()) throw FormatError(std::string(what) + ": expected an array");
    if (j.size() != expected) {
        throw FormatError(std::string(what) + ": expected " + std::to_string(expected) + " values, got " +
                          std::to_string(j.size()));
    }
    Vector v;
    v.reserve(j.size());
    for (const auto& e : j) {
        if (!e.is_string()) throw FormatError(std::string(what) + ": floats must be stored as strings");
        v.push_back(parse_double(e.get<std::string>()));
    }
    return v;
}

inline json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", vector_to_json(m.flat())}};
}

inline Matrix matrix_from_json(const json& j, std::size_t rows, std::size_t cols, const char* what) {
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data")) {
        throw FormatError(std::string(what) + ": expected {rows, cols, data}");
    }
    if (j.at("rows").get<std::size_t>() != rows || j.at("cols").get<std::size_t>() != cols) {
        throw FormatError(std::string(what) + ": shape mismatch, expected " + Matrix::shape_string(rows, cols));
    }
    return Matrix(rows, cols, vector_from_json(j.at("data"), rows * cols, what));
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Fully resolved configuration of one run. `adapter.d_in/d_out` also fix the
/// task dimensions.
struct RunConfig {
    std::uint64_t seed = 7;
    AdapterConfig adapter;
    LossConfig loss;
    OptimizerConfig optimizer;
    TaskSpec task;
    std::size_t family_size = 1;
    std::size_t task_index = 0;
    std::vector<std::size_t> sequence; // continual order; empty means 0..family_size-1
    std::string out_dir = "runs";

    std::vector<std::size_t> resolved_sequence() const {
        if (!sequence.empty()) return sequence;
        std::vector<std::size_t> s(family_size);
        for (std::size_t i = 0; i < family_size; ++i) s[i] = i;
        return s;
    }

    /// Throws ConfigError with the underlying message.
    void validate() const {
        try {
            adapter.validate();
            loss.validate();
            optimizer.validate();
            TaskSpec t = task;
            t.d_in = adapter.d_in;
            t.d_out = adapter.d_out;
            t.validate();
            if (family_size < 1) throw ParameterError("task.family_size must be >= 1");
            if (task_index >= family_size) throw ParameterError("task.index must be < task.family_size");
            if (family_size * task.clusters > adapter.d_in) {
                throw ParameterError("task.family_size * task.clusters must not exceed d_in");
            }
            for (std::size_t i : sequence) {
                if (i >= family_size) throw ParameterError("continual.sequence entries must be < task.family_size");
            }
            if (optimizer.epochs < 1) throw ParameterError("optimizer.epochs must be >= 1");
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }

    TaskSpec task_spec() const {
        TaskSpec t = task;
        t.d_in = adapter.d_in;
        t.d_out = adapter.d_out;
        return t;
    }

    LossConfig loss_config() const {
        LossConfig l = loss;
        l.task_loss = task.kind == TaskKind::regression ? TaskLossKind::mean_squared_error
                                                        : TaskLossKind::softmax_cross_entropy;
        return l;
    }
};

inline json to_json(const RunConfig& c) {
    json seq = json::array();
    for (std::size_t i : c.sequence) seq.push_back(i);
    return json{
        {"seed", c.seed},
        {"variant", to_string(c.adapter.variant)},
        {"adapter",
         {{"d_in", c.adapter.d_in},
          {"d_out", c.adapter.d_out},
          {"r", c.adapter.r},
          {"k", c.adapter.k},
          {"alpha", c.adapter.alpha},
          {"rho", c.adapter.rho},
          {"d_h", c.adapter.d_h}}},
        {"loss", {{"lambda", c.loss.lambda}}},
        {"optimizer",
         {{"lr_b", c.optimizer.lr_b},
          {"lr_gate", c.optimizer.lr_gate},
          {"beta1", c.optimizer.beta1},
          {"beta2", c.optimizer.beta2},
          {"weight_decay", c.optimizer.weight_decay},
          {"warmup_ratio", c.optimizer.warmup_ratio},
          {"epsilon", c.optimizer.epsilon},
          {"batch_size", c.optimizer.batch_size},
          {"grad_accum", c.optimizer.grad_accum},
          {"epochs", c.optimizer.epochs}}},
        {"task",
         {{"seed", c.task.seed},
          {"kind", to_string(c.task.kind)},
          {"clusters", c.task.clusters},
          {"n_train_per_cluster", c.task.n_train_per_cluster},
          {"n_eval_per_cluster", c.task.n_eval_per_cluster},
          {"noise", c.task.noise},
          {"delta_rank", c.task.delta_rank},
          {"delta_scale", c.task.delta_scale},
          {"family_size", c.family_size},
          {"index", c.task_index}}},
        {"continual", {{"sequence", seq}}},
        {"out_dir", c.out_dir},
    };
}

namespace detail {

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown config key '" + (where.empty() ? key : where + "." + key) + "'");
    }
}

template <typename T>
void read_key(const json& obj, const char* key, T& dst, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        const auto& v = obj.at(key);
        if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
            if (!v.is_number_unsigned()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, double>) {
            if (!v.is_number()) throw ConfigError("");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigError("");
        }
        dst = v.get<T>();
    } catch (const std::exception&) {
        throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
    }
}

} // namespace detail

/// Parses a (possibly partial) config; missing keys keep their defaults,
/// unknown keys are rejected. When the config has no "seed", `fallback_seed`
/// (typically from NEUROMOD_SEED) is used if given.
inline RunConfig parse_run_config(const json& j, std::optional<std::uint64_t> fallback_seed = std::nullopt) {
    using detail::read_key;
    using detail::reject_unknown;
    RunConfig c;
    reject_unknown(j, {"seed", "variant", "adapter", "loss", "optimizer", "task", "continual", "out_dir"}, "");
    if (j.contains("seed")) {
        read_key(j, "seed", c.seed, "");
    } else if (fallback_seed) {
        c.seed = *fallback_seed;
    }
    if (j.contains("variant")) {
        std::string v;
        read_key(j, "variant", v, "");
        try {
            c.adapter.variant = parse_variant(v);
        } catch (const ParameterError& e) {
            throw ConfigError(e.what());
        }
    }
    if (j.contains("adapter")) {
        const auto& a = j.at("adapter");
        reject_unknown(a, {"d_in", "d_out", "r", "k", "alpha", "rho", "d_h"}, "adapter");
        read_key(a, "d_in", c.adapter.d_in, "adapter");
        read_key(a, "d_out", c.adapter.d_out, "adapter");
        read_key(a, "r", c.adapter.r, "adapter");
        read_key(a, "k", c.adapter.k, "adapter");
        read_key(a, "alpha", c.adapter.alpha, "adapter");
        read_key(a, "rho", c.adapter.rho, "adapter");
        read_key(a, "d_h", c.adapter.d_h, "adapter");
    }
    if (j.contains("loss")) {
        reject_unknown(j.at("loss"), {"lambda"}, "loss");
        read_key(j.at("loss"), "lambda", c.loss.lambda, "loss");
    }
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        reject_unknown(o,
                       {"lr_b", "lr_gate", "beta1", "beta2", "weight_decay", "warmup_ratio", "epsilon", "batch_size",
                        "grad_accum", "epochs"},
                       "optimizer");
        read_key(o, "lr_b", c.optimizer.lr_b, "optimizer");
        read_key(o, "lr_gate", c.optimizer.lr_gate, "optimizer");
        read_key(o, "beta1", c.optimizer.beta1, "optimizer");
        read_key(o, "beta2", c.optimizer.beta2, "optimizer");
        read_key(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
        read_key(o, "warmup_ratio", c.optimizer.warmup_ratio, "optimizer");
        read_key(o, "epsilon", c.optimizer.epsilon, "optimizer");
        read_key(o, "batch_size", c.optimizer.batch_size, "optimizer");
        read_key(o, "grad_accum", c.optimizer.grad_accum, "optimizer");
        read_key(o, "epochs", c.optimizer.epochs, "optimizer");
    }
    if (j.contains("task")) {
        const auto& t = j.at("task");
        reject_unknown(t,
                       {"seed", "kind", "clusters", "n_train_per_cluster", "n_eval_per_cluster", "noise", "delta_rank",
                        "delta_scale", "family_size", "index"},
                       "task");
        read_key(t, "seed", c.task.seed, "task");
        if (t.contains("kind")) {
            std::string k;
            read_key(t, "kind", k, "task");
            try {
                c.task.kind = parse_task_kind(k);
            } catch (const ParameterError& e) {
                throw ConfigError(e.what());
            }
        }
        read_key(t, "clusters", c.task.clusters, "task");
        read_key(t, "n_train_per_cluster", c.task.n_train_per_cluster, "task");
        read_key(t, "n_eval_per_cluster", c.task.n_eval_per_cluster, "task");
        read_key(t, "noise", c.task.noise, "task");
        read_key(t, "delta_rank", c.task.delta_rank, "task");
        read_key(t, "delta_scale", c.task.delta_scale, "task");
        read_key(t, "family_size", c.family_size, "task");
        read_key(t, "index", c.task_index, "task");
    }
    if (j.contains("continual")) {
        const auto& ct = j.at("continual");
        reject_unknown(ct, {"sequence"}, "continual");
        if (ct.contains("sequence")) {
            const auto& seq = ct.at("sequence");
            if (!seq.is_array()) throw ConfigError("continual.sequence must be an array of task indices");
            for (const auto& e : seq) {
                if (!e.is_number_unsigned()) throw ConfigError("continual.sequence entries must be unsigned integers");
                c.sequence.push_back(e.get<std::size_t>());
            }
        }
    }
    read_key(j, "out_dir", c.out_dir, "");
    c.task.d_in = c.adapter.d_in;
    c.task.d_out = c.adapter.d_out;
    c.validate();
    return c;
}

/// The config minus where its outputs go; two runs that differ only in
/// out_dir are the same experiment and produce byte-identical artifacts.
inline json experiment_json(const RunConfig& c) {
    json j = to_json(c);
    j.erase("out_dir");
    return j;
}

inline std::string config_hash(const RunConfig& c) { return hex64(fnv1a(experiment_json(c).dump())); }

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
    AdapterState state;
    json provenance = json::object(); // resolved config, config hash, final metrics
};

inline json adapter_config_to_json(const AdapterConfig& c) {
    return json{{"d_in", c.d_in},     {"d_out", c.d_out},
                {"r", c.r},           {"k", c.k},
                {"alpha", format_double(c.alpha)},
                {"rho", format_double(c.rho)},
                {"variant", to_string(c.variant)},
                {"d_h", c.d_h}};
}

inline AdapterConfig adapter_config_from_json(const json& j) {
    AdapterConfig c;
    try {
        c.d_in = j.at("d_in").get<std::size_t>();
        c.d_out = j.at("d_out").get<std::size_t>();
        c.r = j.at("r").get<std::size_t>();
        c.k = j.at("k").get<std::size_t>();
        c.alpha = parse_double(j.at("alpha").get<std::string>());
        c.rho = parse_double(j.at("rho").get<std::string>());
        c.variant = parse_variant(j.at("variant").get<std::string>());
        c.d_h = j.at("d_h").get<std::size_t>();
        c.validate();
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid adapter config in checkpoint: ") + e.what());
    }
    return c;
}

inline json checkpoint_to_json(const Checkpoint& ck) {
    const auto& s = ck.state;
    json j;
    j["format"] = kCheckpointFormat;
    j["format_version"] = kCheckpointVersion;
    j["adapter"] = adapter_config_to_json(s.config);
    j["projection"] = {{"seed", format_u64(s.projection.seed())},
                       {"rho", format_double(s.projection.rho())},
                       {"r", s.projection.rows()},
                       {"d_in", s.projection.cols()},
                       {"content_hash", hex64(s.projection.content_hash())}};
    j["base"] = {{"seed", format_u64(s.base_seed)}, {"d_out", s.w0.rows()}, {"d_in", s.w0.cols()}};
    j["B"] = matrix_to_json(s.b);
    j["B_init"] = matrix_to_json(s.b_init);
    if (s.gate) {
        j["gate"] = {{"W1", matrix_to_json(s.gate->w1)},
                     {"W2", matrix_to_json(s.gate->w2)},
                     {"gamma", vector_to_json(s.gate->gamma)},
                     {"beta", vector_to_json(s.gate->beta)}};
    } else {
        j["gate"] = nullptr;
    }
    j["static_m"] = s.static_m.empty() ? json(nullptr) : vector_to_json(s.static_m);
    j["A_dense"] = s.dense_a ? matrix_to_json(*s.dense_a) : json(nullptr);
    j["provenance"] = ck.provenance;
    return j;
}

/// Rebuilds the adapter, regenerating A and W0 from their seeds. The
/// regenerated projection must reproduce the stored content hash.
inline Checkpoint checkpoint_from_json(const json& j) {
    try {
        if (!j.is_object() || j.value("format", std::string{}) != kCheckpointFormat) {
            throw FormatError("not a neuromod checkpoint");
        }
        if (j.at("format_version").get<int>() != kCheckpointVersion) {
            throw FormatError("unsupported checkpoint version " + j.at("format_version").dump());
        }
        const AdapterConfig cfg = adapter_config_from_json(j.at("adapter"));
        const auto& pj = j.at("projection");
        SparseTernaryProjection proj(parse_u64(pj.at("seed").get<std::string>()),
                                     parse_double(pj.at("rho").get<std::string>()), pj.at("r").get<std::size_t>(),
                                     pj.at("d_in").get<std::size_t>());
        if (hex64(proj.content_hash()) != pj.at("content_hash").get<std::string>()) {
            throw FormatError("regenerated projection does not match the stored content hash");
        }
        const auto& bj = j.at("base");
        const std::uint64_t base_seed = parse_u64(bj.at("seed").get<std::string>());
        Checkpoint ck{AdapterState{cfg, std::move(proj), std::nullopt, {}, {}, std::nullopt, {}, base_seed,
                                   base_weights(base_seed, bj.at("d_out").get<std::size_t>(),
                                                bj.at("d_in").get<std::size_t>())},
                      j.at("provenance")};
        auto& s = ck.state;
        s.b = matrix_from_json(j.at("B"), cfg.d_out, cfg.r, "B");
        s.b_init = matrix_from_json(j.at("B_init"), cfg.d_out, cfg.r, "B_init");
        if (!j.at("gate").is_null()) {
            const auto& g = j.at("gate");
            s.gate = GateParams{matrix_from_json(g.at("W1"), cfg.d_h, cfg.d_in, "gate.W1"),
                                matrix_from_json(g.at("W2"), cfg.r, cfg.d_h, "gate.W2"),
                                vector_from_json(g.at("gamma"), cfg.r, "gate.gamma"),
                                vector_from_json(g.at("beta"), cfg.r, "gate.beta")};
        }
        if (!j.at("static_m").is_null()) s.static_m = vector_from_json(j.at("static_m"), cfg.r, "static_m");
        if (!j.at("A_dense").is_null()) s.dense_a = matrix_from_json(j.at("A_dense"), cfg.r, cfg.d_in, "A_dense");
        s.validate();
        return ck;
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what());
    }
}

inline std::string dump_checkpoint(const Checkpoint& ck) { return checkpoint_to_json(ck).dump(2) + "\n"; }

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    out << text;
    if (!out) throw Error("failed writing '" + path + "'");
}

inline json parse_json_text(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("'" + source + "' is not valid JSON: " + e.what());
    }
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) { write_text_file(path, dump_checkpoint(ck)); }

inline Checkpoint load_checkpoint(const std::string& path) {
    const auto text = read_text_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("'" + path + "' is not valid JSON: " + e.what());
    }
    return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------
// Metrics and datasets
// ---------------------------------------------------------------------------

inline json to_json(const EpochMetrics& m) {
    return json{{"epoch", m.epoch},
                {"task_loss", m.task_loss},
                {"orth_loss", m.orth_loss},
                {"total_loss", m.total_loss},
                {"eval_loss", m.eval_loss},
                {"eval_score", m.eval_score},
                {"utilization", m.utilization},
                {"lr", m.lr},
                {"steps", m.steps}};
}

/// One JSON object per line.
inline std::string metrics_jsonl(std::span<const EpochMetrics> metrics) {
    std::string out;
    for (const auto& m : metrics) out += to_json(m).dump() + "\n";
    return out;
}

inline json dataset_to_json(const TaskDataset& ds) {
    auto samples = [&](const std::vector<Sample>& v) {
        json a = json::array();
        for (const auto& s : v) {
            json e{{"x", vector_to_json(s.x)}, {"cluster", s.cluster}};
            if (ds.spec.kind == TaskKind::regression) {
                e["y"] = vector_to_json(s.target.values);
            } else {
                e["label"] = s.target.label;
            }
            a.push_back(std::move(e));
        }
        return a;
    };
    json centers = json::array();
    for (const auto& c : ds.centers) centers.push_back(vector_to_json(c));
    return json{{"name", ds.name},
                {"task_index", ds.task_index},
                {"kind", to_string(ds.spec.kind)},
                {"spec",
                 {{"seed", format_u64(ds.spec.seed)},
                  {"clusters", ds.spec.clusters},
                  {"d_in", ds.spec.d_in},
                  {"d_out", ds.spec.d_out},
                  {"n_train_per_cluster", ds.spec.n_train_per_cluster},
                  {"n_eval_per_cluster", ds.spec.n_eval_per_cluster},
                  {"noise", format_double(ds.spec.noise)},
                  {"delta_rank", ds.spec.delta_rank},
                  {"delta_scale", format_double(ds.spec.delta_scale)}}},
                {"base_seed", format_u64(ds.base_seed)},
                {"centers", centers},
                {"train", samples(ds.train)},
                {"eval", samples(ds.eval)}};
}

} // namespace neuromod
