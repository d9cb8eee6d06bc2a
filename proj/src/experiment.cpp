// SPDX-License-Identifier: Apache-2.0

#include "loralab/experiment.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace loralab {

namespace fs = std::filesystem;

namespace {

std::string normalize_enum(std::string s) {
    std::string out;
    for (char c : s)
        if (c != '_' && c != '-') out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    return out;
}

Variant parse_variant(const std::string& s) {
    const std::string n = normalize_enum(s);
    if (n == "vanilla") return Variant::Vanilla;
    if (n == "multiadapter") return Variant::MultiAdapter;
    if (n == "multiadaptermoe" || n == "loramoe" || n == "moe") return Variant::MultiAdapterMoE;
    if (n == "multihead" || n == "hydralora") return Variant::MultiHead;
    if (n == "rlora") return Variant::RLoRA;
    throw ConfigError("lora.variant: unknown variant '" + s + "'");
}

InitScheme parse_init_scheme(const std::string& s) {
    const std::string n = normalize_enum(s);
    if (n == "kaiminguniform") return InitScheme::KaimingUniform;
    if (n == "hydrauniform") return InitScheme::HydraUniform;
    if (n == "scaledgaussian") return InitScheme::ScaledGaussian;
    if (n == "zeroascaledgaussianb" || n == "zeroa") return InitScheme::ZeroAScaledGaussianB;
    throw ConfigError("lora.init_scheme: unknown scheme '" + s + "'");
}

InitPrefactor parse_prefactor(const std::string& s) {
    const std::string n = normalize_enum(s);
    if (n == "dout") return InitPrefactor::DOut;
    if (n == "din") return InitPrefactor::DIn;
    throw ConfigError("lora.init_prefactor: must be 'd_out' or 'd_in', got '" + s + "'");
}

BackboneKind parse_backbone_kind(const std::string& s) {
    const std::string n = normalize_enum(s);
    if (n == "mlp") return BackboneKind::Mlp;
    if (n == "tinytransformer" || n == "transformer") return BackboneKind::TinyTransformer;
    throw ConfigError("backbone.kind: must be 'mlp' or 'tiny_transformer', got '" + s + "'");
}

TaskKind parse_task_kind(const std::string& s) {
    const std::string n = normalize_enum(s);
    if (n == "teacher" || n == "teacherregression") return TaskKind::TeacherRegression;
    if (n == "sequence" || n == "sequenceclassify") return TaskKind::SequenceClassify;
    throw ConfigError("tasks.kind: must be 'teacher' or 'sequence', got '" + s + "'");
}

void reject_unknown_keys(const nlohmann::json& section, const std::string& prefix,
                         std::initializer_list<const char*> known) {
    if (!section.is_object()) throw ConfigError(prefix + ": expected a JSON object");
    for (const auto& [key, value] : section.items()) {
        bool ok = false;
        for (const char* k : known) ok = ok || key == k;
        if (!ok) throw ConfigError(prefix + "." + key + ": unknown field");
    }
}

template <typename T>
T get_field(const nlohmann::json& j, const char* section, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(std::string(section) + "." + key + ": wrong type");
    }
}

struct LockFile {
    std::string path;
    explicit LockFile(const std::string& dir) : path(dir + "/.lock") {
        std::FILE* f = std::fopen(path.c_str(), "wx");
        if (!f)
            throw std::runtime_error("output directory '" + dir + "' is locked by another run (found " + path + ")");
        std::fclose(f);
    }
    ~LockFile() { std::remove(path.c_str()); }
    LockFile(const LockFile&) = delete;
    LockFile& operator=(const LockFile&) = delete;
};

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, "config", {"seed", "output_dir", "backbone", "lora", "train", "tasks"});
    ExperimentConfig cfg;
    cfg.seed = get_field<std::uint64_t>(j, "config", "seed", 42);
    cfg.output_dir = get_field<std::string>(j, "config", "output_dir", "");

    const nlohmann::json backbone = j.value("backbone", nlohmann::json::object());
    reject_unknown_keys(backbone, "backbone",
                        {"kind", "d_model", "d_ff", "n_layers", "n_attn_heads", "vocab_size", "max_seq_len"});
    cfg.backbone.kind = parse_backbone_kind(get_field<std::string>(backbone, "backbone", "kind", "mlp"));
    if (cfg.backbone.kind == BackboneKind::TinyTransformer) {
        // Defaults chosen so every FFN site has input width 256.
        cfg.backbone.d_model = 256;
        cfg.backbone.d_ff = 256;
    }
    cfg.backbone.d_model = get_field<std::int64_t>(backbone, "backbone", "d_model", cfg.backbone.d_model);
    cfg.backbone.d_ff = get_field<std::int64_t>(backbone, "backbone", "d_ff", cfg.backbone.d_ff);
    cfg.backbone.n_layers = get_field<std::int64_t>(backbone, "backbone", "n_layers", cfg.backbone.n_layers);
    cfg.backbone.n_attn_heads =
        get_field<std::int64_t>(backbone, "backbone", "n_attn_heads", cfg.backbone.n_attn_heads);
    cfg.backbone.vocab_size = get_field<std::int64_t>(backbone, "backbone", "vocab_size", cfg.backbone.vocab_size);
    cfg.backbone.max_seq_len = get_field<std::int64_t>(backbone, "backbone", "max_seq_len", cfg.backbone.max_seq_len);
    cfg.backbone.seed = derive_seed(cfg.seed, "backbone");

    const nlohmann::json lora = j.value("lora", nlohmann::json::object());
    reject_unknown_keys(lora, "lora",
                        {"variant", "rank", "alpha", "n_heads", "dropout_p", "gamma", "init_scheme",
                         "init_prefactor", "multi_head_dropout", "moe_top_k", "targets"});
    cfg.lora.variant = parse_variant(get_field<std::string>(lora, "lora", "variant", "vanilla"));
    cfg.lora.rank = get_field<std::int64_t>(lora, "lora", "rank", 4);
    cfg.lora.alpha = get_field<double>(lora, "lora", "alpha", 32.0);
    cfg.lora.n_heads =
        get_field<std::int64_t>(lora, "lora", "n_heads", cfg.lora.variant == Variant::Vanilla ? 1 : 3);
    cfg.lora.dropout_p = get_field<double>(lora, "lora", "dropout_p", 0.2);
    cfg.lora.gamma = get_field<double>(lora, "lora", "gamma", 64.0);
    // Scheme and dropout placement default per variant.
    InitScheme default_scheme = InitScheme::KaimingUniform;
    if (cfg.lora.variant == Variant::MultiHead) default_scheme = InitScheme::HydraUniform;
    if (cfg.lora.variant == Variant::RLoRA) default_scheme = InitScheme::ScaledGaussian;
    cfg.lora.init_scheme = lora.contains("init_scheme")
                               ? parse_init_scheme(get_field<std::string>(lora, "lora", "init_scheme", ""))
                               : default_scheme;
    cfg.lora.init_prefactor = parse_prefactor(get_field<std::string>(lora, "lora", "init_prefactor", "d_out"));
    cfg.lora.multi_head_dropout =
        get_field<bool>(lora, "lora", "multi_head_dropout", cfg.lora.variant == Variant::RLoRA);
    cfg.lora.moe_top_k = get_field<std::int64_t>(lora, "lora", "moe_top_k", 2);
    cfg.lora.seed = derive_seed(cfg.seed, "lora");
    if (lora.contains("targets")) {
        try {
            cfg.targets = lora.at("targets").get<std::vector<std::string>>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError("lora.targets: expected an array of site names");
        }
    } else {
        cfg.targets = cfg.backbone.kind == BackboneKind::Mlp
                          ? std::vector<std::string>{"fc1", "fc2"}
                          : std::vector<std::string>{"gate_proj", "up_proj", "down_proj"};
    }

    const nlohmann::json train = j.value("train", nlohmann::json::object());
    reject_unknown_keys(train, "train",
                        {"learning_rate", "warmup_ratio", "epochs", "max_steps", "batch_size", "weight_decay",
                         "max_grad_norm", "grad_log_every"});
    cfg.train.learning_rate = get_field<double>(train, "train", "learning_rate", 2e-4);
    cfg.train.warmup_ratio = get_field<double>(train, "train", "warmup_ratio", 0.03);
    cfg.train.epochs = get_field<std::int64_t>(train, "train", "epochs", 1);
    cfg.train.max_steps = get_field<std::int64_t>(train, "train", "max_steps", 0);
    cfg.train.batch_size = get_field<std::int64_t>(train, "train", "batch_size", 16);
    cfg.train.weight_decay = get_field<double>(train, "train", "weight_decay", 0.0);
    cfg.train.max_grad_norm = get_field<double>(train, "train", "max_grad_norm", 0.0);
    cfg.train.grad_log_every = get_field<std::int64_t>(train, "train", "grad_log_every", 10);
    cfg.train.seed = derive_seed(cfg.seed, "train");

    const nlohmann::json tasks = j.value("tasks", nlohmann::json::object());
    reject_unknown_keys(tasks, "tasks",
                        {"kind", "n_tasks", "train_size", "eval_size", "d_model", "lambda", "noise_std", "vocab",
                         "seq_len"});
    cfg.tasks.kind = parse_task_kind(get_field<std::string>(
        tasks, "tasks", "kind", cfg.backbone.kind == BackboneKind::Mlp ? "teacher" : "sequence"));
    cfg.tasks.n_tasks = get_field<std::int64_t>(tasks, "tasks", "n_tasks", 3);
    cfg.tasks.train_size = get_field<std::int64_t>(tasks, "tasks", "train_size", 1024);
    cfg.tasks.eval_size = get_field<std::int64_t>(tasks, "tasks", "eval_size", 256);
    cfg.tasks.d_model = get_field<std::int64_t>(tasks, "tasks", "d_model", cfg.backbone.d_model);
    cfg.tasks.lambda = get_field<double>(tasks, "tasks", "lambda", 0.5);
    cfg.tasks.noise_std = get_field<double>(tasks, "tasks", "noise_std", 0.05);
    cfg.tasks.vocab = get_field<std::int64_t>(tasks, "tasks", "vocab", cfg.backbone.vocab_size);
    cfg.tasks.seq_len = get_field<std::int64_t>(tasks, "tasks", "seq_len", 8);
    cfg.tasks.seed = derive_seed(cfg.seed, "tasks");

    // Cross-section consistency.
    try {
        cfg.backbone.validate();
        cfg.lora.validate();
        cfg.train.validate();
        cfg.tasks.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (cfg.tasks.kind == TaskKind::TeacherRegression && cfg.backbone.kind != BackboneKind::Mlp)
        throw ConfigError("tasks.kind: teacher regression requires the MLP backbone");
    if (cfg.tasks.kind == TaskKind::SequenceClassify && cfg.backbone.kind != BackboneKind::TinyTransformer)
        throw ConfigError("tasks.kind: sequence classification requires the tiny_transformer backbone");
    if (cfg.tasks.kind == TaskKind::TeacherRegression && cfg.tasks.d_model != cfg.backbone.d_model)
        throw ConfigError("tasks.d_model: must equal backbone.d_model");
    if (cfg.tasks.kind == TaskKind::SequenceClassify) {
        if (cfg.tasks.vocab != cfg.backbone.vocab_size)
            throw ConfigError("tasks.vocab: must equal backbone.vocab_size");
        if (cfg.tasks.seq_len > cfg.backbone.max_seq_len)
            throw ConfigError("tasks.seq_len: exceeds backbone.max_seq_len");
    }
    return cfg;
}

nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    nlohmann::ordered_json backbone;
    backbone["kind"] = cfg.backbone.kind == BackboneKind::Mlp ? "mlp" : "tiny_transformer";
    backbone["d_model"] = cfg.backbone.d_model;
    backbone["d_ff"] = cfg.backbone.d_ff;
    backbone["n_layers"] = cfg.backbone.n_layers;
    backbone["n_attn_heads"] = cfg.backbone.n_attn_heads;
    backbone["vocab_size"] = cfg.backbone.vocab_size;
    backbone["max_seq_len"] = cfg.backbone.max_seq_len;
    j["backbone"] = std::move(backbone);
    nlohmann::ordered_json lora;
    lora["variant"] = variant_name(cfg.lora.variant);
    lora["rank"] = cfg.lora.rank;
    lora["alpha"] = cfg.lora.alpha;
    lora["n_heads"] = cfg.lora.n_heads;
    lora["dropout_p"] = cfg.lora.dropout_p;
    lora["gamma"] = cfg.lora.gamma;
    lora["init_scheme"] = init_scheme_name(cfg.lora.init_scheme);
    lora["init_prefactor"] = cfg.lora.init_prefactor == InitPrefactor::DOut ? "d_out" : "d_in";
    lora["multi_head_dropout"] = cfg.lora.multi_head_dropout;
    lora["moe_top_k"] = cfg.lora.moe_top_k;
    lora["targets"] = cfg.targets;
    j["lora"] = std::move(lora);
    nlohmann::ordered_json train;
    train["learning_rate"] = cfg.train.learning_rate;
    train["warmup_ratio"] = cfg.train.warmup_ratio;
    train["epochs"] = cfg.train.epochs;
    train["max_steps"] = cfg.train.max_steps;
    train["batch_size"] = cfg.train.batch_size;
    train["weight_decay"] = cfg.train.weight_decay;
    train["max_grad_norm"] = cfg.train.max_grad_norm;
    train["grad_log_every"] = cfg.train.grad_log_every;
    j["train"] = std::move(train);
    nlohmann::ordered_json tasks;
    tasks["kind"] = cfg.tasks.kind == TaskKind::TeacherRegression ? "teacher" : "sequence";
    tasks["n_tasks"] = cfg.tasks.n_tasks;
    tasks["train_size"] = cfg.tasks.train_size;
    tasks["eval_size"] = cfg.tasks.eval_size;
    tasks["d_model"] = cfg.tasks.d_model;
    tasks["lambda"] = cfg.tasks.lambda;
    tasks["noise_std"] = cfg.tasks.noise_std;
    tasks["vocab"] = cfg.tasks.vocab;
    tasks["seq_len"] = cfg.tasks.seq_len;
    j["tasks"] = std::move(tasks);
    return j;
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
    // The output directory is where a run lands, not what it computes.
    nlohmann::ordered_json j = config_to_json(cfg);
    j["output_dir"] = "";
    return fnv1a64(j.dump());
}

std::string config_hash_hex(const ExperimentConfig& cfg) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    return buf;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;  // plain string
    }

    nlohmann::json* cur = &doc;
    std::size_t pos = 0;
    while (true) {
        const auto dot = key.find('.', pos);
        const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
        if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty path segment");
        if (dot == std::string::npos) {
            (*cur)[part] = value;
            return;
        }
        cur = &(*cur)[part];
        pos = dot + 1;
    }
}

AdaptedModel<float> build_model(const ExperimentConfig& cfg) {
    Backbone<float> backbone = Backbone<float>::build(cfg.backbone);
    return inject_adapters(std::move(backbone), cfg.lora, cfg.targets);
}

void save_model_checkpoint(const AdaptedModel<float>& model, const ExperimentConfig& cfg,
                           const std::string& path, std::int64_t trained_steps) {
    CheckpointData ckpt;
    ckpt.config = config_to_json(cfg);
    ckpt.config["output_dir"] = "";  // checkpoints are location-independent
    ckpt.trained_steps = trained_steps;
    for (const auto& [site, layer] : model.adapters()) {
        for (const auto& [name, t] : layer.all_tensors()) {
            TensorEntry e;
            e.name = site + "." + name;
            e.shape = t.shape();
            e.data.assign(t.data().begin(), t.data().end());
            ckpt.tensors.push_back(std::move(e));
        }
    }
    save_checkpoint_file(ckpt, path);
}

LoadedModel load_model_checkpoint(const std::string& path) {
    CheckpointData ckpt = load_checkpoint_file(path);
    ExperimentConfig cfg;
    try {
        cfg = config_from_json(ckpt.config);
    } catch (const ConfigError& e) {
        throw CheckpointError(std::string("embedded config does not validate: ") + e.what());
    }
    AdaptedModel<float> model = build_model(cfg);

    std::map<std::string, TensorEntry*> by_name;
    for (auto& t : ckpt.tensors) by_name[t.name] = &t;
    for (auto& [site, layer] : model.adapters()) {
        for (auto& [name, tensor] : layer.all_tensors()) {
            const std::string full = site + "." + name;
            auto it = by_name.find(full);
            if (it == by_name.end()) throw CheckpointError("checkpoint is missing tensor '" + full + "'");
            if (it->second->shape != tensor.shape())
                throw CheckpointError("tensor '" + full + "' has shape " + shape_str(it->second->shape) +
                                      " but the config requires " + shape_str(tensor.shape()));
            Tensor<float> dst = tensor;
            std::copy(it->second->data.begin(), it->second->data.end(), dst.mutable_data().begin());
            by_name.erase(it);
        }
    }
    if (!by_name.empty())
        throw CheckpointError("checkpoint carries unexpected tensor '" + by_name.begin()->first + "'");
    return {std::move(cfg), std::move(model), ckpt.trained_steps};
}

std::string resolve_output_dir(const ExperimentConfig& cfg, const std::string& out_dir_override) {
    std::string dir = out_dir_override.empty() ? cfg.output_dir : out_dir_override;
    if (dir.empty()) throw ConfigError("output_dir: not set (pass --out or set output_dir in the config)");
    if (fs::path(dir).is_relative()) {
        if (const char* root = std::getenv("LORALAB_OUT_ROOT")) dir = (fs::path(root) / dir).string();
    }
    return dir;
}

RunResult run_experiment(const ExperimentConfig& cfg, const std::string& out_dir_override,
                         const std::string& export_dataset_prefix) {
    const std::string dir = resolve_output_dir(cfg, out_dir_override);
    fs::create_directories(dir);
    LockFile lock(dir);

    const std::string started = timestamp_utc();

    {
        std::ofstream out(dir + "/config.json");
        out << config_to_json(cfg).dump(2) << '\n';
    }

    TaskSuite suite = gen_suite(cfg.tasks);
    if (!export_dataset_prefix.empty()) {
        export_jsonl(suite.train, export_dataset_prefix + ".train.jsonl");
        export_jsonl(suite.eval, export_dataset_prefix + ".eval.jsonl");
    }

    AdaptedModel<float> model = build_model(cfg);

    const std::string csv_path = dir + "/metrics.csv";
    {  // truncate any stale file; train() appends
        std::ofstream trunc(csv_path, std::ios::trunc);
    }
    MetricsLog log = train(model, suite, cfg.train, csv_path);

    EvalMetrics final_eval = evaluate(model, suite.eval);
    {
        nlohmann::ordered_json j;
        nlohmann::ordered_json per_task;
        for (const auto& [task, metric] : final_eval.per_task) per_task[std::to_string(task)] = metric;
        j["kind"] = cfg.tasks.kind == TaskKind::TeacherRegression ? "mse" : "accuracy";
        j["per_task"] = std::move(per_task);
        j["macro"] = final_eval.macro;
        std::ofstream out(dir + "/eval.json");
        out << j.dump(2) << '\n';
    }

    const std::int64_t final_step = log.steps.empty() ? 0 : log.steps.back().step;
    if (cfg.lora.n_heads >= 2) {
        SimilarityReport rep = report(model, final_step);
        rep.seed = cfg.seed;  // report the experiment root seed, not the derived lora seed
        save_report(rep, dir + "/similarity.json");
        save_report_csv(rep, dir + "/similarity.csv");
    } else {
        std::ofstream out(dir + "/similarity.json");
        out << nlohmann::ordered_json{{"skipped", "single-head variant has nothing to compare"}}.dump(2) << '\n';
    }

    save_model_checkpoint(model, cfg, dir + "/checkpoint.bin", final_step);

    {
        nlohmann::ordered_json meta;
        meta["started_at"] = started;
        meta["finished_at"] = timestamp_utc();
        std::ofstream out(dir + "/run_meta.json");
        out << meta.dump(2) << '\n';
    }
    return {std::move(log), std::move(final_eval), dir};
}

}  // namespace loralab
