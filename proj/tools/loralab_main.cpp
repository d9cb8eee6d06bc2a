// SPDX-License-Identifier: Apache-2.0
//
// loralab CLI: train / eval / analyze / compare.
//
// Exit codes: 0 success, 1 unexpected error, 2 invalid config, 3 training
// aborted on a non-finite loss, 4 corrupt or unreadable checkpoint,
// 5 nothing to compare (single-head checkpoint), 6 missing run artifacts.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "loralab/experiment.hpp"
#include "loralab/format.hpp"

namespace fs = std::filesystem;
using namespace loralab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNanAbort = 3;
constexpr int kExitCheckpoint = 4;
constexpr int kExitNothingToCompare = 5;
constexpr int kExitMissingArtifacts = 6;

ExperimentConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file '" + config_path + "'");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
    }
    for (const auto& ov : overrides) apply_override(doc, ov);
    return config_from_json(doc);
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out_dir,
              const std::string& export_dataset) {
    ExperimentConfig cfg;
    try {
        cfg = resolve_config(config_path, overrides);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    }
    try {
        RunResult result = run_experiment(cfg, out_dir, export_dataset);
        std::cout << "run complete: " << result.output_dir << "\n";
        std::cout << "  config hash: " << config_hash_hex(cfg) << "\n";
        if (!result.log.steps.empty())
            std::cout << "  steps: " << result.log.steps.back().step
                      << ", final loss: " << fmt_double(result.log.steps.back().loss) << "\n";
        std::cout << "  eval macro: " << fmt_double(result.final_eval.macro) << "\n";
        return 0;
    } catch (const TrainAbort& e) {
        std::cerr << e.what() << "\n";
        return kExitNanAbort;
    }
}

int cmd_eval(const std::string& checkpoint_path, const std::string& tasks_path) {
    LoadedModel loaded = [&] {
        try {
            return load_model_checkpoint(checkpoint_path);
        } catch (const CheckpointError& e) {
            std::cerr << "checkpoint error: " << e.what() << "\n";
            std::exit(kExitCheckpoint);
        }
    }();

    TaskSuiteConfig tasks_cfg = loaded.config.tasks;
    if (!tasks_path.empty()) {
        std::ifstream in(tasks_path);
        if (!in) {
            std::cerr << "config error: cannot open tasks file '" << tasks_path << "'\n";
            return kExitConfig;
        }
        nlohmann::json doc;
        try {
            in >> doc;
        } catch (const nlohmann::json::exception& e) {
            std::cerr << "config error: tasks file is not valid JSON: " << e.what() << "\n";
            return kExitConfig;
        }
        // Overlay the tasks section onto the embedded config and re-validate.
        nlohmann::json merged = config_to_json(loaded.config);
        merged["tasks"] = doc.contains("tasks") ? doc.at("tasks") : doc;
        try {
            tasks_cfg = config_from_json(merged).tasks;
        } catch (const ConfigError& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return kExitConfig;
        }
    }

    TaskSuite suite = gen_suite(tasks_cfg);
    EvalMetrics metrics = evaluate(loaded.model, suite.eval);
    nlohmann::ordered_json j;
    nlohmann::ordered_json per_task;
    for (const auto& [task, metric] : metrics.per_task) per_task[std::to_string(task)] = metric;
    j["kind"] = tasks_cfg.kind == TaskKind::TeacherRegression ? "mse" : "accuracy";
    j["per_task"] = std::move(per_task);
    j["macro"] = metrics.macro;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_analyze(const std::string& checkpoint_path, const std::string& export_heads) {
    LoadedModel loaded = [&] {
        try {
            return load_model_checkpoint(checkpoint_path);
        } catch (const CheckpointError& e) {
            std::cerr << "checkpoint error: " << e.what() << "\n";
            std::exit(kExitCheckpoint);
        }
    }();
    if (loaded.config.lora.n_heads < 2) {
        std::cerr << "nothing to compare: checkpoint variant '" << variant_name(loaded.config.lora.variant)
                  << "' has a single head\n";
        return kExitNothingToCompare;
    }
    SimilarityReport rep = report(loaded.model, loaded.trained_steps);
    rep.seed = loaded.config.seed;
    std::cout << report_to_json(rep) << "\n";
    if (!export_heads.empty()) export_head_vectors(loaded.model, export_heads);
    return 0;
}

struct RunArtifacts {
    std::string dir;
    ExperimentConfig config;
    nlohmann::json eval;
    std::optional<SimilarityReport> similarity;
    double final_loss = 0.0;
};

RunArtifacts load_run_dir(const std::string& dir) {
    RunArtifacts run;
    run.dir = dir;
    const auto need = [&](const std::string& name) {
        const std::string p = dir + "/" + name;
        if (!fs::exists(p)) throw std::runtime_error("missing artifact '" + p + "'");
        return p;
    };
    {
        std::ifstream in(need("config.json"));
        nlohmann::json doc;
        in >> doc;
        run.config = config_from_json(doc);
    }
    {
        std::ifstream in(need("eval.json"));
        in >> run.eval;
    }
    {
        std::ifstream in(need("similarity.json"));
        nlohmann::json doc;
        in >> doc;
        if (!doc.contains("skipped")) run.similarity = report_from_json(doc.dump());
    }
    {
        std::ifstream in(need("metrics.csv"));
        std::string line, last;
        std::getline(in, line);  // header
        while (std::getline(in, line))
            if (!line.empty()) last = line;
        if (last.empty()) throw std::runtime_error("missing artifact: metrics.csv in '" + dir + "' has no rows");
        std::stringstream ss(last);
        std::string field;
        std::getline(ss, field, ',');  // step
        std::getline(ss, field, ',');  // lr
        std::getline(ss, field, ',');  // loss
        run.final_loss = std::stod(field);
    }
    return run;
}

nlohmann::ordered_json footprint_json(const ExperimentConfig& cfg) {
    // Mask elements per adapted site at the configured batch size.
    nlohmann::ordered_json out;
    AdaptedModel<float> model = build_model(cfg);
    for (const auto& [site, layer] : model.adapters()) {
        const auto fp = layer.mask_footprint(cfg.train.batch_size);
        nlohmann::ordered_json f;
        f["multi_head_mask_elements"] = fp.multi_head_elements;
        f["input_mask_elements"] = fp.input_elements;
        f["ratio"] = static_cast<double>(fp.multi_head_elements) / static_cast<double>(fp.input_elements);
        out[site] = std::move(f);
    }
    return out;
}

int cmd_compare(const std::vector<std::string>& dirs) {
    std::vector<RunArtifacts> runs;
    for (const auto& dir : dirs) {
        try {
            runs.push_back(load_run_dir(dir));
        } catch (const std::exception& e) {
            std::cerr << "compare: " << e.what() << "\n";
            return kExitMissingArtifacts;
        }
    }

    nlohmann::ordered_json j;
    nlohmann::ordered_json jruns = nlohmann::ordered_json::array();
    for (const auto& run : runs) {
        nlohmann::ordered_json r;
        r["dir"] = run.dir;
        r["config_hash"] = config_hash_hex(run.config);
        r["variant"] = variant_name(run.config.lora.variant);
        r["init_scheme"] = init_scheme_name(run.config.lora.init_scheme);
        r["multi_head_dropout"] = run.config.lora.multi_head_dropout;
        r["final_loss"] = run.final_loss;
        r["eval"] = run.eval;
        r["similarity_overall_offdiag_mean"] =
            run.similarity && run.similarity->overall_offdiag_mean
                ? nlohmann::ordered_json(*run.similarity->overall_offdiag_mean)
                : nlohmann::ordered_json(nullptr);
        r["mask_footprint"] = footprint_json(run.config);
        jruns.push_back(std::move(r));
    }
    j["runs"] = std::move(jruns);

    if (runs.size() == 2) {
        nlohmann::ordered_json deltas;
        deltas["final_loss"] = runs[0].final_loss - runs[1].final_loss;
        deltas["eval_macro"] =
            runs[0].eval.at("macro").get<double>() - runs[1].eval.at("macro").get<double>();
        if (runs[0].similarity && runs[1].similarity) {
            ComparisonSummary cmp = compare_runs(*runs[0].similarity, *runs[1].similarity);
            deltas["similarity_overall"] =
                cmp.overall_delta ? nlohmann::ordered_json(*cmp.overall_delta) : nlohmann::ordered_json(nullptr);
            deltas["more_diverse"] = cmp.more_diverse;
            nlohmann::ordered_json sites;
            for (const auto& s : cmp.sites)
                sites[s.site] = s.delta ? nlohmann::ordered_json(*s.delta) : nlohmann::ordered_json(nullptr);
            deltas["similarity_per_site"] = std::move(sites);
        }
        j["deltas"] = std::move(deltas);
    }
    std::cout << j.dump(2) << "\n";

    // Aligned text table.
    std::cerr << std::left << std::setw(28) << "run" << std::setw(20) << "config_hash" << std::setw(18) << "variant"
              << std::setw(14) << "final_loss" << std::setw(14) << "eval_macro" << std::setw(12) << "similarity"
              << "\n";
    for (const auto& run : runs) {
        std::ostringstream sim;
        if (run.similarity && run.similarity->overall_offdiag_mean)
            sim << std::fixed << std::setprecision(4) << *run.similarity->overall_offdiag_mean;
        else
            sim << "n/a";
        std::cerr << std::left << std::setw(28) << fs::path(run.dir).filename().string() << std::setw(20)
                  << config_hash_hex(run.config) << std::setw(18) << variant_name(run.config.lora.variant)
                  << std::setw(14) << std::setprecision(6) << run.final_loss << std::setw(14)
                  << run.eval.at("macro").get<double>() << std::setw(12) << sim.str() << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"loralab: a desk-scale laboratory for low-rank adapter fine-tuning experiments"};
    app.require_subcommand(1);

    std::string config_path, out_dir, export_dataset, checkpoint_path, tasks_path, export_heads;
    std::vector<std::string> overrides, run_dirs;

    auto* train_cmd = app.add_subcommand("train", "run an experiment from a config file");
    train_cmd->add_option("--config", config_path, "experiment config JSON")->required();
    train_cmd->add_option("--override", overrides, "dotted-path overrides, e.g. lora.variant=RLoRA");
    train_cmd->add_option("--out", out_dir, "output directory (overrides config output_dir)");
    train_cmd->add_option("--export-dataset", export_dataset,
                          "write <prefix>.train.jsonl / <prefix>.eval.jsonl of the task suite");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on its task suite");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--tasks", tasks_path, "JSON file overriding the tasks section");

    auto* analyze_cmd = app.add_subcommand("analyze", "head-similarity report for a checkpoint");
    analyze_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    analyze_cmd->add_option("--export-heads", export_heads, "write head vectors as JSONL");

    auto* compare_cmd = app.add_subcommand("compare", "compare finished run directories");
    compare_cmd->add_option("--runs", run_dirs, "run directories")->required()->expected(2, -1);

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return cmd_train(config_path, overrides, out_dir, export_dataset);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint_path, tasks_path);
        if (analyze_cmd->parsed()) return cmd_analyze(checkpoint_path, export_heads);
        if (compare_cmd->parsed()) return cmd_compare(run_dirs);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
