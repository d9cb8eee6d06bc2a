// SPDX-License-Identifier: Apache-2.0

#include "loralab/tasks.hpp"

#include <fstream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace loralab {

void TaskSuiteConfig::validate() const {
    if (n_tasks < 2) throw std::invalid_argument("tasks.n_tasks: must be >= 2");
    if (train_size < 1) throw std::invalid_argument("tasks.train_size: must be >= 1");
    if (eval_size < 1) throw std::invalid_argument("tasks.eval_size: must be >= 1");
    if (kind == TaskKind::TeacherRegression) {
        if (d_model < 1) throw std::invalid_argument("tasks.d_model: must be >= 1");
        if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("tasks.lambda: must be in [0, 1]");
        if (noise_std < 0.0) throw std::invalid_argument("tasks.noise_std: must be >= 0");
    } else {
        if (vocab < 4) throw std::invalid_argument("tasks.vocab: must be >= 4");
        if (seq_len < 2) throw std::invalid_argument("tasks.seq_len: must be >= 2");
        if (n_tasks > sequence_rule_count())
            throw std::invalid_argument("tasks.n_tasks: only " + std::to_string(sequence_rule_count()) +
                                        " sequence rules are available");
    }
}

namespace {

void seeded_shuffle(std::vector<std::int64_t>& idx, Rng& rng) {
    // Fisher-Yates with the fixed generator; modulo draw keeps it portable.
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
    }
}

void shuffle_examples(std::vector<Example>& ex, Rng& rng) {
    std::vector<std::int64_t> idx(ex.size());
    std::iota(idx.begin(), idx.end(), 0);
    seeded_shuffle(idx, rng);
    std::vector<Example> out;
    out.reserve(ex.size());
    for (auto i : idx) out.push_back(std::move(ex[static_cast<std::size_t>(i)]));
    ex = std::move(out);
}

}  // namespace

TaskSuite gen_teacher_suite(const TaskSuiteConfig& cfg) {
    cfg.validate();
    if (cfg.kind != TaskKind::TeacherRegression)
        throw std::invalid_argument("gen_teacher_suite: config kind is not teacher regression");
    const std::int64_t d = cfg.d_model;
    const double entry_std = 1.0 / std::sqrt(static_cast<double>(d));

    Rng s_rng(derive_seed(cfg.seed, "tasks/shared"));
    std::vector<double> shared(static_cast<std::size_t>(d * d));
    for (auto& v : shared) v = s_rng.gaussian(0.0, entry_std);

    TaskSuite suite;
    suite.config = cfg;
    suite.teachers.resize(static_cast<std::size_t>(cfg.n_tasks));
    for (std::int64_t t = 0; t < cfg.n_tasks; ++t) {
        Rng t_rng(derive_seed(cfg.seed, "tasks/task-" + std::to_string(t)));
        auto& m = suite.teachers[static_cast<std::size_t>(t)];
        m.resize(static_cast<std::size_t>(d * d));
        for (std::size_t i = 0; i < m.size(); ++i)
            m[i] = cfg.lambda * shared[i] + (1.0 - cfg.lambda) * t_rng.gaussian(0.0, entry_std);
    }

    const auto gen_split = [&](const std::string& split, std::int64_t per_task) {
        MultiTaskDataset ds;
        ds.kind = cfg.kind;
        ds.split = split;
        ds.n_tasks = cfg.n_tasks;
        ds.d_model = d;
        Rng rng(derive_seed(cfg.seed, "tasks/" + split));
        for (std::int64_t t = 0; t < cfg.n_tasks; ++t) {
            const auto& m = suite.teachers[static_cast<std::size_t>(t)];
            for (std::int64_t e = 0; e < per_task; ++e) {
                Example ex;
                ex.task_id = t;
                ex.input.resize(static_cast<std::size_t>(d));
                for (auto& v : ex.input) v = rng.gaussian(0.0, 1.0);
                ex.target.resize(static_cast<std::size_t>(d));
                for (std::int64_t row = 0; row < d; ++row) {
                    double y = 0;
                    for (std::int64_t col = 0; col < d; ++col)
                        y += m[static_cast<std::size_t>(row * d + col)] * ex.input[static_cast<std::size_t>(col)];
                    if (cfg.noise_std > 0) y += rng.gaussian(0.0, cfg.noise_std);
                    ex.target[static_cast<std::size_t>(row)] = y;
                }
                ds.examples.push_back(std::move(ex));
            }
        }
        Rng shuf(derive_seed(cfg.seed, "tasks/shuffle-" + split));
        shuffle_examples(ds.examples, shuf);
        return ds;
    };
    suite.train = gen_split("train", cfg.train_size);
    suite.eval = gen_split("eval", cfg.eval_size);
    return suite;
}

std::int64_t sequence_rule_count() { return 4; }

std::int64_t sequence_rule_label(std::int64_t rule, const std::vector<std::int64_t>& tokens, std::int64_t vocab) {
    switch (rule) {
        case 0:  // copy last token
            return tokens.back();
        case 1:  // first token (the last token of the reversed sequence)
            return tokens.front();
        case 2: {  // modular sum of tokens
            std::int64_t s = 0;
            for (auto t : tokens) s += t;
            return s % vocab;
        }
        case 3: {  // parity of the count of tokens >= vocab/2
            std::int64_t c = 0;
            for (auto t : tokens)
                if (t >= (vocab + 1) / 2) ++c;
            return c % 2;
        }
        default:
            throw std::invalid_argument("sequence_rule_label: unknown rule " + std::to_string(rule));
    }
}

TaskSuite gen_sequence_suite(const TaskSuiteConfig& cfg) {
    cfg.validate();
    if (cfg.kind != TaskKind::SequenceClassify)
        throw std::invalid_argument("gen_sequence_suite: config kind is not sequence classification");

    TaskSuite suite;
    suite.config = cfg;
    const auto gen_split = [&](const std::string& split, std::int64_t per_task) {
        MultiTaskDataset ds;
        ds.kind = cfg.kind;
        ds.split = split;
        ds.n_tasks = cfg.n_tasks;
        ds.vocab = cfg.vocab;
        ds.seq_len = cfg.seq_len;
        Rng rng(derive_seed(cfg.seed, "tasks/" + split));
        for (std::int64_t t = 0; t < cfg.n_tasks; ++t) {
            for (std::int64_t e = 0; e < per_task; ++e) {
                Example ex;
                ex.task_id = t;
                ex.tokens.resize(static_cast<std::size_t>(cfg.seq_len));
                for (auto& tok : ex.tokens) tok = static_cast<std::int64_t>(rng.next_u64() % cfg.vocab);
                ex.label = sequence_rule_label(t, ex.tokens, cfg.vocab);
                ds.examples.push_back(std::move(ex));
            }
        }
        Rng shuf(derive_seed(cfg.seed, "tasks/shuffle-" + split));
        shuffle_examples(ds.examples, shuf);
        return ds;
    };
    suite.train = gen_split("train", cfg.train_size);
    suite.eval = gen_split("eval", cfg.eval_size);
    return suite;
}

TaskSuite gen_suite(const TaskSuiteConfig& cfg) {
    return cfg.kind == TaskKind::TeacherRegression ? gen_teacher_suite(cfg) : gen_sequence_suite(cfg);
}

std::vector<std::vector<std::int64_t>> epoch_batches(const MultiTaskDataset& ds, std::int64_t batch_size,
                                                     std::uint64_t seed, std::int64_t epoch) {
    if (batch_size < 1) throw std::invalid_argument("epoch_batches: batch_size must be >= 1");
    std::vector<std::int64_t> idx(ds.examples.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(derive_seed(seed, "batches/epoch-" + std::to_string(epoch)));
    seeded_shuffle(idx, rng);
    std::vector<std::vector<std::int64_t>> out;
    for (std::size_t pos = 0; pos < idx.size(); pos += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(idx.size(), pos + static_cast<std::size_t>(batch_size));
        out.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

void export_jsonl(const MultiTaskDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_jsonl: cannot open '" + path + "' for writing");
    for (const auto& ex : ds.examples) {
        nlohmann::ordered_json j;
        j["task_id"] = ex.task_id;
        j["split"] = ds.split;
        if (ds.kind == TaskKind::TeacherRegression) {
            j["input"] = ex.input;
            j["target"] = ex.target;
        } else {
            j["tokens"] = ex.tokens;
            j["label"] = ex.label;
        }
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("export_jsonl: write to '" + path + "' failed");
}

std::vector<std::vector<std::int64_t>> batch_tokens(const MultiTaskDataset& ds,
                                                    const std::vector<std::int64_t>& idx) {
    std::vector<std::vector<std::int64_t>> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.examples[static_cast<std::size_t>(i)].tokens);
    return out;
}

std::vector<std::int64_t> batch_labels(const MultiTaskDataset& ds, const std::vector<std::int64_t>& idx) {
    std::vector<std::int64_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.examples[static_cast<std::size_t>(i)].label);
    return out;
}

std::vector<std::int64_t> batch_task_ids(const MultiTaskDataset& ds, const std::vector<std::int64_t>& idx) {
    std::vector<std::int64_t> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(ds.examples[static_cast<std::size_t>(i)].task_id);
    return out;
}

}  // namespace loralab
