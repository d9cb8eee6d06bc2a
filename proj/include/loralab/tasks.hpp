// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-task benchmarks. Two families share one input space per
// suite and differ per task only in the target function, so head
// specialization is measurable:
//
//   TeacherRegression  task i maps x ~ N(0, I) to y = (l*S + (1-l)*T_i) x + e,
//                      with S shared across tasks and T_i drawn per task.
//                      l = 1 collapses every task onto the shared teacher.
//   SequenceClassify   deterministic token-sequence rules (copy last token,
//                      first token, modular sum, parity of tokens above a
//                      threshold), one rule per task.
//
// Task identity is never part of the model input; batches interleave tasks.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "loralab/rng.hpp"
#include "loralab/tensor.hpp"

namespace loralab {

enum class TaskKind { TeacherRegression, SequenceClassify };

struct TaskSuiteConfig {
    TaskKind kind = TaskKind::TeacherRegression;
    std::int64_t n_tasks = 3;
    std::int64_t train_size = 1024;  // per task
    std::int64_t eval_size = 256;    // per task
    // teacher regression
    std::int64_t d_model = 64;
    double lambda = 0.5;
    double noise_std = 0.05;
    // sequence classification
    std::int64_t vocab = 32;
    std::int64_t seq_len = 8;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Example {
    std::int64_t task_id = 0;
    std::vector<double> input;              // teacher features
    std::vector<double> target;             // teacher target vector
    std::vector<std::int64_t> tokens;       // sequence inputs
    std::int64_t label = 0;                 // sequence label
};

struct MultiTaskDataset {
    TaskKind kind = TaskKind::TeacherRegression;
    std::string split;  // "train" or "eval"
    std::int64_t n_tasks = 0;
    std::int64_t d_model = 0;  // teacher
    std::int64_t vocab = 0;    // sequence
    std::int64_t seq_len = 0;  // sequence
    std::vector<Example> examples;  // shuffled, tasks interleaved
};

struct TaskSuite {
    TaskSuiteConfig config;
    MultiTaskDataset train;
    MultiTaskDataset eval;
    // Teacher matrices l*S + (1-l)*T_i, row-major d x d (teacher kind only).
    std::vector<std::vector<double>> teachers;
};

/// Number of sequence rules available to gen_sequence_suite.
std::int64_t sequence_rule_count();

/// Label of one sequence rule applied to a token sequence.
std::int64_t sequence_rule_label(std::int64_t rule, const std::vector<std::int64_t>& tokens, std::int64_t vocab);

TaskSuite gen_teacher_suite(const TaskSuiteConfig& cfg);
TaskSuite gen_sequence_suite(const TaskSuiteConfig& cfg);

/// Dispatches on cfg.kind.
TaskSuite gen_suite(const TaskSuiteConfig& cfg);

/// Index groups for one epoch: a seeded shuffle of the whole dataset cut
/// into batches (the final batch may be short). Epoch e of the same seed is
/// reproducible in isolation.
std::vector<std::vector<std::int64_t>> epoch_batches(const MultiTaskDataset& ds, std::int64_t batch_size,
                                                     std::uint64_t seed, std::int64_t epoch);

/// One example per line: {"task_id":., "split":., "input"/"tokens":., "target"/"label":.}
void export_jsonl(const MultiTaskDataset& ds, const std::string& path);

// Batch assembly -------------------------------------------------------------

template <typename T>
Tensor<T> batch_features(const MultiTaskDataset& ds, const std::vector<std::int64_t>& idx) {
    const std::int64_t d = ds.d_model;
    std::vector<T> data;
    data.reserve(idx.size() * static_cast<std::size_t>(d));
    for (auto i : idx)
        for (auto v : ds.examples[static_cast<std::size_t>(i)].input) data.push_back(static_cast<T>(v));
    return Tensor<T>::from_data({static_cast<std::int64_t>(idx.size()), d}, std::move(data));
}

template <typename T>
Tensor<T> batch_targets(const MultiTaskDataset& ds, const std::vector<std::int64_t>& idx) {
    const std::int64_t d = ds.d_model;
    std::vector<T> data;
    data.reserve(idx.size() * static_cast<std::size_t>(d));
    for (auto i : idx)
        for (auto v : ds.examples[static_cast<std::size_t>(i)].target) data.push_back(static_cast<T>(v));
    return Tensor<T>::from_data({static_cast<std::int64_t>(idx.size()), d}, std::move(data));
}

std::vector<std::vector<std::int64_t>> batch_tokens(const MultiTaskDataset& ds,
                                                    const std::vector<std::int64_t>& idx);
std::vector<std::int64_t> batch_labels(const MultiTaskDataset& ds, const std::vector<std::int64_t>& idx);
std::vector<std::int64_t> batch_task_ids(const MultiTaskDataset& ds, const std::vector<std::int64_t>& idx);

}  // namespace loralab
